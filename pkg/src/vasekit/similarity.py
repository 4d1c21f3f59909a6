"""Similarity primitives: hashed bag-of-words embeddings, cosine, sequence-match ratio."""

from __future__ import annotations

import math
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_scalar

from .exceptions import DimensionMismatch, InvalidConfig
from .text import normalize, tokenize

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

DEFAULT_DIMENSION = 1024


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def token_bucket(token: str, dimension: int) -> int:
    return fnv1a_64(token.encode("utf-8")) % dimension


def embed_hashed_bow(text: str, dimension: int = DEFAULT_DIMENSION) -> np.ndarray:
    """Term-count vector with tokens hashed by 64-bit FNV-1a (UTF-8 bytes) mod ``dimension``."""
    if dimension < 2:
        raise ValueError("dimension must be >= 2")
    vec = np.zeros(dimension, dtype=np.float64)
    for tok in tokenize(text):
        vec[token_bucket(tok, dimension)] += 1.0
    return vec


def cosine(u, v) -> float:
    """Cosine similarity; 0.0 when either vector has zero norm."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"cannot compare vectors of shape {u.shape} and {v.shape}")
    nu = float(np.dot(u, u))
    nv = float(np.dot(v, v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    # sqrt(nu * nv) rather than sqrt(nu) * sqrt(nv): exact for integer count vectors.
    c = float(np.dot(u, v)) / math.sqrt(nu * nv)
    return min(1.0, max(-1.0, c))


def _longest_match(a: str, b: str, b2j: dict, alo: int, ahi: int, blo: int, bhi: int):
    """Longest common block of a[alo:ahi] and b[blo:bhi].

    Among equally long blocks the one starting earliest in ``a`` wins, then the
    one starting earliest in ``b``.
    """
    besti, bestj, bestsize = alo, blo, 0
    j2len: dict[int, int] = {}
    for i in range(alo, ahi):
        newj2len = {}
        for j in b2j.get(a[i], ()):
            if j < blo:
                continue
            if j >= bhi:
                break
            k = newj2len[j] = j2len.get(j - 1, 0) + 1
            if k > bestsize:
                besti, bestj, bestsize = i - k + 1, j - k + 1, k
        j2len = newj2len
    return besti, bestj, bestsize


def matching_blocks(a: str, b: str) -> list[tuple[int, int, int]]:
    """Ratcliff-Obershelp matching blocks ``(i, j, size)`` sorted by position.

    Finds the longest common block, then recurses on the pieces to its left
    and right. No junk heuristics are applied.
    """
    b2j: dict[str, list[int]] = {}
    for j, ch in enumerate(b):
        b2j.setdefault(ch, []).append(j)
    blocks = []
    stack = [(0, len(a), 0, len(b))]
    while stack:
        alo, ahi, blo, bhi = stack.pop()
        i, j, k = _longest_match(a, b, b2j, alo, ahi, blo, bhi)
        if k:
            blocks.append((i, j, k))
            if alo < i and blo < j:
                stack.append((alo, i, blo, j))
            if i + k < ahi and j + k < bhi:
                stack.append((i + k, ahi, j + k, bhi))
    blocks.sort()
    return blocks


def sequence_match_ratio(a: str, b: str) -> float:
    """``2*M / (|a| + |b|)`` over characters of the normalized strings; 1.0 if both empty.

    The block recursion is order dependent, so the pair is matched in a fixed
    orientation (lexicographically smaller string first). That makes the
    ratio symmetric.
    """
    a, b = sorted((normalize(a), normalize(b)))
    total = len(a) + len(b)
    if total == 0:
        return 1.0
    matched = sum(k for _, _, k in matching_blocks(a, b))
    return 2.0 * matched / total


@runtime_checkable
class SimilarityProvider(Protocol):
    name: str
    dimension: int
    deterministic: bool

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Return an ``(len(texts), dimension)`` float array."""


class HashedBowProvider:
    """Offline, stateless provider backed by :func:`embed_hashed_bow`."""

    name = "hashed-bow"
    deterministic = True

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension < 2:
            raise InvalidConfig("hashed-bow dimension must be >= 2")
        self.dimension = dimension

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension), dtype=np.float64)
        for row, text in enumerate(texts):
            out[row] = embed_hashed_bow(text, self.dimension)
        return out

    def __repr__(self) -> str:
        return f"HashedBowProvider(dimension={self.dimension})"


def cosine_matrix(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Pairwise cosine between row vectors; zero-norm rows/cols give 0.0."""
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    if rows.shape[1] != cols.shape[1]:
        raise DimensionMismatch(f"dimensions differ: {rows.shape[1]} vs {cols.shape[1]}")
    rn = np.einsum("ij,ij->i", rows, rows)
    cn = np.einsum("ij,ij->i", cols, cols)
    denom = np.sqrt(np.outer(rn, cn))
    dots = rows @ cols.T
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(sims, -1.0, 1.0)


def make_provider(kind: str = "hashed-bow", dimension: int = DEFAULT_DIMENSION, scorer=None):
    """Provider factory keyed by the ``provider`` config value.

    ``scorer`` is a ScorerEndpointConfig, required for ``"remote"``.
    """
    if kind == "hashed-bow":
        return HashedBowProvider(dimension)
    if kind == "remote":
        from .scorer_client import RemoteProvider, ScorerEndpointConfig

        return RemoteProvider(scorer or ScorerEndpointConfig())
    raise InvalidConfig(f"unknown provider {kind!r}; expected 'hashed-bow' or 'remote'")


class HashedBowVectorizer(TransformerMixin, BaseEstimator):
    """Stateless text vectorizer producing FNV-1a hashed term counts.

    Unlike scikit-learn's HashingVectorizer this uses a fixed, documented hash
    and the package tokenizer, so vectors are reproducible bit for bit.
    """

    def __init__(self, n_features: int = DEFAULT_DIMENSION):
        self.n_features = n_features

    def fit(self, X=None, y=None):
        check_scalar(self.n_features, "n_features", int, min_val=2)
        self.n_features_out_ = self.n_features
        return self

    def transform(self, X) -> np.ndarray:
        check_scalar(self.n_features, "n_features", int, min_val=2)
        if isinstance(X, str):
            raise TypeError("expected an iterable of strings, got a single string")
        return HashedBowProvider(self.n_features).embed(list(X))

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        tags.input_tags.string = True
        tags.input_tags.two_d_array = False
        return tags
