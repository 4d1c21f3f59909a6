"""Caption retrieval and lexical metrics, per-attribute QA accuracy, run reports."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.utils import check_array

from .dataset import DatasetManifest, QuestionType
from .exceptions import EmptyRun, NonSquareMatrix, SchemaError, UnknownVaseId
from .similarity import cosine_matrix, make_provider
from .text import normalize_answer, tokenize

DEFAULT_KS = (1, 5, 10)


@dataclass(frozen=True)
class SimilarityMatrix:
    values: np.ndarray
    row_ids: tuple[str, ...] = ()
    col_ids: tuple[str, ...] = ()

    def __post_init__(self):
        vals = check_array(self.values, dtype=np.float64, ensure_all_finite=True)
        object.__setattr__(self, "values", vals)


def _as_matrix(matrix) -> np.ndarray:
    values = matrix.values if isinstance(matrix, SimilarityMatrix) else matrix
    values = check_array(values, dtype=np.float64, ensure_all_finite=True)
    if values.shape[0] != values.shape[1]:
        raise NonSquareMatrix(f"retrieval needs a square matrix, got {values.shape}")
    return values


def true_ranks(matrix) -> np.ndarray:
    """0-based rank of each row's diagonal entry.

    Rank counts the columns scoring strictly higher, plus equal-scoring
    columns with a lower index (ties go to the lower column index).
    """
    s = _as_matrix(matrix)
    diag = np.diag(s)[:, None]
    higher = (s > diag).sum(axis=1)
    n = s.shape[0]
    lower_idx = np.arange(n)[None, :] < np.arange(n)[:, None]
    tied_before = ((s == diag) & lower_idx).sum(axis=1)
    return higher + tied_before


def recall_at_k(matrix, k: int) -> float:
    if k < 1:
        raise ValueError("k must be a positive integer")
    ranks = true_ranks(matrix)
    k = min(k, ranks.size)
    return float(np.count_nonzero(ranks < k)) / ranks.size


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """Token-level ROUGE-L F1 (balanced precision/recall)."""
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand or not ref:
        return 0.0
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 2 * p * r / (p + r)


@dataclass(frozen=True)
class Prediction:
    vase_id: str
    caption: str
    answers: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "Prediction":
        vid = obj.get("vase_id")
        if not isinstance(vid, str) or not vid:
            raise SchemaError("prediction needs a non-empty vase_id")
        caption = obj.get("caption", "")
        answers = obj.get("answers") or {}
        if not isinstance(caption, str) or not isinstance(answers, dict):
            raise SchemaError("caption must be a string and answers an object", entry=vid)
        for key in answers:
            QuestionType(key)
        return cls(vid, caption, {k: str(v) for k, v in answers.items()})


@dataclass(frozen=True)
class EvalReport:
    recall_at: dict[int, float]
    lexical_similarity: float
    per_dimension_accuracy: dict[str, float]
    n_items: int
    fid: float | None = None
    clip_score: float | None = None

    def to_dict(self) -> dict:
        return {
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "lexical_similarity": self.lexical_similarity,
            "per_dimension_accuracy": dict(sorted(self.per_dimension_accuracy.items())),
            "n_items": self.n_items,
            "fid": self.fid,
            "clip_score": self.clip_score,
        }


def evaluate_run(
    predictions: Iterable[Prediction],
    manifest: DatasetManifest,
    provider=None,
    ks: Sequence[int] = DEFAULT_KS,
) -> EvalReport:
    """Score a prediction run against the manifest's reference captions and answers.

    Predictions are ordered by vase_id before the similarity matrix is built,
    so the report does not depend on input order.
    """
    provider = provider or make_provider()
    preds = sorted(predictions, key=lambda p: p.vase_id)
    if not preds:
        raise EmptyRun("no predictions to evaluate")
    ids = [p.vase_id for p in preds]
    if len(set(ids)) != len(ids):
        raise SchemaError("duplicate vase_id in predictions")
    entries = manifest.by_id()
    missing = [vid for vid in ids if vid not in entries]
    if missing:
        raise UnknownVaseId(f"predictions reference unknown vase ids: {missing[:5]}")

    refs = [entries[vid].caption for vid in ids]
    gen_vecs = np.asarray(provider.embed([p.caption for p in preds]), dtype=np.float64)
    ref_vecs = np.asarray(provider.embed(refs), dtype=np.float64)
    sims = SimilarityMatrix(cosine_matrix(gen_vecs, ref_vecs), tuple(ids), tuple(ids))
    recall = {k: recall_at_k(sims, k) for k in ks}
    lexical = math.fsum(rouge_l(p.caption, ref) for p, ref in zip(preds, refs)) / len(preds)

    hits: dict[str, int] = {}
    totals: dict[str, int] = {}
    for p in preds:
        for qa in entries[p.vase_id].qa_pairs:
            if qa.question_type is QuestionType.CAPTION:
                continue  # free text; covered by retrieval and lexical scores
            qt = qa.question_type.value
            totals[qt] = totals.get(qt, 0) + 1
            guess = normalize_answer(p.answers.get(qt, ""))
            if guess and guess == normalize_answer(qa.answer):
                hits[qt] = hits.get(qt, 0) + 1
    accuracy = {qt: hits.get(qt, 0) / n for qt, n in totals.items()}
    return EvalReport(recall, lexical, accuracy, len(preds))


@dataclass(frozen=True)
class HumanEvalSummary:
    method: str
    scores: tuple[float, ...]
    mean: float
    rank: int


def human_eval_summary(text_or_path: str | os.PathLike, decimals: int = 2) -> list[HumanEvalSummary]:
    """Average an expert-rating CSV: first column is the method, the rest are expert scores.

    Means are rounded half-up to ``decimals``; ranks are 1-based by descending
    mean, ties sharing the better rank.
    """
    if isinstance(text_or_path, str) and "\n" in text_or_path:
        text = text_or_path
    else:
        with open(text_or_path, encoding="utf-8", newline="") as fh:
            text = fh.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise EmptyRun("human-eval CSV needs a header and at least one method row")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            scores = tuple(float(c) for c in row[1:] if c.strip())
        except ValueError:
            raise SchemaError(f"line {lineno}: non-numeric score", entry=row[0]) from None
        if not scores:
            raise SchemaError(f"line {lineno}: no scores", entry=row[0])
        exact = math.fsum(scores) / len(scores)
        out.append((row[0].strip(), scores, _round_half_up(exact, decimals)))
    ordered = sorted({m for _, _, m in out}, reverse=True)
    rank_of = {}
    position = 1
    for m in ordered:
        rank_of[m] = position
        position += sum(1 for _, _, x in out if x == m)
    return [HumanEvalSummary(name, scores, m, rank_of[m]) for name, scores, m in out]


def _round_half_up(x: float, decimals: int) -> float:
    from decimal import ROUND_HALF_UP, Decimal

    q = Decimal(1).scaleb(-decimals)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))
