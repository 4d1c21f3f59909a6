"""Text normalization and tokenization shared by extraction, similarity and metrics."""

from __future__ import annotations

import re
import unicodedata

_WS = re.compile(r"\s+")
_TOKEN = re.compile(r"\w+(?:[-'’]\w+)*")
_SENTENCE_SPLIT = re.compile(r"[.!?;]")
_EDGE_PUNCT = re.compile(r"^[\W_]+|[\W_]+$")


def normalize(text: str) -> str:
    """NFC, lowercase and collapse all whitespace runs to one space."""
    text = unicodedata.normalize("NFC", text).lower()
    return _WS.sub(" ", text).strip()


def strip_edge_punct(span: str) -> str:
    return _EDGE_PUNCT.sub("", span)


def normalize_answer(text: str) -> str:
    """Normalization used for slot contents and exact-match comparisons."""
    return strip_edge_punct(normalize(text))


def tokenize(text: str) -> list[str]:
    """Word tokens of the normalized text. Hyphenated compounds stay whole."""
    return _TOKEN.findall(normalize(text))


def split_sentences(text: str) -> list[str]:
    parts = (p.strip() for p in _SENTENCE_SPLIT.split(normalize(text)))
    return [p for p in parts if _TOKEN.search(p)]
