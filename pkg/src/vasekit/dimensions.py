"""Decomposition of captions and QA metadata into the six vase attribute slots."""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, fields
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Iterator, Mapping, Sequence

from sklearn.base import BaseEstimator, TransformerMixin

from .dataset import QuestionType, VaseEntry
from .exceptions import DuplicateAttribute, SchemaError
from .text import normalize, normalize_answer


class Dimension(str, Enum):
    # Canonical order; reward weights are listed in this order.
    FABRIC = "fabric"
    TECHNIQUE = "technique"
    SHAPE = "shape"
    DATING = "dating"
    DECORATION = "decoration"
    ATTRIBUTION = "attribution"


DIMENSIONS: tuple[Dimension, ...] = tuple(Dimension)


@dataclass(frozen=True)
class DimensionSlots:
    """Per-dimension text content; ``None`` marks an absent slot.

    Values are normalized on construction and empty strings collapse to ``None``.
    """

    fabric: str | None = None
    technique: str | None = None
    shape: str | None = None
    dating: str | None = None
    decoration: str | None = None
    attribution: str | None = None

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                value = normalize_answer(value) or None
                object.__setattr__(self, f.name, value)

    def __getitem__(self, dim: Dimension | str) -> str | None:
        return getattr(self, Dimension(dim).value)

    def items(self) -> Iterator[tuple[Dimension, str | None]]:
        for dim in DIMENSIONS:
            yield dim, self[dim]

    def populated(self) -> list[Dimension]:
        return [dim for dim, v in self.items() if v is not None]

    def to_dict(self) -> dict[str, str | None]:
        return {dim.value: v for dim, v in self.items()}

    @classmethod
    def from_dict(cls, obj: Mapping[str, str | None]) -> "DimensionSlots":
        unknown = set(obj) - {d.value for d in DIMENSIONS}
        if unknown:
            raise ValueError(f"unknown dimensions {sorted(unknown)}")
        return cls(**obj)


_LEXICON_KEYS = {
    Dimension.FABRIC: "fabric",
    Dimension.TECHNIQUE: "technique",
    Dimension.SHAPE: "shape",
    Dimension.DATING: "dating_patterns",
    Dimension.DECORATION: "decoration",
    Dimension.ATTRIBUTION: "attribution",
}


@dataclass(frozen=True)
class Lexicon:
    """Matcher rules per dimension.

    Every dimension except Dating holds literal phrases; Dating holds regular
    expressions. All rules are lowercase and non-empty.
    """

    rules: Mapping[Dimension, tuple[str, ...]]
    version: str = ""

    def __post_init__(self):
        for dim in DIMENSIONS:
            rules = self.rules.get(dim, ())
            if not rules:
                raise SchemaError(f"lexicon has no rules for {dim.value}")
            for rule in rules:
                if not isinstance(rule, str) or not rule.strip():
                    raise SchemaError(f"empty rule in {dim.value}")
                if rule != rule.lower():
                    raise SchemaError(f"rule {rule!r} in {dim.value} is not lowercase")
        # Compile once; also surfaces bad dating regexes at construction time.
        object.__setattr__(self, "_compiled", _compile(self))

    @classmethod
    def from_dict(cls, obj: Mapping) -> "Lexicon":
        missing = [k for k in _LEXICON_KEYS.values() if k not in obj]
        if missing:
            raise SchemaError(f"lexicon missing keys {missing}")
        rules = {dim: tuple(obj[key]) for dim, key in _LEXICON_KEYS.items()}
        return cls(rules, str(obj.get("version", "")))

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "Lexicon":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {key: list(self.rules[dim]) for dim, key in _LEXICON_KEYS.items()}
        out["version"] = self.version
        return out

    def matchers(self, dim: Dimension) -> tuple[re.Pattern, ...]:
        return self._compiled[dim]


def _compile(lexicon: Lexicon) -> dict[Dimension, tuple[re.Pattern, ...]]:
    out = {}
    for dim in DIMENSIONS:
        pats = []
        for rule in lexicon.rules[dim]:
            body = rule if dim is Dimension.DATING else re.escape(rule)
            try:
                pats.append(re.compile(rf"(?<!\w)(?:{body})(?!\w)"))
            except re.error as exc:
                raise SchemaError(f"bad pattern {rule!r} in {dim.value}: {exc}") from None
        out[dim] = tuple(pats)
    return out


@lru_cache(maxsize=1)
def default_lexicon() -> Lexicon:
    """The shipped Greek-pottery vocabulary."""
    with resources.files("vasekit.data").joinpath("default_lexicon.json").open(encoding="utf-8") as fh:
        return Lexicon.from_dict(json.load(fh))


def _merged_spans(text: str, patterns: Sequence[re.Pattern]) -> list[tuple[int, int]]:
    hits = []
    for pat in patterns:
        for m in pat.finditer(text):
            if m.end() > m.start():
                hits.append((m.start(), m.end()))
    hits.sort()
    merged: list[list[int]] = []
    for start, end in hits:
        if merged and start < merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(s, e) for s, e in merged]


def extract_spans(text: str, lexicon: Lexicon | None = None) -> dict[Dimension, list[str]]:
    """Maximal matched spans per dimension, in text order.

    Overlapping matches of one dimension's rules are merged into their union,
    so "neck-amphora" wins over the "amphora" it contains.
    """
    lexicon = lexicon or default_lexicon()
    norm = normalize(text)
    out = {}
    for dim in DIMENSIONS:
        spans = (normalize_answer(norm[s:e]) for s, e in _merged_spans(norm, lexicon.matchers(dim)))
        out[dim] = [s for s in spans if s]
    return out


def extract_slots(text: str, lexicon: Lexicon | None = None) -> DimensionSlots:
    spans = extract_spans(text, lexicon)
    return DimensionSlots(**{dim.value: " ".join(spans[dim]) or None for dim in DIMENSIONS})


def target_slots_from_qa(entry: VaseEntry) -> DimensionSlots:
    """Target slots from an entry's attribute QA answers.

    Caption and provenance questions do not populate slots. Two QAs of the same
    attribute type raise DuplicateAttribute.
    """
    values: dict[str, str] = {}
    for qa in entry.qa_pairs:
        if qa.question_type in (QuestionType.CAPTION, QuestionType.PROVENANCE):
            continue
        key = qa.question_type.value
        if key in values:
            raise DuplicateAttribute(f"entry {entry.vase_id!r} has more than one {key!r} QA")
        values[key] = qa.answer
    return DimensionSlots(**values)


class SlotExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer from raw captions to :class:`DimensionSlots`.

    Parameters
    ----------
    lexicon : Lexicon, str or None
        Lexicon object, path to a lexicon JSON file, or None for the default.
    """

    def __init__(self, lexicon=None):
        self.lexicon = lexicon

    def _resolve(self) -> Lexicon:
        if self.lexicon is None:
            return default_lexicon()
        if isinstance(self.lexicon, Lexicon):
            return self.lexicon
        return Lexicon.from_file(self.lexicon)

    def fit(self, X=None, y=None):
        self.lexicon_ = self._resolve()
        return self

    def transform(self, X) -> list[DimensionSlots]:
        lexicon = getattr(self, "lexicon_", None) or self._resolve()
        if isinstance(X, str):
            raise TypeError("expected an iterable of strings, got a single string")
        return [extract_slots(text, lexicon) for text in X]

    def get_feature_names_out(self, input_features=None):
        return [d.value for d in DIMENSIONS]
