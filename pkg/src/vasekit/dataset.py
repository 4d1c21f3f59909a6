"""Vase dataset schema, JSONL manifests and deterministic train/val/test splits."""

from __future__ import annotations

import math
import os
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from ._io import dumps, iter_jsonl, atomic_write_text
from .exceptions import EmptyManifest, InvalidRatios, SchemaError

SCHEMA_VERSION = "1.0"


class QuestionType(str, Enum):
    FABRIC = "fabric"
    TECHNIQUE = "technique"
    SHAPE = "shape"
    CAPTION = "caption"
    DATING = "dating"
    DECORATION = "decoration"
    ATTRIBUTION = "attribution"
    PROVENANCE = "provenance"


# Question types that carry one of the six attribute slots.
ATTRIBUTE_TYPES = (
    QuestionType.FABRIC,
    QuestionType.TECHNIQUE,
    QuestionType.SHAPE,
    QuestionType.DATING,
    QuestionType.DECORATION,
    QuestionType.ATTRIBUTION,
)

SPLITS = ("train", "val", "test")


def question_template(question_type: QuestionType | str) -> str:
    return f"What is the {QuestionType(question_type).value} of the vase?"


@dataclass(frozen=True)
class ViewRef:
    view_id: str
    uri: str

    def to_dict(self) -> dict:
        return {"view_id": self.view_id, "uri": self.uri}


@dataclass(frozen=True)
class QAPair:
    question_type: QuestionType
    question: str
    answer: str

    def to_dict(self) -> dict:
        return {
            "question_type": self.question_type.value,
            "question": self.question,
            "answer": self.answer,
        }


@dataclass(frozen=True)
class VaseEntry:
    vase_id: str
    views: tuple[ViewRef, ...]
    qa_pairs: tuple[QAPair, ...]
    caption: str
    split: str | None = None

    def answers(self) -> dict[QuestionType, list[str]]:
        out: dict[QuestionType, list[str]] = {}
        for qa in self.qa_pairs:
            out.setdefault(qa.question_type, []).append(qa.answer)
        return out

    def to_dict(self) -> dict:
        # Key order here is the canonical on-disk order.
        return {
            "vase_id": self.vase_id,
            "views": [v.to_dict() for v in self.views],
            "qa_pairs": [qa.to_dict() for qa in self.qa_pairs],
            "caption": self.caption,
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "VaseEntry":
        """Build an entry from its JSON object, checking field types and enum values.

        Raises SchemaError (naming the entry) on any structural problem. Cross-entry
        invariants such as id uniqueness are checked by the manifest.
        """
        vid = obj.get("vase_id")
        if not isinstance(vid, str) or not vid:
            raise SchemaError("vase_id must be a non-empty string", entry=vid if isinstance(vid, str) else None)
        missing = {"views", "qa_pairs", "caption"} - set(obj)
        if missing:
            raise SchemaError(f"missing fields {sorted(missing)}", entry=vid)
        if not isinstance(obj["views"], list) or not obj["views"]:
            raise SchemaError("at least one view is required", entry=vid)
        views = []
        for v in obj["views"]:
            if not isinstance(v, dict) or not isinstance(v.get("view_id"), str) or not isinstance(v.get("uri"), str):
                raise SchemaError("view must have string view_id and uri", entry=vid)
            views.append(ViewRef(v["view_id"], v["uri"]))
        if not isinstance(obj["qa_pairs"], list):
            raise SchemaError("qa_pairs must be a list", entry=vid)
        qas = []
        for qa in obj["qa_pairs"]:
            if not isinstance(qa, dict):
                raise SchemaError("qa pair must be an object", entry=vid)
            try:
                qtype = QuestionType(qa.get("question_type"))
            except ValueError:
                raise SchemaError(f"unknown question_type {qa.get('question_type')!r}", entry=vid) from None
            question, answer = qa.get("question"), qa.get("answer")
            if not isinstance(question, str) or not isinstance(answer, str):
                raise SchemaError("question and answer must be strings", entry=vid)
            qas.append(QAPair(qtype, question, answer))
        if not isinstance(obj["caption"], str):
            raise SchemaError("caption must be a string", entry=vid)
        split = obj.get("split")
        if split is not None and split not in SPLITS:
            raise SchemaError(f"split must be one of {SPLITS} or null", entry=vid)
        return cls(vid, tuple(views), tuple(qas), obj["caption"], split)


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[VaseEntry, ...]
    source: str = ""
    schema_version: str = SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.entries)

    def by_id(self) -> dict[str, VaseEntry]:
        return {e.vase_id: e for e in self.entries}

    def question_type_counts(self) -> dict[str, int]:
        counts = Counter(qa.question_type.value for e in self.entries for qa in e.qa_pairs)
        return {qt.value: counts.get(qt.value, 0) for qt in QuestionType}

    @property
    def total_qa(self) -> int:
        return sum(len(e.qa_pairs) for e in self.entries)

    @property
    def avg_qa_per_entry(self) -> float:
        return self.total_qa / len(self.entries) if self.entries else 0.0


@dataclass(frozen=True)
class Finding:
    kind: str  # DuplicateId | DuplicateQuestionType | EmptyAnswer | QuestionTemplate
    vase_id: str
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.findings

    def by_kind(self, kind: str) -> list[Finding]:
        return [f for f in self.findings if f.kind == kind]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "findings": [
                {"kind": f.kind, "vase_id": f.vase_id, "detail": f.detail} for f in self.findings
            ],
        }


_FATAL_FINDINGS = frozenset({"DuplicateId", "DuplicateQuestionType", "EmptyAnswer"})


def validate_manifest(manifest: DatasetManifest) -> ValidationReport:
    findings: list[Finding] = []
    seen: set[str] = set()
    for entry in manifest.entries:
        if entry.vase_id in seen:
            findings.append(Finding("DuplicateId", entry.vase_id))
        seen.add(entry.vase_id)
        counts = Counter(qa.question_type for qa in entry.qa_pairs)
        for qtype, n in counts.items():
            if n > 1:
                findings.append(Finding("DuplicateQuestionType", entry.vase_id, qtype.value))
        for qa in entry.qa_pairs:
            if not qa.answer.strip():
                findings.append(Finding("EmptyAnswer", entry.vase_id, qa.question_type.value))
            if qa.question_type in ATTRIBUTE_TYPES and qa.question != question_template(qa.question_type):
                findings.append(Finding("QuestionTemplate", entry.vase_id, qa.question))
    return ValidationReport(tuple(findings))


def parse_manifest_lines(lines: Iterable[tuple[int, dict]], source: str = "") -> DatasetManifest:
    entries = []
    for lineno, obj in lines:
        try:
            entries.append(VaseEntry.from_dict(obj))
        except SchemaError as exc:
            err = SchemaError(f"line {lineno}: {exc}")
            err.entry = exc.entry
            raise err from None
    return DatasetManifest(tuple(entries), source=source)


def load_manifest(path: str | os.PathLike, strict: bool = True) -> DatasetManifest:
    """Load a JSONL manifest, one VaseEntry object per line.

    With ``strict`` (the default) duplicate ids, duplicate question types and
    empty answers raise SchemaError naming the offending entry; otherwise
    findings are left to :func:`validate_manifest`. Off-template question
    wording is only ever reported, never raised.
    """
    manifest = parse_manifest_lines(iter_jsonl(path), source=str(path))
    if not manifest.entries:
        raise EmptyManifest(f"{path}: manifest has no entries")
    if strict:
        fatal = [f for f in validate_manifest(manifest).findings if f.kind in _FATAL_FINDINGS]
        if fatal:
            first = fatal[0]
            raise SchemaError(f"{first.kind} {first.detail}".strip(), entry=first.vase_id)
    return manifest


def dump_manifest(manifest: DatasetManifest) -> str:
    return "".join(dumps(e.to_dict()) + "\n" for e in manifest.entries)


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    atomic_write_text(path, dump_manifest(manifest))


class SplitMix64:
    """SplitMix64: a 64-bit counter-based generator (Steele, Lea & Flood 2014).

    The state is a counter advanced by a fixed odd gamma; each output is a
    bijective mix of the counter, so streams are identical on every platform.
    """

    GAMMA = 0x9E3779B97F4A7C15
    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next_u64(self) -> int:
        self.state = (self.state + self.GAMMA) & self.MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)`` by rejection sampling (no modulo bias)."""
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % bound

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, walking from the last index down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


@dataclass(frozen=True)
class SplitAssignment:
    ratios: tuple[float, float, float]
    seed: int
    assignment: dict[str, str] = field(default_factory=dict)

    def sizes(self) -> dict[str, int]:
        c = Counter(self.assignment.values())
        return {s: c.get(s, 0) for s in SPLITS}

    def ids(self, split: str) -> list[str]:
        return [vid for vid, s in self.assignment.items() if s == split]

    def summary(self) -> dict:
        return {**self.sizes(), "seed": self.seed}


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    # The 1e-9 slack keeps products like 0.7 * 600 from flooring to 419.
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    return n_train, n_val, n - n_train - n_val


def split_dataset(
    manifest: DatasetManifest,
    ratios: Sequence[float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> SplitAssignment:
    """Assign every vase to train/val/test.

    Vase ids are sorted, shuffled with :class:`SplitMix64` seeded by ``seed``,
    then cut into ``floor(r1*N)`` train, ``floor(r2*N)`` val and the remainder
    as test. The result depends only on the id set, the ratios and the seed.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(not math.isfinite(r) or r <= 0 for r in ratios):
        raise InvalidRatios(f"ratios must be three positive numbers, got {ratios}")
    if abs(math.fsum(ratios) - 1.0) > 1e-9:
        raise InvalidRatios(f"ratios must sum to 1.0, got {math.fsum(ratios)}")
    if not manifest.entries:
        raise EmptyManifest("cannot split an empty manifest")

    ids = sorted({e.vase_id for e in manifest.entries})
    SplitMix64(seed).shuffle(ids)
    n_train, n_val, _ = split_sizes(len(ids), ratios)
    assignment = {}
    for k, vid in enumerate(ids):
        assignment[vid] = "train" if k < n_train else "val" if k < n_train + n_val else "test"
    return SplitAssignment(ratios, seed, dict(sorted(assignment.items())))
