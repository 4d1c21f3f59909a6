"""Replay of the image-curation filter stages over precomputed scores.

Every stage is a stable partition of its input into kept and rejected
records. Scores come from files or a scoring service; nothing here runs a
neural model.
"""

from __future__ import annotations

import math
import os
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_scalar

from ._io import iter_jsonl
from .exceptions import ChainMismatch, EmptyGroup, MixedGroup, ParseError, SchemaError

# Boundary slack so that e.g. 0.3 - 0.2 (= 0.0999...98) still passes a 0.1 margin.
BOUNDARY_EPS = 1e-9


@dataclass(frozen=True)
class ScoreRecord:
    image_id: str
    vase_id: str
    quality_prob: float
    sim_complete: float
    sim_fragment: float
    sim_descriptive: float

    def __post_init__(self):
        for name in ("quality_prob", "sim_complete", "sim_fragment", "sim_descriptive"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise SchemaError(f"{name} is not finite", entry=self.image_id)
            object.__setattr__(self, name, v)
        if not 0.0 <= self.quality_prob <= 1.0:
            raise SchemaError("quality_prob outside [0, 1]", entry=self.image_id)

    @property
    def fragment_margin(self) -> float:
        return self.sim_complete - self.sim_fragment

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ScoreRecord":
        try:
            return cls(
                image_id=str(obj["image_id"]),
                vase_id=str(obj["vase_id"]),
                quality_prob=obj["quality_prob"],
                sim_complete=obj["sim_complete"],
                sim_fragment=obj["sim_fragment"],
                sim_descriptive=obj["sim_descriptive"],
            )
        except KeyError as exc:
            raise SchemaError(f"missing field {exc.args[0]!r}", entry=obj.get("image_id")) from None
        except (TypeError, ValueError) as exc:
            raise SchemaError(str(exc), entry=obj.get("image_id")) from None


def load_scores(path: str | os.PathLike) -> list[ScoreRecord]:
    records = []
    for lineno, obj in iter_jsonl(path):
        try:
            records.append(ScoreRecord.from_dict(obj))
        except SchemaError as exc:
            raise ParseError(lineno, str(exc)) from None
    return records


def load_generation_results(path: str | os.PathLike) -> set[str]:
    """Vase ids whose 3D generation succeeded, from JSONL ``{"vase_id", "success"}`` lines."""
    return {str(obj["vase_id"]) for _, obj in iter_jsonl(path) if obj.get("success", True)}


def _partition(records: Iterable[ScoreRecord], keep: Callable[[ScoreRecord], bool]):
    kept, rejected = [], []
    for rec in records:
        (kept if keep(rec) else rejected).append(rec)
    return kept, rejected


def quality_gate(records: Iterable[ScoreRecord], threshold: float = 0.5):
    """Keep records whose classifier confidence is at least ``threshold``."""
    return _partition(records, lambda r: r.quality_prob >= threshold)


def fragment_filter(records: Iterable[ScoreRecord], margin: float = 0.1):
    """Keep records scoring at least ``margin`` higher against the complete-vase prompt than the fragment one."""
    return _partition(records, lambda r: r.fragment_margin >= margin - BOUNDARY_EPS)


def select_best_view(group: Sequence[ScoreRecord]) -> str:
    """Image id with the highest descriptive similarity; ties go to the smallest image id."""
    if not group:
        raise EmptyGroup("cannot select a view from an empty group")
    vase_ids = {r.vase_id for r in group}
    if len(vase_ids) > 1:
        raise MixedGroup(f"group mixes vase ids {sorted(vase_ids)}")
    best = min(group, key=lambda r: (-r.sim_descriptive, r.image_id))
    return best.image_id


def view_selection(records: Iterable[ScoreRecord]):
    """Keep one best view per vase, in input order."""
    records = list(records)
    groups: dict[str, list[ScoreRecord]] = {}
    for rec in records:
        groups.setdefault(rec.vase_id, []).append(rec)
    chosen = {select_best_view(g) for g in groups.values()}
    return _partition(records, lambda r: r.image_id in chosen)


def generation_filter(records: Iterable[ScoreRecord], succeeded: Iterable[str]):
    ok = set(succeeded)
    return _partition(records, lambda r: r.vase_id in ok)


@dataclass(frozen=True)
class StageResult:
    name: str
    inputs: tuple[ScoreRecord, ...]
    kept: tuple[ScoreRecord, ...]
    rejected: tuple[ScoreRecord, ...]
    reports_quality: bool = False


STAGE_NAMES = {
    "quality": "Quality Filtering",
    "fragment": "Fragment Filtering",
    "view": "View Selection",
    "generation": "3D Generation",
}


def run_pipeline(
    records: Sequence[ScoreRecord],
    stages: Sequence[str] = ("quality", "fragment", "view"),
    quality_threshold: float = 0.5,
    fragment_margin: float = 0.1,
    generation: Iterable[str] | None = None,
) -> list[StageResult]:
    results = []
    current = list(records)
    for stage in stages:
        if stage == "quality":
            kept, rejected = quality_gate(current, quality_threshold)
        elif stage == "fragment":
            kept, rejected = fragment_filter(current, fragment_margin)
        elif stage == "view":
            kept, rejected = view_selection(current)
        elif stage == "generation":
            if generation is None:
                raise ValueError("the generation stage needs a list of successful vase ids")
            kept, rejected = generation_filter(current, generation)
        else:
            raise ValueError(f"unknown stage {stage!r}; expected one of {sorted(STAGE_NAMES)}")
        results.append(
            StageResult(STAGE_NAMES[stage], tuple(current), tuple(kept), tuple(rejected),
                        reports_quality=stage in ("fragment", "view"))
        )
        current = kept
    return results


@dataclass(frozen=True)
class RetentionRow:
    stage: str
    input_count: int
    output_count: int
    rate: float
    quality_score: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RetentionTable:
    rows: tuple[RetentionRow, ...]
    overall: RetentionRow

    def to_dict(self) -> dict:
        return {"stages": [r.to_dict() for r in self.rows], "overall": self.overall.to_dict()}

    def render(self) -> str:
        header = ("Filtering Stage", "Input Images", "Output Images", "Retention Rate", "Quality Score")
        body = [_row_cells(r) for r in self.rows]
        overall = _row_cells(self.overall)
        widths = [max(len(c[i]) for c in [header, *body, overall]) for i in range(len(header))]

        def line(cells):
            first = cells[0].ljust(widths[0])
            rest = (c.rjust(w) for c, w in zip(cells[1:], widths[1:]))
            return "  ".join([first, *rest]).rstrip()

        rule = "-" * len(line(header))
        return "\n".join([line(header), rule, *map(line, body), rule, line(overall)]) + "\n"


def _row_cells(row: RetentionRow) -> tuple[str, ...]:
    q = "-" if row.quality_score is None else f"{row.quality_score:.3f}"
    return (row.stage, f"{row.input_count:,}", f"{row.output_count:,}", f"{100 * row.rate:.1f}%", q)


def pipeline_stats(stages: Sequence[StageResult]) -> RetentionTable:
    """Retention counts, rates and survivor quality for chained stage outputs."""
    if not stages:
        raise ValueError("no stages to summarise")
    rows = []
    for k, st in enumerate(stages):
        if Counter(r.image_id for r in st.kept + st.rejected) != Counter(r.image_id for r in st.inputs):
            raise ChainMismatch(f"stage {st.name!r}: kept and rejected do not partition its input")
        if k and Counter(r.image_id for r in st.inputs) != Counter(r.image_id for r in stages[k - 1].kept):
            raise ChainMismatch(f"stage {st.name!r} input is not the output of {stages[k - 1].name!r}")
        n_in, n_out = len(st.inputs), len(st.kept)
        quality = None
        if st.reports_quality and st.kept:
            quality = float(np.mean([r.sim_descriptive for r in st.kept]))
        rows.append(RetentionRow(st.name, n_in, n_out, n_out / n_in if n_in else 0.0, quality))
    last_quality = next((r.quality_score for r in reversed(rows) if r.quality_score is not None), None)
    n0, nk = rows[0].input_count, rows[-1].output_count
    overall = RetentionRow("Overall Pipeline", n0, nk, nk / n0 if n0 else 0.0, last_quality)
    return RetentionTable(tuple(rows), overall)


class _RecordFilter(BaseEstimator):
    """Shared ``fit_predict`` surface: a boolean keep-mask aligned with the input records."""

    def fit(self, X, y=None):
        self._check_params()
        return self

    def _check_params(self):
        pass

    def _split(self, records):
        raise NotImplementedError

    def fit_predict(self, X, y=None) -> np.ndarray:
        self.fit(X)
        records = list(X)
        kept, _ = self._split(records)
        keep_ids = {id(r) for r in kept}
        return np.array([id(r) in keep_ids for r in records], dtype=bool)

    def split(self, X):
        """Return ``(kept, rejected)`` lists."""
        self._check_params()
        return self._split(list(X))


class QualityGate(_RecordFilter):
    def __init__(self, threshold=0.5):
        self.threshold = threshold

    def _check_params(self):
        check_scalar(self.threshold, "threshold", (int, float), min_val=0.0, max_val=1.0)

    def _split(self, records):
        return quality_gate(records, self.threshold)


class FragmentFilter(_RecordFilter):
    def __init__(self, margin=0.1):
        self.margin = margin

    def _check_params(self):
        check_scalar(self.margin, "margin", (int, float))

    def _split(self, records):
        return fragment_filter(records, self.margin)


class BestViewSelector(_RecordFilter):
    def _split(self, records):
        return view_selection(records)
