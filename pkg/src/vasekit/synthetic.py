"""Deterministic synthetic corpora for tests, demos and golden replays.

All randomness goes through :class:`~vasekit.dataset.SplitMix64`, so every
builder returns the same data on every platform and Python version.
"""

from __future__ import annotations

import gzip
import io
from importlib import resources

from ._io import dumps
from .dataset import (
    ATTRIBUTE_TYPES,
    DatasetManifest,
    QAPair,
    QuestionType,
    SplitMix64,
    VaseEntry,
    ViewRef,
    question_template,
)
from .filtering import ScoreRecord

FABRICS = ["Attic", "Corinthian", "Laconian", "Boeotian", "Apulian", "Lucanian", "Campanian", "Chalcidian"]
TECHNIQUES = ["red-figure", "black-figure", "white-ground", "black-glaze"]
SHAPES = ["amphora", "neck-amphora", "kylix", "hydria", "lekythos", "calyx-krater", "pelike",
          "oinochoe", "skyphos", "stamnos", "bell-krater", "pyxis"]
DATINGS = ["ca. 450 BC", "ca. 520 BC", "540-530 BC", "ca. 480 BC", "late 6th century BC",
           "early 5th century BC", "ca. 430 BC", "400-375 BC", "ca. 350 BC", "mid 6th century BC"]
DECORATIONS = ["Dionysos with maenads and satyrs", "warriors departing in a chariot",
               "palmettes and lotus buds", "Athena and Herakles", "a symposium with youths",
               "animal frieze with lions and goats", "Nike pouring a libation",
               "meander and rosettes", "Amazons fighting hoplites", "draped youths"]
PAINTERS = ["Berlin Painter", "Exekias", "Amasis Painter", "Douris", "Makron", "Euphronios",
            "Achilles Painter", "Niobid Painter", "Kleophrades Painter", "Brygos Painter",
            "Meidias Painter", "Darius Painter"]
PROVENANCES = ["Vulci", "Athens", "Cerveteri", "Nola", "Capua", "Taranto", "Orvieto", "Gela"]


def _pick(rng: SplitMix64, items):
    return items[rng.below(len(items))]


def make_caption(fabric: str, technique: str, shape: str, dating: str, decoration: str | None,
                 painter: str | None) -> str:
    parts = [f"This {fabric} {technique} {shape} was made {dating}."]
    if decoration:
        parts.append(f"Its body is decorated with {decoration}.")
    if painter:
        parts.append(f"The vase is attributed to the {painter}.")
    else:
        parts.append(f"The {shape} shows the finish typical of {fabric} workshops.")
    return " ".join(parts)


def make_entry(rng: SplitMix64, vase_id: str, with_decoration: bool = True, with_attribution: bool = True,
               with_provenance: bool = False, n_views: int = 2) -> VaseEntry:
    fabric, technique, shape = _pick(rng, FABRICS), _pick(rng, TECHNIQUES), _pick(rng, SHAPES)
    dating = _pick(rng, DATINGS)
    decoration = _pick(rng, DECORATIONS) if with_decoration else None
    painter = _pick(rng, PAINTERS) if with_attribution else None
    caption = make_caption(fabric, technique, shape, dating, decoration, painter)
    answers = {
        QuestionType.FABRIC: fabric,
        QuestionType.TECHNIQUE: technique,
        QuestionType.SHAPE: shape,
        QuestionType.CAPTION: caption,
        QuestionType.DATING: dating,
    }
    if decoration:
        answers[QuestionType.DECORATION] = decoration
    if painter:
        answers[QuestionType.ATTRIBUTION] = painter
    if with_provenance:
        answers[QuestionType.PROVENANCE] = _pick(rng, PROVENANCES)
    qas = []
    for qt, answer in answers.items():
        question = question_template(qt) if qt in ATTRIBUTE_TYPES else f"Describe the {qt.value} of the vase."
        if qt is QuestionType.CAPTION:
            question = "Describe this vase."
        qas.append(QAPair(qt, question, answer))
    views = tuple(ViewRef(f"{vase_id}-v{k}", f"renders/{vase_id}/view_{k}.png") for k in range(n_views))
    return VaseEntry(vase_id, views, tuple(qas), caption, None)


def reference_manifest(seed: int = 5) -> DatasetManifest:
    """664 entries with the per-question-type counts of the filtered dataset statistics.

    Fabric, technique, shape, caption and dating appear in every entry;
    decoration in 663, attribution in 280, provenance in 197 (4,460 QA pairs).
    """
    n = 664
    rng = SplitMix64(seed)
    order = list(range(n))
    rng.shuffle(order)
    no_decoration = set(order[:1])
    attribution = set(order[1:281])
    provenance = set(order[281:478])
    entries = [
        make_entry(rng, f"vase-{k:04d}", k not in no_decoration, k in attribution, k in provenance, n_views=1)
        for k in range(n)
    ]
    return DatasetManifest(tuple(entries), source="synthetic:reference")


def fixture_manifest(n: int = 20, seed: int = 20) -> DatasetManifest:
    rng = SplitMix64(seed)
    entries = [make_entry(rng, f"fx-{k:03d}", with_provenance=k % 3 == 0) for k in range(n)]
    return DatasetManifest(tuple(entries), source="synthetic:fixture")


def fixture_rollouts(manifest: DatasetManifest, per_group: int = 4, seed: int = 7) -> list[dict]:
    """Rollout records of mixed quality: exact, partial, repetitive and off-topic generations."""
    rng = SplitMix64(seed)
    rows = []
    for entry in manifest.entries:
        answers = {qa.question_type: qa.answer for qa in entry.qa_pairs}
        variants = [
            entry.caption,
            f"A {answers[QuestionType.TECHNIQUE]} {answers[QuestionType.SHAPE]} from {_pick(rng, FABRICS)} workshops.",
            " ".join([answers[QuestionType.SHAPE].split()[0]] * 30),
            "A lovely old object photographed in a museum, with nothing else to say about it really.",
            make_caption(_pick(rng, FABRICS), _pick(rng, TECHNIQUES), answers[QuestionType.SHAPE],
                         answers[QuestionType.DATING], _pick(rng, DECORATIONS), _pick(rng, PAINTERS)),
            "",
        ]
        for k in range(per_group):
            rows.append({"group_id": f"g-{entry.vase_id}", "vase_id": entry.vase_id,
                         "generated": variants[(k + rng.below(len(variants))) % len(variants)]})
    return rows


def fixture_predictions(manifest: DatasetManifest, seed: int = 11) -> list[dict]:
    rng = SplitMix64(seed)
    rows = []
    for k, entry in enumerate(manifest.entries):
        answers = {qa.question_type.value: qa.answer for qa in entry.qa_pairs
                   if qa.question_type is not QuestionType.CAPTION}
        if k % 2:
            answers["shape"] = _pick(rng, SHAPES)
        if k % 5 == 0:
            answers.pop("dating", None)
        caption = entry.caption if k % 3 else make_caption(
            _pick(rng, FABRICS), _pick(rng, TECHNIQUES), _pick(rng, SHAPES), _pick(rng, DATINGS),
            _pick(rng, DECORATIONS), None)
        rows.append({"vase_id": entry.vase_id, "caption": caption, "answers": answers})
    return rows


# Stage survivor counts of the curation replay.
CURATION_COUNTS = {"initial": 30_000, "quality": 13_599, "fragment": 6_330, "view": 3_880, "generation": 664}
CURATION_QUALITY = {"fragment": 0.156, "view": 0.234}


def _uniform(rng: SplitMix64, lo: float, hi: float) -> float:
    return lo + (hi - lo) * (rng.next_u64() >> 11) / float(1 << 53)


def curation_corpus(seed: int = 1) -> tuple[list[ScoreRecord], list[str]]:
    """Score records and successful-generation vase ids reproducing the curation table.

    Survivor counts are 30,000 -> 13,599 -> 6,330 -> 3,880 -> 664. Descriptive
    similarity is shaped so survivors of the fragment stage average 0.156 and
    the selected best views average 0.234. A few records sit exactly on the
    0.5 confidence and 0.1 margin boundaries.
    """
    c = CURATION_COUNTS
    rng = SplitMix64(seed)
    n_vases = c["view"]
    n_extra = c["fragment"] - n_vases
    n_frag_reject = c["quality"] - c["fragment"]
    n_quality_reject = c["initial"] - c["quality"]
    vase_ids = [f"V{k:05d}" for k in range(n_vases)]

    # Surviving images: one best view per vase plus extra, weaker views.
    owners = list(vase_ids) + [vase_ids[rng.below(n_vases)] for _ in range(n_extra)]
    best_scores = [_uniform(rng, 0.19, 0.28) for _ in range(n_vases)]
    extra_scores = [_uniform(rng, 0.0, 0.065) for _ in range(n_extra)]
    target_best = CURATION_QUALITY["view"]
    target_extra = (CURATION_QUALITY["fragment"] * c["fragment"] - target_best * n_vases) / n_extra
    shift_b = target_best - sum(best_scores) / n_vases
    shift_e = target_extra - sum(extra_scores) / n_extra
    descriptive = [s + shift_b for s in best_scores] + [max(0.0, s + shift_e) for s in extra_scores]

    def u4(lo, hi):
        return round(_uniform(rng, lo, hi), 4)

    # Components are rounded before composing so margins keep their side of 0.1.
    rows = []
    for k, (vid, desc) in enumerate(zip(owners, descriptive)):
        frag, margin, prob = u4(0.15, 0.25), u4(0.1, 0.2), u4(0.5, 1.0)
        if k < 5:
            frag, margin = 0.2, 0.1  # exactly on the margin boundary
        if 5 <= k < 10:
            prob = 0.5
        rows.append((vid, prob, round(frag + margin, 4), frag, round(desc, 4)))
    pool = vase_ids + [f"X{k:05d}" for k in range(4_000)]
    for k in range(n_frag_reject):
        frag = u4(0.15, 0.3)
        margin = 0.0999 if k < 5 else u4(-0.2, 0.0999)
        rows.append((_pick(rng, pool), u4(0.5, 1.0), round(frag + margin, 4), frag, u4(0.0, 0.3)))
    for k in range(n_quality_reject):
        prob = 0.4999 if k < 5 else u4(0.0, 0.4999)
        frag = u4(0.1, 0.3)
        rows.append((_pick(rng, pool), prob, round(frag + u4(-0.2, 0.2), 4), frag, u4(0.0, 0.3)))

    rng.shuffle(rows)
    records = [ScoreRecord(f"img-{k:05d}", *row) for k, row in enumerate(rows)]
    chosen = list(vase_ids)
    rng.shuffle(chosen)
    return records, sorted(chosen[: c["generation"]])


def dump_scores(records) -> str:
    return "".join(dumps(r.to_dict()) + "\n" for r in records)


def dump_generation(succeeded, all_vases=()) -> str:
    ok = set(succeeded)
    ids = sorted(set(all_vases) | ok)
    return "".join(dumps({"vase_id": v, "success": v in ok}) + "\n" for v in ids)


def gzip_bytes(text: str) -> bytes:
    buf = io.BytesIO()
    with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0, filename="") as gz:
        gz.write(text.encode("utf-8"))
    return buf.getvalue()


def shipped_curation_paths():
    """Paths of the packaged score corpus and generation results."""
    root = resources.files("vasekit.data")
    return root.joinpath("curation_scores.jsonl.gz"), root.joinpath("curation_generation.jsonl")


RATINGS_CSV = "expert_ratings.csv"


def shipped_human_eval_csv():
    return resources.files("vasekit.data").joinpath(RATINGS_CSV)
