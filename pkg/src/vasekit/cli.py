"""Command-line entry point: ``vasekit <subcommand> [flags]``.

Exit codes: 0 success, 1 data errors (reported per record, processing
continues), 2 usage or configuration errors.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__
from ._io import open_text, write_json, write_jsonl
from .dataset import load_manifest, split_dataset, validate_manifest
from .dimensions import DIMENSIONS, Lexicon, default_lexicon, target_slots_from_qa
from .exceptions import InvalidConfig, ProviderError, UsageError, VasekitError
from .filtering import (
    ScoreRecord,
    load_generation_results,
    pipeline_stats,
    run_pipeline,
)
from .metrics import Prediction, evaluate_run, human_eval_summary
from .reward import RewardConfig, compute_reward, group_advantages
from .scorer_client import SCORER_URL_ENV, ScorerEndpointConfig
from .similarity import make_provider

SUBCOMMANDS = ("reward", "advantage", "evaluate", "filter", "split", "validate", "human-eval")

DEFAULT_CONFIG: dict[str, Any] = {
    "reward": RewardConfig().to_dict(),
    "provider": "hashed-bow",
    "dimension": 1024,
    "lexicon": None,
    "scorer": ScorerEndpointConfig().to_dict(),
    "filter": {"quality_threshold": 0.5, "fragment_margin": 0.1},
    "split": {"ratios": [0.70, 0.15, 0.15], "seed": 0},
    "advantage": {"eps": 1e-8},
    "jobs": 1,
}


@dataclass
class RunPlan:
    subcommand: str
    config: dict
    inputs: dict[str, Path] = field(default_factory=dict)
    outputs: dict[str, Path] = field(default_factory=dict)
    options: dict[str, Any] = field(default_factory=dict)
    print_config: bool = False


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    common = _Parser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    common.add_argument("--jobs", type=int, help="max records processed concurrently")
    common.add_argument("--provider", choices=["hashed-bow", "remote"])
    common.add_argument("--dimension", type=int, help="hashed-bow embedding dimension")
    common.add_argument("--scorer-url", help=f"scoring service base URL (env {SCORER_URL_ENV})")
    common.add_argument("--lexicon", type=Path, help="lexicon JSON overriding the default")

    parser = _Parser(prog="vasekit", description="Caption reward, curation replay and evaluation engine.",
                     allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"vasekit {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("reward", parents=[common], allow_abbrev=False, help="score rollouts")
    p.add_argument("--rollouts", type=Path)
    p.add_argument("--targets", type=Path, help="manifest JSONL with ground truth")
    p.add_argument("--out", type=Path)
    p.add_argument("--weights", help="six comma-separated weights in canonical dimension order")
    for name in ("tau", "beta", "alpha-length", "alpha-repetition", "alpha-irrelevant", "tau-irrelevant"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--length-min", type=int)
    p.add_argument("--length-max", type=int)

    p = sub.add_parser("advantage", parents=[common], allow_abbrev=False, help="group-normalize rewards")
    p.add_argument("--rewards", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--eps", type=float)

    p = sub.add_parser("evaluate", parents=[common], allow_abbrev=False, help="evaluate a prediction run")
    p.add_argument("--predictions", type=Path)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("filter", parents=[common], allow_abbrev=False, help="replay curation filters")
    p.add_argument("--scores", type=Path)
    p.add_argument("--stages", default="quality,fragment,view")
    p.add_argument("--generation", type=Path, help="JSONL of {vase_id, success}")
    p.add_argument("--quality-threshold", type=float)
    p.add_argument("--fragment-margin", type=float)
    p.add_argument("--out", type=Path, help="retention report JSON")
    p.add_argument("--kept", type=Path, help="write surviving score records here")

    p = sub.add_parser("split", parents=[common], allow_abbrev=False, help="train/val/test split")
    p.add_argument("--manifest", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--ratios", help="three comma-separated fractions")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("validate", parents=[common], allow_abbrev=False, help="validate a manifest")
    p.add_argument("--manifest", type=Path)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("human-eval", parents=[common], allow_abbrev=False, help="average expert ratings")
    p.add_argument("--csv", type=Path)
    p.add_argument("--out", type=Path)
    return parser


# (subcommand, input flags, required output flags, optional output flags)
_IO = {
    "reward": (("rollouts", "targets"), ("out",), ()),
    "advantage": (("rewards",), ("out",), ()),
    "evaluate": (("predictions", "manifest"), ("out",), ()),
    "filter": (("scores",), (), ("out", "kept")),
    "split": (("manifest",), ("out",), ()),
    "validate": (("manifest",), (), ("out",)),
    "human-eval": (("csv",), (), ("out",)),
}


def _deep_merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise UsageError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and key != "weights":
            if not isinstance(value, dict):
                raise UsageError(f"config key {where!r} must be an object")
            out[key] = _deep_merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _floats(text: str, n: int, flag: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"{flag}: expected {n} comma-separated numbers") from None
    if len(vals) != n:
        raise UsageError(f"{flag}: expected {n} values, got {len(vals)}")
    return vals


def resolve_config(args: argparse.Namespace, environ=os.environ) -> dict:
    """defaults <- config file <- environment (scorer URL only) <- flags."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc.msg}") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
        cfg = _deep_merge(cfg, loaded)
    if environ.get(SCORER_URL_ENV):
        cfg["scorer"]["base_url"] = environ[SCORER_URL_ENV]

    def put(section, key, value):
        if value is not None:
            (cfg[section] if section else cfg)[key] = value

    put(None, "jobs", args.jobs)
    put(None, "provider", args.provider)
    put(None, "dimension", args.dimension)
    put(None, "lexicon", str(args.lexicon) if args.lexicon else None)
    put("scorer", "base_url", args.scorer_url)
    a = vars(args)
    for flag in ("tau", "beta", "alpha_length", "alpha_repetition", "alpha_irrelevant", "tau_irrelevant",
                 "length_min", "length_max"):
        put("reward", flag, a.get(flag))
    if a.get("weights"):
        put("reward", "weights", dict(zip((d.value for d in DIMENSIONS), _floats(a["weights"], 6, "--weights"))))
    put("advantage", "eps", a.get("eps"))
    put("filter", "quality_threshold", a.get("quality_threshold"))
    put("filter", "fragment_margin", a.get("fragment_margin"))
    if a.get("ratios"):
        put("split", "ratios", _floats(a["ratios"], 3, "--ratios"))
    put("split", "seed", a.get("seed"))
    return cfg


def check_config(cfg: dict) -> None:
    """Raise UsageError unless every section passes its module-level invariants."""
    try:
        RewardConfig.from_dict(cfg["reward"]).validate()
        ScorerEndpointConfig.from_dict(cfg["scorer"]).validate()
    except (InvalidConfig, TypeError) as exc:
        raise UsageError(_flagify(str(exc))) from None
    if cfg["provider"] not in ("hashed-bow", "remote"):
        raise UsageError(f"provider must be 'hashed-bow' or 'remote', got {cfg['provider']!r}")
    if not isinstance(cfg["dimension"], int) or cfg["dimension"] < 2:
        raise UsageError("--dimension must be an integer >= 2")
    if not isinstance(cfg["jobs"], int) or cfg["jobs"] < 1:
        raise UsageError("--jobs must be >= 1")
    if not 0.0 <= cfg["filter"]["quality_threshold"] <= 1.0:
        raise UsageError("--quality-threshold must lie in [0, 1]")
    if not cfg["advantage"]["eps"] > 0:
        raise UsageError("--eps must be positive")
    ratios = cfg["split"]["ratios"]
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise UsageError(f"--ratios must be three positive fractions summing to 1, got {ratios}")
    if cfg["lexicon"] is not None:
        try:
            Lexicon.from_file(cfg["lexicon"])
        except (OSError, ValueError) as exc:
            raise UsageError(f"--lexicon {cfg['lexicon']}: {exc}") from None


def _flagify(message: str) -> str:
    # "tau must lie in [0, 1]" -> "--tau must lie in [0, 1]"
    head, _, rest = message.partition(" ")
    if head in RewardConfig.__dataclass_fields__:
        return f"--{head.replace('_', '-')} {rest}"
    return message


def parse_invocation(argv: Sequence[str], environ=os.environ) -> RunPlan:
    args = _build_parser().parse_args(list(argv))
    cfg = resolve_config(args, environ)
    check_config(cfg)
    a = vars(args)
    ins, req_outs, opt_outs = _IO[args.subcommand]
    plan = RunPlan(args.subcommand, cfg, print_config=args.print_config)
    for name in ins:
        if a.get(name) is not None:
            plan.inputs[name] = a[name]
    for name in req_outs + opt_outs:
        if a.get(name) is not None:
            plan.outputs[name] = a[name]
    if args.subcommand == "filter":
        stages = [s.strip() for s in args.stages.split(",") if s.strip()]
        bad = [s for s in stages if s not in ("quality", "fragment", "view", "generation")]
        if bad or not stages:
            raise UsageError(f"--stages: unknown stage(s) {bad or stages}")
        if "generation" in stages and args.generation is None:
            raise UsageError("--stages generation needs --generation")
        plan.options["stages"] = stages
        if args.generation is not None:
            plan.inputs["generation"] = args.generation
    if plan.print_config:
        return plan
    for name in ins:
        if name not in plan.inputs:
            raise UsageError(f"--{name} is required")
    for name in req_outs:
        if name not in plan.outputs:
            raise UsageError(f"--{name} is required")
    for name, path in plan.inputs.items():
        if not path.is_file():
            raise UsageError(f"--{name}: input file not found: {path}")
    in_paths = {p.resolve() for p in plan.inputs.values()}
    for name, path in plan.outputs.items():
        if path.resolve() in in_paths:
            raise UsageError(f"--{name} {path} would overwrite an input file")
    if len({p.resolve() for p in plan.outputs.values()}) != len(plan.outputs):
        raise UsageError("output paths must be distinct")
    return plan


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()


class _Errors:
    def __init__(self, out=sys.stderr):
        self.out = out
        self.count = 0

    def report(self, where: str, message: str) -> None:
        self.count += 1
        print(f"error: {where}: {message}", file=self.out)


def _read_jsonl_lenient(path: Path, errors: _Errors) -> list[tuple[int, dict]]:
    rows = []
    with open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.report(f"{path}:{lineno}", f"malformed JSON ({exc.msg})")
                continue
            if not isinstance(obj, dict):
                errors.report(f"{path}:{lineno}", "expected a JSON object")
                continue
            rows.append((lineno, obj))
    return rows


def _map(fn: Callable, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _provider(cfg: dict):
    scorer = ScorerEndpointConfig.from_dict(cfg["scorer"])
    provider = make_provider(cfg["provider"], cfg["dimension"], scorer)
    if cfg["provider"] == "remote":
        provider.dimension  # health check; raises on a bad endpoint
    return provider


def _run_reward(plan: RunPlan, errors: _Errors) -> None:
    cfg = plan.config
    reward_cfg = RewardConfig.from_dict(cfg["reward"]).validate()
    lexicon = Lexicon.from_file(cfg["lexicon"]) if cfg["lexicon"] else default_lexicon()
    manifest = load_manifest(plan.inputs["targets"]).by_id()
    provider = _provider(cfg)
    path = plan.inputs["rollouts"]

    def score(item):
        lineno, obj = item
        try:
            vid, generated = obj["vase_id"], obj["generated"]
            if not isinstance(generated, str):
                raise ValueError("'generated' must be a string")
            if vid not in manifest:
                raise KeyError(f"unknown vase_id {vid!r}")
            entry = manifest[vid]
            slots = target_slots_from_qa(entry)
            result = compute_reward(generated, slots, entry.caption, reward_cfg, provider, lexicon)
        except KeyError as exc:
            return lineno, None, str(exc.args[0]) if exc.args else "missing field"
        except (ValueError, VasekitError) as exc:
            if isinstance(exc, ProviderError):
                raise
            return lineno, None, str(exc)
        row = {"group_id": obj.get("group_id"), "vase_id": vid, "generated": generated,
               "target_slots": slots.to_dict(), **result.to_dict()}
        return lineno, row, None

    results = _map(score, _read_jsonl_lenient(path, errors), cfg["jobs"])
    rows = []
    for lineno, row, err in results:
        if err is not None:
            errors.report(f"{path}:{lineno}", err)
        else:
            rows.append(row)
    write_jsonl(plan.outputs["out"], rows)
    print(f"scored {len(rows)} rollouts ({errors.count} errors) -> {plan.outputs['out']}")


def _run_advantage(plan: RunPlan, errors: _Errors) -> None:
    path = plan.inputs["rewards"]
    records = []
    for lineno, obj in _read_jsonl_lenient(path, errors):
        r = obj.get("reward")
        if not isinstance(r, (int, float)) or isinstance(r, bool) or obj.get("group_id") is None:
            errors.report(f"{path}:{lineno}", "needs numeric 'reward' and a 'group_id'")
            continue
        records.append(obj)
    groups: dict[Any, list[int]] = {}
    for k, obj in enumerate(records):
        groups.setdefault(obj["group_id"], []).append(k)
    out: list[dict | None] = [None] * len(records)
    for gid, idx in groups.items():
        res = group_advantages([records[k]["reward"] for k in idx], plan.config["advantage"]["eps"])
        for k, adv in zip(idx, res.advantages):
            out[k] = {"group_id": gid, "vase_id": records[k].get("vase_id"), "reward": records[k]["reward"],
                      "advantage": adv, "group_mean": res.mean, "group_std": res.std}
    write_jsonl(plan.outputs["out"], out)
    print(f"{len(out)} advantages over {len(groups)} groups -> {plan.outputs['out']}")


def _run_evaluate(plan: RunPlan, errors: _Errors) -> None:
    manifest = load_manifest(plan.inputs["manifest"])
    known = manifest.by_id()
    path = plan.inputs["predictions"]
    preds, seen = [], set()
    for lineno, obj in _read_jsonl_lenient(path, errors):
        try:
            p = Prediction.from_dict(obj)
        except ValueError as exc:
            errors.report(f"{path}:{lineno}", str(exc))
            continue
        if p.vase_id not in known:
            errors.report(f"{path}:{lineno}", f"unknown vase_id {p.vase_id!r}")
            continue
        if p.vase_id in seen:
            errors.report(f"{path}:{lineno}", f"duplicate vase_id {p.vase_id!r}")
            continue
        seen.add(p.vase_id)
        preds.append(p)
    if not preds:
        errors.report(str(path), "no valid predictions")
        return
    report = evaluate_run(preds, manifest, _provider(plan.config))
    body = report.to_dict()
    body["engine_version"] = __version__
    body["config_hash"] = config_hash(plan.config)
    write_json(plan.outputs["out"], body)
    r = report.recall_at
    print(f"n={report.n_items} R@1={r[1]:.4f} R@5={r[5]:.4f} R@10={r[10]:.4f} "
          f"lexical={report.lexical_similarity:.4f} -> {plan.outputs['out']}")


def _run_filter(plan: RunPlan, errors: _Errors) -> None:
    path = plan.inputs["scores"]
    records = []
    for lineno, obj in _read_jsonl_lenient(path, errors):
        try:
            records.append(ScoreRecord.from_dict(obj))
        except ValueError as exc:
            errors.report(f"{path}:{lineno}", str(exc))
    generation = load_generation_results(plan.inputs["generation"]) if "generation" in plan.inputs else None
    fcfg = plan.config["filter"]
    stages = run_pipeline(records, plan.options["stages"], fcfg["quality_threshold"], fcfg["fragment_margin"],
                          generation)
    table = pipeline_stats(stages)
    sys.stdout.write(table.render())
    if "out" in plan.outputs:
        write_json(plan.outputs["out"], table.to_dict())
    if "kept" in plan.outputs:
        write_jsonl(plan.outputs["kept"], [r.to_dict() for r in stages[-1].kept])


def _run_split(plan: RunPlan, errors: _Errors) -> None:
    manifest = load_manifest(plan.inputs["manifest"])
    s = plan.config["split"]
    assignment = split_dataset(manifest, s["ratios"], s["seed"])
    out = plan.outputs["out"]
    write_json(out, assignment.assignment)
    summary = out.with_name(out.stem + ".summary.json")
    write_json(summary, assignment.summary())
    sizes = assignment.sizes()
    print(f"train={sizes['train']} val={sizes['val']} test={sizes['test']} seed={s['seed']} -> {out}")


def _run_validate(plan: RunPlan, errors: _Errors) -> None:
    from .dataset import parse_manifest_lines
    from ._io import iter_jsonl

    path = plan.inputs["manifest"]
    manifest = parse_manifest_lines(iter_jsonl(path), source=str(path))
    report = validate_manifest(manifest)
    for f in report.findings:
        errors.report(f.vase_id, f"{f.kind} {f.detail}".strip())
    counts = manifest.question_type_counts()
    print(f"{len(manifest)} entries, {manifest.total_qa} QA pairs "
          f"({manifest.avg_qa_per_entry:.2f} per entry); "
          + ", ".join(f"{k}={v}" for k, v in counts.items()))
    if "out" in plan.outputs:
        write_json(plan.outputs["out"], {**report.to_dict(), "question_type_counts": counts,
                                         "entries": len(manifest), "total_qa": manifest.total_qa})


def _run_human_eval(plan: RunPlan, errors: _Errors) -> None:
    rows = human_eval_summary(plan.inputs["csv"])
    width = max(len(r.method) for r in rows)
    for r in rows:
        print(f"{r.method.ljust(width)}  {r.mean:.2f}  {r.rank}")
    if "out" in plan.outputs:
        write_json(plan.outputs["out"], [{"method": r.method, "mean": r.mean, "rank": r.rank} for r in rows])


_RUNNERS = {
    "reward": _run_reward,
    "advantage": _run_advantage,
    "evaluate": _run_evaluate,
    "filter": _run_filter,
    "split": _run_split,
    "validate": _run_validate,
    "human-eval": _run_human_eval,
}


def execute(plan: RunPlan, stderr=None) -> int:
    stderr = stderr or sys.stderr
    if plan.print_config:
        print(json.dumps(plan.config, indent=2, sort_keys=True))
        return 0
    errors = _Errors(stderr)
    try:
        _RUNNERS[plan.subcommand](plan, errors)
    except (UsageError, InvalidConfig) as exc:
        print(f"usage error: {exc}", file=stderr)
        return 2
    except ProviderError as exc:
        print(f"provider error: {exc}", file=stderr)
        return 2
    except (VasekitError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    if errors.count:
        print(f"{errors.count} record error(s)", file=stderr)
        return 1
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        plan = parse_invocation(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    return execute(plan)


if __name__ == "__main__":
    sys.exit(main())
