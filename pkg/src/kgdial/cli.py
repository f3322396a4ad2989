"""Command-line entry points: eval, bench, chat, validate, stats."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .corpus import load_dataset, stats
from .errors import KgdialError
from .metrics import report_to_json, report_to_table
from .pipeline import (
    PipelineConfig,
    PlannerPolicy,
    chat,
    config_from_obj,
    run_bench_artifacts,
    run_eval,
    write_artifacts,
)
from .retrieval import Strategy, profile_to_obj

_STRATEGY_ALIASES = {
    "a": Strategy.DEPENDENT_A,
    "b": Strategy.INDEPENDENT_B,
    "c": Strategy.MERGED_C,
    "d": Strategy.CONCATENATED_D,
}


def _parse_strategy(value: str) -> Strategy:
    key = value.strip()
    if key.lower() in _STRATEGY_ALIASES:
        return _STRATEGY_ALIASES[key.lower()]
    try:
        return Strategy(key.upper())
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"unknown strategy {value!r}; use a/b/c/d or the full names"
        ) from None


def _int_list(value: str) -> list[int]:
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {value!r}") from None


def _add_config_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="pipeline config JSON file")
    parser.add_argument("--dataset", help="dataset JSONL path (overrides config)")
    parser.add_argument(
        "--planner-mode",
        choices=[p.value for p in PlannerPolicy],
        help="planning policy (overrides config)",
    )
    parser.add_argument("--top-n", type=int, help="retrieval depth (overrides config)")
    parser.add_argument(
        "--strategy", type=_parse_strategy, help="a/b/c/d or full name (overrides config)"
    )
    parser.add_argument("--backend-endpoint", help="HTTP backend base URL")
    parser.add_argument("--backend-model", help="HTTP backend model name")
    parser.add_argument("--seed", type=int, help="seed (overrides config)")


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    obj: dict = {}
    if args.config:
        obj = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.dataset:
        obj["dataset_path"] = args.dataset
    if "dataset_path" not in obj:
        raise KgdialError("no dataset: pass --dataset or a config with dataset_path")
    if args.planner_mode:
        obj["planner_mode"] = args.planner_mode
    retrieval = obj.setdefault("retrieval", {})
    if args.top_n is not None:
        retrieval["top_n"] = args.top_n
    if args.strategy is not None:
        retrieval["strategy"] = args.strategy.value
    if args.backend_endpoint:
        backend = obj.get("backend") or {"kind": "HTTP_CHAT"}
        backend["endpoint"] = args.backend_endpoint
        if args.backend_model:
            backend["model_name"] = args.backend_model
        obj["backend"] = backend
    if args.seed is not None:
        obj["seed"] = args.seed
    return config_from_obj(obj)


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    artifacts = run_eval(cfg)
    print(report_to_table(artifacts.report))
    if artifacts.errors:
        print(f"\n{artifacts.errors} sample(s) failed; see audit log", file=sys.stderr)
    if args.out:
        paths = write_artifacts(artifacts, args.out)
        print(f"\nartifacts written to {paths['config'].parent}")
    return min(artifacts.errors, 99)


def _cmd_bench(args: argparse.Namespace) -> int:
    strategies = args.strategies or list(Strategy)
    artifacts = run_bench_artifacts(
        args.n, args.m, strategies, args.queries, args.seed or 0
    )
    print(json.dumps([profile_to_obj(p) for p in artifacts.profiles], indent=2))
    if args.out:
        write_artifacts(artifacts, args.out)
    return 0


def _cmd_chat(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    record = None
    if args.dialogue_id:
        records = load_dataset(cfg.dataset_path)
        matches = [r for r in records if r.dialogue_id == args.dialogue_id]
        if not matches:
            print(f"no dialogue with id {args.dialogue_id!r}", file=sys.stderr)
            return 2
        record = matches[0]
    return chat(cfg, record=record)


def _cmd_validate(args: argparse.Namespace) -> int:
    try:
        records = load_dataset(args.dataset)
    except KgdialError as exc:
        print(f"INVALID: {exc}", file=sys.stderr)
        return 1
    n_samples = sum(
        1 for r in records for t in r.turns if t.speaker.value == "SYSTEM"
    )
    print(f"OK: {len(records)} dialogues, {n_samples} samples")
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    records = load_dataset(args.dataset)
    print(json.dumps(dataclasses.asdict(stats(records)), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgdial",
        description=(
            "Plan/retrieve/assemble pipeline for multi-source "
            "knowledge-grounded dialogue"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="run the pipeline over a dataset and score it")
    _add_config_overrides(p_eval)
    p_eval.add_argument("--out", help="directory for report/audit artifacts")
    p_eval.set_defaults(func=_cmd_eval)

    p_bench = sub.add_parser("bench", help="profile the source-organization strategies")
    p_bench.add_argument("--n", type=_int_list, default=[4, 8], help="persona counts, comma-separated")
    p_bench.add_argument("--m", type=_int_list, default=[5], help="documents per persona, comma-separated")
    p_bench.add_argument(
        "--strategies",
        type=lambda v: [_parse_strategy(p) for p in v.split(",")],
        help="subset like a,b,c,d (default: all)",
    )
    p_bench.add_argument("--queries", type=int, default=5, help="queries per cell")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", help="directory for bench.json")
    p_bench.set_defaults(func=_cmd_bench)

    p_chat = sub.add_parser("chat", help="interactive session against the pipeline")
    _add_config_overrides(p_chat)
    p_chat.add_argument("--dialogue-id", help="dialogue whose stores to chat against")
    p_chat.set_defaults(func=_cmd_chat)

    p_validate = sub.add_parser("validate", help="lint a dataset file")
    p_validate.add_argument("dataset", help="dataset JSONL path")
    p_validate.set_defaults(func=_cmd_validate)

    p_stats = sub.add_parser("stats", help="corpus statistics")
    p_stats.add_argument("dataset", help="dataset JSONL path")
    p_stats.set_defaults(func=_cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KgdialError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
