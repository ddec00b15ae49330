"""Command-line entry point: ``ragstar index|ask|eval|distill``.

Exit codes: 0 success, 2 usage or validation error, 3 runtime or transport error.
"""

import argparse
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from ragstar import __version__
from ragstar.config import build_judge, build_policy, build_retriever, load_settings, search_config
from ragstar.distill import export_dataset, manifest_path, run_pipeline
from ragstar.evaluation import evaluate, load_dataset, subsample
from ragstar.exceptions import (
    ConfigError,
    CorpusError,
    DegenerateGenerationError,
    IndexFormatError,
    TransportError,
)
from ragstar.retrieval import build_index
from ragstar.search import run_search

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

logger = logging.getLogger("ragstar")


class UsageError(Exception):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _overrides(args) -> dict:
    ov = {"search.seed": args.seed}
    for flag, key in (
        ("max_simulations", "search.max_simulations"),
        ("max_depth", "search.max_depth"),
        ("w", "search.w"),
        ("m_q", "search.m_q"),
        ("k_docs", "search.k_docs"),
        ("workers", "search.workers"),
        ("jobs", "eval.jobs"),
    ):
        value = getattr(args, flag, None)
        if isinstance(value, list):
            value = value[0] if len(value) == 1 else None
        ov[key] = value
    for name in ("query_reward", "answer_reward", "retrieval", "refine"):
        if getattr(args, f"no_{name}", False):
            ov[f"ablations.{name}"] = False
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        ov[key.strip()] = value.strip()
    return ov


def _manifest(settings, policy, judge, args, **extra) -> dict:
    return {
        "version": __version__,
        "config": settings,
        "config_path": str(args.config) if args.config else None,
        "seed": settings["search"]["seed"],
        "backends": {"policy": policy.backend_id, "judge": judge.backend_id},
        "index": str(getattr(args, "index", None) or settings["retrieval"]["index"]),
        **extra,
    }


def cmd_index(args) -> int:
    if not Path(args.corpus).exists():
        raise UsageError(f"corpus file not found: {args.corpus}")
    index = build_index(args.corpus, args.out)
    print(f"{index.num_docs} documents indexed, {len(index.vocabulary)} terms -> {args.out}")
    return EXIT_OK


def cmd_ask(args) -> int:
    settings = load_settings(args.config, _overrides(args))
    config = search_config(settings)
    policy, judge = build_policy(settings), build_judge(settings)
    retriever = build_retriever(settings, args.index)
    started = _now()
    result = run_search(args.question, config, policy, judge, retriever)
    print(result.final_answer)
    if args.trace:
        out = Path(args.trace)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.json").write_text(result.trace({"question": args.question}) + "\n")
        manifest = _manifest(settings, policy, judge, args, question=args.question,
                             started=started, finished=_now(), timings=result.timings)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        if args.dot:
            (out / "tree.dot").write_text(result.tree.to_dot())
        logger.info("trace written to %s", out)
    return EXIT_OK


def cmd_eval(args) -> int:
    examples = load_dataset(args.dataset)
    if not examples:
        raise UsageError(f"dataset {args.dataset} is empty")
    settings = load_settings(args.config, _overrides(args))
    limit = args.limit if args.limit is not None else (settings["eval"]["limit"] or None)
    examples = subsample(examples, limit, settings["search"]["seed"])
    budgets = args.max_simulations or [settings["search"]["max_simulations"]]
    policy, judge = build_policy(settings), build_judge(settings)
    retriever = build_retriever(settings, args.index)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = args.name or Path(args.dataset).stem
    all_failed = True
    for budget in budgets:
        settings["search"]["max_simulations"] = budget
        config = search_config(settings)
        started = time.perf_counter()
        report = evaluate(
            examples,
            lambda q: run_search(q, config, policy, judge, retriever).final_answer,
            name=name,
            jobs=settings["eval"]["jobs"],
            settings={"max_simulations": budget, "seed": config.seed},
        )
        stem = f"report_sims{budget}" if len(budgets) > 1 else "report"
        (out / f"{stem}.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        (out / f"{stem}.txt").write_text(report.to_table())
        print(f"max_simulations={budget}: EM {report.em:.1f}  CEM {report.cover_em:.1f}  "
              f"F1 {report.f1:.1f}  ({len(report.records)} examples, {report.failures} failed, "
              f"{time.perf_counter() - started:.1f}s)")
        all_failed = all_failed and report.failures == len(report.records)
    manifest = _manifest(settings, policy, judge, args, dataset=str(args.dataset),
                         example_ids=[e.id for e in examples], budgets=budgets, finished=_now())
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_RUNTIME if all_failed else EXIT_OK


def cmd_distill(args) -> int:
    settings = load_settings(args.config, _overrides(args))
    datasets = {}
    for path in args.datasets:
        name = Path(path).stem
        if name in datasets:
            raise UsageError(f"two input datasets share the name {name!r}")
        datasets[name] = load_dataset(path)
    policy, judge = build_policy(settings), build_judge(settings)
    retriever = build_retriever(settings, args.index)
    result = run_pipeline(
        datasets, policy, judge, retriever,
        seed=settings["search"]["seed"],
        k=settings["search"]["k_docs"],
        jobs=settings["eval"]["jobs"],
    )
    manifest = export_dataset(result.records, args.out, args.format,
                              filtered=result.filtered, skipped=result.skipped)
    if not result.records:
        logger.warning("every example was filtered or skipped; wrote an empty dataset")
    print(f"{manifest['records']} records written to {args.out} "
          f"(filtered {result.filtered}, skipped {result.skipped})")
    print("r_q: " + "  ".join(f"{k}={v}" for k, v in manifest["r_q"].items()))
    print("r_a: " + "  ".join(f"{k}={v}" for k, v in manifest["r_a"].items()))
    print("manifest: " + str(manifest_path(args.out)))
    return EXIT_OK


def _add_search_flags(p):
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--index", type=Path, help="index directory (overrides retrieval.index)")
    p.add_argument("--max-depth", type=int)
    p.add_argument("--w", type=float, help="UCT exploration weight")
    p.add_argument("--m-q", type=int, dest="m_q", help="sub-queries sampled per expansion")
    p.add_argument("--k-docs", type=int, help="documents retrieved per step")
    p.add_argument("--workers", type=int, help="concurrent child expansions")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    for name in ("query-reward", "answer-reward", "retrieval", "refine"):
        p.add_argument(f"--no-{name}", action="store_true", help=f"ablation: disable {name.replace('-', ' ')}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="global random seed (search.seed)")
    common.add_argument("--log-level", default="WARNING")

    parser = argparse.ArgumentParser(prog="ragstar", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", parents=[common], help="build a BM25 index from a JSON-lines corpus")
    p.add_argument("corpus", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("ask", parents=[common], help="answer one question")
    p.add_argument("question")
    _add_search_flags(p)
    p.add_argument("--max-simulations", type=int)
    p.add_argument("--trace", type=Path, help="directory for trace.json and manifest.json")
    p.add_argument("--dot", action="store_true", help="also write tree.dot into the trace directory")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("eval", parents=[common], help="score the engine on a QA dataset")
    p.add_argument("dataset", type=Path)
    _add_search_flags(p)
    p.add_argument("--max-simulations", type=int, nargs="+",
                   help="one or more simulation budgets; one report per budget")
    p.add_argument("--out", type=Path, required=True, help="report directory")
    p.add_argument("--limit", type=int, help="evaluate a seeded random subset of N examples")
    p.add_argument("--jobs", type=int, help="questions evaluated concurrently")
    p.add_argument("--name", help="dataset name in the report table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("distill", parents=[common], help="synthesize reward-model training data")
    p.add_argument("datasets", type=Path, nargs="+")
    _add_search_flags(p)
    p.add_argument("--out", type=Path, required=True, help="output JSON-lines file")
    p.add_argument("--format", choices=("jsonl", "chat"), default="jsonl")
    p.add_argument("--jobs", type=int, help="examples processed concurrently")
    p.set_defaults(func=cmd_distill)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}" + (f" (key: {err.key})" if err.key else ""), file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, CorpusError, IndexFormatError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (TransportError, DegenerateGenerationError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
