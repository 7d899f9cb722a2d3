"""Command-line entry point.

One binary, six subcommands: ingest raw collection files, run LLM batch
annotation, generate synthetic collections, run budget sweeps, serve the
live annotation API, and re-emit reports from sweep output.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  Diagnostics go to
stderr; results go to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

from .errors import LaraError

TOKEN_ENV = "LARA_TOKEN"


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit code 1, not 2."""

    def error(self, message: str):
        raise CliUsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="lara", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="base random seed (default: 0)")
    common.add_argument("--config", type=Path, default=None,
                        help="configuration file (TOML)")
    common.add_argument("--out", type=Path, default=None,
                        help="output file or directory")

    p = sub.add_parser("ingest", parents=[common],
                       help="validate raw collection files and write a normalized collection")
    p.add_argument("--qrels", type=Path, required=True, help="qrels file")
    p.add_argument("--runs", type=Path, required=True, help="run file")
    p.add_argument("--probs", type=Path, default=None, help="LLM probability records")
    p.add_argument("--topics", type=Path, default=None, help="topic text store")
    p.add_argument("--docs", type=Path, default=None, help="document text store")
    p.add_argument("--max-grade", type=int, required=True, help="highest relevance grade")
    p.add_argument("--name", default="collection", help="collection name")

    p = sub.add_parser("annotate", parents=[common],
                       help="fetch LLM grade probabilities for every pair of a collection")
    p.add_argument("--endpoint", default=None, help="completion endpoint URL")
    p.add_argument("--token", default=None,
                   help=f"bearer token (falls back to ${TOKEN_ENV})")

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic collection with controlled miscalibration")
    p.add_argument("--topics", type=int, default=30, help="number of topics")
    p.add_argument("--docs-per-topic", type=int, default=100, help="documents per topic")
    p.add_argument("--systems", type=int, default=20, help="number of systems")
    p.add_argument("--max-grade", type=int, default=1, help="highest relevance grade")
    p.add_argument("--slope", type=float, default=1.0,
                   help="miscalibration slope a (1.0 = calibrated)")
    p.add_argument("--offset", type=float, default=0.0, help="miscalibration offset b")
    p.add_argument("--name", default="", help="collection name")
    p.add_argument("--no-texts", action="store_true",
                   help="skip topic/document text generation")

    p = sub.add_parser("sweep", parents=[common],
                       help="run a methods x budget-ratios x seeds experiment sweep")
    p.add_argument("--ratio", action="append", default=None,
                   help="budget ratio (repeatable), e.g. --ratio 1/64")
    p.add_argument("--method", action="append", default=None,
                   help="restrict to named methods (repeatable)")
    p.add_argument("--budget", type=int, default=None,
                   help="absolute budget override (single-ratio shortcut)")

    p = sub.add_parser("serve", parents=[common],
                       help="serve the live annotation HTTP API")
    p.add_argument("--listen", default="127.0.0.1:8237", help="host:port to bind")
    p.add_argument("--data-dir", type=Path, default=Path("lara-data"),
                   help="session persistence directory")
    p.add_argument("--token", default=None,
                   help=f"shared bearer token (falls back to ${TOKEN_ENV})")

    p = sub.add_parser("report", parents=[common],
                       help="re-emit report files from a sweep output directory")
    p.add_argument("--from", dest="from_dir", type=Path, required=True,
                   help="sweep output directory holding cache/")
    p.add_argument("--format", choices=["csv", "text-table", "both"], default="both",
                   help="report format (default: both)")

    return parser


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def _resolve_token(flag_value: str | None) -> str | None:
    return flag_value if flag_value is not None else os.environ.get(TOKEN_ENV)


# --- subcommand bodies -----------------------------------------------------------


def _cmd_ingest(args) -> int:
    from .trec_io import (
        Collection, load_probs, load_qrels, load_runs, read_docs, read_topics,
        write_collection,
    )

    out = args.out or Path(f"{args.name}-collection")
    qrels = {(r.topic_id, r.doc_id): r.grade for r in load_qrels(args.qrels)}
    runs = load_runs(args.runs)
    probs = {}
    if args.probs:
        probs = {(r.topic_id, r.doc_id): r for r in load_probs(args.probs, args.max_grade)}
    topics = {}
    if args.topics:
        with open(args.topics, encoding="utf-8") as fh:
            topics = read_topics(fh)
    docs = {}
    if args.docs:
        with open(args.docs, encoding="utf-8") as fh:
            docs = read_docs(fh)
    coll = Collection(args.name, args.max_grade, qrels, runs, probs, topics, docs)
    coll.validate()
    manifest = write_collection(coll, out)
    print(manifest)
    return 0


def _cmd_annotate(args) -> int:
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    from .llm import (
        BASE_TEMPLATE, CompletionClient, DecodingConfig, PromptTemplate,
        batch_annotate, write_failures,
    )
    from .trec_io import load_collection

    if args.config is None:
        raise CliUsageError("annotate requires --config")
    data = tomllib.loads(Path(args.config).read_text(encoding="utf-8"))
    base = Path(args.config).parent

    def resolve(rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else base / p

    coll = load_collection(resolve(data["manifest"]))
    endpoint = args.endpoint or data.get("endpoint")
    if not endpoint:
        raise CliUsageError("no endpoint configured (flag --endpoint or config key)")
    template = BASE_TEMPLATE
    if data.get("template"):
        template = PromptTemplate.from_file(
            resolve(data["template"]), answer_marker=data.get("answer_marker") or None
        )
    decoding = DecodingConfig(**data.get("decoding", {}))
    grade_tokens = None
    if "grade_tokens" in data:
        grade_tokens = {int(k): v for k, v in data["grade_tokens"].items()}
    client = CompletionClient(
        endpoint=endpoint,
        model_id=str(data.get("model", "default")),
        token=_resolve_token(args.token),
    )
    out = Path(args.out) if args.out else resolve(data.get("out", "probs.jsonl"))
    result = batch_annotate(
        pairs=sorted(coll.qrels),
        client=client,
        config=decoding,
        template=template,
        topics=coll.topics,
        docs=coll.docs,
        max_grade=coll.max_grade,
        cache_path=out,
        grade_tokens=grade_tokens,
        missing_grade_fallback=str(data.get("fallback", "uniform")),
        parallel=int(data.get("parallel", 1)),
    )
    if result.failures:
        failure_path = out.with_suffix(".failures.jsonl")
        write_failures(result.failures, failure_path)
        print(
            f"{len(result.records)} annotated, {len(result.failures)} failed "
            f"(see {failure_path}), {result.endpoint_calls} endpoint calls",
            file=sys.stderr,
        )
        return 2
    print(f"{len(result.records)} annotated, {result.endpoint_calls} endpoint calls",
          file=sys.stderr)
    print(out)
    return 0


def _cmd_synth(args) -> int:
    from .simulation import SynthConfig, generate_collection
    from .trec_io import write_collection

    overrides = {}
    if args.config is not None:
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        overrides = tomllib.loads(Path(args.config).read_text(encoding="utf-8"))
        overrides = overrides.get("synth", overrides)
    config = SynthConfig(
        topics=int(overrides.get("topics", args.topics)),
        docs_per_topic=int(overrides.get("docs_per_topic", args.docs_per_topic)),
        systems=int(overrides.get("systems", args.systems)),
        max_grade=int(overrides.get("max_grade", args.max_grade)),
        a=float(overrides.get("a", args.slope)),
        b=float(overrides.get("b", args.offset)),
        seed=int(overrides.get("seed", args.seed if args.seed is not None else 0)),
        with_texts=not (bool(overrides.get("no_texts", False)) or args.no_texts),
        name=str(overrides.get("name", args.name)),
    )
    synthetic = generate_collection(config)
    out = args.out or Path(synthetic.collection.name)
    manifest = write_collection(synthetic.collection, out)
    print(manifest)
    return 0


def _cmd_sweep(args) -> int:
    from .engine import emit_report, load_experiment_config, parse_ratio, run_sweep

    if args.config is None:
        raise CliUsageError("sweep requires --config")
    config = load_experiment_config(args.config)
    if args.ratio:
        config.ratios = [parse_ratio(r) for r in args.ratio]
    if args.method:
        known = {m.name for m in config.methods}
        missing = [m for m in args.method if m not in known]
        if missing:
            raise CliUsageError(f"unknown methods {missing}; configured: {sorted(known)}")
        config.methods = [m for m in config.methods if m.name in args.method]
    if args.budget is not None:
        from .trec_io import load_collection

        pool_size = len(load_collection(config.manifest).qrels)
        config.ratios = [Fraction(min(args.budget, pool_size), pool_size)]
    if args.seed is not None:
        config.seeds = [args.seed]
    if args.out is not None:
        config.out_dir = str(args.out)
    report = run_sweep(config)
    written = emit_report(report, config.out_dir, "csv")
    written += emit_report(report, config.out_dir, "text-table")
    for path in written:
        print(path)
    if report.failures:
        print(f"{len(report.failures)} cells failed; see failures.csv", file=sys.stderr)
        return 2
    return 0


def _cmd_serve(args) -> int:
    from .service import serve
    from .trec_io import load_collection

    collections = {}
    if args.config is not None:
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        data = tomllib.loads(Path(args.config).read_text(encoding="utf-8"))
        base = Path(args.config).parent
        for name, manifest in data.get("collections", {}).items():
            path = Path(manifest)
            collections[str(name)] = load_collection(path if path.is_absolute() else base / path)
    serve(
        data_dir=args.data_dir,
        listen=args.listen,
        collections=collections,
        token=_resolve_token(args.token),
    )
    return 0


def _cmd_report(args) -> int:
    from .engine import SweepReport, SweepRow, emit_report

    cache_dir = Path(args.from_dir) / "cache"
    if not cache_dir.is_dir():
        raise LaraError(f"no cache directory at {cache_dir}")
    rows = []
    collection = ""
    metric = ""
    for path in sorted(cache_dir.glob("*.json")):
        cached = json.loads(path.read_text(encoding="utf-8"))
        rows.append(SweepRow(**cached["row"]))
        collection = cached.get("collection", collection)
        metric = cached.get("metric", metric)
    if not rows:
        raise LaraError(f"no cached sweep cells under {cache_dir}")
    report = SweepReport(collection=collection, metric=metric, rows=rows)
    report.rows.sort(key=SweepRow.sort_key)
    out = args.out or args.from_dir
    written = []
    if args.format in ("csv", "both"):
        written += emit_report(report, out, "csv")
    if args.format in ("text-table", "both"):
        written += emit_report(report, out, "text-table")
    for path in written:
        print(path)
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "annotate": _cmd_annotate,
    "synth": _cmd_synth,
    "sweep": _cmd_sweep,
    "serve": _cmd_serve,
    "report": _cmd_report,
}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliUsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lara: error: {exc}", file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    handler = _COMMANDS[args.command]
    try:
        return handler(args)
    except CliUsageError as exc:
        print(f"lara: error: {exc}", file=sys.stderr)
        return 1
    except LaraError as exc:
        return _fail(str(exc))
    except FileNotFoundError as exc:
        return _fail(f"missing file: {exc.filename}")
    except KeyboardInterrupt:
        return _fail("interrupted")


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
