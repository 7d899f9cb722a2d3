"""Experiment orchestration: budget sweeps over methods x ratios x seeds.

Each sweep cell runs one annotation session against the ground-truth oracle,
assembles final labels, scores every system under the estimated and the true
qrels, and records the ranking agreement.  Cells are cached on disk under a
content hash of everything that determines their outcome, so interrupted
sweeps resume without recomputation and stale caches can never be confused
with the current configuration.

Report files are deterministic byte-for-byte given (config, seeds); wall
times go to a separate sidecar so timing noise never touches the report.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import InvalidConfig, LaraError, UnknownCollection
from .metrics import RankingComparison, compare_rankings, mean_of, overlap, score_systems
from .simulation import OracleAnnotator
from .strategies import FinalLabels, JudgmentPool, make_strategy, run_strategy
from .trec_io import Collection, Pair, load_collection, write_probs, write_qrels, write_run

DEFAULT_RATIOS = (
    "1/512", "1/256", "1/128", "1/64", "1/32", "1/16", "1/8", "1/4", "1/2", "1",
)


@dataclass(frozen=True)
class StrategySpec:
    name: str            # row label in reports
    kind: str            # registry key
    params: dict = field(default_factory=dict)

    def cache_token(self) -> str:
        return json.dumps(
            {"kind": self.kind, "params": self.params}, sort_keys=True
        )


@dataclass
class ExperimentConfig:
    manifest: str
    out_dir: str
    methods: list[StrategySpec]
    ratios: list[Fraction]
    seeds: list[int]
    metric: str = "map"
    use_cache: bool = True

    def validate(self) -> None:
        if not self.methods:
            raise InvalidConfig("configure at least one method")
        if not self.seeds:
            raise InvalidConfig("configure at least one seed")
        if self.metric not in ("map", "ndcg"):
            raise InvalidConfig(f"metric must be map or ndcg, got {self.metric!r}")
        for ratio in self.ratios:
            if not 0 < ratio <= 1:
                raise InvalidConfig(f"budget ratio {ratio} outside (0, 1]")
        names = [m.name for m in self.methods]
        if len(names) != len(set(names)):
            raise InvalidConfig("method names must be unique")


def parse_ratio(text: str | float | int) -> Fraction:
    if isinstance(text, (int, float)):
        ratio = Fraction(text).limit_denominator(10_000_000)
    else:
        try:
            ratio = Fraction(text.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise InvalidConfig(f"bad budget ratio {text!r}: {exc}") from None
    if not 0 < ratio <= 1:
        raise InvalidConfig(f"budget ratio must be in (0, 1], got {ratio}")
    return ratio


def ratio_label(ratio: Fraction) -> str:
    return str(ratio)


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise InvalidConfig(f"{path}: {exc}") from None
    try:
        methods = [
            StrategySpec(
                name=str(m.get("name", m["kind"])),
                kind=str(m["kind"]),
                params=dict(m.get("params", {})),
            )
            for m in data["methods"]
        ]
        ratios = [parse_ratio(r) for r in data.get("ratios", DEFAULT_RATIOS)]
        config = ExperimentConfig(
            manifest=str(data["manifest"]),
            out_dir=str(data.get("out_dir", "sweep-out")),
            methods=methods,
            ratios=ratios,
            seeds=[int(s) for s in data.get("seeds", [0])],
            metric=str(data.get("metric", "map")),
            use_cache=bool(data.get("use_cache", True)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"{path}: {exc!r}") from None
    config.validate()
    base = path.parent
    if not Path(config.manifest).is_absolute():
        config.manifest = str(base / config.manifest)
    if not Path(config.out_dir).is_absolute():
        config.out_dir = str(base / config.out_dir)
    return config


# --- single sessions ----------------------------------------------------------------

def budget_for(ratio: Fraction, pool_size: int) -> int:
    """B = ceil(ratio * |D|), never exceeding the pool."""
    b = -((-pool_size * ratio.numerator) // ratio.denominator)
    return min(int(b), pool_size)


def run_session(
    spec: StrategySpec,
    pool: JudgmentPool,
    oracle: Callable[[Pair], int],
) -> tuple[FinalLabels, list[tuple[Pair, int]]]:
    """Run one annotation session to completion; the trace lists every
    judgment in order for replay."""
    trace: list[tuple[Pair, int]] = []
    try:
        strategy = make_strategy(spec.kind, pool, **spec.params)
        labels = run_strategy(
            strategy, oracle, on_judgment=lambda pair, grade: trace.append((pair, grade))
        )
    except LaraError as exc:
        raise type(exc)(f"[method {spec.name}] {exc}") from exc
    return labels, trace


def score_collection(
    labels: FinalLabels,
    runs,
    truth_qrels: dict[Pair, int],
    metric: str = "map",
    max_grade: int = 1,
) -> tuple[RankingComparison, float | None]:
    """Ranking agreement of the estimated qrels with the truth, plus the
    overlap score over the predicted (non-human) pairs; overlap is None
    when nothing was predicted."""
    estimated = labels.all_labels()
    truth_scores = mean_of(score_systems(runs, truth_qrels, metric, max_grade))
    eval_scores = mean_of(score_systems(runs, estimated, metric, max_grade))
    comparison = compare_rankings(truth_scores, eval_scores)
    if labels.predicted:
        truth_subset = {p: truth_qrels[p] for p in labels.predicted}
        ov: float | None = overlap(truth_subset, labels.predicted)
    else:
        ov = None
    return comparison, ov


# --- sweeps ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    method: str
    ratio: str           # exact fraction label, e.g. "1/64"
    seed: int
    tau: float
    max_drop: int
    overlap: float | None
    n_human: int
    n_llm: int

    def sort_key(self) -> tuple:
        return (self.method, Fraction(self.ratio), self.seed)


@dataclass
class SweepReport:
    collection: str
    metric: str
    rows: list[SweepRow] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    # timing sidecar: (method, ratio, seed) -> seconds; not part of the
    # deterministic report surface
    wall_times: dict[tuple[str, str, int], float] = field(default_factory=dict)


def collection_digest(coll: Collection) -> str:
    """Content hash over everything a session outcome can depend on."""
    h = hashlib.sha256()
    buf = io.StringIO()
    write_qrels(coll.qrels, buf)
    h.update(buf.getvalue().encode("utf-8"))
    buf = io.StringIO()
    write_run(coll.runs, buf)
    h.update(buf.getvalue().encode("utf-8"))
    if coll.probs:
        buf = io.StringIO()
        write_probs([coll.probs[p] for p in sorted(coll.probs)], buf)
        h.update(buf.getvalue().encode("utf-8"))
    h.update(f"max_grade={coll.max_grade}".encode("utf-8"))
    return h.hexdigest()


def cell_key(coll_digest: str, spec: StrategySpec, ratio: Fraction, seed: int,
             metric: str) -> str:
    token = json.dumps(
        {
            "collection": coll_digest,
            "strategy": spec.cache_token(),
            "ratio": str(ratio),
            "seed": seed,
            "metric": metric,
        },
        sort_keys=True,
    )
    return hashlib.sha256(token.encode("utf-8")).hexdigest()


def _run_cell(
    coll: Collection,
    spec: StrategySpec,
    ratio: Fraction,
    seed: int,
    metric: str,
) -> SweepRow:
    budget = budget_for(ratio, len(coll.qrels))
    pool = JudgmentPool.from_collection(coll, budget, seed)
    oracle = OracleAnnotator(coll.qrels)
    labels, _ = run_session(spec, pool, oracle)
    comparison, ov = score_collection(labels, coll.runs, coll.qrels, metric,
                                      coll.max_grade)
    return SweepRow(
        method=spec.name,
        ratio=ratio_label(ratio),
        seed=seed,
        tau=comparison.tau,
        max_drop=comparison.max_drop,
        overlap=ov,
        n_human=len(labels.human),
        n_llm=len(labels.predicted),
    )


def run_sweep(config: ExperimentConfig, collection: Collection | None = None) -> SweepReport:
    """Cartesian product of methods x ratios x seeds.

    Finished cells are cached under out_dir/cache; re-running a sweep skips
    them.  A failing cell is recorded and the sweep continues.
    """
    config.validate()
    if collection is None:
        if not Path(config.manifest).exists():
            raise UnknownCollection(f"manifest not found: {config.manifest}")
        collection = load_collection(config.manifest)
    out_dir = Path(config.out_dir)
    cache_dir = out_dir / "cache"
    cache_dir.mkdir(parents=True, exist_ok=True)
    digest = collection_digest(collection)

    report = SweepReport(collection=collection.name, metric=config.metric)
    for spec in config.methods:
        for ratio in config.ratios:
            for seed in config.seeds:
                key = cell_key(digest, spec, ratio, seed, config.metric)
                cache_file = cache_dir / f"{key}.json"
                if config.use_cache and cache_file.exists():
                    cached = json.loads(cache_file.read_text(encoding="utf-8"))
                    report.rows.append(SweepRow(**cached["row"]))
                    continue
                started = time.perf_counter()
                try:
                    row = _run_cell(collection, spec, ratio, seed, config.metric)
                except LaraError as exc:
                    report.failures.append({
                        "method": spec.name,
                        "ratio": str(ratio),
                        "seed": seed,
                        "error": f"{type(exc).__name__}: {exc}",
                    })
                    continue
                elapsed = time.perf_counter() - started
                report.wall_times[(row.method, row.ratio, seed)] = elapsed
                if config.use_cache:
                    cache_file.write_text(
                        json.dumps(
                            {
                                "row": row.__dict__,
                                "collection": collection.name,
                                "metric": config.metric,
                            },
                            sort_keys=True,
                        ) + "\n",
                        encoding="utf-8",
                    )
                report.rows.append(row)
    report.rows.sort(key=SweepRow.sort_key)
    return report


# --- report emission ------------------------------------------------------------------

def _fmt(value: float | None, digits: int = 6) -> str:
    if value is None:
        return ""
    return f"{value:.{digits}f}"


def _means(report: SweepReport) -> list[dict]:
    """Per-(method, ratio) means across seeds, in deterministic order."""
    cells: dict[tuple[str, str], list[SweepRow]] = {}
    for row in report.rows:
        cells.setdefault((row.method, row.ratio), []).append(row)
    out = []
    for (method, ratio), rows in sorted(
        cells.items(), key=lambda kv: (kv[0][0], Fraction(kv[0][1]))
    ):
        overlaps = [r.overlap for r in rows if r.overlap is not None]
        out.append({
            "method": method,
            "ratio": ratio,
            "seeds": len(rows),
            "tau_mean": sum(r.tau for r in rows) / len(rows),
            "max_drop_mean": sum(r.max_drop for r in rows) / len(rows),
            "overlap_mean": sum(overlaps) / len(overlaps) if overlaps else None,
        })
    return out


def emit_report(report: SweepReport, out_dir: str | Path, format: str = "csv") -> list[Path]:
    """Write the report files; identical reports produce identical bytes.

    csv: per-cell rows, per-ratio means, and the overlap-vs-ratio series.
    text-table: one aligned grid per measure, methods x ratios.
    Wall times go to timings.csv regardless of format (sidecar).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if format == "csv":
        path = out / "report.csv"
        lines = ["method,ratio,seed,tau,max_drop,overlap,n_human,n_llm"]
        for r in sorted(report.rows, key=SweepRow.sort_key):
            lines.append(
                f"{r.method},{r.ratio},{r.seed},{_fmt(r.tau)},{r.max_drop},"
                f"{_fmt(r.overlap)},{r.n_human},{r.n_llm}"
            )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)

        means = _means(report)
        path = out / "report_means.csv"
        lines = ["method,ratio,seeds,tau_mean,max_drop_mean,overlap_mean"]
        for m in means:
            lines.append(
                f"{m['method']},{m['ratio']},{m['seeds']},{_fmt(m['tau_mean'])},"
                f"{_fmt(m['max_drop_mean'])},{_fmt(m['overlap_mean'])}"
            )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)

        path = out / "overlap_series.csv"
        lines = ["method,ratio,overlap_mean"]
        for m in means:
            if m["overlap_mean"] is not None:
                lines.append(f"{m['method']},{m['ratio']},{_fmt(m['overlap_mean'])}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    elif format == "text-table":
        written.append(_emit_text_table(report, out))
    else:
        raise InvalidConfig(f"unknown report format {format!r}")

    if report.failures:
        path = out / "failures.csv"
        lines = ["method,ratio,seed,error"]
        for f in sorted(report.failures, key=lambda f: (f["method"], Fraction(f["ratio"]), f["seed"])):
            err = str(f["error"]).replace(",", ";")
            lines.append(f"{f['method']},{f['ratio']},{f['seed']},{err}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)

    if report.wall_times:
        path = out / "timings.csv"
        lines = ["method,ratio,seed,wall_time_s"]
        for (method, ratio, seed), seconds in sorted(
            report.wall_times.items(), key=lambda kv: (kv[0][0], Fraction(kv[0][1]), kv[0][2])
        ):
            lines.append(f"{method},{ratio},{seed},{seconds:.3f}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        # intentionally not in `written`: timing bytes are not deterministic
    return written


def _emit_text_table(report: SweepReport, out: Path) -> Path:
    means = _means(report)
    methods = sorted({m["method"] for m in means})
    ratios = sorted({m["ratio"] for m in means}, key=Fraction)
    by_cell = {(m["method"], m["ratio"]): m for m in means}

    def cell(method: str, ratio: str) -> str:
        m = by_cell.get((method, ratio))
        if m is None:
            return "-"
        return f"{m['tau_mean']:.3f} ({m['max_drop_mean']:.0f})"

    width = max([len(cell(me, ra)) for me in methods for ra in ratios]
                + [len(r) for r in ratios]) + 2
    name_width = max(len(m) for m in methods) + 2
    lines = [f"collection: {report.collection}  metric: {report.metric}  "
             f"cell: mean tau (mean max drop)"]
    header = " " * name_width + "".join(r.rjust(width) for r in ratios)
    lines.append(header)
    for method in methods:
        lines.append(
            method.ljust(name_width)
            + "".join(cell(method, r).rjust(width) for r in ratios)
        )
    path = out / "report.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
