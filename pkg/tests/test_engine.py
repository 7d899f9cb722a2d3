from fractions import Fraction

import pytest

from lara import engine
from lara.engine import (
    ExperimentConfig,
    StrategySpec,
    SweepRow,
    budget_for,
    emit_report,
    load_experiment_config,
    parse_ratio,
    ratio_label,
    run_session,
    run_sweep,
    score_collection,
)
from lara.errors import InvalidConfig, UnknownCollection
from lara.simulation import OracleAnnotator
from lara.strategies.base import JudgmentPool
from lara.trec_io import write_collection

LARA = StrategySpec(name="lara", kind="lara", params={})
RANDOM = StrategySpec(name="random", kind="random", params={})


def config_for(tmp_path, collection, **kwargs):
    manifest = write_collection(collection, tmp_path / "coll")
    defaults = dict(
        manifest=str(manifest),
        out_dir=str(tmp_path / "out"),
        methods=(LARA, RANDOM),
        ratios=(parse_ratio("1/8"), parse_ratio("1/2")),
        seeds=(0, 1),
        metric="map",
    )
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


# ---------------------------------------------------------------------------
# ratios and budgets


@pytest.mark.parametrize(
    "text,want",
    [("1/64", Fraction(1, 64)), ("1", Fraction(1)), ("0.25", Fraction(1, 4)),
     (0.5, Fraction(1, 2)), (1, Fraction(1))],
)
def test_parse_ratio(text, want):
    assert parse_ratio(text) == want


def test_parse_ratio_rejects_out_of_range():
    with pytest.raises(InvalidConfig):
        parse_ratio("0")
    with pytest.raises(InvalidConfig):
        parse_ratio("3/2")


def test_ratio_label_round_trips():
    assert ratio_label(parse_ratio("1/64")) == "1/64"
    assert ratio_label(parse_ratio("1")) == "1"


@pytest.mark.parametrize(
    "ratio,pool,want",
    [("1/64", 100, 2), ("1/64", 64, 1), ("1/2", 101, 51), ("1", 100, 100),
     ("1/512", 10, 1)],
)
def test_budget_is_ceiling(ratio, pool, want):
    assert budget_for(parse_ratio(ratio), pool) == want


# ---------------------------------------------------------------------------
# sessions


def test_run_session_trace_replays_to_identical_labels(small_collection):
    pool = JudgmentPool.from_collection(small_collection, budget=25, seed=3)
    oracle = OracleAnnotator(qrels=small_collection.qrels)
    labels, trace = run_session(LARA, pool, oracle)
    assert len(trace) == 25

    # replay the trace against a fresh strategy: same human set, same labels
    from lara.strategies import make_strategy

    pool2 = JudgmentPool.from_collection(small_collection, budget=25, seed=3)
    strat = make_strategy("lara", pool2)
    for pair, grade in trace:
        strat.observe(pair, grade)
    replayed = strat.finalize()
    assert replayed.human == labels.human
    assert replayed.predicted == labels.predicted


def test_run_session_is_deterministic(small_collection):
    def once():
        pool = JudgmentPool.from_collection(small_collection, budget=20, seed=1)
        return run_session(LARA, pool, OracleAnnotator(qrels=small_collection.qrels))

    labels_a, trace_a = once()
    labels_b, trace_b = once()
    assert trace_a == trace_b
    assert labels_a == labels_b


def test_zero_budget_lara_equals_llm_only(small_collection):
    oracle = OracleAnnotator(qrels=small_collection.qrels)
    pool_a = JudgmentPool.from_collection(small_collection, budget=0)
    labels_a, _ = run_session(LARA, pool_a, oracle)
    pool_b = JudgmentPool.from_collection(small_collection, budget=0)
    labels_b, _ = run_session(
        StrategySpec(name="llm-only", kind="llm-only", params={}), pool_b, oracle
    )
    assert labels_a.human == labels_b.human == {}
    assert labels_a.predicted == labels_b.predicted


def test_full_budget_covers_pool(small_collection):
    n = len(small_collection.qrels)
    pool = JudgmentPool.from_collection(small_collection, budget=n)
    labels, trace = run_session(RANDOM, pool, OracleAnnotator(qrels=small_collection.qrels))
    assert len(trace) == n
    assert labels.human == small_collection.qrels
    assert labels.predicted == {}


def test_run_session_tags_method_on_error(small_collection):
    pool = JudgmentPool.from_collection(small_collection, budget=5)
    bad = StrategySpec(name="my-broken", kind="lara", params={"nonsense": 1})
    with pytest.raises(InvalidConfig, match="my-broken"):
        run_session(bad, pool, OracleAnnotator(qrels=small_collection.qrels))


def test_score_collection_perfect_labels(small_collection):
    from lara.strategies.base import FinalLabels

    labels = FinalLabels(human=dict(small_collection.qrels), predicted={})
    cmp, ov = score_collection(
        labels, small_collection.runs, small_collection.qrels, metric="map"
    )
    assert cmp.tau == pytest.approx(1.0)
    assert cmp.max_drop == 0
    assert ov is None  # nothing was predicted


# ---------------------------------------------------------------------------
# sweeps


def test_sweep_produces_product_of_rows(tmp_path, small_collection):
    config = config_for(tmp_path, small_collection)
    report = run_sweep(config)
    assert len(report.rows) == 2 * 2 * 2
    assert report.failures == []
    methods = {r.method for r in report.rows}
    assert methods == {"lara", "random"}


def test_sweep_full_ratio_is_identity(tmp_path, small_collection):
    config = config_for(
        tmp_path, small_collection, ratios=(parse_ratio("1"),), seeds=(0,)
    )
    report = run_sweep(config)
    for row in report.rows:
        assert row.tau == pytest.approx(1.0)
        assert row.max_drop == 0
        assert row.n_human == len(small_collection.qrels)


def test_sweep_resume_skips_cached_cells(tmp_path, small_collection, monkeypatch):
    config = config_for(tmp_path, small_collection)
    first = run_sweep(config)
    assert len(first.wall_times) == 8  # everything computed fresh

    def boom(*args, **kwargs):
        raise AssertionError("cache miss: cell recomputed")

    monkeypatch.setattr(engine, "_run_cell", boom)
    second = run_sweep(config)
    assert second.wall_times == {}
    assert sorted(r.__dict__.items() for r in second.rows) == sorted(
        r.__dict__.items() for r in first.rows
    )


def test_sweep_partial_resume_computes_only_new_cells(tmp_path, small_collection):
    config = config_for(tmp_path, small_collection, seeds=(0,))
    run_sweep(config)
    wider = config_for(tmp_path, small_collection, seeds=(0, 1))
    report = run_sweep(wider)
    # seed 0 cells came from cache; only seed 1 cells were timed
    assert len(report.rows) == 8
    assert len(report.wall_times) == 4
    assert all(seed == 1 for (_, _, seed) in report.wall_times)


def test_sweep_records_failures_and_continues(tmp_path, small_collection):
    bad = StrategySpec(name="broken", kind="lara", params={"bogus_param": True})
    config = config_for(
        tmp_path, small_collection, methods=(bad, RANDOM), seeds=(0,),
        ratios=(parse_ratio("1/8"),),
    )
    report = run_sweep(config)
    assert len(report.failures) == 1
    assert report.failures[0]["method"] == "broken"
    assert [r.method for r in report.rows] == ["random"]


def test_sweep_missing_manifest(tmp_path):
    config = ExperimentConfig(
        manifest=str(tmp_path / "nope" / "manifest.toml"),
        out_dir=str(tmp_path / "out"),
        methods=(RANDOM,), ratios=(parse_ratio("1/2"),), seeds=(0,),
    )
    with pytest.raises(UnknownCollection):
        run_sweep(config)


def test_rows_sort_by_method_then_ratio(tmp_path, small_collection):
    config = config_for(tmp_path, small_collection)
    report = run_sweep(config)
    keys = [r.sort_key() for r in report.rows]
    assert keys == sorted(keys)
    # "1/8" must order before "1/2" numerically, not lexically
    ratios = [r.ratio for r in report.rows if r.method == "lara"]
    assert ratios == ["1/8", "1/8", "1/2", "1/2"]


# ---------------------------------------------------------------------------
# report emission


def test_emit_report_files_and_means(tmp_path, small_collection):
    config = config_for(tmp_path, small_collection)
    report = run_sweep(config)
    written = emit_report(report, tmp_path / "out")
    names = {p.name for p in written}
    assert {"report.csv", "report_means.csv", "overlap_series.csv"} <= names

    header = (tmp_path / "out" / "report.csv").read_text().splitlines()[0]
    assert header == "method,ratio,seed,tau,max_drop,overlap,n_human,n_llm"

    import csv

    with open(tmp_path / "out" / "report_means.csv") as f:
        means = list(csv.DictReader(f))
    by_cell = {}
    for row in report.rows:
        by_cell.setdefault((row.method, row.ratio), []).append(row.tau)
    assert len(means) == len(by_cell)
    for rec in means:
        taus = by_cell[(rec["method"], rec["ratio"])]
        # the csv rounds to six decimals
        assert float(rec["tau_mean"]) == pytest.approx(sum(taus) / len(taus), abs=1e-6)
        assert int(rec["seeds"]) == len(taus)


def test_emit_report_is_byte_deterministic(tmp_path, small_collection):
    report_a = run_sweep(config_for(tmp_path, small_collection, out_dir=str(tmp_path / "a")))
    report_b = run_sweep(config_for(tmp_path, small_collection, out_dir=str(tmp_path / "b")))
    files_a = emit_report(report_a, tmp_path / "a")
    files_b = emit_report(report_b, tmp_path / "b")
    for pa, pb in zip(sorted(files_a), sorted(files_b)):
        assert pa.name == pb.name
        assert pa.read_bytes() == pb.read_bytes()


def test_emit_text_table_mentions_every_method(tmp_path, small_collection):
    report = run_sweep(config_for(tmp_path, small_collection))
    emit_report(report, tmp_path / "out", format="text-table")
    text = (tmp_path / "out" / "report.txt").read_text()
    assert "lara" in text
    assert "random" in text
    assert "1/8" in text


def test_single_row_report(tmp_path, small_collection):
    config = config_for(
        tmp_path, small_collection, methods=(RANDOM,),
        ratios=(parse_ratio("1/2"),), seeds=(0,),
    )
    report = run_sweep(config)
    emit_report(report, tmp_path / "out")
    lines = (tmp_path / "out" / "report.csv").read_text().splitlines()
    assert len(lines) == 2  # header + one row


# ---------------------------------------------------------------------------
# config files


def test_load_experiment_config(tmp_path, small_collection):
    manifest = write_collection(small_collection, tmp_path / "coll")
    config_text = f"""
manifest = "{manifest}"
out_dir = "out"
ratios = ["1/8", "1/2"]
seeds = [0, 1]
metric = "map"

[[methods]]
name = "lara"
kind = "lara"

[[methods]]
name = "lara-n3"
kind = "lara"
[methods.params]
n_assessors = 3
"""
    path = tmp_path / "exp.toml"
    path.write_text(config_text)
    config = load_experiment_config(path)
    assert [m.name for m in config.methods] == ["lara", "lara-n3"]
    assert config.methods[1].params == {"n_assessors": 3}
    assert tuple(config.ratios) == (Fraction(1, 8), Fraction(1, 2))
    assert tuple(config.seeds) == (0, 1)
    # out_dir resolves relative to the config file
    assert str(tmp_path) in str(config.out_dir)
