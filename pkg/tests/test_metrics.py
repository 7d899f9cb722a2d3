import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import ap_oracle, ndcg_oracle, run_records, tau_b_oracle
from lara import metrics
from lara.errors import KeyMismatch, TooFewSystems
from lara.metrics import (
    average_precision,
    compare_rankings,
    kendall_tau_b,
    max_drop,
    mean_of,
    ndcg,
    overlap,
    rank_systems,
    score_systems,
)

tags = st.lists(
    st.text("ABCDEFGHij", min_size=1, max_size=3), min_size=2, max_size=8, unique=True
)


# ---------------------------------------------------------------------------
# average precision


def test_ap_relevant_at_one_and_three():
    got = average_precision(["D1", "D2", "D3"], {"D1": 1, "D2": 0, "D3": 1})
    assert got == pytest.approx((1 + 2 / 3) / 2)


def test_ap_perfect_ranking():
    assert average_precision(["A", "B", "C"], {"A": 1, "B": 1, "C": 0}) == 1.0


def test_ap_no_relevant_docs():
    assert average_precision(["A", "B"], {"A": 0, "B": 0}) == 0.0


def test_ap_counts_unretrieved_relevant():
    # R=3 because qrels holds one relevant doc the ranking missed
    got = average_precision(["D1", "D2", "D3"], {"D1": 1, "D3": 1, "D9": 1})
    assert got == pytest.approx((1 + 2 / 3) / 3)


# ---------------------------------------------------------------------------
# ndcg


def test_ndcg_graded_example():
    got = ndcg(["A", "B", "C"], {"A": 2, "B": 0, "C": 1})
    ideal = 2 + 1 / math.log2(3)
    assert got == pytest.approx(2.5 / ideal)
    assert got == pytest.approx(0.9502, abs=1e-4)


def test_ndcg_ideal_ordering():
    assert ndcg(["A", "B", "C"], {"A": 2, "B": 1, "C": 0}) == pytest.approx(1.0)


def test_ndcg_all_zero_grades():
    assert ndcg(["A", "B"], {"A": 0, "B": 0}) == 0.0


def test_ndcg_respects_cutoff():
    full = ndcg(["A", "B"], {"A": 0, "B": 2}, cutoff=2)
    cut = ndcg(["A", "B"], {"A": 0, "B": 2}, cutoff=1)
    assert cut == 0.0
    assert full > 0.0


@st.composite
def ranking_cases(draw):
    n = draw(st.integers(min_value=1, max_value=20))
    docs = [f"d{i}" for i in range(n)]
    grades = {d: draw(st.integers(min_value=0, max_value=3)) for d in docs}
    perm = draw(st.permutations(docs))
    return list(perm), grades


@given(ranking_cases())
@settings(max_examples=150)
def test_ap_and_ndcg_match_oracles_and_stay_bounded(case):
    ranked, qrels = case
    binary = {d: int(g > 0) for d, g in qrels.items()}
    got_ap = average_precision(ranked, binary)
    got_ndcg = ndcg(ranked, qrels)
    assert got_ap == pytest.approx(ap_oracle(ranked, binary), abs=1e-12)
    assert got_ndcg == pytest.approx(ndcg_oracle(ranked, qrels), abs=1e-12)
    assert 0.0 <= got_ap <= 1.0
    assert 0.0 <= got_ndcg <= 1.0


@given(ranking_cases())
@settings(max_examples=80)
def test_ndcg_invariant_under_doc_relabeling(case):
    ranked, qrels = case
    rename = {d: f"x{i}" for i, d in enumerate(sorted(qrels))}
    got = ndcg([rename[d] for d in ranked], {rename[d]: g for d, g in qrels.items()})
    assert got == pytest.approx(ndcg(ranked, qrels), abs=1e-12)


@given(ranking_cases(), st.randoms(use_true_random=False))
@settings(max_examples=80)
def test_ap_ignores_order_of_trailing_nonrelevant(case, rnd):
    ranked, qrels = case
    relevant = {d for d, g in qrels.items() if g > 0}
    last = max((i for i, d in enumerate(ranked) if d in relevant), default=-1)
    head, tail = ranked[: last + 1], ranked[last + 1 :]
    rnd.shuffle(tail)
    binary = {d: int(g > 0) for d, g in qrels.items()}
    assert average_precision(head + tail, binary) == pytest.approx(
        average_precision(ranked, binary), abs=1e-12
    )


# ---------------------------------------------------------------------------
# kendall tau


def test_tau_identical_rankings():
    scores = {"A": 0.1, "B": 0.5, "C": 0.9}
    assert kendall_tau_b(scores, scores) == pytest.approx(1.0)


def test_tau_reversed_rankings():
    a = {"A": 1.0, "B": 2.0, "C": 3.0}
    b = {"A": 3.0, "B": 2.0, "C": 1.0}
    assert kendall_tau_b(a, b) == pytest.approx(-1.0)


def test_tau_single_swap_example():
    a = {"A": 1, "B": 2, "C": 3, "D": 4}
    b = {"A": 1, "B": 3, "C": 2, "D": 4}
    assert kendall_tau_b(a, b) == pytest.approx(4 / 6, abs=1e-4)


def test_tau_requires_two_systems():
    with pytest.raises(TooFewSystems):
        kendall_tau_b({"A": 1.0}, {"A": 2.0})


def test_tau_requires_matching_keys():
    with pytest.raises(KeyMismatch):
        kendall_tau_b({"A": 1.0, "B": 2.0}, {"A": 1.0, "C": 2.0})


@st.composite
def paired_scores(draw):
    keys = draw(tags)
    # a small value pool forces frequent ties, exercising the tie correction
    pool = st.integers(min_value=0, max_value=4).map(float)
    a = {k: draw(pool) for k in keys}
    b = {k: draw(pool) for k in keys}
    return a, b


@given(paired_scores())
@settings(max_examples=200)
def test_tau_matches_bruteforce_oracle_and_is_symmetric(case):
    a, b = case
    want = tau_b_oracle(a, b)
    got = kendall_tau_b(a, b)
    if math.isnan(want):
        assert math.isnan(got)
    else:
        assert got == pytest.approx(want, abs=1e-9)
        assert kendall_tau_b(b, a) == pytest.approx(got, abs=1e-12)


# ---------------------------------------------------------------------------
# max drop


def test_max_drop_identical():
    scores = {"A": 3.0, "B": 2.0, "C": 1.0}
    assert max_drop(scores, scores) == 0


def test_max_drop_three_system_example():
    truth = {"A": 3.0, "B": 2.0, "C": 1.0}
    eval_ = {"C": 3.0, "A": 2.0, "B": 1.0}
    assert max_drop(truth, eval_) == 1


def test_max_drop_single_swap():
    assert max_drop({"A": 2.0, "B": 1.0}, {"A": 1.0, "B": 2.0}) == 1


def test_max_drop_floors_at_zero():
    # eval only promotes the bottom system; nothing drops below truth rank
    truth = {"A": 2.0, "B": 1.0}
    assert max_drop(truth, truth) == 0


@given(paired_scores())
@settings(max_examples=100)
def test_max_drop_affine_invariance(case):
    truth, eval_ = case
    scaled = {k: 3.0 * v + 7.0 for k, v in eval_.items()}
    assert max_drop(truth, scaled) == max_drop(truth, eval_)
    assert max_drop(truth, truth) == 0


# ---------------------------------------------------------------------------
# overlap


def test_overlap_example():
    truth = {("t", f"d{i}"): g for i, g in enumerate([1, 0, 1, 0])}
    predicted = {("t", f"d{i}"): g for i, g in enumerate([1, 1, 1, 0])}
    assert overlap(truth, predicted) == pytest.approx(2 / 3)


def test_overlap_perfect_agreement():
    labels = {("t", "a"): 1, ("t", "b"): 0}
    assert overlap(labels, dict(labels)) == 1.0


def test_overlap_total_disagreement():
    truth = {("t", "a"): 1, ("t", "b"): 0}
    predicted = {("t", "a"): 0, ("t", "b"): 1}
    assert overlap(truth, predicted) == 0.0


def test_overlap_no_relevant_anywhere():
    truth = {("t", "a"): 0}
    assert overlap(truth, {("t", "a"): 0}) == 1.0


@given(
    st.dictionaries(
        st.tuples(st.just("t"), st.text("abcdef", min_size=1, max_size=3)),
        st.integers(min_value=0, max_value=2),
        min_size=1, max_size=12,
    ),
    st.randoms(use_true_random=False),
)
@settings(max_examples=80)
def test_overlap_invariant_under_pair_permutation(truth, rnd):
    predicted = {k: rnd.randint(0, 2) for k in truth}
    items = list(predicted.items())
    rnd.shuffle(items)
    assert overlap(truth, dict(items)) == overlap(truth, predicted)


# ---------------------------------------------------------------------------
# system scoring


def test_score_systems_map_hand_case():
    qrels = {("401", "A"): 1, ("401", "B"): 0, ("401", "C"): 1}
    runs = run_records(
        [("good", "401", "A", 3.0), ("good", "401", "B", 2.0), ("good", "401", "C", 1.0),
         ("bad", "401", "B", 3.0), ("bad", "401", "A", 2.0), ("bad", "401", "C", 1.0)]
    )
    scores = score_systems(runs, qrels, metric="map")
    assert scores["good"].mean == pytest.approx((1 + 2 / 3) / 2)
    assert scores["bad"].mean == pytest.approx((1 / 2 + 2 / 3) / 2)


def test_score_systems_binarizes_graded_qrels():
    # grade 1 of 2 sits at the threshold and counts as nonrelevant
    qrels = {("401", "A"): 1, ("401", "B"): 2}
    runs = run_records([("s", "401", "A", 2.0), ("s", "401", "B", 1.0)])
    scores = score_systems(runs, qrels, metric="map", max_grade=2)
    assert scores["s"].mean == pytest.approx(1 / 2)


def test_score_systems_excludes_topics_without_relevant():
    qrels = {("401", "A"): 1, ("402", "B"): 0}
    runs = run_records(
        [("s", "401", "A", 1.0), ("s", "402", "B", 1.0)]
    )
    scores = score_systems(runs, qrels, metric="map")
    assert scores["s"].per_topic == {"401": 1.0}
    assert scores["s"].mean == 1.0


def test_score_systems_ndcg_uses_graded_gains():
    qrels = {("401", "A"): 2, ("401", "B"): 0, ("401", "C"): 1}
    runs = run_records(
        [("s", "401", "A", 3.0), ("s", "401", "B", 2.0), ("s", "401", "C", 1.0)]
    )
    scores = score_systems(runs, qrels, metric="ndcg", max_grade=2)
    assert scores["s"].mean == pytest.approx(0.9502, abs=1e-4)


def test_rank_systems_breaks_ties_by_tag():
    ranks = rank_systems({"B": 0.9, "A": 0.5, "C": 0.5})
    assert ranks == {"B": 1, "A": 2, "C": 3}


def test_compare_rankings_reports_all_fields():
    truth = {"A": 3.0, "B": 2.0, "C": 1.0}
    eval_ = {"C": 3.0, "A": 2.0, "B": 1.0}
    cmp = compare_rankings(truth, eval_)
    assert cmp.tau == pytest.approx(-1 / 3, abs=1e-9)
    assert cmp.max_drop == 1
    assert cmp.paired_systems == 3


def test_compare_rankings_degenerate_tie_counts_zero():
    truth = {"A": 2.0, "B": 1.0}
    flat = {"A": 1.0, "B": 1.0}
    assert compare_rankings(truth, flat).tau == 0.0


def test_mean_of():
    scores = score_systems(
        run_records([("s", "401", "A", 1.0)]), {("401", "A"): 1}, metric="map"
    )
    assert mean_of(scores) == {"s": 1.0}
