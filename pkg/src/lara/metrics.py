"""Evaluation measures for test collections and system rankings.

Per-topic measures (average precision, NDCG) score one system's ranking
against a qrels; collection-level comparisons reduce two score maps over the
same systems to a rank correlation (Kendall's tau-b), the worst single rank
drop, and the label-agreement overlap score.

Documents missing from a qrels are scored as nonrelevant; topics without a
single relevant (or positively graded) document are excluded from means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from scipy.stats import kendalltau

from .errors import KeyMismatch, TooFewSystems
from .trec_io import Pair, RunRecord
from .strategies.base import binarize


@dataclass(frozen=True)
class SystemScore:
    system_tag: str
    per_topic: dict[str, float]
    mean: float


@dataclass(frozen=True)
class RankingComparison:
    tau: float
    max_drop: int
    paired_systems: int


def average_precision(ranked_docs: Sequence[str], qrels: Mapping[str, int]) -> float:
    """AP of one ranking against binary qrels.

    R counts every relevant document in the qrels, retrieved or not, so an
    unretrieved relevant document costs recall.  Topics with R = 0 score 0
    and are excluded from means by the caller.
    """
    n_relevant = sum(1 for g in qrels.values() if g > 0)
    if n_relevant == 0:
        return 0.0
    hits = 0
    total = 0.0
    for rank, doc in enumerate(ranked_docs, start=1):
        if qrels.get(doc, 0) > 0:
            hits += 1
            total += hits / rank
    return total / n_relevant


def dcg(grades: Sequence[int]) -> float:
    return sum(g / math.log2(r + 1) for r, g in enumerate(grades, start=1))


def ndcg(ranked_docs: Sequence[str], qrels: Mapping[str, int], cutoff: int = 1000) -> float:
    """NDCG with linear gain and log2(rank+1) discount.

    The ideal ordering ranks every qrels document by grade descending,
    regardless of whether the system retrieved it.  Zero ideal gain scores 0.
    """
    gains = [qrels.get(doc, 0) for doc in ranked_docs[:cutoff]]
    ideal = sorted(qrels.values(), reverse=True)[:cutoff]
    idcg = dcg(ideal)
    if idcg == 0:
        return 0.0
    return dcg(gains) / idcg


def score_systems(
    runs: Sequence[RunRecord],
    qrels: Mapping[Pair, int],
    metric: str = "map",
    max_grade: int = 1,
    cutoff: int = 1000,
) -> dict[str, SystemScore]:
    """Mean AP or NDCG per system over the topics the qrels covers.

    For "map" the qrels grades are binarized at the midpoint first.  A topic
    with no positive grade anywhere is skipped for every system; a system
    with no run lines for a scored topic gets 0 there.
    """
    if metric not in ("map", "ndcg"):
        raise ValueError(f"unknown metric {metric!r}")
    by_topic: dict[str, dict[str, int]] = {}
    for (topic, doc), grade in qrels.items():
        value = binarize(grade, max_grade) if metric == "map" else grade
        by_topic.setdefault(topic, {})[doc] = value
    scored_topics = sorted(t for t, g in by_topic.items() if any(v > 0 for v in g.values()))

    rankings: dict[str, dict[str, list[str]]] = {}
    for rec in sorted(runs, key=lambda r: (r.system_tag, r.topic_id, r.rank)):
        rankings.setdefault(rec.system_tag, {}).setdefault(rec.topic_id, []).append(rec.doc_id)

    out: dict[str, SystemScore] = {}
    for tag in sorted(rankings):
        per_topic: dict[str, float] = {}
        for topic in scored_topics:
            ranked = rankings[tag].get(topic, [])
            if metric == "map":
                per_topic[topic] = average_precision(ranked, by_topic[topic])
            else:
                per_topic[topic] = ndcg(ranked, by_topic[topic], cutoff)
        mean = sum(per_topic.values()) / len(per_topic) if per_topic else 0.0
        out[tag] = SystemScore(tag, per_topic, mean)
    return out


def _check_keys(a: Mapping, b: Mapping) -> None:
    if set(a) != set(b):
        only_a = sorted(set(a) - set(b))[:3]
        only_b = sorted(set(b) - set(a))[:3]
        raise KeyMismatch(f"key sets differ: {only_a} vs {only_b}")


def kendall_tau_b(scores_a: Mapping[str, float], scores_b: Mapping[str, float]) -> float:
    """Tie-corrected Kendall correlation between two score maps.

    Degenerate inputs (one map fully tied) have an undefined tau; the nan
    propagates to the caller, which decides what a contentless ranking is
    worth.
    """
    _check_keys(scores_a, scores_b)
    keys = sorted(scores_a)
    if len(keys) < 2:
        raise TooFewSystems(f"need at least 2 systems, got {len(keys)}")
    a = [scores_a[k] for k in keys]
    b = [scores_b[k] for k in keys]
    return float(kendalltau(a, b, variant="b").statistic)


def rank_systems(scores: Mapping[str, float]) -> dict[str, int]:
    """1-based ranks, best score first; ties broken by system tag."""
    ordered = sorted(scores, key=lambda tag: (-scores[tag], tag))
    return {tag: i for i, tag in enumerate(ordered, start=1)}


def max_drop(truth_scores: Mapping[str, float], eval_scores: Mapping[str, float]) -> int:
    """Largest rank decrease any system suffers moving from the truth
    ranking to the evaluated ranking; 0 when nothing falls."""
    _check_keys(truth_scores, eval_scores)
    truth_rank = rank_systems(truth_scores)
    eval_rank = rank_systems(eval_scores)
    drops = [eval_rank[tag] - truth_rank[tag] for tag in truth_rank]
    return max(0, max(drops)) if drops else 0


def overlap(truth: Mapping[Pair, int], predicted: Mapping[Pair, int]) -> float:
    """Agreement score over labeled pairs.

    True positives agree on a relevant (>= 1) grade; any disagreement is a
    false prediction.  Pairs agreeing on nonrelevant count for neither, and
    a domain with only such pairs scores 1.0.
    """
    _check_keys(truth, predicted)
    tp = 0
    false_pred = 0
    for pair, y in truth.items():
        y_hat = predicted[pair]
        if y == y_hat:
            if y >= 1:
                tp += 1
        else:
            false_pred += 1
    if tp + false_pred == 0:
        return 1.0
    return tp / (tp + false_pred)


def compare_rankings(
    truth_scores: Mapping[str, float], eval_scores: Mapping[str, float]
) -> RankingComparison:
    """Tau-b plus max drop; a degenerate (fully tied) tau counts as 0."""
    tau = kendall_tau_b(truth_scores, eval_scores)
    if math.isnan(tau):
        tau = 0.0
    return RankingComparison(
        tau=tau,
        max_drop=max_drop(truth_scores, eval_scores),
        paired_systems=len(truth_scores),
    )


def mean_of(scores: Mapping[str, SystemScore]) -> dict[str, float]:
    return {tag: s.mean for tag, s in scores.items()}
