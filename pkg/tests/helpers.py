"""Shared test utilities: brute-force metric oracles and collection builders.

The oracles here are deliberately independent of the package implementation:
definitional sums and O(n^2) pair counting, no shared code paths.
"""

import math
from collections.abc import Mapping, Sequence

from lara.trec_io import Collection, Pair, ProbRecord, RunRecord, Topic


# ---------------------------------------------------------------------------
# metric oracles


def ap_oracle(ranked_docs: Sequence[str], qrels: Mapping[str, int]) -> float:
    """Average precision by the definitional sum, binary relevance."""
    relevant = {d for d, g in qrels.items() if g > 0}
    if not relevant:
        return 0.0
    hits = 0
    total = 0.0
    for r, doc in enumerate(ranked_docs, start=1):
        if doc in relevant:
            hits += 1
            total += hits / r
    return total / len(relevant)


def ndcg_oracle(
    ranked_docs: Sequence[str], qrels: Mapping[str, int], cutoff: int = 1000
) -> float:
    """NDCG with linear gain and log2(r+1) discount."""

    def dcg(grades):
        return sum(g / math.log2(r + 1) for r, g in enumerate(grades, start=1))

    got = dcg([qrels.get(d, 0) for d in ranked_docs[:cutoff]])
    ideal = dcg(sorted(qrels.values(), reverse=True)[:cutoff])
    if ideal == 0:
        return 0.0
    return got / ideal


def tau_b_oracle(a: Mapping[str, float], b: Mapping[str, float]) -> float:
    """Kendall tau-b by exhaustive pair enumeration. NaN when degenerate."""
    keys = sorted(a)
    assert sorted(b) == keys
    conc = disc = ties_a = ties_b = 0
    n_pairs = 0
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            n_pairs += 1
            da = a[keys[i]] - a[keys[j]]
            db = b[keys[i]] - b[keys[j]]
            if da == 0:
                ties_a += 1
            if db == 0:
                ties_b += 1
            if da == 0 or db == 0:
                continue
            if (da > 0) == (db > 0):
                conc += 1
            else:
                disc += 1
    denom = math.sqrt((n_pairs - ties_a) * (n_pairs - ties_b))
    if denom == 0:
        return float("nan")
    return (conc - disc) / denom


# ---------------------------------------------------------------------------
# collection builders


def run_records(
    entries: Sequence[tuple[str, str, str, float]]
) -> list[RunRecord]:
    """Build rank-normalized RunRecords from (tag, topic, doc, score) tuples."""
    by_key: dict[tuple[str, str], list[tuple[str, float]]] = {}
    for tag, topic, doc, score in entries:
        by_key.setdefault((tag, topic), []).append((doc, score))
    out = []
    for (tag, topic), docs in by_key.items():
        docs.sort(key=lambda it: (-it[1], it[0]))
        for rank, (doc, score) in enumerate(docs, start=1):
            out.append(
                RunRecord(
                    topic_id=topic, doc_id=doc, rank=rank, score=score,
                    system_tag=tag,
                )
            )
    return out


def build_collection(
    qrels: Mapping[Pair, int],
    runs: Sequence[tuple[str, str, str, float]],
    pis: Mapping[Pair, Sequence[float]] | None = None,
    max_grade: int = 1,
    name: str = "test",
    with_texts: bool = True,
) -> Collection:
    """Hand-made collection; uniform pi vectors unless given explicitly."""
    probs: dict[Pair, ProbRecord] = {}
    uniform = tuple(1.0 / (max_grade + 1) for _ in range(max_grade + 1))
    for pair in qrels:
        pi = tuple(pis[pair]) if pis and pair in pis else uniform
        probs[pair] = ProbRecord(
            topic_id=pair[0], doc_id=pair[1],
            raw_grade_probs={j: p for j, p in enumerate(pi)}, pi=pi,
        )
    topic_ids = sorted({t for t, _ in qrels})
    topics = {
        t: Topic(topic_id=t, title=f"need {t}", description=f"about {t}")
        for t in topic_ids
    }
    docs = {}
    if with_texts:
        docs = {d: f"text of {d} about {t}" for t, d in qrels}
    return Collection(
        name=name, max_grade=max_grade, qrels=dict(qrels),
        runs=run_records(runs), probs=probs, topics=topics, docs=docs,
    )
