"""Shared strategy machinery: the judgment pool, the step interface, and
the strategies with no learning component (Random).

Every selection strategy exposes the same three-step interface:

    next_pair()      propose an unjudged pair (Exhausted when none remains)
    observe(pair, y) record the human grade and update internals
    finalize()       split the pool into human labels and predicted labels

which serves simulated oracles and live annotation sessions alike.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import (
    DoubleObserve,
    Exhausted,
    GradeOutOfRange,
    InvalidConfig,
    MissingField,
    UnknownPair,
)
from ..trec_io import Collection, Pair, RunRecord, Topic


def binarize(y: int, max_grade: int) -> int:
    """Collapse a graded judgment at the midpoint: 1 iff y > l/2."""
    return 1 if 2 * y > max_grade else 0


@dataclass
class JudgmentPool:
    """Everything a strategy may select from and condition on.

    ``pis`` carries the LLM grade vector per pair where available; ``runs``,
    ``topics`` and ``docs`` feed the pooling/bandit/classifier baselines.
    """

    pairs: list[Pair]
    max_grade: int
    budget: int
    seed: int = 0
    pis: dict[Pair, np.ndarray] = field(default_factory=dict)
    runs: list[RunRecord] = field(default_factory=list)
    topics: dict[str, Topic] = field(default_factory=dict)
    docs: dict[str, str] = field(default_factory=dict)
    judged: dict[Pair, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.pairs = sorted(set(self.pairs))
        self.pairs_set = set(self.pairs)
        if not self.pairs:
            raise InvalidConfig("empty judgment pool")
        if not 0 <= self.budget <= len(self.pairs):
            raise InvalidConfig(
                f"budget {self.budget} outside 0..{len(self.pairs)}"
            )
        if len(self.judged) > self.budget:
            raise InvalidConfig("judged set already exceeds budget")

    @classmethod
    def from_collection(cls, coll: Collection, budget: int, seed: int = 0) -> "JudgmentPool":
        pis = {pair: np.asarray(rec.pi, dtype=float) for pair, rec in coll.probs.items()}
        return cls(
            pairs=list(coll.qrels),
            max_grade=coll.max_grade,
            budget=budget,
            seed=seed,
            pis=pis,
            runs=coll.runs,
            topics=dict(coll.topics),
            docs=dict(coll.docs),
        )

    @property
    def topic_ids(self) -> list[str]:
        return sorted({t for t, _ in self.pairs})

    def remaining_budget(self) -> int:
        return self.budget - len(self.judged)


@dataclass
class FinalLabels:
    """Output of a finished session: judged grades plus predicted grades.

    The two domains are disjoint and together cover the whole pool.
    """

    human: dict[Pair, int]
    predicted: dict[Pair, int]

    def all_labels(self) -> dict[Pair, int]:
        merged = dict(self.predicted)
        merged.update(self.human)
        return merged


class Strategy:
    """Base class; subclasses implement _select/_update/_predict."""

    name = "abstract"
    # strategies that predict from the LLM vector require it for every pair
    needs_pis = False

    def __init__(self, pool: JudgmentPool):
        self.pool = pool
        self._pair_set = pool.pairs_set
        if self.needs_pis:
            missing = [p for p in pool.pairs if p not in pool.pis]
            if missing:
                raise MissingField(
                    f"{self.name} needs a grade vector for every pair; "
                    f"{len(missing)} missing, first: {missing[0]}"
                )

    # -- step interface --

    def next_pair(self) -> Pair:
        if len(self.pool.judged) >= len(self.pool.pairs):
            raise Exhausted("all pairs judged")
        if self.pool.remaining_budget() <= 0:
            raise Exhausted("budget spent")
        return self._select()

    def observe(self, pair: Pair, grade: int) -> None:
        if pair not in self._pair_set:
            raise UnknownPair(f"{pair} not in pool")
        if pair in self.pool.judged:
            raise DoubleObserve(f"{pair} already judged")
        if not 0 <= grade <= self.pool.max_grade:
            raise GradeOutOfRange(
                f"grade {grade} outside 0..{self.pool.max_grade}"
            )
        self.pool.judged[pair] = grade
        self._update(pair, grade)

    def finalize(self) -> FinalLabels:
        human = dict(self.pool.judged)
        unjudged = [p for p in self.pool.pairs if p not in human]
        return FinalLabels(human=human, predicted=self._predict_all(unjudged))

    # -- subclass hooks --

    def _select(self) -> Pair:
        raise NotImplementedError

    def _update(self, pair: Pair, grade: int) -> None:
        pass

    def _predict(self, pair: Pair) -> int:
        # unjudged-as-nonrelevant: the convention for human-only methods
        return 0

    def _predict_all(self, pairs: Sequence[Pair]) -> dict[Pair, int]:
        return {p: self._predict(p) for p in pairs}

    # -- shared helpers --

    def _argmax_pi(self, pair: Pair) -> int:
        return int(np.argmax(self.pool.pis[pair]))

    def _unjudged_sorted(self) -> list[Pair]:
        return [p for p in self.pool.pairs if p not in self.pool.judged]


class RandomStrategy(Strategy):
    """Judge pairs in a seeded random permutation; predict by raw argmax."""

    name = "random"
    needs_pis = True

    def __init__(self, pool: JudgmentPool):
        super().__init__(pool)
        order = list(pool.pairs)
        random.Random(pool.seed).shuffle(order)
        self._order = order
        self._cursor = 0

    def _select(self) -> Pair:
        while self._cursor < len(self._order):
            pair = self._order[self._cursor]
            if pair not in self.pool.judged:
                return pair
            self._cursor += 1
        raise Exhausted("permutation consumed")

    def _update(self, pair: Pair, grade: int) -> None:
        if self._cursor < len(self._order) and self._order[self._cursor] == pair:
            self._cursor += 1

    def _predict(self, pair: Pair) -> int:
        return self._argmax_pi(pair)

    def _predict_all(self, pairs: Sequence[Pair]) -> dict[Pair, int]:
        if not pairs:
            return {}
        mat = np.array([self.pool.pis[p] for p in pairs])
        grades = np.argmax(mat, axis=1)
        return {p: int(g) for p, g in zip(pairs, grades)}


class RankedTraversal:
    """Per-(topic, system) ranked document cursors over the run set.

    Shared by the pooling and bandit baselines: all of them walk system
    rankings and need "the next unjudged document of system s on topic t".
    """

    def __init__(self, pool: JudgmentPool):
        self.pool = pool
        docs: dict[str, dict[str, list[str]]] = {}
        for rec in sorted(pool.runs, key=lambda r: (r.topic_id, r.system_tag, r.rank)):
            if (rec.topic_id, rec.doc_id) not in pool.pairs_set:
                continue
            docs.setdefault(rec.topic_id, {}).setdefault(rec.system_tag, []).append(rec.doc_id)
        self.ranked = docs
        self._cursor: dict[tuple[str, str], int] = {}

    def peek(self, topic: str, system: str) -> str | None:
        """Next unjudged doc of (topic, system), or None when spent."""
        ranking = self.ranked.get(topic, {}).get(system, [])
        i = self._cursor.get((topic, system), 0)
        while i < len(ranking) and (topic, ranking[i]) in self.pool.judged:
            i += 1
        self._cursor[(topic, system)] = i
        return ranking[i] if i < len(ranking) else None

    def systems(self, topic: str) -> list[str]:
        return sorted(self.ranked.get(topic, {}))

    def topics(self) -> list[str]:
        return sorted(self.ranked)


def run_strategy(
    strategy: Strategy,
    oracle: Callable[[Pair], int],
    on_judgment: Callable[[Pair, int], None] | None = None,
) -> FinalLabels:
    """Drive a strategy against a grade oracle until it exhausts.

    Exactly min(budget, |pool|) observe calls occur for budget-consuming
    strategies; strategies that never request judgments terminate at once.
    """
    while True:
        try:
            pair = strategy.next_pair()
        except Exhausted:
            break
        grade = oracle(pair)
        strategy.observe(pair, grade)
        if on_judgment is not None:
            on_judgment(pair, grade)
    return strategy.finalize()
