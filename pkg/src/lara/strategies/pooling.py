"""Pooling baselines that walk the submitted system rankings.

Depth-k judges the union of system top-k sets, deepening k until the budget
runs out.  Move-to-Front keeps a per-topic system priority order and demotes
a system whenever it contributes a nonrelevant document.

Both are human-only: unjudged pairs get grade 0 at finalize (the standard
pooling assumption).  Pairs that no run ranks are appended after the
traversal so a full budget can always be spent.
"""

from __future__ import annotations

from ..errors import Exhausted
from .base import JudgmentPool, Pair, RankedTraversal, Strategy, binarize


class DepthKStrategy(Strategy):
    """Depth levels outermost, then topics ascending, then systems
    ascending, skipping documents already judged at a shallower depth."""

    name = "depth"

    def __init__(self, pool: JudgmentPool):
        super().__init__(pool)
        ranked: dict[tuple[str, str], list[str]] = {}
        for rec in sorted(pool.runs, key=lambda r: (r.topic_id, r.system_tag, r.rank)):
            if (rec.topic_id, rec.doc_id) in pool.pairs_set:
                ranked.setdefault((rec.topic_id, rec.system_tag), []).append(rec.doc_id)
        order: list[Pair] = []
        seen: set[Pair] = set()
        keys = sorted(ranked)
        max_depth = max((len(v) for v in ranked.values()), default=0)
        for depth in range(max_depth):
            for key in keys:
                docs = ranked[key]
                if depth < len(docs):
                    pair = (key[0], docs[depth])
                    if pair not in seen:
                        seen.add(pair)
                        order.append(pair)
        # whatever the runs never ranked comes last, in pair order
        order.extend(p for p in pool.pairs if p not in seen)
        self._order = order
        self._cursor = 0

    def _select(self) -> Pair:
        while self._cursor < len(self._order):
            pair = self._order[self._cursor]
            if pair not in self.pool.judged:
                return pair
            self._cursor += 1
        raise Exhausted("traversal consumed")


class MTFStrategy(Strategy):
    """Move-to-Front: per-topic system priorities, serviced round-robin.

    The front system of the current topic contributes its next unjudged
    document; a nonrelevant judgment moves that system to the back of the
    topic's priority list, a relevant one keeps it in front.
    """

    name = "mtf"

    def __init__(self, pool: JudgmentPool):
        super().__init__(pool)
        self._traversal = RankedTraversal(pool)
        self._priority: dict[str, list[str]] = {
            t: self._traversal.systems(t) for t in self._traversal.topics()
        }
        self._rotation: list[str] = [t for t in self._traversal.topics()
                                     if self._priority[t]]
        self._rotation_pos = 0
        self._source: dict[Pair, tuple[str, str]] = {}
        self._fallback = iter(())
        self._fallback_started = False

    def _next_from_topic(self, topic: str) -> Pair | None:
        for system in self._priority[topic]:
            doc = self._traversal.peek(topic, system)
            if doc is not None:
                pair = (topic, doc)
                self._source[pair] = (topic, system)
                return pair
        return None

    def _select(self) -> Pair:
        while self._rotation:
            pos = self._rotation_pos % len(self._rotation)
            topic = self._rotation[pos]
            pair = self._next_from_topic(topic)
            if pair is not None:
                self._rotation_pos = pos + 1
                return pair
            del self._rotation[pos]
        # run-ranked pairs are spent; fall back to the remainder
        if not self._fallback_started:
            self._fallback = iter(self._unjudged_sorted())
            self._fallback_started = True
        for pair in self._fallback:
            if pair not in self.pool.judged:
                return pair
        raise Exhausted("pool consumed")

    def _update(self, pair: Pair, grade: int) -> None:
        source = self._source.pop(pair, None)
        if source is None:
            return
        topic, system = source
        if binarize(grade, self.pool.max_grade) == 0:
            systems = self._priority[topic]
            systems.remove(system)
            systems.append(system)
