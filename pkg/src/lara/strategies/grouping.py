"""Multi-assessor topic grouping.

Topics are bundled into one group per assessor and the judgment budget is
split evenly across groups; a session works through the groups strictly in
order, so assessors never need to be active at the same time.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from ..errors import InvalidAssessorCount


@dataclass(frozen=True)
class GroupingPlan:
    n: int
    groups: tuple[tuple[str, ...], ...]
    group_budgets: tuple[int, ...]

    def group_of(self, topic_id: str) -> int:
        for g, topics in enumerate(self.groups):
            if topic_id in topics:
                return g
        raise KeyError(topic_id)


def plan_groups(topics: Sequence[str], n: int, budget: int, seed: int = 0) -> GroupingPlan:
    """Shuffle topics by seed, deal them round-robin into n groups, and
    split the budget as floor(B/n) plus one extra for the first B mod n
    groups.  Group sizes and budgets each differ by at most 1.
    """
    topics = sorted(set(topics))
    if not 1 <= n <= len(topics):
        raise InvalidAssessorCount(f"n={n} with {len(topics)} topics")
    shuffled = list(topics)
    random.Random(seed).shuffle(shuffled)
    groups = tuple(tuple(shuffled[g::n]) for g in range(n))
    q, r = divmod(budget, n)
    budgets = tuple(q + 1 if g < r else q for g in range(n))
    return GroupingPlan(n=n, groups=groups, group_budgets=budgets)
