"""Document-selection strategies behind one step interface."""

from __future__ import annotations

from ..errors import InvalidConfig
from .active import CALStrategy, MMNSStrategy, SALStrategy
from .base import (
    FinalLabels,
    JudgmentPool,
    RankedTraversal,
    Strategy,
    RandomStrategy,
    binarize,
    run_strategy,
)
from .grouping import GroupingPlan, plan_groups
from .llm_guided import LaraStrategy, LLMOnlyStrategy, NaiveStrategy
from .pooling import DepthKStrategy, MTFStrategy

STRATEGIES: dict[str, type[Strategy]] = {
    "lara": LaraStrategy,
    "naive": NaiveStrategy,
    "random": RandomStrategy,
    "llm-only": LLMOnlyStrategy,
    "depth": DepthKStrategy,
    "mtf": MTFStrategy,
    "mm-ns": MMNSStrategy,
    "cal": CALStrategy,
    "sal": SALStrategy,
}

# convenience aliases for the classifier finalization variants
_ALIASES: dict[str, tuple[str, dict]] = {
    "cal-hybrid": ("cal", {"variant": "hybrid"}),
    "sal-hybrid": ("sal", {"variant": "hybrid"}),
}


def make_strategy(kind: str, pool: JudgmentPool, **params) -> Strategy:
    if kind in _ALIASES:
        base, defaults = _ALIASES[kind]
        merged = dict(defaults)
        merged.update(params)
        return make_strategy(base, pool, **merged)
    cls = STRATEGIES.get(kind)
    if cls is None:
        raise InvalidConfig(
            f"unknown strategy {kind!r}; known: {sorted(STRATEGIES) + sorted(_ALIASES)}"
        )
    try:
        return cls(pool, **params)
    except TypeError as exc:
        raise InvalidConfig(f"bad parameters for strategy {kind!r}: {exc}") from None


__all__ = [
    "CALStrategy",
    "DepthKStrategy",
    "FinalLabels",
    "GroupingPlan",
    "JudgmentPool",
    "LaraStrategy",
    "LLMOnlyStrategy",
    "MMNSStrategy",
    "MTFStrategy",
    "NaiveStrategy",
    "RandomStrategy",
    "RankedTraversal",
    "STRATEGIES",
    "SALStrategy",
    "Strategy",
    "binarize",
    "make_strategy",
    "plan_groups",
    "run_strategy",
]
