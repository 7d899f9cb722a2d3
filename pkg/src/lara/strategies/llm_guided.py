"""Strategies built on the LLM grade vectors.

LARA picks the unjudged pair with the smallest calibrated top-two margin,
sends it for human judgment, and refits the calibrator on all judgments so
far; unjudged pairs are finally labeled by calibrated argmax.  Naive is the
same loop with the calibrator frozen at identity (margins on the raw
vectors).  LLM-Only never requests a judgment at all.

With n assessors the topics are dealt into n groups and selection is
restricted to one group at a time until that group's budget share is spent.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..calibration import (
    Calibrator,
    IdentityCalibrator,
    fit_calibrator_arrays,
    top_two,
)
from ..errors import Exhausted
from .base import JudgmentPool, Pair, Strategy
from .grouping import GroupingPlan, plan_groups

# above this pool size the calibrator refits every tenth judgment instead
# of every judgment
BIG_POOL_THRESHOLD = 50_000


class LaraStrategy(Strategy):
    name = "lara"
    needs_pis = True

    def __init__(
        self,
        pool: JudgmentPool,
        n_assessors: int = 1,
        min_fit_samples: int = 10,
        l2: float = 1e-3,
        tol: float = 1e-6,
        max_iter: int = 500,
        refit_every: int | None = None,
        calibration_method: str = "logistic",
        freeze_identity: bool = False,
    ):
        super().__init__(pool)
        self.min_fit_samples = min_fit_samples
        self.l2 = l2
        self.tol = tol
        self.max_iter = max_iter
        self.calibration_method = calibration_method
        self.freeze_identity = freeze_identity
        if refit_every is None:
            refit_every = 1 if len(pool.pairs) <= BIG_POOL_THRESHOLD else 10
        self.refit_every = refit_every

        self.plan: GroupingPlan = plan_groups(
            pool.topic_ids, n_assessors, pool.budget, pool.seed
        )
        self.calibrator: Calibrator = IdentityCalibrator()

        self._pairs = pool.pairs  # sorted; index order is the tie-break order
        self._index = {pair: i for i, pair in enumerate(self._pairs)}
        self._pi = np.array([pool.pis[p] for p in self._pairs], dtype=float)
        self._judged_mask = np.zeros(len(self._pairs), dtype=bool)
        cap = min(pool.budget, len(self._pairs))
        self._sample_pi = np.empty((cap, pool.max_grade + 1))
        self._sample_y = np.empty(cap, dtype=int)
        self._n_samples = 0
        self._since_refit = 0
        self._margins_stale = True
        self._masked_margins = np.empty(len(self._pairs))

        group_of_topic = {
            t: g for g, topics in enumerate(self.plan.groups) for t in topics
        }
        self._group_of_pair = np.array(
            [group_of_topic[t] for t, _ in self._pairs], dtype=int
        )
        self._group_indices = [
            np.flatnonzero(self._group_of_pair == g) for g in range(self.plan.n)
        ]
        self._group_unjudged = [len(ix) for ix in self._group_indices]
        self._group_budgets = list(self.plan.group_budgets)
        self._group_spent = [0] * self.plan.n
        self._active_group = 0

        for pair, grade in pool.judged.items():
            self._absorb(pair, grade)

    # -- group scheduling --

    def _advance_group(self) -> None:
        while self._active_group < self.plan.n:
            g = self._active_group
            if self._group_spent[g] >= self._group_budgets[g]:
                self._active_group += 1
                continue
            if self._group_unjudged[g] == 0:
                # the group ran out of pairs; its unspent share rolls
                # forward so the session still spends the whole budget
                surplus = self._group_budgets[g] - self._group_spent[g]
                if g + 1 < self.plan.n:
                    self._group_budgets[g + 1] += surplus
                self._active_group += 1
                continue
            return

    def active_group(self) -> int:
        self._advance_group()
        return min(self._active_group, self.plan.n - 1)

    def group_has_budget(self, g: int) -> bool:
        self._advance_group()
        return g == self._active_group

    # -- margins --

    def _refresh_margins(self) -> None:
        if not self._margins_stale:
            return
        live = np.flatnonzero(~self._judged_mask)
        margins = np.full(len(self._pairs), np.inf)
        if len(live):
            probs = self.calibrator.predict_batch(self._pi[live])
            _, _, margins[live] = top_two(probs)
        self._masked_margins = margins
        self._margins_stale = False

    def _select(self) -> Pair:
        self._advance_group()
        if self._active_group >= self.plan.n:
            raise Exhausted("all group budgets spent")
        self._refresh_margins()
        if self.plan.n == 1:
            pos = int(np.argmin(self._masked_margins))
            if not np.isfinite(self._masked_margins[pos]):
                raise Exhausted("no unjudged pair in the active group")
            return self._pairs[pos]
        idx = self._group_indices[self._active_group]
        sub = self._masked_margins[idx]
        pos = int(np.argmin(sub))
        if not np.isfinite(sub[pos]):
            raise Exhausted("no unjudged pair in the active group")
        return self._pairs[idx[pos]]

    # -- updates --

    def _absorb(self, pair: Pair, grade: int) -> None:
        i = self._index[pair]
        self._judged_mask[i] = True
        self._masked_margins[i] = np.inf
        g = int(self._group_of_pair[i])
        self._group_unjudged[g] -= 1
        self._group_spent[g] += 1
        n = self._n_samples
        self._sample_pi[n] = self._pi[i]
        self._sample_y[n] = grade
        self._n_samples = n + 1
        self._since_refit += 1
        if self.freeze_identity:
            return
        if self._since_refit >= self.refit_every:
            self._since_refit = 0
            self.calibrator = fit_calibrator_arrays(
                self._sample_pi[: self._n_samples],
                self._sample_y[: self._n_samples],
                self.pool.max_grade,
                min_fit_samples=self.min_fit_samples,
                l2=self.l2,
                tol=self.tol,
                max_iter=self.max_iter,
                method=self.calibration_method,
                warm_start=self.calibrator,
            )
            self._margins_stale = True

    def _update(self, pair: Pair, grade: int) -> None:
        self._absorb(pair, grade)

    # -- final labels --

    def _predict(self, pair: Pair) -> int:
        probs = self.calibrator.predict(self.pool.pis[pair])
        return int(np.argmax(probs))

    def _predict_all(self, pairs: Sequence[Pair]) -> dict[Pair, int]:
        if not pairs:
            return {}
        rows = np.array([self._index[p] for p in pairs])
        probs = self.calibrator.predict_batch(self._pi[rows])
        grades = np.argmax(probs, axis=1)
        return {p: int(g) for p, g in zip(pairs, grades)}


class NaiveStrategy(LaraStrategy):
    """Smallest raw margin, no calibration: the identity-calibrated loop."""

    name = "naive"

    def __init__(self, pool: JudgmentPool, **kwargs):
        kwargs["freeze_identity"] = True
        kwargs.setdefault("n_assessors", 1)
        super().__init__(pool, **kwargs)


class LLMOnlyStrategy(Strategy):
    """No human judgments: every pair gets the raw argmax grade.

    next_pair always reports exhaustion, so the strategy consumes no budget
    and its output cannot depend on the budget ratio.
    """

    name = "llm-only"
    needs_pis = True

    def next_pair(self) -> Pair:
        raise Exhausted("llm-only requests no judgments")

    def _select(self) -> Pair:  # pragma: no cover - next_pair never delegates
        raise Exhausted("llm-only requests no judgments")

    def _predict(self, pair: Pair) -> int:
        return self._argmax_pi(pair)

    def _predict_all(self, pairs: Sequence[Pair]) -> dict[Pair, int]:
        if not pairs:
            return {}
        mat = np.array([self.pool.pis[p] for p in pairs])
        grades = np.argmax(mat, axis=1)
        return {p: int(g) for p, g in zip(pairs, grades)}
