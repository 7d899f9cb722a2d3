"""Adjudication baselines with a learning component.

MM-NS treats each system as a bandit arm per topic: the arm with the best
recency-weighted reward estimate contributes its next unjudged document.

CAL and SAL train a per-topic relevance classifier on hashed term
frequencies of the judged documents (seeded with the topic statement as a
synthetic relevant example); CAL judges the highest-scoring document next,
SAL the one closest to the decision boundary.  Their hybrid variants label
leftover pairs with the classifier instead of grade 0.
"""

from __future__ import annotations

import random

import numpy as np

from ..errors import Exhausted, InvalidConfig, MissingField
from .base import JudgmentPool, Pair, RankedTraversal, Strategy, binarize


class MMNSStrategy(Strategy):
    """MaxMean non-stationary bandit over (topic, system) arms.

    Rewards are binarized grades; estimates update by r <- r + alpha(y - r)
    so recent evidence dominates.  Optimistic initialization makes every arm
    get tried before greedy exploitation settles in.
    """

    name = "mm-ns"

    def __init__(self, pool: JudgmentPool, alpha: float = 0.1,
                 optimism: float = 1.0):
        super().__init__(pool)
        if not 0 < alpha <= 1:
            raise InvalidConfig(f"alpha {alpha} outside (0, 1]")
        self.alpha = alpha
        self._traversal = RankedTraversal(pool)
        self._reward: dict[tuple[str, str], float] = {
            (t, s): optimism
            for t in self._traversal.topics()
            for s in self._traversal.systems(t)
        }
        self._rotation = [t for t in self._traversal.topics()
                          if self._traversal.systems(t)]
        self._rotation_pos = 0
        self._source: dict[Pair, tuple[str, str]] = {}
        self._fallback = iter(())
        self._fallback_started = False

    def _next_from_topic(self, topic: str) -> Pair | None:
        arms = sorted(
            self._traversal.systems(topic),
            key=lambda s: (-self._reward[(topic, s)], s),
        )
        for system in arms:
            doc = self._traversal.peek(topic, system)
            if doc is not None:
                pair = (topic, doc)
                self._source[pair] = (topic, system)
                return pair
        return None

    def _select(self) -> Pair:
        while self._rotation:
            pos = self._rotation_pos % len(self._rotation)
            pair = self._next_from_topic(self._rotation[pos])
            if pair is not None:
                self._rotation_pos = pos + 1
                return pair
            del self._rotation[pos]
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
        reward = binarize(grade, self.pool.max_grade)
        old = self._reward[source]
        self._reward[source] = old + self.alpha * (reward - old)


class _ConstantModel:
    """Stand-in when the training labels collapse to one class."""

    def __init__(self, score: float):
        self.score = score

    def predict_proba(self, X) -> np.ndarray:
        n = X.shape[0]
        return np.column_stack([np.full(n, 1.0 - self.score), np.full(n, self.score)])


class _ClassifierStrategy(Strategy):
    """Common machinery for CAL and SAL."""

    name = "classifier"
    n_features = 2 ** 18
    n_background = 10

    def __init__(self, pool: JudgmentPool, variant: str = "human",
                 retrain_every: int = 10):
        super().__init__(pool)
        if variant not in ("human", "hybrid"):
            raise InvalidConfig(f"unknown variant {variant!r}")
        self.variant = variant
        self.retrain_every = retrain_every

        from sklearn.feature_extraction.text import HashingVectorizer

        self._vectorizer = HashingVectorizer(
            n_features=self.n_features, alternate_sign=False
        )
        doc_ids = sorted({d for _, d in pool.pairs})
        missing = [d for d in doc_ids if d not in pool.docs]
        if missing:
            raise MissingField(
                f"{self.name} needs document text; {len(missing)} missing, "
                f"first: {missing[0]}"
            )
        self._doc_ids = doc_ids
        self._doc_row = {d: i for i, d in enumerate(doc_ids)}
        self._X = self._vectorizer.transform(pool.docs[d] for d in doc_ids)

        self._topic_docs: dict[str, list[str]] = {}
        for t, d in pool.pairs:
            self._topic_docs.setdefault(t, []).append(d)
        for docs in self._topic_docs.values():
            docs.sort()
        self._topic_X = {
            t: self._X[[self._doc_row[d] for d in docs]]
            for t, docs in self._topic_docs.items()
        }
        self._scores: dict[str, np.ndarray] = {}

        self._seed_row: dict[str, object] = {}
        self._background: dict[str, list[str]] = {}
        for t in sorted(self._topic_docs):
            topic = pool.topics.get(t)
            if topic is None:
                raise MissingField(f"{self.name} needs the statement of topic {t}")
            statement = f"{topic.title} {topic.description}".strip()
            self._seed_row[t] = self._vectorizer.transform([statement])
            rng = random.Random(f"{pool.seed}:{t}")
            docs = self._topic_docs[t]
            self._background[t] = sorted(rng.sample(docs, min(self.n_background, len(docs))))

        self._models: dict[str, object] = {}
        self._pending_since_fit: dict[str, int] = {t: 0 for t in self._topic_docs}
        self._rotation = sorted(self._topic_docs)
        self._rotation_pos = 0

    def _fit_topic(self, topic: str) -> None:
        from scipy.sparse import vstack
        from sklearn.linear_model import LogisticRegression

        rows = [self._seed_row[topic]]
        labels = [1]
        judged_here = {
            d: g for (t, d), g in self.pool.judged.items() if t == topic
        }
        for d in self._background[topic]:
            if d not in judged_here:
                rows.append(self._X[self._doc_row[d]])
                labels.append(0)
        for d, g in sorted(judged_here.items()):
            rows.append(self._X[self._doc_row[d]])
            labels.append(binarize(g, self.pool.max_grade))
        y = np.array(labels)
        if y.min() == y.max():
            self._models[topic] = _ConstantModel(float(y[0]))
        else:
            # dual solver: samples number in the hundreds, features in the
            # hundreds of thousands, so optimize in sample space
            model = LogisticRegression(
                solver="liblinear", dual=True, max_iter=1000, random_state=0
            )
            model.fit(vstack(rows), y)
            self._models[topic] = model
        self._scores.pop(topic, None)
        self._pending_since_fit[topic] = 0

    def _ensure_model(self, topic: str) -> None:
        if topic not in self._models or \
                self._pending_since_fit[topic] >= self.retrain_every:
            self._fit_topic(topic)

    def _topic_scores(self, topic: str) -> tuple[list[str], np.ndarray]:
        self._ensure_model(topic)
        proba = self._scores.get(topic)
        if proba is None:
            proba = self._models[topic].predict_proba(self._topic_X[topic])[:, 1]
            self._scores[topic] = proba
        return self._topic_docs[topic], proba

    def _pick(self, scores: np.ndarray) -> int:
        raise NotImplementedError

    def _next_from_topic(self, topic: str) -> Pair | None:
        docs, scores = self._topic_scores(topic)
        keep = [i for i, d in enumerate(docs) if (topic, d) not in self.pool.judged]
        if not keep:
            return None
        sub = scores[keep]
        return (topic, docs[keep[self._pick(sub)]])

    def _select(self) -> Pair:
        while self._rotation:
            pos = self._rotation_pos % len(self._rotation)
            pair = self._next_from_topic(self._rotation[pos])
            if pair is not None:
                self._rotation_pos = pos + 1
                return pair
            del self._rotation[pos]
        raise Exhausted("pool consumed")

    def _update(self, pair: Pair, grade: int) -> None:
        self._pending_since_fit[pair[0]] += 1

    def _predict_all(self, pairs) -> dict[Pair, int]:
        if self.variant == "human" or not pairs:
            return {p: 0 for p in pairs}
        # hybrid: classifier-relevant pairs get the smallest grade that
        # binarizes to relevant, everything else 0
        relevant_grade = self.pool.max_grade // 2 + 1
        out: dict[Pair, int] = {}
        by_topic: dict[str, list[Pair]] = {}
        for p in pairs:
            by_topic.setdefault(p[0], []).append(p)
        for topic, group in sorted(by_topic.items()):
            docs, scores = self._topic_scores(topic)
            score_of = dict(zip(docs, scores))
            for p in group:
                out[p] = relevant_grade if score_of[p[1]] >= 0.5 else 0
        return out


class CALStrategy(_ClassifierStrategy):
    """Continuous Active Learning: judge the most-likely-relevant next."""

    name = "cal"

    def _pick(self, scores: np.ndarray) -> int:
        return int(np.argmax(scores))


class SALStrategy(_ClassifierStrategy):
    """Simple Active Learning: judge the most uncertain next."""

    name = "sal"

    def _pick(self, scores: np.ndarray) -> int:
        return int(np.argmin(np.abs(scores - 0.5)))
