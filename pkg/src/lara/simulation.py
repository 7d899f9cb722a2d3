"""Desk-scale experimental substrate.

Two pieces: an oracle annotator that replays held-out ground truth as the
"human", and a synthetic-collection generator whose LLM probabilities carry
a controlled logit-linear miscalibration.  The distortion family is exactly
the inverse image of the logistic calibrator's hypothesis class, so a
correct calibrator must be able to undo it; failure to recover it indicts
the implementation, not the model class.

Generation story per pair: a per-topic prevalence (skewed heavily toward
nonrelevant) sets the mean of a latent true-relevance probability; the true
grade is drawn from an ordered-threshold cumulative model on that latent;
the reported LLM vector is the distorted version of the true conditional.
Systems rank documents by quality-weighted latent signal plus noise, so
stronger systems put relevant documents higher.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidConfig, UnknownPair
from .trec_io import Collection, Pair, ProbRecord, RunRecord, Topic


@dataclass(frozen=True)
class OracleAnnotator:
    """Replays stored qrels as judgments; same pair, same grade, always."""

    qrels: Mapping[Pair, int]
    latency_model: str = "none"  # none | fixed
    fixed_latency_s: float = 0.0

    def judge(self, topic_id: str, doc_id: str) -> int:
        if (topic_id, doc_id) not in self.qrels:
            raise UnknownPair(f"({topic_id}, {doc_id}) not in oracle qrels")
        if self.latency_model == "fixed" and self.fixed_latency_s > 0:
            time.sleep(self.fixed_latency_s)
        return self.qrels[(topic_id, doc_id)]

    def __call__(self, pair: Pair) -> int:
        return self.judge(*pair)


def oracle_judge(oracle: OracleAnnotator, topic_id: str, doc_id: str) -> int:
    return oracle.judge(topic_id, doc_id)


# --- distortion ---------------------------------------------------------------

_CLIP = 1e-9


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, _CLIP, 1.0 - _CLIP)
    return np.log(p / (1.0 - p))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def distort(pi_true: Sequence[float], a: float, b: float) -> np.ndarray:
    """Miscalibrate a grade distribution: logit-linear warp with slope a and
    offset b, applied to the cumulative probabilities so grade order is
    preserved.  Binary case: pi'[1] = sigmoid((logit(pi[1]) - b) / a).
    """
    pi = np.asarray(pi_true, dtype=float)
    if a == 1.0 and b == 0.0:
        return pi.copy()
    # cum[j] = P(y >= j) for j = 1..l; strictly monotone warp keeps order
    cum = np.cumsum(pi[::-1])[::-1][1:]
    warped = _sigmoid((_logit(cum) - b) / a)
    upper = np.concatenate([[1.0], warped])
    lower = np.concatenate([warped, [0.0]])
    out = np.maximum(upper - lower, 0.0)
    return out / out.sum()


# --- synthetic collections -------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    topics: int = 30
    docs_per_topic: int = 100
    systems: int = 20
    max_grade: int = 1
    a: float = 1.0
    b: float = 0.0
    seed: int = 0
    prevalence_alpha: float = 1.0
    prevalence_beta: float = 9.0
    concentration: float = 2.0
    threshold_spacing: float = 2.0
    noise_scale: float = 1.0
    system_qualities: tuple[float, ...] | None = None
    with_texts: bool = True
    name: str = ""

    def validate(self) -> None:
        if min(self.topics, self.docs_per_topic, self.systems) < 1:
            raise InvalidConfig("topics, docs_per_topic and systems must all be >= 1")
        if self.max_grade < 1:
            raise InvalidConfig("need at least two grade levels")
        if self.a <= 0:
            raise InvalidConfig("distortion slope a must be positive")
        if self.system_qualities is not None and len(self.system_qualities) != self.systems:
            raise InvalidConfig("one quality parameter per system required")


@dataclass
class SyntheticCollection:
    collection: Collection
    config: SynthConfig
    # true p(y=j | pair): what a perfect calibrator would output
    true_conditionals: dict[Pair, tuple[float, ...]] = field(default_factory=dict)


def _doc_text(rng: np.random.Generator, topic_idx: int, grade: int, max_grade: int) -> str:
    noise = rng.integers(0, 50, size=25)
    words = [f"w{int(k)}" for k in noise]
    n_rel = round(10 * grade / max_grade)
    if n_rel:
        rel = rng.integers(0, 10, size=n_rel)
        words.extend(f"t{topic_idx}r{int(k)}" for k in rel)
    order = rng.permutation(len(words))
    return " ".join(words[i] for i in order)


def generate_collection(config: SynthConfig) -> SyntheticCollection:
    """Deterministic synthetic collection; same config, same bytes."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    l = config.max_grade
    qualities = (
        np.asarray(config.system_qualities, dtype=float)
        if config.system_qualities is not None
        else np.linspace(1.0, 0.0, config.systems)
    )
    thresholds = config.threshold_spacing * np.arange(l)  # theta_1 .. theta_l

    qrels: dict[Pair, int] = {}
    probs: dict[Pair, ProbRecord] = {}
    true_cond: dict[Pair, tuple[float, ...]] = {}
    topics: dict[str, Topic] = {}
    docs: dict[str, str] = {}
    runs: list[RunRecord] = []

    tags = [f"sys{idx:02d}" for idx in range(config.systems)]

    for ti in range(config.topics):
        topic_id = f"{ti + 1:03d}"
        prevalence = rng.beta(config.prevalence_alpha, config.prevalence_beta)
        prevalence = float(np.clip(prevalence, 1e-3, 1.0 - 1e-3))
        kappa = config.concentration
        q = rng.beta(kappa * prevalence, kappa * (1.0 - prevalence),
                     size=config.docs_per_topic)
        q = np.clip(q, 1e-4, 1.0 - 1e-4)
        z = _logit(q)

        # cumulative P(y >= j | z) under ordered thresholds; grades sampled
        # from the implied conditional
        cum = _sigmoid(z[:, None] - thresholds[None, :])  # (M, l)
        upper = np.hstack([np.ones((len(q), 1)), cum])
        lower = np.hstack([cum, np.zeros((len(q), 1))])
        cond = np.maximum(upper - lower, 0.0)
        cond /= cond.sum(axis=1, keepdims=True)
        u = rng.random(config.docs_per_topic)
        grades = (cum > u[:, None]).sum(axis=1)

        noise = rng.normal(scale=config.noise_scale,
                           size=(config.systems, config.docs_per_topic))
        utility = qualities[:, None] * z[None, :] + noise

        doc_ids = [f"d{ti:03d}-{m:04d}" for m in range(config.docs_per_topic)]
        if config.with_texts:
            topics[topic_id] = Topic(
                topic_id,
                title=f"synthetic need {ti}",
                description=" ".join(f"t{ti}r{k}" for k in range(10)),
            )
        for m, doc_id in enumerate(doc_ids):
            pair = (topic_id, doc_id)
            grade = int(grades[m])
            qrels[pair] = grade
            pi_true = cond[m]
            pi_reported = distort(pi_true, config.a, config.b)
            raw = {j: float(pi_reported[j]) for j in range(l + 1)}
            probs[pair] = ProbRecord(
                topic_id, doc_id, raw, tuple(float(x) for x in pi_reported),
                prompt_id="synthetic", model_id="synthetic",
            )
            true_cond[pair] = tuple(float(x) for x in pi_true)
            if config.with_texts:
                docs[doc_id] = _doc_text(rng, ti, grade, l)

        for si, tag in enumerate(tags):
            order = np.argsort(-utility[si], kind="stable")
            for rank, m in enumerate(order, start=1):
                runs.append(RunRecord(topic_id, doc_ids[m], rank,
                                      float(utility[si][m]), tag))

    name = config.name or f"synthetic-{config.seed}"
    collection = Collection(
        name=name, max_grade=l, qrels=qrels, runs=runs, probs=probs,
        topics=topics, docs=docs,
    )
    collection.validate()
    return SyntheticCollection(collection, config, true_cond)
