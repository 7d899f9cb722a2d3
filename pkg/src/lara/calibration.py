"""Calibration of LLM grade probabilities against human judgments.

A calibrator maps a raw grade distribution pi (length l+1) to an estimate
p_hat(y | pi) of the true grade distribution.  The reference model is one
multinomial logistic regression over all grades with clipped-logit features,
so outputs always form a distribution.  Before enough judgments exist the
identity calibrator stands in: p_hat(y=j | pi) = pi[j].

Also here: top-two margin computation (the selection signal for
uncertainty-guided annotation) and a brute-force oracle that, given true
conditionals, finds the point whose annotation most reduces expected
classification error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidConfig

PI_CLIP = 1e-6


def clipped_logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, PI_CLIP, 1.0 - PI_CLIP)
    return np.log(p / (1.0 - p))


def _features(pis: np.ndarray) -> np.ndarray:
    """Feature map [1, logit(pi_0), ..., logit(pi_l)] per row."""
    pis = np.atleast_2d(pis)
    return np.hstack([np.ones((pis.shape[0], 1)), clipped_logit(pis)])


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class MarginRecord:
    pair_id: object
    k: int       # argmax grade
    s: int       # runner-up grade
    margin: float


@dataclass(frozen=True)
class TrueConditional:
    """A known p(y | pi) used only by synthetic oracles."""

    pair_id: object
    probs: tuple[float, ...]


# --- calibrators ---------------------------------------------------------------

class Calibrator:
    """Base: maps a grade vector to a calibrated grade vector."""

    kind = "abstract"

    def predict(self, pi: Sequence[float]) -> np.ndarray:
        return self.predict_batch(np.asarray(pi, dtype=float)[None, :])[0]

    def predict_batch(self, pis: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


class IdentityCalibrator(Calibrator):
    """p_hat(y=j | pi) = pi[j]; the cold-start calibrator."""

    kind = "identity"

    def predict_batch(self, pis: np.ndarray) -> np.ndarray:
        return np.asarray(pis, dtype=float)

    def to_dict(self) -> dict:
        return {"kind": self.kind}


class LogisticCalibrator(Calibrator):
    """Multinomial logistic over clipped-logit features.

    weights has shape (l+1, l+2): one row per grade, columns are bias plus
    one logit feature per grade component.
    """

    kind = "logistic"

    def __init__(self, weights: np.ndarray):
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 2 or weights.shape[1] != weights.shape[0] + 1:
            raise InvalidConfig(f"weight matrix shape {weights.shape} is not (l+1, l+2)")
        self.weights = weights

    def predict_batch(self, pis: np.ndarray) -> np.ndarray:
        return _softmax(_features(pis) @ self.weights.T)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "weights": self.weights.tolist()}


class IsotonicCalibrator(Calibrator):
    """Per-grade isotonic curves, renormalized; experimental alternative."""

    kind = "isotonic"

    def __init__(self, curves: list[tuple[np.ndarray, np.ndarray]]):
        self.curves = [(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
                       for x, y in curves]

    def predict_batch(self, pis: np.ndarray) -> np.ndarray:
        pis = np.atleast_2d(np.asarray(pis, dtype=float))
        out = np.empty_like(pis)
        for j, (x, y) in enumerate(self.curves):
            out[:, j] = np.interp(pis[:, j], x, y)
        out = np.clip(out, PI_CLIP, None)
        return out / out.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "curves": [{"x": x.tolist(), "y": y.tolist()} for x, y in self.curves],
        }


def calibrator_from_dict(data: dict) -> Calibrator:
    kind = data.get("kind")
    if kind == "identity":
        return IdentityCalibrator()
    if kind == "logistic":
        return LogisticCalibrator(np.asarray(data["weights"], dtype=float))
    if kind == "isotonic":
        return IsotonicCalibrator([(np.asarray(c["x"]), np.asarray(c["y"]))
                                   for c in data["curves"]])
    raise InvalidConfig(f"unknown calibrator kind {kind!r}")


def load_calibrator(path: str | Path) -> Calibrator:
    return calibrator_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --- fitting -------------------------------------------------------------------

def _nll_grad(W: np.ndarray, X: np.ndarray, Y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Penalized negative log-likelihood and its gradient.

    W: (C, d), X: (n, d), Y: (n, C) one-hot.  Loss is the summed NLL plus
    (l2/2) * ||W||^2; the penalty covers the bias as well, which also pins
    down the softmax's otherwise unidentifiable weight shift.
    """
    P = _softmax(X @ W.T)
    eps = 1e-12
    loss = -float(np.sum(Y * np.log(P + eps))) + 0.5 * l2 * float(np.sum(W * W))
    grad = (P - Y).T @ X + l2 * W
    return loss, grad


def _hessian(W: np.ndarray, X: np.ndarray, l2: float) -> np.ndarray:
    """Full Hessian of the penalized NLL, shape (C*d, C*d)."""
    C, d = W.shape
    P = _softmax(X @ W.T)
    H = np.zeros((C * d, C * d))
    for a in range(C):
        for b in range(C):
            w = P[:, a] * ((1.0 if a == b else 0.0) - P[:, b])
            H[a * d:(a + 1) * d, b * d:(b + 1) * d] = X.T @ (X * w[:, None])
    H += l2 * np.eye(C * d)
    return H


def fit_calibrator(
    samples: Sequence[tuple[Sequence[float], int]],
    max_grade: int,
    min_fit_samples: int = 10,
    l2: float = 1e-3,
    tol: float = 1e-6,
    max_iter: int = 500,
    method: str = "logistic",
    warm_start: Calibrator | None = None,
) -> Calibrator:
    """Fit p_hat(y | pi) from (pi, y) samples.

    Falls back to the identity calibrator when there are fewer than
    min_fit_samples samples or all labels share one grade; degenerate input
    is never an error.  The logistic path runs damped Newton iterations to
    gradient norm < tol or max_iter, whichever first.
    """
    ys = np.array([y for _, y in samples], dtype=int)
    if len(ys):
        pis = np.array([list(pi) for pi, _ in samples], dtype=float)
    else:
        pis = np.zeros((0, max_grade + 1))
    return fit_calibrator_arrays(
        pis, ys, max_grade, min_fit_samples=min_fit_samples, l2=l2, tol=tol,
        max_iter=max_iter, method=method, warm_start=warm_start,
    )


def fit_calibrator_arrays(
    pis: np.ndarray,
    ys: np.ndarray,
    max_grade: int,
    min_fit_samples: int = 10,
    l2: float = 1e-3,
    tol: float = 1e-6,
    max_iter: int = 500,
    method: str = "logistic",
    warm_start: Calibrator | None = None,
) -> Calibrator:
    """Array form of fit_calibrator; callers with big pools keep their
    samples in flat arrays and skip the per-fit list conversion."""
    if method not in ("logistic", "isotonic"):
        raise InvalidConfig(f"unknown calibration method {method!r}")
    if len(ys) < min_fit_samples or len(np.unique(ys)) < 2:
        return IdentityCalibrator()

    if method == "isotonic":
        return _fit_isotonic(pis, ys, max_grade)

    C = max_grade + 1
    X = _features(pis)
    d = X.shape[1]
    Y = np.zeros((len(ys), C))
    Y[np.arange(len(ys)), ys] = 1.0

    if isinstance(warm_start, LogisticCalibrator) and warm_start.weights.shape == (C, d):
        W = warm_start.weights.copy()
    else:
        W = np.zeros((C, d))

    loss, grad = _nll_grad(W, X, Y, l2)
    for _ in range(max_iter):
        if np.linalg.norm(grad) < tol:
            break
        H = _hessian(W, X, l2)
        try:
            step = np.linalg.solve(H, grad.reshape(-1)).reshape(W.shape)
        except np.linalg.LinAlgError:
            step = grad / max(1.0, np.linalg.norm(grad))
        # backtracking keeps Newton honest far from the optimum
        t = 1.0
        for _ in range(30):
            new_loss, new_grad = _nll_grad(W - t * step, X, Y, l2)
            if new_loss <= loss + 1e-12:
                break
            t *= 0.5
        W = W - t * step
        loss, grad = new_loss, new_grad
    return LogisticCalibrator(W)


def _fit_isotonic(pis: np.ndarray, ys: np.ndarray, max_grade: int) -> Calibrator:
    from sklearn.isotonic import IsotonicRegression

    curves: list[tuple[np.ndarray, np.ndarray]] = []
    for j in range(max_grade + 1):
        target = (ys == j).astype(float)
        if target.min() == target.max():
            # grade absent (or universal) in the sample: flat curve
            curves.append((np.array([0.0, 1.0]), np.array([target[0], target[0]])))
            continue
        iso = IsotonicRegression(y_min=0.0, y_max=1.0, out_of_bounds="clip")
        iso.fit(pis[:, j], target)
        curves.append((iso.X_thresholds_, iso.y_thresholds_))
    return IsotonicCalibrator(curves)


# --- margins ---------------------------------------------------------------------

def top_two(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized (k, s, margin) per row; ties resolve to the lower grade."""
    probs = np.atleast_2d(probs)
    order = np.argsort(-probs, axis=1, kind="stable")
    k = order[:, 0]
    s = order[:, 1]
    rows = np.arange(probs.shape[0])
    m = probs[rows, k] - probs[rows, s]
    return k, s, m


def margin(cal: Calibrator, pi: Sequence[float], pair_id: object = None) -> MarginRecord:
    """Top-two margin of the calibrated distribution for one pair."""
    probs = cal.predict(np.asarray(pi, dtype=float))
    k, s, m = top_two(probs)
    return MarginRecord(pair_id, int(k[0]), int(s[0]), float(m[0]))


def batch_margins(cal: Calibrator, pis: np.ndarray) -> np.ndarray:
    """Margins for a whole pool at once; the hot path of selection loops."""
    _, _, m = top_two(cal.predict_batch(pis))
    return m


# --- inspection oracle -------------------------------------------------------------

def point_error(probs: Sequence[float]) -> float:
    """Expected residual error of a point with true conditional probs.

    Taken as the complement of the top-two gap, halved: the annotation's
    value lies in settling the competition between the two leading grades.
    Equals 1 - max(probs) whenever only two grades carry mass.
    """
    p = np.asarray(probs, dtype=float)
    k, s, m = top_two(p)
    return float((1.0 - m[0]) / 2.0)


def optimal_inspection_oracle(pool: Sequence[TrueConditional]) -> object:
    """Brute force over candidates: annotate the point whose removal of
    residual error is largest.  Ties break by pair_id."""
    if not pool:
        raise InvalidConfig("empty pool")
    best_id = None
    best_error = np.inf
    for cand in sorted(pool, key=lambda c: str(c.pair_id)):
        # annotating cand zeroes its own error; everything else keeps its
        # expected residual
        post = sum(point_error(other.probs) for other in pool
                   if other.pair_id != cand.pair_id)
        if post < best_error - 1e-15:
            best_error = post
            best_id = cand.pair_id
    return best_id


# --- curve export -----------------------------------------------------------------

def calibration_curve(
    cal: Calibrator,
    max_grade: int,
    grade: int = 1,
    grid: Sequence[float] | None = None,
) -> list[tuple[float, float]]:
    """Sample p_hat(y=grade | pi) along a one-dimensional sweep of pi[grade].

    Off-grade mass is spread evenly so the sweep stays on the simplex.
    """
    if grid is None:
        grid = np.linspace(0.02, 0.98, 49)
    points: list[tuple[float, float]] = []
    for t in grid:
        pi = np.full(max_grade + 1, (1.0 - t) / max_grade if max_grade else 0.0)
        pi[grade] = t
        probs = cal.predict(pi)
        points.append((float(t), float(probs[grade])))
    return points


# --- estimator-style wrapper --------------------------------------------------------

class GradeCalibration:
    """Estimator-shaped front door for the calibrator.

    fit(X, y) stores a fitted calibrator on ``calibrator_`` and returns
    self; predict_proba/predict operate on arrays of grade vectors.
    Constructor arguments are stored verbatim for get_params/set_params.
    """

    def __init__(self, max_grade: int = 1, method: str = "logistic",
                 min_fit_samples: int = 10, l2: float = 1e-3,
                 tol: float = 1e-6, max_iter: int = 500):
        self.max_grade = max_grade
        self.method = method
        self.min_fit_samples = min_fit_samples
        self.l2 = l2
        self.tol = tol
        self.max_iter = max_iter

    def get_params(self, deep: bool = True) -> dict:
        return {
            "max_grade": self.max_grade,
            "method": self.method,
            "min_fit_samples": self.min_fit_samples,
            "l2": self.l2,
            "tol": self.tol,
            "max_iter": self.max_iter,
        }

    def set_params(self, **params) -> "GradeCalibration":
        for key, value in params.items():
            if key not in self.get_params():
                raise InvalidConfig(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, X, y) -> "GradeCalibration":
        samples = [(np.asarray(pi, dtype=float), int(label))
                   for pi, label in zip(X, y)]
        self.calibrator_ = fit_calibrator(
            samples, self.max_grade, min_fit_samples=self.min_fit_samples,
            l2=self.l2, tol=self.tol, max_iter=self.max_iter, method=self.method,
        )
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "calibrator_"):
            raise InvalidConfig("GradeCalibration instance is not fitted yet")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        return self.calibrator_.predict_batch(np.asarray(X, dtype=float))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)
