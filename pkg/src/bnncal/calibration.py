"""Post-hoc calibrators mapping classifier scores in [0, 1] to probabilities.

Three families are provided: logistic (Platt) scaling
``1 / (1 + exp(-(gamma*s + delta)))``, isotonic regression fitted by
pool-adjacent-violators, and beta calibration
``1 / (1 + 1 / (e^c s^a / (1-s)^b))``. All fitted calibrators are immutable
and serialize to ``{"type": ..., "parameters": {...}}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateFitError
from .nn import logistic

DEFAULT_FLOOR = 1e-6
BETA_CLIP = 1e-12


@dataclass(frozen=True)
class ScoreSet:
    """Scores on the calibration split with their labels.

    Labels are normally 0/1; values in between are accepted so isotonic
    regression can be refit on its own outputs.
    """

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float).reshape(-1)
        y = np.asarray(self.labels, dtype=float).reshape(-1)
        if s.shape != y.shape:
            raise ContractError(f"{s.size} scores but {y.size} labels")
        if s.size == 0:
            raise ContractError("score set is empty")
        if not (np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))):
            raise ContractError("scores must lie in [0, 1]")
        if not (np.all(np.isfinite(y)) and np.all((y >= 0) & (y <= 1))):
            raise ContractError("labels must lie in [0, 1]")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    def require_both_classes(self) -> None:
        if not (np.any(self.labels == 0) and np.any(self.labels == 1)):
            raise DegenerateFitError("calibration labels contain a single class")


def _score_set(cal, labels=None) -> ScoreSet:
    if isinstance(cal, ScoreSet):
        return cal
    return ScoreSet(cal, labels)


def fit_logit_newton(F: np.ndarray, y: np.ndarray, max_iter: int = 100, tol: float = 1e-8):
    """Maximum-likelihood logistic regression on design ``F`` by damped Newton.

    Stops when the score vector norm drops below ``tol`` or after
    ``max_iter`` iterations; steps are halved until the log-likelihood does
    not decrease.
    """
    w = np.zeros(F.shape[1])

    def loglik(w):
        z = F @ w
        return -float(np.sum(y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)))

    current = loglik(w)
    for _ in range(max_iter):
        p = logistic(F @ w)
        grad = F.T @ (y - p)
        if np.linalg.norm(grad) < tol:
            break
        H = F.T @ (F * (p * (1.0 - p))[:, None])
        step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while t > 1e-12:
            candidate = loglik(w + t * step)
            if candidate >= current:
                break
            t *= 0.5
        else:
            break
        w = w + t * step
        current = candidate
    return w


@dataclass(frozen=True)
class LogisticCalibrator:
    gamma: float
    delta: float

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and np.isfinite(self.delta)):
            raise ContractError("logistic calibrator parameters must be finite")

    def predict(self, s):
        return logistic(self.gamma * np.asarray(s, dtype=float) + self.delta)

    def to_dict(self) -> dict:
        return {"type": "logistic", "parameters": {"gamma": self.gamma, "delta": self.delta}}


@dataclass(frozen=True)
class IsotonicCalibrator:
    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if bp.size == 0 or bp.shape != v.shape:
            raise ContractError("breakpoints and values must be non-empty and equally long")
        if np.any(np.diff(bp) <= 0):
            raise ContractError("breakpoints must be strictly increasing")
        if np.any(np.diff(v) < 0) or np.any(v < 0) or np.any(v > 1):
            raise ContractError("values must be non-decreasing within [0, 1]")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", v)

    def predict(self, s):
        s = np.asarray(s, dtype=float)
        # value of the largest breakpoint <= s; first value below the range
        idx = np.searchsorted(self.breakpoints, s, side="right") - 1
        return self.values[np.clip(idx, 0, None)]

    def to_dict(self) -> dict:
        return {"type": "isotonic", "parameters": {
            "breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}}


@dataclass(frozen=True)
class BetaCalibrator:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.a, self.b, self.c)):
            raise ContractError("beta calibrator parameters must be finite")
        if self.a < 0 or self.b < 0:
            raise ContractError("beta calibrator needs a, b >= 0 to stay monotone")

    def predict(self, s):
        s = np.asarray(s, dtype=float)
        # zero exponents drop their term so that 0 * log(0) never appears
        with np.errstate(divide="ignore"):
            za = self.a * np.log(s) if self.a else np.zeros_like(s)
            zb = -self.b * np.log1p(-s) if self.b else np.zeros_like(s)
        return logistic(self.c + za + zb)

    def to_dict(self) -> dict:
        return {"type": "beta", "parameters": {"a": self.a, "b": self.b, "c": self.c}}


def fit_logistic(cal, labels=None) -> LogisticCalibrator:
    cal = _score_set(cal, labels)
    cal.require_both_classes()
    F = np.column_stack([cal.scores, np.ones_like(cal.scores)])
    gamma, delta = fit_logit_newton(F, cal.labels)
    return LogisticCalibrator(float(gamma), float(delta))


def pool_adjacent_violators(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted least-squares projection of ``y`` onto non-decreasing sequences."""
    means, weights, sizes = [], [], []
    for yi, wi in zip(y, w):
        means.append(float(yi))
        weights.append(float(wi))
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, n2 = means.pop(), weights.pop(), sizes.pop()
            total = weights[-1] + w2
            means[-1] = (means[-1] * weights[-1] + m2 * w2) / total
            weights[-1] = total
            sizes[-1] += n2
    return np.repeat(means, sizes)


def fit_isotonic(cal, labels=None) -> IsotonicCalibrator:
    """Isotonic fit on unique scores; tied scores are pooled before PAV."""
    cal = _score_set(cal, labels)
    uniq, inverse, counts = np.unique(cal.scores, return_inverse=True, return_counts=True)
    pooled = np.bincount(inverse, weights=cal.labels) / counts
    fitted = np.clip(pool_adjacent_violators(pooled, counts.astype(float)), 0.0, 1.0)
    return IsotonicCalibrator(uniq, np.maximum.accumulate(fitted))


def beta_features(scores) -> np.ndarray:
    """``(ln s, -ln(1 - s))`` after clipping ``s`` into ``[1e-12, 1 - 1e-12]``."""
    s = np.clip(np.asarray(scores, dtype=float), BETA_CLIP, 1.0 - BETA_CLIP)
    return np.column_stack([np.log(s), -np.log1p(-s)])


def fit_beta(cal, labels=None) -> BetaCalibrator:
    """Beta calibration as logistic regression on :func:`beta_features`.

    A negative coefficient is pinned to zero and the rest refit, so the map
    stays non-decreasing.
    """
    cal = _score_set(cal, labels)
    cal.require_both_classes()
    feats = beta_features(cal.scores)
    ones = np.ones((feats.shape[0], 1))
    y = cal.labels
    a, b, c = fit_logit_newton(np.hstack([feats, ones]), y)
    if a < 0 or b < 0:
        keep = 1 if a < 0 else 0
        coef, c = fit_logit_newton(np.hstack([feats[:, [keep]], ones]), y)
        coef = max(coef, 0.0)
        if coef == 0.0:
            (c,) = fit_logit_newton(ones, y)
        a, b = (0.0, coef) if keep == 1 else (coef, 0.0)
    return BetaCalibrator(float(a), float(b), float(c))


FITTERS = {"Logistic": fit_logistic, "Isotonic": fit_isotonic, "Beta": fit_beta}


def apply(calibrator, score, floor: float = DEFAULT_FLOOR):
    """Calibrated probability for ``score``, clipped to ``[floor, 1 - floor]``."""
    s = np.asarray(score, dtype=float)
    if not (np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))):
        raise ContractError("scores passed to a calibrator must lie in [0, 1]")
    out = np.clip(calibrator.predict(s), floor, 1.0 - floor)
    return float(out) if out.ndim == 0 else out


def calibrator_from_dict(doc: dict):
    kind, params = doc["type"], doc["parameters"]
    if kind == "logistic":
        return LogisticCalibrator(params["gamma"], params["delta"])
    if kind == "isotonic":
        return IsotonicCalibrator(params["breakpoints"], params["values"])
    if kind == "beta":
        return BetaCalibrator(params["a"], params["b"], params["c"])
    raise ContractError(f"unknown calibrator type {kind!r}")
