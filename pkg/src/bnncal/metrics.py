"""Probability-quality metrics for binary predictions.

Binning for ECE and reliability curves uses ``n_bins`` equal-width bins
``[k/n, (k+1)/n)``; the last bin is closed on the right so that a
prediction of exactly 1.0 is counted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InfiniteLossError


@dataclass(frozen=True)
class PredictionSet:
    probs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        y = np.asarray(self.labels, dtype=float).reshape(-1)
        if p.size == 0 or p.shape != y.shape:
            raise ContractError(f"need equally long non-empty inputs, got {p.size} and {y.size}")
        if not np.all((p >= 0) & (p <= 1)):
            raise ContractError("probabilities must lie in [0, 1]")
        if not np.all((y == 0) | (y == 1)):
            raise ContractError("labels must be 0 or 1")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "labels", y)


def _pset(probs, labels) -> PredictionSet:
    if isinstance(probs, PredictionSet):
        return probs
    return PredictionSet(probs, labels)


def log_loss(probs, labels=None) -> float:
    """Mean negative Bernoulli log-likelihood.

    Raises :class:`InfiniteLossError` if any prediction is exactly 0 or 1;
    callers clip first.
    """
    ps = _pset(probs, labels)
    p, y = ps.probs, ps.labels
    if np.any((p == 0) | (p == 1)):
        raise InfiniteLossError("a probability of exactly 0 or 1 gives infinite log-loss; clip first")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def brier_score(probs, labels=None) -> float:
    ps = _pset(probs, labels)
    return float(np.mean((ps.probs - ps.labels) ** 2))


def bin_index(p: np.ndarray, n_bins: int) -> np.ndarray:
    if n_bins < 1:
        raise ContractError("n_bins must be at least 1")
    return np.minimum((p * n_bins).astype(int), n_bins - 1)


@dataclass(frozen=True)
class ReliabilityBin:
    low: float
    high: float
    mean_pred: float
    frac_pos: float
    count: int


@dataclass(frozen=True)
class ReliabilityCurve:
    bins: tuple[ReliabilityBin, ...]
    n_bins: int

    @property
    def total(self) -> int:
        return sum(b.count for b in self.bins)

    def rows(self):
        """Plain rows; empty bins carry NaN means."""
        return [(b.low, b.high, b.mean_pred, b.frac_pos, b.count) for b in self.bins]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_low", "bin_high", "mean_pred", "frac_pos", "count"])
            for low, high, mp, fp, n in self.rows():
                w.writerow([repr(low), repr(high), repr(mp), repr(fp), n])


def reliability_curve(probs, labels=None, n_bins: int = 10) -> ReliabilityCurve:
    ps = _pset(probs, labels)
    idx = bin_index(ps.probs, n_bins)
    bins = []
    for k in range(n_bins):
        mask = idx == k
        n = int(mask.sum())
        mp = float(np.mean(ps.probs[mask])) if n else float("nan")
        fp = float(np.mean(ps.labels[mask])) if n else float("nan")
        bins.append(ReliabilityBin(k / n_bins, (k + 1) / n_bins, mp, fp, n))
    return ReliabilityCurve(tuple(bins), n_bins)


def ece(probs, labels=None, n_bins: int = 10) -> float:
    """Expected calibration error; empty bins contribute nothing."""
    ps = _pset(probs, labels)
    curve = reliability_curve(ps, n_bins=n_bins)
    N = ps.probs.size
    return float(sum(b.count / N * abs(b.frac_pos - b.mean_pred) for b in curve.bins if b.count))
