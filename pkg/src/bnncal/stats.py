"""Rank-based comparison of methods across datasets.

Average ranks, the tie-corrected Friedman test, pairwise Wilcoxon
signed-rank tests with Holm's step-down correction, and the grouping data a
critical-difference diagram draws. Lower loss is better: rank 1 is best.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.special import gammaincc
from scipy.stats import rankdata

from .errors import ContractError, UndefinedStatisticError


@dataclass(frozen=True)
class LossMatrix:
    values: np.ndarray
    datasets: tuple[str, ...]
    methods: tuple[str, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        datasets, methods = tuple(self.datasets), tuple(self.methods)
        if v.ndim != 2 or v.shape != (len(datasets), len(methods)):
            raise ContractError(
                f"values {v.shape} do not match {len(datasets)} datasets x {len(methods)} methods")
        if v.shape[0] < 2 or v.shape[1] < 2:
            raise ContractError("need at least 2 datasets and 2 methods")
        if np.any(np.isnan(v)):
            raise ContractError("loss matrix has missing (NaN) entries")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "datasets", datasets)
        object.__setattr__(self, "methods", methods)

    @classmethod
    def from_csv(cls, path) -> "LossMatrix":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ContractError(f"{path} is empty")
        methods = rows[0][1:]
        data = [r for r in rows[1:] if r]
        try:
            values = [[float(x) for x in r[1:]] for r in data]
        except ValueError as exc:
            raise ContractError(f"{path}: non-numeric loss value ({exc})") from None
        return cls(np.array(values), [r[0] for r in data], methods)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", *self.methods])
            for name, row in zip(self.datasets, self.values):
                w.writerow([name, *(repr(float(x)) for x in row)])


@dataclass(frozen=True)
class RankResult:
    methods: tuple[str, ...]
    rank_rows: np.ndarray
    average: np.ndarray

    def as_dict(self) -> dict:
        return {m: float(r) for m, r in zip(self.methods, self.average)}


def average_ranks(L: LossMatrix) -> RankResult:
    """Rank methods within each dataset (ties share the average rank)."""
    rows = np.vstack([rankdata(row, method="average") for row in L.values])
    return RankResult(L.methods, rows, rows.mean(axis=0))


def chi2_sf(x: float, df: int) -> float:
    """Chi-square survival function via the regularized upper incomplete gamma."""
    if x <= 0:
        return 1.0
    return float(gammaincc(df / 2.0, x / 2.0))


@dataclass(frozen=True)
class FriedmanResult:
    statistic: float
    p_value: float
    uncorrected_statistic: float
    uncorrected_p_value: float
    df: int

    def __iter__(self):
        yield self.statistic
        yield self.p_value


def friedman_test(L: LossMatrix) -> FriedmanResult:
    """Friedman chi-square on within-dataset ranks, divided by the tie correction
    ``1 - sum(t^3 - t) / (N k (k^2 - 1))``."""
    N, k = L.values.shape
    ranks = average_ranks(L)
    R = ranks.average
    stat = 12.0 * N / (k * (k + 1)) * (np.sum(R ** 2) - k * (k + 1) ** 2 / 4.0)
    ties = 0.0
    for row in L.values:
        _, counts = np.unique(row, return_counts=True)
        ties += float(np.sum(counts ** 3 - counts))
    correction = 1.0 - ties / (N * k * (k * k - 1))
    if correction <= 0:
        raise UndefinedStatisticError("every dataset ties all methods; Friedman statistic undefined")
    corrected = stat / correction
    return FriedmanResult(float(corrected), chi2_sf(corrected, k - 1),
                          float(stat), chi2_sf(stat, k - 1), k - 1)


EXACT_MAX_N = 25


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # sum of ranks of positive differences
    p_value: float
    n: int  # non-zero differences
    method: str  # "exact", "normal" or "degenerate"


def _exact_signed_rank_p(ranks: np.ndarray, w_plus: float) -> float:
    """Two-sided p by enumerating all 2^n sign patterns of the given ranks.

    Ranks may be half-integers under ties, so counting runs on doubled ranks.
    """
    doubled = np.rint(2 * ranks).astype(int)
    total = int(doubled.sum())
    dist = np.zeros(total + 1)
    dist[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[:total + 1 - r]
        dist = dist + shifted
    dist /= dist.sum()
    w = int(round(2 * w_plus))
    lower = dist[:w + 1].sum()
    upper = dist[w:].sum()
    return float(min(1.0, 2.0 * min(lower, upper)))


def wilcoxon_signed_rank(x, y) -> WilcoxonResult:
    """Two-sided signed-rank test on paired samples; zero differences dropped.

    Exact enumeration for up to 25 non-zero differences, otherwise a normal
    approximation with tie-corrected variance and a 0.5 continuity correction.
    """
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    diff = diff[diff != 0]
    n = diff.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate")
    ranks = rankdata(np.abs(diff), method="average")
    w_plus = float(ranks[diff > 0].sum())
    if n <= EXACT_MAX_N:
        return WilcoxonResult(w_plus, _exact_signed_rank_p(ranks, w_plus), n, "exact")
    _, counts = np.unique(np.abs(diff), return_counts=True)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(counts ** 3 - counts) / 48.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    return WilcoxonResult(w_plus, float(min(1.0, math.erfc(z / math.sqrt(2.0)))), n, "normal")


def holm_adjust(p_values) -> np.ndarray:
    """Holm step-down adjusted p-values, in the input order."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    order = np.argsort(p, kind="stable")
    adjusted = np.empty(m)
    running = 0.0
    for rank, i in enumerate(order):
        running = max(running, min(1.0, (m - rank) * p[i]))
        adjusted[i] = running
    return adjusted


@dataclass(frozen=True)
class PairResult:
    raw_p: float
    adjusted_p: float
    significant: bool
    degenerate: bool = False


class PairwiseSignificance(dict):
    """``(method_a, method_b) -> PairResult``; lookups work in either order."""

    def __init__(self, pairs, alpha):
        super().__init__(pairs)
        self.alpha = alpha

    def __missing__(self, key):
        a, b = key
        if (b, a) in self.keys():
            return dict.__getitem__(self, (b, a))
        raise KeyError(key)

    def __contains__(self, key):
        return dict.__contains__(self, key) or (
            isinstance(key, tuple) and dict.__contains__(self, key[::-1]))


def wilcoxon_holm(L: LossMatrix, alpha: float = 0.05) -> PairwiseSignificance:
    if not 0 < alpha < 1:
        raise ContractError("alpha must lie in (0, 1)")
    pairs = list(itertools.combinations(range(len(L.methods)), 2))
    tests = [wilcoxon_signed_rank(L.values[:, i], L.values[:, j]) for i, j in pairs]
    adjusted = holm_adjust([t.p_value for t in tests])
    out = {}
    for (i, j), t, adj in zip(pairs, tests, adjusted):
        out[(L.methods[i], L.methods[j])] = PairResult(
            t.p_value, float(adj), bool(adj < alpha), t.method == "degenerate")
    return PairwiseSignificance(out, alpha)


def critical_difference_data(ranks: RankResult, sig: PairwiseSignificance) -> dict:
    """Methods ordered by average rank plus maximal groups of mutually
    non-significant methods (the bars of a critical-difference diagram)."""
    methods = list(ranks.methods)
    for a, b in itertools.combinations(methods, 2):
        if (a, b) not in sig:
            raise ContractError(f"no significance result for pair ({a}, {b})")
    avg = ranks.as_dict()
    order = sorted(methods, key=lambda m: (avg[m], m))
    g = nx.Graph()
    g.add_nodes_from(order)
    g.add_edges_from((a, b) for a, b in itertools.combinations(order, 2) if not sig[(a, b)].significant)
    position = {m: i for i, m in enumerate(order)}
    cliques = [sorted(c, key=position.get) for c in nx.find_cliques(g)]
    cliques.sort(key=lambda c: [position[m] for m in c])
    return {"order": order, "avg_ranks": {m: avg[m] for m in order},
            "cliques": cliques, "alpha": sig.alpha}


def dump_cd_summary(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
