import itertools
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate
from scipy import stats as sps

from bnncal import stats
from bnncal.errors import ContractError, UndefinedStatisticError

TABLE = Path(__file__).parent / "data" / "published_benchmark_logloss.csv"


def matrix(values, methods=None):
    values = np.asarray(values, dtype=float)
    N, k = values.shape
    methods = methods or [f"m{j}" for j in range(k)]
    return stats.LossMatrix(values, [f"d{i}" for i in range(N)], methods)


def rank_oracle(row):
    """Average rank by counting strictly smaller and equal entries."""
    out = []
    for v in row:
        below = sum(1 for u in row if u < v)
        ties = sum(1 for u in row if u == v)
        out.append(below + (ties + 1) / 2)
    return out


loss_rows = arrays(float, st.tuples(st.integers(2, 8), st.integers(2, 6)),
                   elements=st.sampled_from([0.1, 0.2, 0.25, 0.3, 0.5, 0.7]))


class TestLossMatrix:
    def test_nan_rejected(self):
        with pytest.raises(ContractError):
            matrix([[0.1, np.nan], [0.2, 0.3]])

    def test_needs_two_by_two(self):
        with pytest.raises(ContractError):
            matrix([[0.1, 0.2]])

    def test_csv_roundtrip(self, tmp_path):
        L = stats.LossMatrix.from_csv(TABLE)
        assert L.values.shape == (21, 5)
        L.to_csv(tmp_path / "L.csv")
        back = stats.LossMatrix.from_csv(tmp_path / "L.csv")
        np.testing.assert_array_equal(back.values, L.values)
        assert back.methods == L.methods and back.datasets == L.datasets


class TestRanks:
    def test_full_tie(self):
        r = stats.average_ranks(matrix([[0.4] * 5, [0.1, 0.2, 0.3, 0.4, 0.5]]))
        np.testing.assert_array_equal(r.rank_rows[0], [3.0] * 5)

    def test_three_by_three_oracle(self):
        vals = np.random.default_rng(0).random((3, 3))
        r = stats.average_ranks(matrix(vals))
        for row, ranked in zip(vals, r.rank_rows):
            order = sorted(range(3), key=lambda j: row[j])
            expected = [0.0] * 3
            for pos, j in enumerate(order, start=1):
                expected[j] = pos
            np.testing.assert_array_equal(ranked, expected)

    @settings(max_examples=50)
    @given(loss_rows)
    def test_oracle_and_row_sums(self, vals):
        r = stats.average_ranks(matrix(vals))
        k = vals.shape[1]
        for row, ranked in zip(vals, r.rank_rows):
            np.testing.assert_allclose(ranked, rank_oracle(list(row)))
        np.testing.assert_allclose(r.rank_rows.sum(axis=1), k * (k + 1) / 2)
        assert r.average.sum() == pytest.approx(k * (k + 1) / 2)

    def test_benchmark_varbayes_best(self):
        r = stats.average_ranks(stats.LossMatrix.from_csv(TABLE)).as_dict()
        assert min(r, key=r.get) == "VarBayes"
        assert r["VarBayes"] == pytest.approx(2.0952, abs=1e-4)


class TestFriedman:
    def test_dominance_two_methods(self):
        res = stats.friedman_test(matrix([[0.1, 0.2]] * 10))
        assert res.statistic == pytest.approx(10.0, abs=1e-12)
        assert res.p_value == pytest.approx(0.0015654, abs=1e-6)

    def test_chi2_sf_against_quadrature(self):
        pdf = lambda t: t * math.exp(-t / 2) / 4  # chi-square density, df = 4
        tail, _ = integrate.quad(pdf, 4, np.inf, epsabs=1e-13)
        assert stats.chi2_sf(4, 4) == pytest.approx(tail, abs=1e-8)

    def test_all_tied_is_undefined(self):
        with pytest.raises(UndefinedStatisticError):
            stats.friedman_test(matrix([[0.3, 0.3, 0.3]] * 4))

    def test_benchmark_friedman_bracket(self):
        stat, p = stats.friedman_test(stats.LossMatrix.from_csv(TABLE))
        assert 22.0 <= stat <= 24.0 and p < 5e-4

    @settings(max_examples=40)
    @given(loss_rows)
    def test_matches_scipy(self, vals):
        L = matrix(vals)
        try:
            res = stats.friedman_test(L)
        except UndefinedStatisticError:
            return
        if vals.shape[1] < 3:
            return  # scipy requires three groups
        ref = sps.friedmanchisquare(*vals.T)
        assert res.statistic == pytest.approx(ref.statistic, rel=1e-10)
        assert res.p_value == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-300)

    @settings(max_examples=30)
    @given(loss_rows, st.integers(0, 7))
    def test_monotone_row_transform_invariance(self, vals, row):
        row %= vals.shape[0]
        try:
            a = stats.friedman_test(matrix(vals)).statistic
        except UndefinedStatisticError:
            return
        moved = vals.copy()
        moved[row] = np.exp(3 * moved[row]) + 7
        assert stats.friedman_test(matrix(moved)).statistic == pytest.approx(a, rel=1e-12)


class TestWilcoxon:
    def test_all_wins_twenty_one(self):
        x = np.linspace(0.1, 0.5, 21)
        res = stats.wilcoxon_signed_rank(x, x + 0.01 * np.arange(1, 22))
        assert res.method == "exact"
        assert res.p_value == pytest.approx(2 * 0.5 ** 21, rel=1e-12)

    def test_symmetric_differences(self):
        d = np.array([0.1, -0.1, 0.2, -0.2, 0.3, -0.3])
        res = stats.wilcoxon_signed_rank(d, np.zeros(6))
        assert res.statistic == pytest.approx(6 * 7 / 4)
        assert res.p_value == 1.0

    def test_all_zero_is_degenerate(self):
        res = stats.wilcoxon_signed_rank([0.2, 0.3], [0.2, 0.3])
        assert res.method == "degenerate" and res.p_value == 1.0

    def test_exact_matches_enumeration(self):
        rng = np.random.default_rng(1)
        diff = np.round(rng.standard_normal(10), 1)
        diff = diff[diff != 0]
        ranks = sps.rankdata(np.abs(diff))
        w = ranks[diff > 0].sum()
        mean = ranks.sum() / 2
        count = 0
        for signs in itertools.product([0, 1], repeat=diff.size):
            s = float(np.dot(signs, ranks))
            count += abs(s - mean) >= abs(w - mean) - 1e-9
        res = stats.wilcoxon_signed_rank(diff, np.zeros(diff.size))
        assert res.p_value == pytest.approx(count / 2 ** diff.size, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(arrays(float, st.integers(2, 20), elements=st.floats(-3, 3, allow_subnormal=False)).filter(
        lambda d: len(np.unique(np.abs(d[d != 0]))) == np.count_nonzero(d) > 0))
    def test_matches_scipy_exact(self, d):
        res = stats.wilcoxon_signed_rank(d, np.zeros(d.size))
        ref = sps.wilcoxon(d[d != 0], method="exact")
        assert res.p_value == pytest.approx(ref.pvalue, rel=1e-9)

    def test_normal_branch(self):
        rng = np.random.default_rng(2)
        d = rng.standard_normal(40) + 0.3
        res = stats.wilcoxon_signed_rank(d, np.zeros(40))
        ref = sps.wilcoxon(d, method="approx", correction=True)
        assert res.method == "normal"
        assert res.p_value == pytest.approx(ref.pvalue, rel=1e-9)


class TestHolm:
    def test_hand_example(self):
        adj = stats.holm_adjust([0.001, 0.02, 0.04])
        np.testing.assert_allclose(adj, [0.003, 0.04, 0.04])
        assert list(adj < 0.05) == [True, True, True]

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=12))
    def test_monotone_and_bounded(self, p):
        adj = stats.holm_adjust(p)
        order = np.argsort(p, kind="stable")
        assert np.all(np.diff(adj[order]) >= 0)
        assert np.all(adj <= 1) and np.all(adj >= np.asarray(p))

    def test_pair_symmetry(self):
        rng = np.random.default_rng(3)
        vals = rng.random((12, 3))
        a = stats.wilcoxon_holm(matrix(vals, ["A", "B", "C"]))
        b = stats.wilcoxon_holm(matrix(vals[:, ::-1], ["C", "B", "A"]))
        for x, y in itertools.combinations("ABC", 2):
            assert a[(x, y)].raw_p == pytest.approx(b[(y, x)].raw_p, abs=1e-15)
            assert a[(x, y)] == a[(y, x)]


class TestCriticalDifference:
    def test_all_significant(self):
        vals = np.tile([0.1, 0.2, 0.3], (20, 1)) + np.random.default_rng(4).random((20, 1)) * 0.01
        vals += np.arange(20)[:, None] * np.array([0.0, 1e-4, 2e-4])
        L = matrix(vals, ["A", "B", "C"])
        cd = stats.critical_difference_data(stats.average_ranks(L), stats.wilcoxon_holm(L))
        assert cd["order"] == ["A", "B", "C"]
        assert cd["cliques"] == [["A"], ["B"], ["C"]]

    def test_none_significant(self):
        L = matrix(np.random.default_rng(5).random((3, 4)), ["A", "B", "C", "D"])
        cd = stats.critical_difference_data(stats.average_ranks(L), stats.wilcoxon_holm(L))
        assert len(cd["cliques"]) == 1 and sorted(cd["cliques"][0]) == ["A", "B", "C", "D"]

    def test_benchmark_groups(self):
        L = stats.LossMatrix.from_csv(TABLE)
        sig = stats.wilcoxon_holm(L)
        cd = stats.critical_difference_data(stats.average_ranks(L), sig)
        assert cd["order"][0] == "VarBayes"
        significant = {tuple(sorted(k)) for k, v in sig.items() if v.significant}
        assert significant == {("Isotonic", "Uncalibrated"), ("Beta", "Isotonic"), ("Isotonic", "VarBayes")}

    def test_missing_pair(self):
        L = matrix(np.random.default_rng(6).random((3, 3)), ["A", "B", "C"])
        sig = stats.wilcoxon_holm(L)
        partial = stats.PairwiseSignificance({("A", "B"): sig[("A", "B")]}, 0.05)
        with pytest.raises(ContractError):
            stats.critical_difference_data(stats.average_ranks(L), partial)
