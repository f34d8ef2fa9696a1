import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnncal import nn
from bnncal.errors import ContractError


def oracle_forward(theta, sizes, x):
    """Layer-by-layer forward pass written out with explicit loops."""
    pos = 0
    h = list(x)
    for layer in range(len(sizes) - 1):
        fi, fo = sizes[layer], sizes[layer + 1]
        W = [[theta[pos + i * fo + j] for j in range(fo)] for i in range(fi)]
        pos += fi * fo
        b = theta[pos:pos + fo]
        pos += fo
        z = [sum(h[i] * W[i][j] for i in range(fi)) + b[j] for j in range(fo)]
        h = z if layer == len(sizes) - 2 else [max(v, 0.0) for v in z]
    return h[0]


def random_problem(rng, sizes=(3, 4, 4, 1), n=8):
    arch = nn.NetworkArch(sizes)
    params = nn.NetworkParams(rng.standard_normal(arch.n_params), arch)
    X = rng.standard_normal((n, sizes[0]))
    y = (rng.random(n) < 0.5).astype(float)
    return arch, params, nn.BinaryBatch(X, y)


def central_diff(f, theta, h=1e-5):
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return out


class TestArch:
    def test_param_count(self):
        arch = nn.NetworkArch((2, 4, 4, 1))
        assert arch.n_params == 2 * 4 + 4 + 4 * 4 + 4 + 4 + 1

    @pytest.mark.parametrize("sizes", [(3,), (3, 4, 2), (0, 1), (2, -1, 1)])
    def test_rejects_bad_sizes(self, sizes):
        with pytest.raises(ContractError):
            nn.NetworkArch(sizes)

    def test_theta_length_checked(self):
        with pytest.raises(ContractError):
            nn.NetworkParams(np.zeros(4), nn.NetworkArch((2, 1)))

    def test_non_finite_theta_rejected(self):
        with pytest.raises(ContractError):
            nn.NetworkParams([np.nan, 0.0, 0.0], nn.NetworkArch((2, 1)))

    def test_glorot_limits_and_zero_bias(self):
        arch = nn.NetworkArch((2, 4, 4, 1))
        params = nn.glorot_uniform(arch, np.random.default_rng(0))
        for (W, b), (fi, fo) in zip(params.layers(), [(2, 4), (4, 4), (4, 1)]):
            assert np.all(np.abs(W) <= math.sqrt(6 / (fi + fo)))
            assert np.all(b == 0)


class TestForward:
    def test_zero_theta(self):
        arch = nn.NetworkArch((3, 4, 4, 1))
        assert nn.forward(nn.NetworkParams(np.zeros(arch.n_params), arch), [1.0, -2.0, 3.0]) == 0.0

    def test_single_linear_layer(self):
        params = nn.NetworkParams([1.0, 0.0], nn.NetworkArch((1, 1)))
        assert nn.forward(params, [2.0]) == 2.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        sizes = (2, 4, 4, 1)
        arch = nn.NetworkArch(sizes)
        for _ in range(10):
            theta = rng.standard_normal(arch.n_params)
            x = rng.standard_normal(2)
            got = nn.forward(nn.NetworkParams(theta, arch), x)
            assert got == pytest.approx(oracle_forward(theta, sizes, x), abs=1e-12)

    def test_forward_many_matches_forward_batch(self):
        rng = np.random.default_rng(4)
        arch = nn.NetworkArch((3, 5, 2, 1))
        thetas = rng.standard_normal((6, arch.n_params))
        X = rng.standard_normal((7, 3))
        stacked = nn.forward_many(thetas, arch, X)
        for s in range(6):
            np.testing.assert_allclose(stacked[s], nn.forward_batch(nn.NetworkParams(thetas[s], arch), X),
                                       atol=1e-13)

    def test_dimension_mismatch(self):
        params = nn.NetworkParams(np.zeros(3), nn.NetworkArch((2, 1)))
        with pytest.raises(ContractError):
            nn.forward(params, [1.0, 2.0, 3.0])

    def test_positive_homogeneity_in_last_layer(self):
        rng = np.random.default_rng(5)
        arch = nn.NetworkArch((3, 4, 4, 1))
        theta = rng.standard_normal(arch.n_params)
        ws, bs, _, _ = list(arch.slices())[-1]
        theta[bs] = 0.0
        scaled = theta.copy()
        scaled[ws] *= 2.5
        x = rng.standard_normal(3)
        assert nn.forward(nn.NetworkParams(scaled, arch), x) == pytest.approx(
            2.5 * nn.forward(nn.NetworkParams(theta, arch), x), rel=1e-12)


class TestLogistic:
    def test_values(self):
        assert nn.logistic(0.0) == 0.5
        assert nn.logistic(1.0) == pytest.approx(0.7310585786, abs=1e-10)

    def test_saturation_without_overflow(self):
        with np.errstate(over="raise"):
            hi = nn.logistic(40.0)
            lo = nn.logistic(-800.0)
        assert 1 - 1e-15 < hi <= 1.0
        assert 0.0 <= lo < 1e-300

    @given(st.floats(-700, 700))
    def test_symmetry(self, a):
        assert abs(nn.logistic(a) + nn.logistic(-a) - 1.0) <= 1e-15


class TestLogLikelihood:
    def test_uniform_predictions(self):
        arch = nn.NetworkArch((2, 3, 1))
        batch = nn.BinaryBatch(np.ones((4, 2)), [1, 0, 1, 0])
        ll = nn.log_likelihood(nn.NetworkParams(np.zeros(arch.n_params), arch), batch)
        assert ll == pytest.approx(4 * math.log(0.5), abs=1e-12)

    def test_near_certain_correct(self):
        params = nn.NetworkParams([40.0, 0.0], nn.NetworkArch((1, 1)))
        ll = nn.log_likelihood(params, nn.BinaryBatch([[1.0]], [1]))
        assert -1e-15 < ll < 0

    def test_matches_per_sample_oracle(self):
        rng = np.random.default_rng(6)
        arch, params, batch = random_problem(rng)
        expected = 0.0
        for x, y in zip(batch.X, batch.y):
            p = 1 / (1 + math.exp(-oracle_forward(params.theta, arch.layer_sizes, x)))
            expected += math.log(p ** y * (1 - p) ** (1 - y))
        assert nn.log_likelihood(params, batch) == pytest.approx(expected, abs=1e-10)

    def test_empty_batch(self):
        params = nn.NetworkParams(np.zeros(3), nn.NetworkArch((2, 1)))
        with pytest.raises(ContractError):
            nn.log_likelihood(params, nn.BinaryBatch(np.zeros((0, 2)), []))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        _, params, batch = random_problem(rng, n=12)
        perm = rng.permutation(12)
        shuffled = nn.BinaryBatch(batch.X[perm], batch.y[perm])
        assert nn.log_likelihood(params, shuffled) == pytest.approx(
            nn.log_likelihood(params, batch), rel=1e-13)

    def test_non_positive(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            _, params, batch = random_problem(rng)
            assert nn.log_likelihood(params, batch) <= 0


class TestGradients:
    def test_linear_gradient(self):
        params = nn.NetworkParams([0.7, -0.2], nn.NetworkArch((1, 1)))
        np.testing.assert_array_equal(nn.network_gradient(params, [3.0]), [3.0, 1.0])

    def test_network_gradient_finite_differences(self):
        rng = np.random.default_rng(9)
        arch = nn.NetworkArch((3, 4, 4, 1))
        theta = rng.standard_normal(arch.n_params)
        x = rng.standard_normal(3)
        g = nn.network_gradient(nn.NetworkParams(theta, arch), x)
        fd = central_diff(lambda t: nn.forward(nn.NetworkParams(t, arch), x), theta)
        np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-8)

    def test_dead_unit_has_zero_gradient(self):
        arch = nn.NetworkArch((1, 2, 1))
        # hidden unit 0 has pre-activation -5 for x=1, unit 1 is active
        theta = np.array([1.0, 1.0, -6.0, 0.0, 2.0, 3.0, 0.0])
        g = nn.network_gradient(nn.NetworkParams(theta, arch), [1.0])
        assert g[0] == 0.0 and g[2] == 0.0 and g[4] == 0.0
        assert g[1] != 0.0

    def test_relu_tie_break_at_zero(self):
        arch = nn.NetworkArch((1, 1, 1))
        theta = np.array([1.0, -1.0, 1.0, 0.0])  # pre-activation exactly 0 at x=1
        g = nn.network_gradient(nn.NetworkParams(theta, arch), [1.0])
        assert g[0] == 0.0 and g[1] == 0.0

    def test_grad_log_likelihood_matches_two_sum_formula(self):
        rng = np.random.default_rng(10)
        _, params, batch = random_problem(rng, n=10)
        J = nn.jacobian(params, batch.X)
        g = nn.logistic(nn.forward_batch(params, batch.X))
        expected = J[batch.y == 1].sum(axis=0) - (g[:, None] * J).sum(axis=0)
        np.testing.assert_allclose(nn.grad_log_likelihood(params, batch), expected, atol=1e-12)

    def test_perfect_fit_is_stationary(self):
        params = nn.NetworkParams([0.0, 0.0], nn.NetworkArch((1, 1)))
        # f = 0 everywhere gives g = 0.5; half-labels are not allowed, so
        # pair a 1 and a 0 at the same x: the residuals cancel exactly.
        batch = nn.BinaryBatch([[2.0], [2.0]], [1, 0])
        np.testing.assert_array_equal(nn.grad_log_likelihood(params, batch), [0.0, 0.0])

    def test_single_negative_sample(self):
        rng = np.random.default_rng(11)
        arch = nn.NetworkArch((2, 3, 1))
        theta = rng.standard_normal(arch.n_params)
        ws, bs, _, _ = list(arch.slices())[-1]
        x = rng.standard_normal(2)
        theta[bs] -= nn.forward(nn.NetworkParams(theta, arch), x)  # force f = 0
        params = nn.NetworkParams(theta, arch)
        g = nn.grad_log_likelihood(params, nn.BinaryBatch([x], [0]))
        np.testing.assert_allclose(g, -0.5 * nn.network_gradient(params, x), atol=1e-15)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 20),
           hidden=st.lists(st.integers(1, 4), min_size=1, max_size=2))
    def test_finite_difference_property(self, seed, n, hidden):
        rng = np.random.default_rng(seed)
        sizes = (2, *hidden, 1)
        arch, params, batch = random_problem(rng, sizes, n)
        assert arch.n_params <= 50
        g = nn.grad_log_likelihood(params, batch)
        fd = central_diff(lambda t: nn.log_likelihood(nn.NetworkParams(t, arch), batch), params.theta)
        # kinks of ReLU can sit inside the FD stencil; skip those rare draws
        pre = [np.abs(z).min() for z in nn._forward_cache(params, batch.X)[2]]
        if min(pre) < 1e-4:
            return
        scale = np.maximum(np.abs(fd), 1e-6)
        assert np.max(np.abs(g - fd) / scale) < 1e-4 or np.max(np.abs(g - fd)) < 1e-8
