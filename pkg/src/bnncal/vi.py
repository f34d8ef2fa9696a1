"""Gaussian variational inference with a factor covariance.

The approximating density is ``N(mu, B B' + D^2)`` with ``D = diag(d)`` and
``B`` an ``m x K`` loading matrix whose upper triangle is fixed at zero, so
the free loadings are ``vech(B)`` (columns stacked, entries on or below the
diagonal). Draws are ``theta = mu + B z + d * eta`` with ``z ~ N(0, I_K)``
and ``eta ~ N(0, I_m)``. Densities, solves and log-determinants go through
the Woodbury identity and the matrix-determinant lemma, so nothing of size
``m x m`` is ever formed.

The prior is flat over R^m, so ``log h(theta)`` is the log-likelihood and
the prior constant is dropped from reported ELBO values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import nn
from .errors import ContractError, DivergenceError, SingularCovarianceError
from .optim import AdamState, adam_step
from .rng import make_rng, standard_normal

log = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


def _vech_mask(m: int, K: int) -> np.ndarray:
    return np.tril(np.ones((m, K), dtype=bool))


def vech(B: np.ndarray) -> np.ndarray:
    """Free entries of a lower-trapezoidal ``m x K`` matrix, column by column."""
    m, K = B.shape
    return np.concatenate([B[j:, j] for j in range(K)]) if K else np.zeros(0)


def unvech(v: np.ndarray, m: int, K: int) -> np.ndarray:
    B = np.zeros((m, K))
    pos = 0
    for j in range(K):
        B[j:, j] = v[pos:pos + m - j]
        pos += m - j
    return B


def vech_size(m: int, K: int) -> int:
    return sum(m - j for j in range(K))


@dataclass(frozen=True)
class VariationalParams:
    mu: np.ndarray
    d: np.ndarray
    B: np.ndarray
    arch: nn.NetworkArch | None = field(default=None, compare=False)

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        d = np.array(self.d, dtype=float).reshape(-1)
        B = np.array(self.B, dtype=float)
        m = mu.size
        if B.ndim == 1 and B.size == 0:
            B = B.reshape(m, 0)
        if d.size != m or B.ndim != 2 or B.shape[0] != m:
            raise ContractError(f"shapes disagree: mu {mu.shape}, d {d.shape}, B {B.shape}")
        if B.shape[1] >= max(m, 1) and m > 0:
            raise ContractError(f"factor count K={B.shape[1]} must be below m={m}")
        if np.any(B[~_vech_mask(*B.shape)] != 0.0):
            raise ContractError("entries above the diagonal of B must be zero")
        if not all(np.all(np.isfinite(a)) for a in (mu, d, B)):
            raise ContractError("variational parameters contain non-finite entries")
        if self.arch is not None and self.arch.n_params != m:
            raise ContractError(f"arch has {self.arch.n_params} parameters, mu has {m}")
        for a in (mu, d, B):
            a.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "B", B)

    @property
    def m(self) -> int:
        return self.mu.size

    @property
    def K(self) -> int:
        return self.B.shape[1]

    def covariance(self) -> np.ndarray:
        """Dense ``B B' + D^2``; only sensible for small ``m``."""
        return self.B @ self.B.T + np.diag(self.d ** 2)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.mu, self.d, vech(self.B)])

    @classmethod
    def from_vector(cls, vec, m: int, K: int, arch=None) -> "VariationalParams":
        vec = np.asarray(vec, dtype=float)
        if vec.size != 2 * m + vech_size(m, K):
            raise ContractError(f"vector of length {vec.size} does not fit m={m}, K={K}")
        return cls(vec[:m], vec[m:2 * m], unvech(vec[2 * m:], m, K), arch)


@dataclass(frozen=True)
class NoiseDraw:
    z: np.ndarray
    eta: np.ndarray

    @classmethod
    def draw(cls, rng: np.random.Generator, m: int, K: int) -> "NoiseDraw":
        e = standard_normal(rng, K + m)
        return cls(e[:K], e[K:])


@dataclass(frozen=True)
class VariationalGradient:
    mu: np.ndarray
    d: np.ndarray
    B: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.mu, self.d, vech(self.B)])


class _FactorPrecision:
    """Woodbury view of ``(B B' + D^2)^{-1}``: O(m K^2 + K^3) per build."""

    def __init__(self, lam: VariationalParams):
        if np.any(lam.d == 0.0):
            raise SingularCovarianceError("covariance is singular: some d_i == 0")
        self.d2inv = 1.0 / lam.d ** 2
        self.B = lam.B
        self.W = lam.B * self.d2inv[:, None]
        C = np.eye(lam.K) + lam.B.T @ self.W
        self.chol = cho_factor(C, lower=True) if lam.K else None
        self._logdet_C = 2.0 * np.sum(np.log(np.diag(self.chol[0]))) if lam.K else 0.0
        self.logdet = self._logdet_C + np.sum(np.log(lam.d ** 2))

    def solve(self, r: np.ndarray) -> np.ndarray:
        out = (self.d2inv * r.T).T
        if self.chol is not None:
            out = out - self.W @ cho_solve(self.chol, self.W.T @ r)
        return out

    def quad(self, r: np.ndarray) -> float:
        q = float(r @ (self.d2inv * r))
        if self.chol is not None:
            u = self.W.T @ r
            q -= float(u @ cho_solve(self.chol, u))
        return q

    def diag(self) -> np.ndarray:
        out = self.d2inv.copy()
        if self.chol is not None:
            out -= np.sum(self.W * cho_solve(self.chol, self.W.T).T, axis=1)
        return out


def _check_noise(lam: VariationalParams, eps: NoiseDraw) -> None:
    if np.shape(eps.z) != (lam.K,) or np.shape(eps.eta) != (lam.m,):
        raise ContractError(
            f"noise shapes z {np.shape(eps.z)}, eta {np.shape(eps.eta)} "
            f"do not match K={lam.K}, m={lam.m}")


def _theta(lam: VariationalParams, eps: NoiseDraw) -> np.ndarray:
    _check_noise(lam, eps)
    return lam.mu + lam.B @ eps.z + lam.d * eps.eta


def sample_theta(lam: VariationalParams, eps: NoiseDraw) -> nn.NetworkParams:
    """``mu + B z + d * eta`` as network parameters."""
    if lam.arch is None:
        raise ContractError("sample_theta needs VariationalParams with an architecture")
    return nn.NetworkParams(_theta(lam, eps), lam.arch)


def _vec(theta) -> np.ndarray:
    if isinstance(theta, nn.NetworkParams):
        return theta.theta
    return np.asarray(theta, dtype=float).reshape(-1)


def log_q(lam: VariationalParams, theta, _prec: _FactorPrecision | None = None) -> float:
    """Log-density of the factor Gaussian at ``theta``."""
    th = _vec(theta)
    if th.size != lam.m:
        raise ContractError(f"theta has {th.size} entries, expected {lam.m}")
    prec = _prec or _FactorPrecision(lam)
    r = th - lam.mu
    return -0.5 * (lam.m * _LOG_2PI + prec.logdet + prec.quad(r))


def grad_log_q(lam: VariationalParams, theta) -> np.ndarray:
    """``grad_theta log q = -(B B' + D^2)^{-1} (theta - mu)``."""
    return -_FactorPrecision(lam).solve(_vec(theta) - lam.mu)


class NetworkLikelihood:
    """Log-target ``log h(theta)`` for a network under a flat prior."""

    def __init__(self, arch: nn.NetworkArch, batch: nn.BinaryBatch):
        if len(batch) == 0:
            raise ContractError("batch is empty")
        self.arch = arch
        self.batch = batch

    def log_density(self, theta: np.ndarray) -> float:
        return nn.log_likelihood(nn.NetworkParams(theta, self.arch), self.batch)

    def grad_log_density(self, theta: np.ndarray) -> np.ndarray:
        return nn.grad_log_likelihood(nn.NetworkParams(theta, self.arch), self.batch)


def _as_target(lam: VariationalParams, batch):
    """Accept a BinaryBatch, or any object exposing ``log_density`` and
    ``grad_log_density`` over flat parameter vectors."""
    if hasattr(batch, "log_density"):
        return batch
    if lam.arch is None:
        raise ContractError("a BinaryBatch target needs VariationalParams with an architecture")
    return NetworkLikelihood(lam.arch, batch)


def elbo_estimate(lam: VariationalParams, batch, eps: NoiseDraw) -> float:
    """Single-draw ``log h(theta) - log q(theta)`` at ``theta = mu + Bz + d*eta``."""
    target = _as_target(lam, batch)
    th = _theta(lam, eps)
    return target.log_density(th) - log_q(lam, th)


def _elbo_and_gradient(lam, target, eps, estimator):
    th = _theta(lam, eps)
    prec = _FactorPrecision(lam)
    r = th - lam.mu
    value = target.log_density(th) + 0.5 * (lam.m * _LOG_2PI + prec.logdet + prec.quad(r))
    g_h = target.grad_log_density(th)
    a = prec.solve(r)  # = -grad_theta log q
    mask = _vech_mask(lam.m, lam.K)
    if estimator == "path":
        G = g_h + a
        grad = VariationalGradient(G, G * eps.eta, np.outer(G, eps.z) * mask)
    elif estimator == "total":
        # path term plus the explicit dependence of log q_lambda on lambda
        aB = a @ lam.B
        g_B = (np.outer(g_h + a, eps.z) + prec.solve(lam.B) - np.outer(a, aB)) * mask
        g_d = (g_h + a) * eps.eta + (prec.diag() - a * a) * lam.d
        grad = VariationalGradient(g_h.copy(), g_d, g_B)
    else:
        raise ContractError(f"unknown estimator {estimator!r}; use 'path' or 'total'")
    return value, grad


def elbo_gradient_estimate(lam: VariationalParams, batch, eps: NoiseDraw,
                           estimator: str = "total") -> VariationalGradient:
    """Single-draw unbiased estimate of the ELBO gradient over ``(mu, d, vech B)``.

    ``estimator="path"`` returns ``(d theta / d lambda)' (grad log h - grad log q)``
    with ``lambda`` held fixed inside ``q``. ``"total"`` additionally
    differentiates ``log q_lambda`` through its parameters, making it the exact
    gradient of :func:`elbo_estimate` for a fixed draw; the extra term has zero
    mean, so both estimators share the same expectation.
    """
    return _elbo_and_gradient(lam, _as_target(lam, batch), eps, estimator)[1]


def _predictive(lam: VariationalParams, arch: nn.NetworkArch, X, noise: np.ndarray) -> np.ndarray:
    """Mean of ``g(f_NN(x, theta_s))`` over the rows of ``noise`` (``S x (K+m)``)."""
    K = lam.K
    thetas = lam.mu + noise[:, :K] @ lam.B.T + noise[:, K:] * lam.d
    return nn.logistic(nn.forward_many(thetas, arch, X)).mean(axis=0)


def _noise_matrix(seed, draws: int, lam: VariationalParams) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    return standard_normal(rng, (draws, lam.K + lam.m))


def predictive_probabilities(lam: VariationalParams, arch: nn.NetworkArch, X,
                             draws: int, seed) -> np.ndarray:
    """Monte Carlo posterior-predictive ``Pr(y=1 | x)`` for each row of ``X``."""
    if draws < 1:
        raise ContractError("draws must be at least 1")
    return _predictive(lam, arch, X, _noise_matrix(seed, draws, lam))


def predictive_probability(lam: VariationalParams, arch: nn.NetworkArch, x,
                           draws: int, seed) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ContractError("predictive_probability takes one feature vector")
    return float(predictive_probabilities(lam, arch, x.reshape(1, -1), draws, seed)[0])


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 2000
    learning_rate: float = 1e-2
    K: int = 1
    draws_validation: int = 50
    draws_test: int = 100
    seed: int = 0
    clip_norm: float = 1e4
    d_init: float = 0.01
    estimator: str = "path"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    def __post_init__(self):
        if self.max_epochs < 0:
            raise ContractError("max_epochs must be non-negative")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.K < 0 or self.draws_validation < 1 or self.draws_test < 1:
            raise ContractError("K must be >= 0 and draw counts >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    elbo: float
    val_loss: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    clip_events: int = 0

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ContractError("epoch indices must be strictly increasing")
        self.records.append(record)

    @property
    def best_epoch(self) -> int:
        """tau: first epoch attaining the minimum validation loss."""
        losses = [r.val_loss for r in self.records]
        return self.records[int(np.argmin(losses))].epoch

    def __len__(self):
        return len(self.records)


def _binary_log_loss(p: np.ndarray, y: np.ndarray, floor: float = 1e-12) -> float:
    p = np.clip(p, floor, 1.0 - floor)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def clip_gradient(g: np.ndarray, max_norm: float):
    norm = float(np.linalg.norm(g))
    if norm > max_norm:
        return g * (max_norm / norm), True
    return g, False


def init_variational(arch: nn.NetworkArch, config: TrainConfig) -> VariationalParams:
    mu = nn.glorot_uniform(arch, make_rng(config.seed, 0)).theta
    m = arch.n_params
    if config.K >= m:
        raise ContractError(f"K={config.K} must be below m={m}")
    return VariationalParams(mu, np.full(m, config.d_init), np.zeros((m, config.K)), arch)


def fit_bnn(splits, arch: nn.NetworkArch, config: TrainConfig):
    """Full-batch stochastic gradient ascent on the ELBO with ADAM.

    ``splits`` needs ``train`` and ``validation`` batches. Each epoch uses one
    fresh noise draw. Validation log-loss comes from predictive probabilities
    with ``config.draws_validation`` draws that are held fixed across epochs.
    Returns the parameters from the epoch with the lowest validation loss and
    the full history; epoch 0 is the initialization.
    """
    train, val = splits.train, splits.validation
    if len(train) == 0 or len(val) == 0:
        raise ContractError("fit_bnn needs non-empty train and validation splits")
    lam = init_variational(arch, config)
    target = NetworkLikelihood(arch, train)
    m, K = lam.m, lam.K
    train_rng = make_rng(config.seed, 1)
    val_noise = standard_normal(make_rng(config.seed, 2), (config.draws_validation, K + m))
    vec = lam.to_vector()
    state = AdamState.zeros(vec.size, learning_rate=config.learning_rate, beta1=config.beta1,
                            beta2=config.beta2, epsilon=config.epsilon)
    history = TrainHistory()
    best, best_loss = lam, np.inf
    for epoch in range(config.max_epochs + 1):
        eps = NoiseDraw.draw(train_rng, m, K)
        with np.errstate(over="ignore", invalid="ignore"):  # checked just below
            value, grad = _elbo_and_gradient(lam, target, eps, config.estimator)
        g = grad.to_vector()
        if not (np.isfinite(value) and np.all(np.isfinite(g))):
            raise DivergenceError(f"non-finite ELBO or gradient at epoch {epoch}",
                                  last_state=lam, epoch=epoch)
        val_loss = _binary_log_loss(_predictive(lam, arch, val.X, val_noise), val.y)
        history.append(EpochRecord(epoch, float(value), val_loss))
        if val_loss < best_loss:
            best, best_loss = lam, val_loss
        if epoch == config.max_epochs:
            break
        g, clipped = clip_gradient(g, config.clip_norm)
        if clipped:
            history.clip_events += 1
            log.debug("epoch %d: gradient clipped to norm %g", epoch, config.clip_norm)
        new_vec, state = adam_step(state, vec, g)
        if not np.all(np.isfinite(new_vec)):
            raise DivergenceError(f"non-finite parameters after epoch {epoch}",
                                  last_state=lam, epoch=epoch)
        new_lam = VariationalParams.from_vector(new_vec, m, K, arch)
        if np.any(new_lam.d == 0.0):
            raise DivergenceError(f"a diagonal scale hit zero at epoch {epoch}",
                                  last_state=lam, epoch=epoch)
        vec, lam = new_vec, new_lam
    if history.clip_events:
        log.info("gradient clipping triggered in %d of %d epochs",
                 history.clip_events, config.max_epochs)
    return best, history
