"""Feedforward network with a logistic link for binary outcomes.

Parameters live in one flat vector ``theta``. The order is layer-major; for
each layer the weight matrix of shape ``(fan_in, fan_out)`` is stored
row-major, followed by the bias vector of length ``fan_out``. A layer maps
``h -> h @ W + b``; hidden layers apply ReLU, the output layer is linear and
has a single unit, so the network returns one raw score per input row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class NetworkArch:
    """Layer widths ``(p, h_1, ..., h_k, 1)``.

    A zero-hidden-layer architecture ``(p, 1)`` is accepted and reduces to
    linear logistic regression.
    """

    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ContractError("layer_sizes needs at least an input and an output entry")
        if any(s <= 0 for s in sizes):
            raise ContractError(f"layer sizes must be positive, got {sizes}")
        if sizes[-1] != 1:
            raise ContractError(f"output layer must have one unit, got {sizes[-1]}")
        if self.activation != "relu":
            raise ContractError(f"unsupported hidden activation {self.activation!r}")

    @classmethod
    def mlp(cls, n_features: int, hidden=(4, 4)) -> "NetworkArch":
        return cls((n_features, *hidden, 1))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1))

    def slices(self):
        """Yield ``(weight_slice, bias_slice, fan_in, fan_out)`` per layer."""
        offset = 0
        s = self.layer_sizes
        for i in range(len(s) - 1):
            n_w = s[i] * s[i + 1]
            yield (slice(offset, offset + n_w),
                   slice(offset + n_w, offset + n_w + s[i + 1]),
                   s[i], s[i + 1])
            offset += n_w + s[i + 1]


@dataclass(frozen=True)
class NetworkParams:
    theta: np.ndarray
    arch: NetworkArch

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if theta.size != self.arch.n_params:
            raise ContractError(
                f"theta has {theta.size} entries, architecture needs {self.arch.n_params}")
        if not np.all(np.isfinite(theta)):
            raise ContractError("theta contains non-finite entries")
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    def layers(self):
        """List of ``(W, b)`` views into ``theta``."""
        return [(self.theta[ws].reshape(fi, fo), self.theta[bs])
                for ws, bs, fi, fo in self.arch.slices()]


@dataclass(frozen=True)
class BinaryBatch:
    X: np.ndarray
    y: np.ndarray = field(repr=False)

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.array(self.y, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ContractError(f"features {X.shape} do not match {y.shape[0]} labels")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ContractError("batch contains non-finite entries")
        if not np.all((y == 0) | (y == 1)):
            raise ContractError("labels must be 0 or 1")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.shape[0]


def glorot_uniform(arch: NetworkArch, rng: np.random.Generator) -> NetworkParams:
    """Weights ~ U(-sqrt(6/(fan_in+fan_out)), +...), biases zero."""
    theta = np.zeros(arch.n_params)
    for ws, _, fi, fo in arch.slices():
        limit = np.sqrt(6.0 / (fi + fo))
        theta[ws] = rng.uniform(-limit, limit, size=fi * fo)
    return NetworkParams(theta, arch)


def logistic(a):
    """``1 / (1 + exp(-a))`` without overflow for large ``|a|``."""
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out[()] if out.ndim == 0 else out


def _as_matrix(params: NetworkParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != params.arch.input_dim:
        raise ContractError(
            f"input has {X.shape[1]} features, network expects {params.arch.input_dim}")
    return X


def _forward_cache(params: NetworkParams, X: np.ndarray):
    """Activations entering each layer and the hidden pre-activations."""
    inputs, pre = [], []
    h = X
    layers = params.layers()
    for i, (W, b) in enumerate(layers):
        inputs.append(h)
        z = h @ W + b
        if i < len(layers) - 1:
            pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return h[:, 0], inputs, pre


def forward_batch(params: NetworkParams, X) -> np.ndarray:
    """Raw scores ``f_NN(x_i, theta)`` for every row of ``X``."""
    return _forward_cache(params, _as_matrix(params, X))[0]


def forward(params: NetworkParams, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ContractError("forward takes a single feature vector; use forward_batch")
    return float(forward_batch(params, x)[0])


def forward_many(thetas: np.ndarray, arch: NetworkArch, X) -> np.ndarray:
    """Raw scores for a stack of parameter vectors, shape ``(S, N)``."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    S = thetas.shape[0]
    h = np.broadcast_to(X, (S, *X.shape))
    slices = list(arch.slices())
    for i, (ws, bs, fi, fo) in enumerate(slices):
        W = thetas[:, ws].reshape(S, fi, fo)
        h = np.matmul(h, W) + thetas[:, None, bs]
        if i < len(slices) - 1:
            h = np.maximum(h, 0.0)
    return h[:, :, 0]


def _backprop(params: NetworkParams, X: np.ndarray, upstream: np.ndarray | None):
    """Per-layer output deltas, aggregated by ``upstream`` weights if given.

    With ``upstream=None`` the deltas stay per sample, which is what the
    Jacobian needs; otherwise the caller gets the vector-Jacobian product.
    """
    _, inputs, pre = _forward_cache(params, X)
    layers = params.layers()
    n = X.shape[0]
    delta = np.ones((n, 1)) if upstream is None else upstream.reshape(n, 1)
    deltas = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        deltas[i] = delta
        if i > 0:
            # subgradient of ReLU at exactly 0 is taken as 0
            delta = (delta @ layers[i][0].T) * (pre[i - 1] > 0)
    return inputs, deltas


def jacobian(params: NetworkParams, X) -> np.ndarray:
    """``d f_NN(x_i) / d theta`` for every row, shape ``(N, m)``."""
    X = _as_matrix(params, X)
    inputs, deltas = _backprop(params, X, None)
    J = np.empty((X.shape[0], params.arch.n_params))
    for (ws, bs, _, _), a, dl in zip(params.arch.slices(), inputs, deltas):
        J[:, ws] = np.einsum("ni,nj->nij", a, dl).reshape(X.shape[0], -1)
        J[:, bs] = dl
    return J


def network_gradient(params: NetworkParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ContractError("network_gradient takes a single feature vector")
    return jacobian(params, x)[0]


def _vjp(params: NetworkParams, X: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_i weights_i * grad f_NN(x_i)`` without forming the Jacobian."""
    inputs, deltas = _backprop(params, X, weights)
    g = np.empty(params.arch.n_params)
    for (ws, bs, _, _), a, dl in zip(params.arch.slices(), inputs, deltas):
        g[ws] = (a.T @ dl).reshape(-1)
        g[bs] = dl.sum(axis=0)
    return g


def _check_batch(params: NetworkParams, batch: BinaryBatch) -> None:
    if len(batch) == 0:
        raise ContractError("batch is empty")
    if batch.X.shape[1] != params.arch.input_dim:
        raise ContractError(
            f"batch has {batch.X.shape[1]} features, network expects {params.arch.input_dim}")


def log_likelihood(params: NetworkParams, batch: BinaryBatch) -> float:
    """Bernoulli log-likelihood of the labels under the logistic link."""
    _check_batch(params, batch)
    f = forward_batch(params, batch.X)
    # log g(f) = -log(1 + e^{-f}),  log(1 - g(f)) = -log(1 + e^{f})
    ll = -(batch.y * np.logaddexp(0.0, -f) + (1.0 - batch.y) * np.logaddexp(0.0, f))
    return float(ll.sum())


def grad_log_likelihood(params: NetworkParams, batch: BinaryBatch) -> np.ndarray:
    """Gradient of :func:`log_likelihood`.

    Positives contribute ``grad f`` and every sample subtracts
    ``g(f) grad f``, i.e. ``sum_i (y_i - g(f_i)) grad f(x_i)``.
    """
    _check_batch(params, batch)
    f = forward_batch(params, batch.X)
    return _vjp(params, batch.X, batch.y - logistic(f))


def predict_proba(params: NetworkParams, X) -> np.ndarray:
    return logistic(forward_batch(params, X))
