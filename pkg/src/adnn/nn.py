"""Dense feedforward networks with Swish hidden layers, trained by Adam.

Everything is plain numpy. A :class:`Network` holds one weight matrix and one
bias vector per affine layer; hidden layers apply Swish and the output layer
is affine. Inputs may be a single vector of width ``dims[0]`` or a batch of
row vectors with shape ``(N, dims[0])``.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Input width does not match the network."""


class DivergenceError(FloatingPointError):
    """Parameters became non-finite during training."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


def swish(x):
    """Swish activation ``x / (1 + exp(-x))``, elementwise."""
    x = np.asarray(x, dtype=float)
    return x * expit(x)


def swish_grad(x):
    s = expit(x)
    return s + x * s * (1.0 - s)


class Network:
    """Layered dense network.

    ``weights[k]`` has shape ``(dims[k+1], dims[k])`` and ``biases[k]`` has
    length ``dims[k+1]``.
    """

    activation = "swish"

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ShapeError("need one bias vector per weight matrix")
        self.weights = [np.array(W, dtype=float) for W in weights]
        self.biases = [np.array(b, dtype=float).reshape(-1) for b in biases]
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or W.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {k}: weight {W.shape} vs bias {b.shape}")
            if k and W.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(
                    f"layer {k}: expects width {W.shape[1]}, "
                    f"previous layer gives {self.weights[k - 1].shape[0]}"
                )
        self.history = np.empty(0)

    @classmethod
    def initialize(cls, dims, rng=None, zero_output=False):
        """Glorot-uniform weights, zero biases.

        ``zero_output`` zeroes the last weight matrix, so the untrained
        network is the zero map.
        """
        dims = [int(d) for d in dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ShapeError(f"invalid layer dims {dims}")
        rng = np.random.default_rng(rng)
        weights, biases = [], []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            bound = math.sqrt(6.0 / (d_in + d_out))
            weights.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
            biases.append(np.zeros(d_out))
        if zero_output:
            weights[-1][:] = 0.0
        return cls(weights, biases)

    @property
    def dims(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def n_hidden(self):
        return len(self.weights) - 1

    @property
    def params(self):
        return self.weights + self.biases

    def copy(self):
        return copy.deepcopy(self)

    def is_finite(self):
        return all(np.isfinite(p).all() for p in self.params)

    def sq_norm(self):
        return float(sum(np.sum(p * p) for p in self.params))

    def __call__(self, z):
        return forward(self, z)

    def __repr__(self):
        return f"Network(dims={self.dims})"


def _as_batch(net, z):
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = z[None, :] if single else z
    if Z.ndim != 2 or Z.shape[1] != net.dims[0]:
        raise ShapeError(f"expected input width {net.dims[0]}, got shape {z.shape}")
    return Z, single


def forward(net, z):
    """Evaluate the network; the output layer has no activation."""
    a, single = _as_batch(net, z)
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        a = a @ W.T + b
        if k < last:
            a = swish(a)
    return a[0] if single else a


def _forward_cache(net, Z):
    pre, acts = [], [Z]
    a = Z
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = a @ W.T + b
        if k < last:
            pre.append(h)
            a = swish(h)
        else:
            a = h
        acts.append(a)
    return pre, acts


def loss(net, inputs, targets, lam=0.0):
    """Mean squared residual norm plus ``lam * ||theta||^2``."""
    Z, _ = _as_batch(net, inputs)
    Y = np.asarray(targets, dtype=float).reshape(Z.shape[0], -1)
    r = Y - forward(net, Z)
    value = float(np.sum(r * r)) / Z.shape[0]
    if lam:
        value += lam * net.sq_norm()
    return value


def gradient(net, inputs, targets, lam=0.0):
    """Backpropagated gradient of :func:`loss`.

    Returns ``(grad_weights, grad_biases)`` shaped like the parameters.
    """
    Z, _ = _as_batch(net, inputs)
    Y = np.asarray(targets, dtype=float).reshape(Z.shape[0], -1)
    pre, acts = _forward_cache(net, Z)
    delta = (2.0 / Z.shape[0]) * (acts[-1] - Y)
    gW = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    for k in range(len(net.weights) - 1, -1, -1):
        gW[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ net.weights[k]) * swish_grad(pre[k - 1])
    if lam:
        for k in range(len(net.weights)):
            gW[k] += 2.0 * lam * net.weights[k]
            gb[k] += 2.0 * lam * net.biases[k]
    return gW, gb


@dataclass
class TrainingSet:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if len(self.inputs) < 1:
            raise ValueError("training set is empty")
        if len(self.inputs) != len(self.targets):
            raise ValueError(
                f"{len(self.inputs)} input rows but {len(self.targets)} target rows"
            )
        if not (np.isfinite(self.inputs).all() and np.isfinite(self.targets).all()):
            raise ValueError("training set contains non-finite values")

    def __len__(self):
        return len(self.inputs)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    regularization: float = 0.0
    batch_size: int = 32
    epochs: int = 5000
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.regularization < 0:
            raise ValueError("regularization must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


def train(net, data, cfg):
    """Fit ``net`` to ``data`` with mini-batch Adam.

    Runs ``cfg.epochs * ceil(N / batch)`` steps, reshuffling each epoch from a
    generator seeded by ``cfg.rng_seed``. Returns a new network whose
    ``history`` holds the full-set loss after every epoch.
    """
    net = net.copy()
    N = len(data)
    batch = min(cfg.batch_size, N)
    rng = np.random.default_rng(cfg.rng_seed)
    params = net.params
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.learning_rate
    lam = cfg.regularization
    history = np.empty(cfg.epochs)
    t = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        for start in range(0, N, batch):
            idx = order[start:start + batch]
            gW, gb = gradient(net, data.inputs[idx], data.targets[idx], lam)
            t += 1
            c1 = 1.0 - b1**t
            c2 = 1.0 - b2**t
            for p, g, mi, vi in zip(params, gW + gb, m, v):
                mi *= b1
                mi += (1.0 - b1) * g
                vi *= b2
                vi += (1.0 - b2) * g * g
                p -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
        history[epoch] = loss(net, data.inputs, data.targets, lam)
        if not (np.isfinite(history[epoch]) and net.is_finite()):
            raise DivergenceError(epoch)
    net.history = history
    return net


class Standardizer:
    """Affine map to zero mean and unit variance per column."""

    def __init__(self, mean, scale):
        self.mean = np.asarray(mean, dtype=float)
        self.scale = np.asarray(scale, dtype=float)

    @classmethod
    def fit(cls, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        scale = X.std(axis=0)
        # constant columns pass through unscaled
        scale = np.where(scale > 1e-12 * np.maximum(1.0, np.abs(X.mean(axis=0))), scale, 1.0)
        return cls(X.mean(axis=0), scale)

    @classmethod
    def identity(cls, width):
        return cls(np.zeros(width), np.ones(width))

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def inverse(self, X):
        return np.asarray(X, dtype=float) * self.scale + self.mean


# -- text serialization ------------------------------------------------------

def _fmt(values):
    return " ".join(repr(float(v)) for v in np.ravel(values))


def _parse(line, n):
    values = [float(s) for s in line.split()]
    if len(values) != n:
        raise ValueError(f"expected {n} numbers, found {len(values)}")
    return np.array(values)


def dump_network(net, x_scaler=None, y_scaler=None):
    """Serialize a network and optional standardizers to text lines.

    Floats are written with ``repr`` so a round trip is exact.
    """
    lines = ["dims: " + " ".join(str(d) for d in net.dims)]
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(f"layer {k}")
        lines.extend(_fmt(row) for row in W)
        lines.append(_fmt(b))
    for tag, s in (("input", x_scaler), ("output", y_scaler)):
        if s is not None:
            lines.append(f"scaler {tag}")
            lines.append(_fmt(s.mean))
            lines.append(_fmt(s.scale))
    return lines


def load_network(lines, pos=0):
    """Inverse of :func:`dump_network`, reading from ``lines[pos:]``.

    Returns ``(network, x_scaler, y_scaler, next_pos)``; absent scalers are
    returned as None.
    """
    header = lines[pos].strip()
    if not header.startswith("dims:"):
        raise ValueError(f"bad network header {header!r}")
    dims = [int(s) for s in header[5:].split()]
    pos += 1
    weights, biases = [], []
    for k, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        if lines[pos].strip() != f"layer {k}":
            raise ValueError(f"expected 'layer {k}', got {lines[pos]!r}")
        weights.append(np.array([_parse(lines[pos + 1 + r], d_in) for r in range(d_out)]))
        biases.append(_parse(lines[pos + 1 + d_out], d_out))
        pos += d_out + 2
    scalers = {}
    for tag, width in (("input", dims[0]), ("output", dims[-1])):
        if pos < len(lines) and lines[pos].strip() == f"scaler {tag}":
            scalers[tag] = Standardizer(_parse(lines[pos + 1], width), _parse(lines[pos + 2], width))
            pos += 3
    return Network(weights, biases), scalers.get("input"), scalers.get("output"), pos
