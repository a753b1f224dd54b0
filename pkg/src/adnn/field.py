"""Permeability parameterizations z -> kappa(x).

Two families are provided: a sum of nine Gaussian bumps with log-normal
weights, and a log-Gaussian random field truncated to its leading
Karhunen-Loeve modes. Both expose ``bind(points)``, which precomputes the
basis at a fixed set of points and returns a fast ``z -> kappa`` map; the
PDE solver binds once per grid.
"""

from __future__ import annotations

import logging
import os

import numpy as np
from scipy.linalg import eigh
from scipy.spatial.distance import cdist

log = logging.getLogger(__name__)

RBF_CENTERS = np.array([(a, b) for a in (0.25, 0.5, 0.75) for b in (0.25, 0.5, 0.75)])
RBF_WIDTH = 0.15


class RbfField:
    """kappa(x) = sum_i exp(z_i) exp(-0.5 |x - c_i|^2 / width^2)."""

    def __init__(self, centers=RBF_CENTERS, width=RBF_WIDTH):
        self.centers = np.asarray(centers, dtype=float).reshape(-1, 2)
        self.width = float(width)

    @property
    def dim(self):
        return len(self.centers)

    def basis(self, points):
        d2 = cdist(np.asarray(points, dtype=float).reshape(-1, 2), self.centers, "sqeuclidean")
        return np.exp(-0.5 * d2 / self.width**2)

    def bind(self, points):
        """Map z (or a batch of z rows) to kappa at ``points``."""
        G = self.basis(points)
        return lambda z: np.exp(np.asarray(z, dtype=float)) @ G.T

    def kappa(self, z, points):
        return self.bind(points)(z)

    def log_kappa(self, z, points):
        return np.log(self.kappa(z, points))


def rbf_kappa(z, x, centers=RBF_CENTERS, width=RBF_WIDTH):
    """Point evaluation of the nine-bump field."""
    return float(RbfField(centers, width).kappa(z, np.atleast_2d(x))[0])


class KlError(ValueError):
    pass


class KlField:
    """Truncated Karhunen-Loeve expansion of a squared-exponential GP.

    ``eigenvalues`` are descending; column ``i`` of ``modes`` is the i-th
    eigenfunction sampled at ``nodes``, normalized so that
    ``modes.T @ diag(weights) @ modes = I``.
    """

    def __init__(self, nodes, weights, eigenvalues, modes, length_scale=0.1, variance=1.0):
        self.nodes = np.asarray(nodes, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.eigenvalues = np.asarray(eigenvalues, dtype=float)
        self.modes = np.asarray(modes, dtype=float)
        self.length_scale = float(length_scale)
        self.variance = float(variance)

    @property
    def dim(self):
        return len(self.eigenvalues)

    def kernel(self, a, b):
        d2 = cdist(np.asarray(a).reshape(-1, 2), np.asarray(b).reshape(-1, 2), "sqeuclidean")
        return self.variance * np.exp(-0.5 * d2 / self.length_scale**2)

    def eigenfunctions(self, points):
        """Nystrom extension of the modes to arbitrary points.

        Reproduces ``modes`` exactly at the quadrature nodes.
        """
        K = self.kernel(points, self.nodes)
        return (K * self.weights) @ self.modes / self.eigenvalues

    def _scaled(self, points):
        if points is None:
            Phi = self.modes
        else:
            Phi = self.eigenfunctions(points)
        return Phi * np.sqrt(self.eigenvalues)

    def bind_log(self, points=None):
        B = self._scaled(points)
        n = self.dim

        def p(z):
            z = np.asarray(z, dtype=float)
            if z.shape[-1] != n:
                raise KlError(f"expected {n} KL coefficients, got {z.shape[-1]}")
            return z @ B.T

        return p

    def bind(self, points=None):
        p = self.bind_log(points)
        return lambda z: np.exp(p(z))

    def log_kappa(self, z, points=None):
        return self.bind_log(points)(z)

    def kappa(self, z, points=None):
        return np.exp(self.log_kappa(z, points))

    def truncated_variance(self):
        """Pointwise variance of the truncated log-field at the nodes."""
        return (self.modes**2) @ self.eigenvalues


def grid_nodes(M):
    """Interior nodes of the uniform (M+2)^2 grid on the unit square.

    Ordered with the first coordinate varying slowest.
    """
    x = np.arange(1, M + 1) / (M + 1)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    return np.column_stack([X1.ravel(), X2.ravel()])


def kl_build(grid, n, length_scale=0.1, variance=1.0, cache_dir=None):
    """Nystrom discretization of the covariance operator on the solver grid.

    ``grid`` is a Grid or its resolution M. Each of the M^2 interior nodes
    carries the quadrature weight ``1 / M^2`` so that the weights sum to the
    domain area.
    """
    M, n = int(getattr(grid, "M", grid)), int(n)
    if n < 1 or n > M * M:
        raise KlError(f"truncation {n} outside 1..{M * M}")
    if cache_dir is not None:
        path = kl_cache_path(cache_dir, M, length_scale, variance, n)
        if os.path.exists(path):
            return load_kl(path)
    nodes = grid_nodes(M)
    w = 1.0 / (M * M)
    d2 = cdist(nodes, nodes, "sqeuclidean")
    C = variance * np.exp(-0.5 * d2 / length_scale**2)
    # symmetric form sqrt(W) C sqrt(W); W is a scalar multiple of I
    vals, vecs = eigh(w * C, subset_by_index=[M * M - n, M * M - 1])
    vals, vecs = vals[::-1], vecs[:, ::-1]
    if vals.min() < -1e-10:
        raise KlError(f"covariance matrix not positive semidefinite (eigenvalue {vals.min():.3e})")
    vals = np.maximum(vals, 0.0)
    # deterministic sign: largest-magnitude entry positive
    pivot = np.abs(vecs).argmax(axis=0)
    vecs = vecs * np.sign(vecs[pivot, np.arange(n)])
    field = KlField(nodes, np.full(M * M, w), vals, vecs / np.sqrt(w), length_scale, variance)
    if cache_dir is not None:
        save_kl(field, path)
    return field


def kl_kappa(field, z):
    """exp of the KL sum at every quadrature node."""
    return field.kappa(z)


def kl_cache_path(cache_dir, M, length_scale, variance, n):
    return os.path.join(cache_dir, f"kl_M{M}_l{length_scale:g}_s{variance:g}_n{n}.npz")


def save_kl(field, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    np.savez(
        path,
        nodes=field.nodes,
        weights=field.weights,
        eigenvalues=field.eigenvalues,
        modes=field.modes,
        length_scale=field.length_scale,
        variance=field.variance,
    )
    log.info("wrote KL basis to %s", path)


def load_kl(path):
    with np.load(path) as f:
        return KlField(
            f["nodes"],
            f["weights"],
            f["eigenvalues"],
            f["modes"],
            float(f["length_scale"]),
            float(f["variance"]),
        )
