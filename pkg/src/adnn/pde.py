"""High-fidelity forward model.

Solves ``-div(kappa grad u) = f`` on the unit square with ``u = 0`` on the
boundary using the 5-point flux-form finite-difference scheme, then reads
``u`` off at sensor locations by bilinear interpolation.
"""

from __future__ import annotations

import csv
import json
import os
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

RESIDUAL_TOL = 1e-10


class SolverError(RuntimeError):
    pass


class InverseCrimeError(ValueError):
    pass


def source_term(x):
    """100 sin(pi x1) sin(pi x2); accepts one point or an (N, 2) array."""
    x = np.asarray(x, dtype=float)
    return 100.0 * np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])


class Grid:
    """Uniform grid with M interior nodes per axis, spacing 1/(M+1)."""

    def __init__(self, M):
        M = int(M)
        if M < 3:
            raise ValueError(f"grid needs at least 3 interior nodes per axis, got {M}")
        self.M = M
        self.h = 1.0 / (M + 1)

    @property
    def coords(self):
        """Interior coordinates along one axis."""
        return np.arange(1, self.M + 1) * self.h

    @property
    def nodes(self):
        """Interior nodes, shape (M*M, 2), first coordinate slowest."""
        X1, X2 = np.meshgrid(self.coords, self.coords, indexing="ij")
        return np.column_stack([X1.ravel(), X2.ravel()])

    @property
    def padded_nodes(self):
        """All (M+2)^2 nodes including the boundary."""
        x = np.arange(self.M + 2) * self.h
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        return np.column_stack([X1.ravel(), X2.ravel()])

    def __eq__(self, other):
        return isinstance(other, Grid) and other.M == self.M

    def __hash__(self):
        return hash(self.M)

    def __repr__(self):
        return f"Grid(M={self.M})"


def assemble(grid, kappa_padded):
    """Stiffness matrix for nodal permeability on the padded grid.

    Face permeabilities are arithmetic means of the two adjacent nodes.
    """
    M, h2 = grid.M, grid.h**2
    K = np.asarray(kappa_padded, dtype=float).reshape(M + 2, M + 2)
    kx = 0.5 * (K[:-1, 1:-1] + K[1:, 1:-1])  # (M+1, M): faces normal to x1
    ky = 0.5 * (K[1:-1, :-1] + K[1:-1, 1:])  # (M, M+1): faces normal to x2
    diag = (kx[:-1] + kx[1:] + ky[:, :-1] + ky[:, 1:]).ravel() / h2
    off_x = -kx[1:-1].ravel() / h2
    off_y = np.zeros((M, M))
    off_y[:, :-1] = -ky[:, 1:-1] / h2
    off_y = off_y.ravel()[:-1]
    return sp.diags(
        [diag, off_y, off_y, off_x, off_x], [0, 1, -1, M, -M], shape=(M * M, M * M), format="csc"
    )


def solve_dirichlet(grid, kappa_padded, rhs):
    """Solve the discrete system for interior values, shape (M, M).

    ``rhs`` holds the source at the interior nodes (M*M values).
    """
    b = np.asarray(rhs, dtype=float).ravel()
    if not np.isfinite(kappa_padded).all() or np.min(kappa_padded) <= 0:
        raise SolverError("permeability must be positive and finite")
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros((grid.M, grid.M))
    A = assemble(grid, kappa_padded)
    try:
        u = splu(A).solve(b)
    except RuntimeError as e:
        raise SolverError(f"factorization failed: {e}") from e
    res = np.linalg.norm(A @ u - b) / nb
    if not np.isfinite(res) or res > RESIDUAL_TOL:
        raise SolverError(f"relative residual {res:.3e} exceeds {RESIDUAL_TOL:g}")
    return u.reshape(grid.M, grid.M)


def sensor_grid(k=9, lo=0.1, hi=0.9):
    """k x k evenly spaced sensors, first coordinate slowest."""
    s = np.linspace(lo, hi, k)
    X1, X2 = np.meshgrid(s, s, indexing="ij")
    return np.column_stack([X1.ravel(), X2.ravel()])


def interpolation_matrix(grid, sensors):
    """Bilinear interpolation weights from interior nodes to sensors.

    Boundary nodes carry the Dirichlet value zero and are dropped.
    """
    P = np.atleast_2d(np.asarray(sensors, dtype=float))
    if P.shape[1] != 2 or np.any(P < 0) or np.any(P > 1):
        raise ValueError("sensors must lie in the closed unit square")
    M, h = grid.M, grid.h
    S = np.zeros((len(P), M * M))
    for r, (x1, x2) in enumerate(P):
        # padded cell index, clamped so x = 1 falls in the last cell
        a = min(int(np.floor(x1 / h)), M)
        b = min(int(np.floor(x2 / h)), M)
        t1 = x1 / h - a
        t2 = x2 / h - b
        for da, wa in ((0, 1 - t1), (1, t1)):
            for db, wb in ((0, 1 - t2), (1, t2)):
                i, j = a + da - 1, b + db - 1
                if 0 <= i < M and 0 <= j < M and wa * wb != 0.0:
                    S[r, i * M + j] += wa * wb
    return S


def observe(solution, grid, sensors):
    """Bilinear readout of an (M, M) interior solution at the sensors."""
    return interpolation_matrix(grid, sensors) @ np.asarray(solution).ravel()


class ForwardProblem:
    """Permeability parameterization + grid + sensors, with a solve counter.

    Calling the problem on ``z`` returns the predicted observations; every
    call to :meth:`solve` (and hence to the problem) counts as one
    high-fidelity evaluation.
    """

    def __init__(self, grid, field, sensors=None, source=source_term):
        self.grid = grid if isinstance(grid, Grid) else Grid(grid)
        self.field = field
        self.sensors = sensor_grid() if sensors is None else np.asarray(sensors, dtype=float)
        self._kappa = field.bind(self.grid.padded_nodes)
        self._rhs = source(self.grid.nodes)
        self._obs = interpolation_matrix(self.grid, self.sensors)
        self._lock = threading.Lock()
        self._count = 0

    @property
    def eval_count(self):
        return self._count

    @property
    def n_params(self):
        return self.field.dim

    @property
    def n_obs(self):
        return len(self.sensors)

    def kappa(self, z):
        """Permeability at the padded nodes, shape (M+2, M+2)."""
        M = self.grid.M
        return self._kappa(z).reshape(M + 2, M + 2)

    def solve(self, z):
        with self._lock:
            self._count += 1
        return solve_dirichlet(self.grid, self.kappa(z), self._rhs)

    def observe(self, solution):
        return self._obs @ np.asarray(solution).ravel()

    def __call__(self, z):
        return self.observe(self.solve(z))

    def evaluate_many(self, Z, workers=1):
        """Forward map for each row of Z; optionally threaded."""
        Z = np.atleast_2d(Z)
        if workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(workers) as pool:
                return np.array(list(pool.map(self, Z)))
        return np.array([self(z) for z in Z])


# -- synthetic data ----------------------------------------------------------

@dataclass
class NoiseSpec:
    """``relative``: sigma = level * max|u(sensors)|; ``absolute``: sigma = level."""

    mode: str = "relative"
    level: float = 0.05

    def __post_init__(self):
        if self.mode not in ("relative", "absolute"):
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if self.level < 0:
            raise ValueError("noise level must be nonnegative")


@dataclass
class Observation:
    data: np.ndarray
    sensors: np.ndarray
    noise_sigma: np.ndarray
    noise_level: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).ravel()
        self.sensors = np.asarray(self.sensors, dtype=float).reshape(-1, 2)
        self.noise_sigma = np.broadcast_to(
            np.asarray(self.noise_sigma, dtype=float), self.data.shape
        ).copy()
        if len(self.data) < 1 or len(self.sensors) != len(self.data):
            raise ValueError("need one sensor per datum")
        if np.any(self.noise_sigma <= 0):
            raise ValueError("noise_sigma must be positive")

    def __len__(self):
        return len(self.data)


def generate_data(problem_fine, z_true, noise, seed, inversion_resolution):
    """Synthetic observations from a grid finer than the inversion grid.

    Returns the Observation and the noiseless sensor values. With a zero
    relative level the recorded sigma falls back to 1e-12 * max|u| so the
    likelihood stays defined.
    """
    M_inv = int(getattr(inversion_resolution, "M", inversion_resolution))
    if problem_fine.grid.M <= M_inv:
        raise InverseCrimeError(
            f"data grid M={problem_fine.grid.M} must be finer than inversion grid M={M_inv}"
        )
    clean = problem_fine(np.asarray(z_true, dtype=float))
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(len(clean))
    if noise.mode == "relative":
        scale = np.max(np.abs(clean))
        sigma = scale * noise.level
        data = clean + sigma * xi
        sigma = sigma if sigma > 0 else 1e-12 * scale
    else:
        sigma = noise.level
        data = clean + sigma * xi
        sigma = sigma if sigma > 0 else 1e-12
    meta = {
        "seed": int(seed),
        "noise_mode": noise.mode,
        "noise_level": float(noise.level),
        "data_resolution": problem_fine.grid.M,
        "inversion_resolution": M_inv,
        "z_true": [float(v) for v in z_true],
    }
    obs = Observation(data, problem_fine.sensors, sigma, noise.level, meta)
    return obs, clean


def write_observation(obs, path):
    """CSV of sensor_x, sensor_y, value plus a ``.meta.json`` sidecar."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sensor_x", "sensor_y", "value"])
        for (x, y), v in zip(obs.sensors, obs.data):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
    meta = dict(obs.meta, noise_sigma=[float(s) for s in obs.noise_sigma])
    with open(_meta_path(path), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)


def read_observation(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    sensors = [(float(r["sensor_x"]), float(r["sensor_y"])) for r in rows]
    data = [float(r["value"]) for r in rows]
    with open(_meta_path(path)) as f:
        meta = json.load(f)
    sigma = meta.pop("noise_sigma")
    return Observation(data, sensors, sigma, meta.get("noise_level"), meta)


def _meta_path(path):
    root, _ = os.path.splitext(path)
    return root + ".meta.json"
