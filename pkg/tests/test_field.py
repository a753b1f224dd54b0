import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adnn.field import (
    RBF_CENTERS,
    KlError,
    RbfField,
    grid_nodes,
    kl_build,
    kl_cache_path,
    kl_kappa,
    rbf_kappa,
)
from adnn.pde import Grid

finite = st.floats(-20, 20)


# -- RBF --------------------------------------------------------------------------

def test_rbf_unit_weights_closed_form():
    x = RBF_CENTERS[0]
    expected = 1.0 + sum(
        math.exp(-0.5 * np.sum((x - c) ** 2) / 0.0225) for c in RBF_CENTERS[1:]
    )
    assert rbf_kappa(np.zeros(9), x) == pytest.approx(expected, rel=1e-14)


def test_rbf_center_decay():
    z = np.zeros(9)
    z[0] = -30.0
    x = np.array([0.3, 0.4])
    contribution = math.exp(-30.0) * math.exp(-0.5 * np.sum((x - RBF_CENTERS[0]) ** 2) / 0.0225)
    assert contribution < 1e-13 * rbf_kappa(z, x)
    z_off = z.copy()
    z_off[0] = -np.inf
    assert rbf_kappa(z, x) - rbf_kappa(z_off, x) < 1e-13 * rbf_kappa(z, x)


@pytest.mark.parametrize("seed", range(5))
def test_rbf_matches_independent_formula(seed):
    rng = np.random.default_rng(seed)
    z, x = rng.standard_normal(9), rng.uniform(0, 1, 2)
    ref = 0.0
    for i, (a, b) in enumerate([(a, b) for a in (0.25, 0.5, 0.75) for b in (0.25, 0.5, 0.75)]):
        ref += math.exp(z[i]) * math.exp(-((x[0] - a) ** 2 + (x[1] - b) ** 2) / (2 * 0.15**2))
    assert rbf_kappa(z, x) == pytest.approx(ref, rel=1e-13)
    assert RbfField().kappa(z, x[None, :])[0] == pytest.approx(ref, rel=1e-13)


@given(arrays(float, 9, elements=finite))
@settings(max_examples=50, deadline=None)
def test_rbf_positive(z):
    assert np.all(RbfField().kappa(z, Grid(7).padded_nodes) > 0)


def test_rbf_batch_binding():
    field = RbfField()
    pts = Grid(5).padded_nodes
    Z = np.random.default_rng(0).standard_normal((4, 9))
    batch = field.bind(pts)(Z)
    for z, row in zip(Z, batch):
        np.testing.assert_allclose(field.kappa(z, pts), row, rtol=1e-14)


# -- KL ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def kl31():
    return kl_build(31, 50)


@pytest.fixture(scope="module")
def dense31():
    nodes = grid_nodes(31)
    d2 = ((nodes[:, None, :] - nodes[None, :, :]) ** 2).sum(-1)
    C = np.exp(-0.5 * d2 / 0.01) / 31**2
    vals, vecs = np.linalg.eigh(C)
    return C, vals[::-1], vecs[:, ::-1]


def test_kl_trace(dense31):
    _, vals, _ = dense31
    assert abs(vals.sum() - 1.0) <= 0.02


def test_kl_top_eigenpair_matches_dense(dense31):
    _, vals, vecs = dense31
    field = kl_build(31, 1)
    assert field.eigenvalues[0] == pytest.approx(vals[0], abs=1e-8)
    v = vecs[:, 0] * np.sign(vecs[np.abs(vecs[:, 0]).argmax(), 0])
    np.testing.assert_allclose(field.modes[:, 0] / 31, v, atol=1e-8)


def test_kl_eigenvalues_match_dense(kl31, dense31):
    _, vals, _ = dense31
    np.testing.assert_allclose(kl31.eigenvalues, vals[:50], atol=1e-10)


def test_kl_orthonormal(kl31):
    G = kl31.modes.T @ (kl31.modes * kl31.weights[:, None])
    np.testing.assert_allclose(G, np.eye(50), atol=1e-8)


def test_kl_decay(kl31):
    lam = kl31.eigenvalues
    assert np.all(np.diff(lam) <= 1e-15)
    # frozen from the dense solve: lambda_50 / lambda_1 = 0.05481
    assert lam[49] / lam[0] == pytest.approx(0.05481, abs=5e-5)
    assert lam[49] / lam[0] < 0.06


def test_kl_zero_gives_one(kl31):
    np.testing.assert_array_equal(kl_kappa(kl31, np.zeros(50)), 1.0)


def test_kl_single_mode(kl31):
    z = np.zeros(50)
    z[0] = 1.0
    expected = np.exp(math.sqrt(kl31.eigenvalues[0]) * kl31.modes[:, 0])
    np.testing.assert_allclose(kl_kappa(kl31, z), expected, rtol=1e-13)


def test_kl_monte_carlo_variance(kl31):
    rng = np.random.default_rng(0)
    centre = 15 * 31 + 15
    p = kl31.log_kappa(rng.standard_normal((10_000, 50)))[:, centre]
    assert np.var(p) == pytest.approx(kl31.truncated_variance()[centre], rel=0.05)


@given(st.integers(0, 2**31))
@settings(max_examples=20, deadline=None)
def test_kl_linear_before_exp(seed):
    field = kl_build(15, 10)
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(10), rng.standard_normal(10)
    np.testing.assert_allclose(
        field.log_kappa(a + b), field.log_kappa(a) + field.log_kappa(b), atol=1e-12
    )


@given(arrays(float, 10, elements=finite))
@settings(max_examples=30, deadline=None)
def test_kl_positive(z):
    assert np.all(kl_build(15, 10).kappa(z) > 0)


def test_nystrom_extension_reproduces_nodes(kl31):
    np.testing.assert_allclose(kl31.eigenfunctions(kl31.nodes), kl31.modes, atol=1e-8)


def test_kl_field_on_other_grid(kl31):
    # the solver binds the field on the padded grid and on finer grids
    pts = Grid(63).padded_nodes
    kappa = kl31.bind(pts)(np.random.default_rng(1).standard_normal(50))
    assert kappa.shape == (65 * 65,)
    assert np.all(np.isfinite(kappa)) and np.all(kappa > 0)


def test_kl_wrong_length(kl31):
    with pytest.raises(KlError):
        kl31.kappa(np.zeros(3))


def test_kl_truncation_bounds():
    with pytest.raises(KlError):
        kl_build(5, 26)
    with pytest.raises(KlError):
        kl_build(5, 0)


def test_kl_cache_round_trip(tmp_path):
    a = kl_build(11, 5, cache_dir=str(tmp_path))
    path = kl_cache_path(str(tmp_path), 11, 0.1, 1.0, 5)
    assert (tmp_path / path.split("/")[-1]).exists()
    b = kl_build(11, 5, cache_dir=str(tmp_path))
    np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)
    np.testing.assert_array_equal(a.modes, b.modes)
    assert b.length_scale == 0.1
