import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wickpressure.gmc import (
    MomentCheck,
    gmc_integrate,
    gmc_realization,
    kernel_convolve,
    mean_and_stderr,
    second_moment_predict,
    wick_exponential,
    wick_values,
)
from wickpressure.log_field import FieldSpec, sample_fields, truncated_covariance
from wickpressure.torus import GridField, TorusGrid

G8 = TorusGrid(2, 8)


def pairwise_index(grid):
    idx = np.array(list(np.ndindex(*grid.shape)))
    return tuple(np.moveaxis((idx[:, None, :] - idx[None, :, :]) % grid.n, -1, 0))


def test_wick_exponential_basics():
    X = GridField(G8, np.linspace(-1, 1, 64).reshape(8, 8))
    np.testing.assert_allclose(wick_exponential(X, 3.0, 0.0).values, 1.0)
    np.testing.assert_allclose(wick_exponential(X, 2.0, 0.5).values, np.exp(0.5 * X.values - 0.25))
    with pytest.raises(ValueError):
        wick_exponential(X, -1.0, 0.5)
    with pytest.raises(ValueError):
        wick_values(X.values, -1.0, 0.5)


def test_realization_mass_and_integral(rng):
    X = GridField(G8, rng.standard_normal(G8.shape))
    m = gmc_realization(X, 1.0, 0.5, realization_id=4)
    assert m.realization_id == 4
    assert m.mass == pytest.approx(G8.cell_volume * np.exp(0.5 * X.values - 0.125).sum())
    assert gmc_integrate(m, GridField(G8, np.ones(G8.shape))) == pytest.approx(m.mass)
    with pytest.raises(ValueError):
        gmc_integrate(m, GridField(TorusGrid(2, 16), np.ones((16, 16))))


def test_kernel_convolve_matches_direct_sum(rng):
    K = rng.standard_normal(G8.shape)
    v = rng.standard_normal(G8.shape)
    i = pairwise_index(G8)
    direct = (K[i] @ v.ravel()).reshape(G8.shape) * 0.3
    np.testing.assert_allclose(kernel_convolve(v, K, 0.3), direct, atol=1e-12)


@given(st.floats(0.05, 1.0), st.floats(0.05, 1.0), st.integers(0, 1000))
def test_second_moment_matches_double_sum(b1, b2, seed):
    kern = truncated_covariance(G8)
    psi = GridField(G8, np.random.default_rng(seed).uniform(-1, 1, G8.shape))
    i = pairwise_index(G8)
    E = np.exp(b1 * b2 * kern.R_values.values[i])
    p = psi.values.ravel()
    direct = p @ E @ p * G8.cell_volume**2
    got = second_moment_predict(psi, b1, b2, kern)
    assert got == pytest.approx(direct, rel=1e-12)
    assert got == pytest.approx(second_moment_predict(psi, b2, b1, kern), rel=1e-12)


def test_second_moment_degenerates_to_square_of_integral():
    kern = truncated_covariance(G8)
    psi = GridField(G8, np.cos(G8.coords[0]) + 2.0)
    got = second_moment_predict(psi, 0.7, 0.0, kern)
    assert got == pytest.approx((psi.values.sum() * G8.cell_volume) ** 2)


def test_second_moment_range_and_grid_checks():
    kern = truncated_covariance(G8)
    psi = GridField(G8, np.ones(G8.shape))
    with pytest.raises(ValueError):
        second_moment_predict(psi, 1.5, 1.4, kern)
    with pytest.raises(ValueError):
        second_moment_predict(GridField(TorusGrid(2, 16), np.ones((16, 16))), 0.5, 0.5, kern)


def test_mean_and_stderr_matches_numpy(rng):
    x = rng.standard_normal(1000) * 3 + 1
    m, se = mean_and_stderr(x)
    assert m == pytest.approx(x.mean())
    assert se == pytest.approx(x.std(ddof=1) / np.sqrt(x.size))


def test_moment_check_pass_band():
    assert MomentCheck("a", 1.0, 0.1, 1.29).passed
    assert not MomentCheck("a", 1.0, 0.1, 1.31).passed
    assert MomentCheck("a", 1.0, 0.1, 1.2).to_dict()["pass"]


def test_small_ensemble_first_moment():
    grid = TorusGrid(2, 16)
    spec = FieldSpec(0.5, grid, seed=1)
    kern = truncated_covariance(grid)
    X = sample_fields(spec, range(2000))
    mass = wick_values(X, kern.sigma2, 0.5).sum(axis=(1, 2)) * grid.cell_volume
    m, se = mean_and_stderr(mass / grid.volume)
    assert abs(m - 1) <= 3 * se


def test_zero_field_gives_unit_atoms():
    X = GridField(G8, np.zeros(G8.shape))
    np.testing.assert_array_equal(wick_exponential(X, 0.0, 0.7).values, 1.0)
    m = gmc_realization(X, 0.0, 0.7)
    np.testing.assert_allclose(m.atom_weights, G8.cell_volume)


def test_beta_zero_is_plain_quadrature(rng):
    X = GridField(G8, rng.standard_normal(G8.shape))
    psi = GridField(G8, rng.standard_normal(G8.shape))
    m = gmc_realization(X, 2.0, 0.0)
    assert gmc_integrate(m, psi) == pytest.approx(psi.values.sum() * G8.cell_volume)


def test_node_moments_of_wick_exponential():
    grid = TorusGrid(2, 16)
    kern = truncated_covariance(grid)
    X = sample_fields(FieldSpec(0.5, grid, seed=8), range(10_000))
    W = wick_values(X[:, 4, 4], kern.sigma2, 0.5)
    m1, s1 = mean_and_stderr(W)
    m2, s2 = mean_and_stderr(W**2)
    assert abs(m1 - 1) <= 3 * s1
    assert abs(m2 - np.exp(0.25 * kern.sigma2)) <= 3 * s2
    atoms = gmc_realization(GridField(grid, X[0]), kern.sigma2, 0.5).atom_weights
    assert np.all(atoms > 0) and np.all(np.isfinite(atoms))


def test_unit_psi_prediction_against_double_sum_n16():
    grid = TorusGrid(2, 16)
    kern = truncated_covariance(grid)
    i = pairwise_index(grid)
    direct = np.exp(0.25 * kern.R_values.values[i]).sum() * grid.cell_volume**2
    got = second_moment_predict(GridField(grid, np.ones(grid.shape)), 0.5, 0.5, kern)
    assert got == pytest.approx(direct, rel=1e-8)
