import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from gffmart.domain import DomainSpec, build_grid, fractional_green_ball, laplacian_eigenbasis
from gffmart.errors import ConfigurationError, ParameterError
from gffmart.fields import Field, product_sine
from gffmart.she import (ModeState, frac_spectral_basis, mode_noise_factor, mode_trajectory_csv, she_field,
                         she_stationary_sample, she_step, she_two_time_cov)

from conftest import mc_close


@pytest.fixture(scope="module")
def basis():
    spec = DomainSpec.unit_square()
    return laplacian_eigenbasis(spec, 64, build_grid(spec, 64))


@pytest.fixture(scope="module")
def disk_grid():
    return build_grid(DomainSpec.unit_disk(), 24)


def test_noise_covariance_constant_weight(basis):
    S, L = mode_noise_factor(basis, 1.0)
    assert np.allclose(S, np.eye(len(S)), atol=1e-8)
    assert np.allclose(L, np.eye(len(S)), atol=1e-8)
    S2, _ = mode_noise_factor(basis, 2.0)
    assert np.allclose(S2, 4 * np.eye(len(S)), atol=1e-8)


def test_noise_covariance_psd_for_variable_weight(basis):
    a = 1 + basis.grid.points[:, 0] ** 2
    S, L = mode_noise_factor(basis, a)
    assert np.allclose(S, S.T)
    assert np.linalg.eigvalsh(S).min() >= -1e-12
    assert np.allclose(L @ L.T, S, atol=1e-10)


def test_stationary_variance_first_mode(basis, rng):
    st_ = she_stationary_sample(basis, 1.0, rng, 10_000)
    v = st_.coeffs[:, 0].var(ddof=1)
    target = 1 / (4 * np.pi ** 2)
    assert mc_close(v, target, target * np.sqrt(2 / 9999))


def test_long_steps_reach_stationarity(basis, rng):
    start = ModeState(np.full((4000, basis.cutoff), 5.0), basis)
    s = start
    for _ in range(3):
        s = she_step(s, 1.0, rng)
    for k in (0, 1, 5):
        target = 1 / (2 * basis.eigenvalues[k])
        assert mc_close(s.coeffs[:, k].var(ddof=1), target, target * np.sqrt(2 / 3999))
        assert mc_close(s.coeffs[:, k].mean(), 0.0, np.sqrt(target / 4000))


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-4, 1.0), st.floats(1e-4, 1.0), st.floats(1.0, 500.0))
def test_transition_variance_composes(t1, t2, mu):
    # exact OU transitions: variance over t1 + t2 equals the composed variance
    v = lambda t: -np.expm1(-2 * mu * t) / (2 * mu)
    assert np.exp(-2 * mu * t2) * v(t1) + v(t2) == pytest.approx(v(t1 + t2), rel=1e-12)


def test_step_splitting_in_law(basis, rng):
    zero = ModeState(np.zeros((20_000, basis.cutoff)), basis)
    one = she_step(zero, 0.05, rng).coeffs
    five = zero
    for _ in range(5):
        five = she_step(five, 0.01, rng)
    for k in range(3):
        target = -np.expm1(-2 * basis.eigenvalues[k] * 0.05) / (2 * basis.eigenvalues[k])
        se = target * np.sqrt(2 / 19_999)
        assert mc_close(one[:, k].var(ddof=1), target, se)
        assert mc_close(five.coeffs[:, k].var(ddof=1), target, se)


def test_lyapunov_stationary_law(basis, rng):
    a = 1 + basis.grid.points[:, 0]
    S, _ = mode_noise_factor(basis, a)
    mu = basis.eigenvalues
    P = linalg.solve_continuous_lyapunov(np.diag(mu), S)
    s0 = she_stationary_sample(basis, a, rng, 20_000, lyapunov=True)
    s1 = she_step(s0, 0.02, rng)
    for s in (s0, s1):
        C = np.cov(s.coeffs[:, :3].T)
        se = np.sqrt((P[:3, :3] ** 2 + np.outer(np.diag(P[:3, :3]), np.diag(P[:3, :3]))) / 20_000)
        assert np.all(np.abs(C - P[:3, :3]) <= 4 * se)


def test_variable_weight_needs_lyapunov(basis, rng):
    with pytest.raises(ConfigurationError):
        she_stationary_sample(basis, 1 + basis.grid.points[:, 0], rng)


def test_step_rejects_nonpositive_dt(basis, rng):
    with pytest.raises(ParameterError):
        she_step(she_stationary_sample(basis, 1.0, rng), 0.0, rng)


def test_two_time_covariance_single_mode(basis):
    f = product_sine(basis.grid.spec, (1, 1))
    assert she_two_time_cov(basis, f, 0.0) == pytest.approx(1 / (4 * np.pi ** 2), rel=1e-6)
    vals = [she_two_time_cov(basis, f, t) for t in (0.0, 0.01, 0.1, 1.0)]
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] < 1e-8


def test_two_time_covariance_by_simulation(basis, rng):
    f = product_sine(basis.grid.spec, (1, 2)).sample(basis.grid) + product_sine(basis.grid.spec, (1, 1)).sample(
        basis.grid)
    p = basis.project(f)
    s0 = she_stationary_sample(basis, 1.0, rng, 20_000)
    s1 = she_step(s0, 0.02, rng)
    prod = (s0.coeffs @ p) * (s1.coeffs @ p)
    assert mc_close(prod.mean(), she_two_time_cov(basis, f, 0.02), prod.std(ddof=1) / np.sqrt(len(prod)))


def test_field_and_csv(basis, rng):
    s = she_stationary_sample(basis, 1.0, rng)
    fld = she_field(s)
    assert isinstance(fld, Field)
    assert np.allclose(fld.values.ravel(), s.coeffs @ basis.values)
    text = mode_trajectory_csv([0.0, 0.1], np.zeros((2, basis.cutoff)), 3)
    assert text.splitlines()[0] == "t,A_1,A_2,A_3"


def test_fractional_basis_reconstructs_green(disk_grid, rng):
    B = frac_spectral_basis(disk_grid, 0.5, cutoff=10 ** 9)
    assert np.all(B.eigenvalues > 0)
    mask = disk_grid.interior.ravel() & (disk_grid.weights.ravel() > 0)
    idx = np.nonzero(mask)[0]
    pts = disk_grid.points
    for _ in range(20):
        i, j = rng.choice(idx, 2, replace=False)
        rec = np.sum(B.values[:, i] * B.values[:, j] / B.eigenvalues)
        assert abs(rec - fractional_green_ball(0.5, pts[i], pts[j])) <= 1e-6


def test_fractional_basis_orthonormal(disk_grid):
    B = frac_spectral_basis(disk_grid, 0.3, cutoff=20)
    w = disk_grid.weights.ravel()
    assert np.allclose((B.values * w) @ B.values.T, np.eye(20), atol=1e-10)


def test_near_classical_leading_eigenvalue():
    grid = build_grid(DomainSpec.unit_disk(), 40)
    lam = frac_spectral_basis(grid, 0.95, cutoff=2).eigenvalues[0]
    assert abs(lam - 5.783185962946784) <= 0.15 * 5.783185962946784


def test_fractional_basis_rejects_rectangles(grid64):
    with pytest.raises(ParameterError):
        frac_spectral_basis(grid64, 0.5)
