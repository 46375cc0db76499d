"""Additive (fractional) stochastic heat equation solved mode by mode.

Projected on an orthonormal eigenbasis with eigenvalues ``mu_n`` the equation
``d_t u = -L u + a W`` becomes a system of Ornstein-Uhlenbeck processes

    dA_n = -mu_n A_n dt + dB_n,    d<B_n, B_m> = <a f_n, a f_m> dt,

whose transitions are Gaussian and sampled exactly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .domain import Grid, SpectralBasis, fractional_green_matrix
from .errors import ConfigurationError, NumericalError, ParameterError
from .fields import Field, TestFn

__all__ = [
    "ModeState",
    "mode_noise_factor",
    "she_step",
    "she_stationary_sample",
    "she_field",
    "frac_spectral_basis",
    "she_two_time_cov",
    "mode_trajectory_csv",
]


def _psd_factor(S: np.ndarray) -> np.ndarray:
    """Lower-triangular ``L`` with ``L L^T = S`` for symmetric PSD ``S``."""
    S = 0.5 * (S + S.T)
    n = len(S)
    scale = max(np.trace(S) / max(n, 1), np.finfo(float).tiny)
    for jitter in (0.0, 1e-14, 1e-12, 1e-10):
        try:
            return linalg.cholesky(S + jitter * scale * np.eye(n), lower=True)
        except linalg.LinAlgError:
            continue
    ev, V = np.linalg.eigh(S)
    if ev.min() < -1e-8 * max(ev.max(), 0.0):
        raise NumericalError(f"noise covariance not PSD; smallest eigenvalue {ev.min():.3e}")
    # square-root factor made triangular by QR
    B = V * np.sqrt(np.clip(ev, 0, None))
    R = linalg.qr(B.T, mode="r")[0]
    L = R.T
    return L * np.sign(np.where(np.diag(L) == 0, 1.0, np.diag(L)))


@dataclass
class ModeState:
    """Coefficients ``A_n(t)`` (shape ``(N,)`` or ``(replicas, N)``) on a basis.

    ``sigma`` is the mode-noise covariance; ``None`` means ``a^2 I`` with
    ``a = noise_level``.
    """

    coeffs: np.ndarray
    basis: SpectralBasis
    time: float = 0.0
    sigma: np.ndarray | None = None
    noise_level: float = 1.0
    factor: np.ndarray | None = None
    _steps: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape[-1] != self.basis.cutoff:
            raise ParameterError("coefficient count must equal the basis cutoff")
        if self.sigma is not None and self.factor is None:
            self.factor = _psd_factor(self.sigma)

    @property
    def diagonal(self) -> bool:
        return self.sigma is None

    def replace(self, coeffs, time) -> "ModeState":
        out = ModeState(coeffs, self.basis, time, self.sigma, self.noise_level, self.factor)
        out._steps = self._steps
        return out


def mode_noise_factor(basis: SpectralBasis, a) -> tuple[np.ndarray, np.ndarray]:
    """Covariance ``Sigma_nm = <a f_n, a f_m>`` by grid quadrature and its lower factor."""
    w = basis.grid.weights.ravel()
    av = np.asarray(a, dtype=float)
    av = av.ravel() if av.size == basis.grid.size else np.broadcast_to(av, basis.grid.shape).ravel()
    if np.any(av < 0) or not np.all(np.isfinite(av)):
        raise ParameterError("noise weight must be finite and nonnegative")
    F = basis.values * av
    S = (F * w) @ F.T
    return S, _psd_factor(S)


def _is_constant(a) -> bool:
    a = np.asarray(a, dtype=float)
    return a.ndim == 0 or np.ptp(a) == 0


def _transition_factor(state: ModeState, dt: float) -> np.ndarray:
    key = float(dt)
    L = state._steps.get(key)
    if L is None:
        mu = state.basis.eigenvalues
        s = mu[:, None] + mu[None, :]
        K = -np.expm1(-s * dt) / s
        L = _psd_factor(state.sigma * K)
        if len(state._steps) > 64:
            state._steps.clear()
        state._steps[key] = L
    return L


def she_step(state: ModeState, dt: float, rng) -> ModeState:
    """Exact Ornstein-Uhlenbeck transition over a time ``dt``."""
    if dt <= 0:
        raise ParameterError("dt must be positive")
    mu = state.basis.eigenvalues
    A = state.coeffs * np.exp(-mu * dt)
    z = rng.standard_normal(state.coeffs.shape)
    if state.diagonal:
        sd = state.noise_level * np.sqrt(-np.expm1(-2 * mu * dt) / (2 * mu))
        A = A + sd * z
    else:
        A = A + z @ _transition_factor(state, dt).T
    return state.replace(A, state.time + dt)


def she_stationary_sample(basis: SpectralBasis, a, rng, size: int | None = None,
                          lyapunov: bool = False) -> ModeState:
    """Draw from the stationary law.

    Constant ``a``: independent ``N(0, a^2 / (2 mu_n))``. Otherwise requires
    ``lyapunov=True`` and uses ``P = Sigma / (mu_n + mu_m)``.
    """
    mu = basis.eigenvalues
    shape = (basis.cutoff,) if size is None else (size, basis.cutoff)
    z = rng.standard_normal(shape)
    if _is_constant(a):
        level = float(np.asarray(a, dtype=float).ravel()[0])
        return ModeState(z * level / np.sqrt(2 * mu), basis, 0.0, None, level)
    if not lyapunov:
        raise ConfigurationError("non-constant noise weight needs lyapunov=True")
    S, L = mode_noise_factor(basis, a)
    P = S / (mu[:, None] + mu[None, :])
    return ModeState(z @ _psd_factor(P).T, basis, 0.0, S, 1.0, L)


def she_field(state: ModeState) -> Field | np.ndarray:
    """Grid values ``sum_n A_n f_n``; a Field for a single state."""
    vals = state.coeffs @ state.basis.values
    grid = state.basis.grid
    if state.coeffs.ndim == 1:
        return Field(grid, vals, "she-state", None, {"time": state.time})
    return vals.reshape((-1,) + grid.shape)


def frac_spectral_basis(grid: Grid, alpha: float, cutoff: int = 256, rel_tol: float = 1e-12) -> SpectralBasis:
    """Eigenpairs of the fractional Laplacian from the weighted Green matrix on a ball grid.

    ``mu_n = 1 / lambda_n`` for the eigenvalues ``lambda_n`` of
    ``W^(1/2) G W^(1/2)``; eigenvectors have unit discrete ``L^2`` norm.
    ``alpha = 1`` runs the same routine on the classical Green function.
    """
    if not 0 < alpha <= 1:
        raise ParameterError("alpha must lie in (0, 1]")
    if grid.spec.kind != "ball":
        raise ParameterError("fractional basis is built on ball grids")
    mask = grid.interior.ravel() & (grid.weights.ravel() > 0)
    G = fractional_green_matrix(grid, alpha, mask)
    sw = np.sqrt(grid.weights.ravel()[mask])
    K = sw[:, None] * G * sw[None, :]
    lam, V = linalg.eigh(0.5 * (K + K.T))
    lam, V = lam[::-1], V[:, ::-1]
    keep = lam > rel_tol * lam[0]
    discarded = int(np.count_nonzero(~keep))
    lam, V = lam[keep][:cutoff], V[:, keep][:, :cutoff]
    values = np.zeros((len(lam), grid.size))
    values[:, mask] = (V / sw[:, None]).T
    return SpectralBasis(grid, values, 1.0 / lam, None, discarded, float(alpha))


def she_two_time_cov(basis: SpectralBasis, f, t: float, a: float = 1.0) -> float:
    """Stationary ``Cov((u_0, f), (u_t, f)) = a^2 sum_n exp(-mu_n t) <f, f_n>^2 / (2 mu_n)``."""
    if t < 0:
        raise ParameterError("time gap must be nonnegative")
    fv = f.sample(basis.grid) if isinstance(f, TestFn) else np.asarray(f, dtype=float)
    p = basis.project(fv)
    mu = basis.eigenvalues
    return float(a * a * np.sum(np.exp(-mu * t) * p * p / (2 * mu)))


def mode_trajectory_csv(times, coeffs, k: int | None = None) -> str:
    """CSV text with columns ``t, A_1 .. A_k``."""
    C = np.atleast_2d(np.asarray(coeffs, dtype=float))
    k = C.shape[1] if k is None else min(k, C.shape[1])
    buf = io.StringIO()
    buf.write(",".join(["t"] + [f"A_{i + 1}" for i in range(k)]) + "\n")
    np.savetxt(buf, np.column_stack([np.asarray(times, dtype=float), C[:, :k]]),
               delimiter=",", fmt="%.17g")
    return buf.getvalue()
