"""Domains, grids, Laplacian eigenbases and Green functions.

All Green functions solve ``-Delta G = delta`` with zero Dirichlet data, so
the covariance of the Gaussian free field is exactly ``G``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate, special

from .errors import DomainError, ParameterError

__all__ = [
    "DomainSpec",
    "Grid",
    "SpectralBasis",
    "ball_volume",
    "sphere_area",
    "build_grid",
    "laplacian_eigenbasis",
    "green",
    "fractional_green_ball",
    "fractional_green_cell_average",
    "fractional_green_covariance",
    "fractional_green_matrix",
    "green_ball_integral",
]


def ball_volume(d: int) -> float:
    """Volume of the unit ball in R^d."""
    return float(np.pi ** (d / 2) / special.gamma(d / 2 + 1))


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return d * ball_volume(d)


@dataclass(frozen=True)
class DomainSpec:
    """A rectangle ``prod [0, L_i]`` or a ball of radius ``R`` centred at 0."""

    kind: str = "rectangle"
    d: int = 2
    extent: tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("rectangle", "ball"):
            raise ParameterError(f"unknown domain kind {self.kind!r}")
        if self.d not in (1, 2, 3):
            raise ParameterError("only d in {1, 2, 3} is supported")
        ext = tuple(float(e) for e in np.atleast_1d(self.extent))
        if self.kind == "rectangle" and len(ext) != self.d:
            raise ParameterError("rectangle needs one side length per axis")
        if self.kind == "ball" and len(ext) != 1:
            raise ParameterError("ball extent is a single radius")
        if min(ext) <= 0:
            raise ParameterError("extents must be strictly positive")
        object.__setattr__(self, "extent", ext)

    @classmethod
    def unit_square(cls) -> "DomainSpec":
        return cls("rectangle", 2, (1.0, 1.0))

    @classmethod
    def unit_cube(cls, d: int = 3) -> "DomainSpec":
        return cls("rectangle", d, (1.0,) * d)

    @classmethod
    def unit_disk(cls) -> "DomainSpec":
        return cls("ball", 2, (1.0,))

    @classmethod
    def ball(cls, radius: float = 1.0, d: int = 2) -> "DomainSpec":
        return cls("ball", d, (radius,))

    @property
    def volume(self) -> float:
        if self.kind == "rectangle":
            return float(np.prod(self.extent))
        return ball_volume(self.d) * self.extent[0] ** self.d

    def boundary_distance(self, points) -> np.ndarray:
        """Signed distance to the boundary, positive inside."""
        p = np.asarray(points, dtype=float).reshape(-1, self.d)
        if self.kind == "rectangle":
            L = np.asarray(self.extent)
            return np.min(np.minimum(p, L - p), axis=1)
        return self.extent[0] - np.linalg.norm(p, axis=1)

    def contains(self, points) -> np.ndarray:
        """Strict interior membership."""
        return self.boundary_distance(points) > 0

    def sample_interior(self, rng, size: int, margin: float = 0.0) -> np.ndarray:
        """Uniform points in ``{x : d(x, boundary) > margin}``."""
        if self.kind == "rectangle":
            lo = np.full(self.d, margin)
            hi = np.asarray(self.extent) - margin
            if np.any(hi <= lo):
                raise DomainError("margin leaves an empty region")
            return lo + (hi - lo) * rng.random((size, self.d))
        r = self.extent[0] - margin
        if r <= 0:
            raise DomainError("margin leaves an empty region")
        g = rng.standard_normal((size, self.d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return g * (r * rng.random(size) ** (1.0 / self.d))[:, None]


@dataclass
class Grid:
    """Uniform node lattice over a domain with quadrature weights.

    ``values`` arrays living on a grid have shape ``grid.shape`` and are zero
    on non-interior nodes. Weights cover the whole domain so that they sum to
    its measure; boundary nodes carry weight but fields vanish there.
    """

    spec: DomainSpec
    h: float
    origin: np.ndarray
    shape: tuple[int, ...]
    interior: np.ndarray
    weights: np.ndarray
    collar: np.ndarray

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def axes(self) -> list[np.ndarray]:
        return [self.origin[i] + self.h * np.arange(n) for i, n in enumerate(self.shape)]

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def nearest_index(self, point) -> tuple[int, ...]:
        p = np.asarray(point, dtype=float)
        idx = np.rint((p - self.origin) / self.h).astype(int)
        return tuple(int(i) for i in np.clip(idx, 0, np.asarray(self.shape) - 1))

    def integrate(self, values) -> float:
        return float(np.sum(self.weights * np.asarray(values)))


def _cell_coverage(points: np.ndarray, h: float, radius: float, sub: int) -> np.ndarray:
    """Fraction of each cell ``x + [-h/2, h/2]^d`` lying inside the ball."""
    d = points.shape[1]
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    mesh = np.stack([m.ravel() for m in np.meshgrid(*([offs] * d), indexing="ij")], axis=1) * h
    out = np.empty(len(points))
    for start in range(0, len(points), 256):
        chunk = points[start:start + 256]
        q = chunk[:, None, :] + mesh[None, :, :]
        out[start:start + 256] = np.mean(np.sum(q * q, axis=2) < radius * radius, axis=1)
    return out


def build_grid(spec: DomainSpec, n: int) -> Grid:
    """Lattice with ``n`` nodes per side (boundary nodes included)."""
    if n < 8:
        raise ParameterError("grid too coarse: need at least 8 nodes per side")
    d = spec.d
    if spec.kind == "rectangle":
        L = np.asarray(spec.extent)
        h = L.min() / (n - 1)
        counts = L / h
        if np.any(np.abs(counts - np.rint(counts)) > 1e-9 * counts):
            raise ParameterError("side lengths must be integer multiples of the spacing")
        shape = tuple(int(round(c)) + 1 for c in counts)
        origin = np.zeros(d)
        w1 = []
        for m in shape:
            w = np.full(m, h)
            w[0] = w[-1] = h / 2
            w1.append(w)
        weights = w1[0]
        for w in w1[1:]:
            weights = np.multiply.outer(weights, w)
        interior = np.zeros(shape, dtype=bool)
        interior[(slice(1, -1),) * d] = True
        grid = Grid(spec, h, origin, shape, interior, np.asarray(weights, dtype=float),
                    np.zeros(shape))
        grid.collar = spec.boundary_distance(grid.points).reshape(shape)
        return grid

    R = spec.extent[0]
    h = 2 * R / (n - 1)
    shape = (n,) * d
    origin = np.full(d, -R)
    grid = Grid(spec, h, origin, shape, np.zeros(shape, bool), np.zeros(shape), np.zeros(shape))
    pts = grid.points
    r = np.linalg.norm(pts, axis=1)
    half_diag = 0.5 * h * np.sqrt(d)
    full = r + half_diag <= R
    cut = (r - half_diag < R) & ~full
    w = np.where(full, h ** d, 0.0)
    cover = _cell_coverage(pts[cut], h, R, 32 if d <= 2 else 10)
    # rescale the cut cells so the total is the exact measure
    target = spec.volume - w.sum()
    cw = cover * h ** d
    w[cut] = cw * (target / cw.sum())
    grid.weights = w.reshape(shape)
    grid.collar = (R - r).reshape(shape)
    grid.interior = (r < R * (1 - 1e-12)).reshape(shape)
    return grid


@dataclass
class SpectralBasis:
    """Eigenfunctions sampled on a grid with eigenvalues of the (fractional) Laplacian.

    ``values`` has shape ``(N, grid.size)``. ``modes`` holds the integer
    multi-indices of the analytic rectangle basis (``None`` for numerical bases).
    """

    grid: Grid
    values: np.ndarray
    eigenvalues: np.ndarray
    modes: np.ndarray | None = None
    discarded: int = 0
    alpha: float = 1.0

    @property
    def cutoff(self) -> int:
        return len(self.eigenvalues)

    def mass_matrix(self) -> np.ndarray:
        w = self.grid.weights.ravel()
        return (self.values * w) @ self.values.T

    def project(self, fvals) -> np.ndarray:
        """Quadrature inner products ``<f, f_n>`` for grid samples ``fvals``."""
        w = self.grid.weights.ravel()
        return self.values @ (w * np.asarray(fvals, dtype=float).ravel())

    def evaluate(self, points) -> np.ndarray:
        """Analytic eigenfunctions at arbitrary points, shape ``(N, m)``."""
        if self.modes is None:
            raise ParameterError("numerical basis has no analytic evaluator")
        return _rect_modes(self.grid.spec, self.modes, points)


def _rect_modes(spec: DomainSpec, modes: np.ndarray, points) -> np.ndarray:
    p = np.asarray(points, dtype=float).reshape(-1, spec.d)
    out = np.ones((len(modes), len(p)))
    for i, L in enumerate(spec.extent):
        out *= np.sqrt(2 / L) * np.sin(np.pi * np.outer(modes[:, i], p[:, i]) / L)
    return out


def _rect_mode_list(extent: Sequence[float], N: int) -> tuple[np.ndarray, np.ndarray]:
    """First N multi-indices of the Dirichlet rectangle ordered by eigenvalue."""
    L = np.asarray(extent, dtype=float)
    d = len(L)
    K = max(2, int(np.ceil(N ** (1.0 / d))) + 1)
    while True:
        ks = np.stack([m.ravel() for m in np.meshgrid(*([np.arange(1, K + 1)] * d),
                                                      indexing="ij")], axis=1)
        mu = np.pi ** 2 * np.sum(ks ** 2 / L ** 2, axis=1)
        keys = [ks[:, i] for i in range(d - 1, -1, -1)] + [mu]
        order = np.lexsort(keys)
        ks, mu = ks[order], mu[order]
        # every omitted tuple has some index > K, hence eigenvalue above this bound
        bound = np.pi ** 2 * ((K + 1) ** 2 / L.max() ** 2 + np.sum(1 / L ** 2) - 1 / L.max() ** 2)
        if len(mu) >= N and mu[N - 1] < bound:
            return ks[:N], mu[:N]
        K *= 2


def laplacian_eigenbasis(spec: DomainSpec, N: int, grid: Grid | None = None, n: int = 64) -> SpectralBasis:
    """Dirichlet eigenfunctions of the rectangle, sampled on a grid."""
    if spec.kind != "rectangle":
        raise ParameterError("analytic basis available only for rectangles")
    if N < 1:
        raise ParameterError("cutoff must be positive")
    grid = grid if grid is not None else build_grid(spec, n)
    modes, mu = _rect_mode_list(spec.extent, N)
    values = _rect_modes(spec, modes, grid.points)
    values[:, ~grid.interior.ravel()] = 0.0
    return SpectralBasis(grid, values, mu, modes)


def _as_points(x, d: int) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1, d)


def _check_pair(spec: DomainSpec, x: np.ndarray, y: np.ndarray):
    if not (np.all(spec.contains(x)) and np.all(spec.contains(y))):
        raise DomainError("point outside the open domain")
    if np.any(np.linalg.norm(x - y, axis=1) < 1e-14):
        raise DomainError("diagonal singularity: x == y")


def _resolvent_1d(s, t, k, L):
    """Green function of ``-u'' + k^2 u = delta`` on [0, L] with zero ends."""
    a = np.minimum(s, t)
    b = np.maximum(s, t)
    num = (np.exp(-k * (b - a)) - np.exp(-k * (b + a))
           - np.exp(-k * (2 * L - a - b)) + np.exp(-k * (2 * L - b + a)))
    return num / (2 * k * (1 - np.exp(-2 * k * L)))


def _rect_green(spec, x, y, cutoff, method):
    L = np.asarray(spec.extent)
    d = spec.d
    if d == 1:
        a = np.minimum(x[:, 0], y[:, 0])
        b = np.maximum(x[:, 0], y[:, 0])
        return a * (L[0] - b) / L[0]
    if method == "modes":
        modes, mu = _rect_mode_list(L, cutoff)
        return np.sum(_rect_modes(spec, modes, x) * _rect_modes(spec, modes, y) / mu[:, None], axis=0)
    if method != "semi-analytic":
        raise ParameterError(f"unknown method {method!r}")
    # Sum the axis of largest separation in closed form; the remaining modes
    # then decay like exp(-k |x_i - y_i|).
    out = np.empty(len(x))
    sep = np.abs(x - y)
    axis = np.argmax(sep, axis=1)
    for ax in range(d):
        sel = axis == ax
        if not np.any(sel):
            continue
        others = [i for i in range(d) if i != ax]
        sub = DomainSpec("rectangle", d - 1, tuple(L[others]))
        modes, mu = _rect_mode_list(L[others], cutoff)
        fx = _rect_modes(sub, modes, x[sel][:, others])
        fy = _rect_modes(sub, modes, y[sel][:, others])
        k = np.sqrt(mu)[:, None]
        g = _resolvent_1d(x[sel][:, ax][None, :], y[sel][:, ax][None, :], k, L[ax])
        out[sel] = np.sum(fx * fy * g, axis=0)
    return out


def _fundamental(r, d):
    if d == 2:
        return -np.log(r) / (2 * np.pi)
    return r ** (2.0 - d) / ((d - 2) * sphere_area(d))


def _ball_green(x, y, R, d):
    if d == 1:
        a = np.minimum(x[:, 0], y[:, 0])
        b = np.maximum(x[:, 0], y[:, 0])
        return (a + R) * (R - b) / (2 * R)
    r = np.linalg.norm(x - y, axis=1)
    xx = np.sum(x * x, axis=1)
    yy = np.sum(y * y, axis=1)
    s = np.sqrt(np.maximum(xx * yy / R ** 2 - 2 * np.sum(x * y, axis=1) + R ** 2, 0.0))
    return _fundamental(r, d) - _fundamental(s, d)


def green(spec: DomainSpec, x, y, cutoff: int = 4096, method: str = "semi-analytic"):
    """Dirichlet Green function of ``-Delta`` on ``spec``.

    Rectangles use an eigenfunction expansion; by default the axis with the
    largest separation is summed exactly (``method="semi-analytic"``), while
    ``method="modes"`` gives the plain truncated sum over ``cutoff`` modes.
    Balls use the Kelvin image formula. Scalar in, scalar out.
    """
    scalar = np.ndim(x) == 1 and np.ndim(y) == 1
    xp, yp = np.broadcast_arrays(_as_points(x, spec.d), _as_points(y, spec.d))
    xp, yp = np.ascontiguousarray(xp), np.ascontiguousarray(yp)
    _check_pair(spec, xp, yp)
    if spec.kind == "rectangle":
        out = _rect_green(spec, xp, yp, cutoff, method)
    else:
        out = _ball_green(xp, yp, spec.extent[0], spec.d)
    return float(out[0]) if scalar else out


def _frac_kappa(alpha: float, d: int) -> float:
    return special.gamma(d / 2) / (4 ** alpha * np.pi ** (d / 2) * special.gamma(alpha) ** 2)


def _check_alpha(alpha: float):
    if not 0 < alpha < 1:
        raise ParameterError("alpha must lie in (0, 1)")


def _frac_integral_beta(r0, alpha, d):
    a, b = alpha, d / 2 - alpha
    return special.beta(a, b) * special.betainc(a, b, r0 / (1 + r0))


def _frac_integral_gauss(r0, alpha, d, nodes):
    """Same integral via Gauss-Legendre after singularity-removing substitutions."""
    t, w = np.polynomial.legendre.leggauss(nodes)
    r0 = np.atleast_1d(r0)
    out = np.empty(len(r0))
    for i, R in enumerate(r0):
        head = min(R, 1.0)
        # s = u^(1/alpha) on [0, head]
        top = head ** alpha
        u = 0.5 * top * (t + 1)
        val = 0.5 * top * np.sum(w * (1 + u ** (1 / alpha)) ** (-d / 2)) / alpha
        if R > 1:
            # s = 1/u, then v = u^(d/2 - alpha) on [R^-(d/2-alpha), 1]
            p = d / 2 - alpha
            lo = R ** (-p)
            v = lo + 0.5 * (1 - lo) * (t + 1)
            uu = v ** (1 / p)
            val += 0.5 * (1 - lo) * np.sum(w * (1 + uu) ** (-d / 2)) / p
        out[i] = val
    return out


def fractional_green_ball(alpha: float, x, y, method: str = "beta", nodes: int = 256,
                          radius: float = 1.0, center=None):
    """Green function of the Riesz fractional Laplacian on a ball.

    ``G(x, y) = kappa |x-y|^(2a-d) int_0^{r0} s^(a-1) (1+s)^(-d/2) ds`` with
    ``r0 = (1-|x|^2)(1-|y|^2)/|x-y|^2`` in unit-ball coordinates. The default
    route evaluates the integral as an incomplete beta function; ``"gauss"``
    uses Gauss-Legendre quadrature after substitution.
    """
    if alpha == 1:
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        c = np.zeros(d) if center is None else np.asarray(center, float)
        return green(DomainSpec.ball(radius, d), x - c, np.asarray(y, float) - c)
    _check_alpha(alpha)
    scalar = np.ndim(x) == 1 and np.ndim(y) == 1
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    x, y = np.broadcast_arrays(x, y)
    d = x.shape[1]
    if d < 2:
        raise ParameterError("fractional ball Green function needs d >= 2")
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    xs = (x - c) / radius
    ys = (y - c) / radius
    nx = 1 - np.sum(xs * xs, axis=1)
    ny = 1 - np.sum(ys * ys, axis=1)
    if np.any(nx <= 0) or np.any(ny <= 0):
        raise DomainError("point outside the open ball")
    r2 = np.sum((xs - ys) ** 2, axis=1)
    if np.any(r2 < 1e-28):
        raise DomainError("diagonal singularity: x == y")
    r0 = nx * ny / r2
    if method == "beta":
        integral = _frac_integral_beta(r0, alpha, d)
    elif method == "gauss":
        integral = _frac_integral_gauss(r0, alpha, d, nodes)
    else:
        raise ParameterError(f"unknown method {method!r}")
    out = _frac_kappa(alpha, d) * r2 ** (alpha - d / 2) * integral * radius ** (2 * alpha - d)
    return float(out[0]) if scalar else out


@lru_cache(maxsize=64)
def _cube_distance_moment(d: int, beta: float) -> float:
    """E|u - v|^beta for u, v independent uniform on the unit cube."""
    if d == 1:
        return 2.0 / ((beta + 1) * (beta + 2))
    if d == 2:
        def inner(th):
            c, s = np.cos(th), np.sin(th)
            R = 1 / max(c, s)
            return (R ** (beta + 2) / (beta + 2) - (c + s) * R ** (beta + 3) / (beta + 3)
                    + c * s * R ** (beta + 4) / (beta + 4))
        val = sum(integrate.quad(inner, a, b, epsabs=0, epsrel=1e-12)[0]
                  for a, b in ((0, np.pi / 4), (np.pi / 4, np.pi / 2)))
        return 4 * val
    if d == 3:
        def inner(phi, th):
            n = np.array([np.sin(phi) * np.cos(th), np.sin(phi) * np.sin(th), np.cos(phi)])
            R = 1 / n.max()
            e1, e2, e3 = n.sum(), n[0] * n[1] + n[0] * n[2] + n[1] * n[2], n.prod()
            poly = (R ** (beta + 3) / (beta + 3) - e1 * R ** (beta + 4) / (beta + 4)
                    + e2 * R ** (beta + 5) / (beta + 5) - e3 * R ** (beta + 6) / (beta + 6))
            return poly * np.sin(phi)
        val = integrate.dblquad(inner, 0, np.pi / 2, 0, np.pi / 2, epsabs=0, epsrel=1e-10)[0]
        return 8 * val
    raise ParameterError("only d in {1, 2, 3} is supported")


def _regular_part(alpha, xs, ys, d):
    """Bounded part removed from the singular kernel, unit-ball coordinates."""
    nx = 1 - np.sum(xs * xs, axis=-1)
    ny = 1 - np.sum(ys * ys, axis=-1)
    r2 = np.sum((xs - ys) ** 2, axis=-1)
    if alpha == 1:
        s2 = np.maximum(np.sum(xs * xs, -1) * np.sum(ys * ys, -1) - 2 * np.sum(xs * ys, -1) + 1, 1e-300)
        return _fundamental(np.sqrt(s2), d)
    p = d / 2 - alpha
    kappa = _frac_kappa(alpha, d)
    same = r2 < 1e-24
    z = np.where(same, 0.5, r2 / np.maximum(r2 + nx * ny, 1e-300))
    val = kappa * special.beta(alpha, p) * np.where(same, 1.0, r2) ** (alpha - d / 2) \
        * special.betainc(p, alpha, z)
    return np.where(same, kappa * nx ** (2 * alpha - d) / p, val)


def fractional_green_cell_average(alpha: float, x, h: float, radius: float = 1.0,
                                  center=None, order: int = 4):
    """Average of the ball Green function over ``cell x cell`` around nodes.

    Used for diagonal covariance entries, where the point value is infinite.
    The singular translation-invariant part is averaged exactly; the bounded
    remainder by a Gauss product rule restricted to the ball.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    if alpha != 1:
        _check_alpha(alpha)
    c = np.zeros(d) if center is None else np.asarray(center, float)
    xs = (x - c) / radius
    hs = h / radius
    if alpha == 1 and d == 2:
        sing = -(np.log(hs) + _cube_log_moment()) / (2 * np.pi)
    elif alpha == 1:
        sing = hs ** (2.0 - d) * _cube_distance_moment(d, 2.0 - d) / ((d - 2) * sphere_area(d))
    else:
        beta = 2 * alpha - d
        sing = (_frac_kappa(alpha, d) * special.beta(alpha, d / 2 - alpha)
                * hs ** beta * _cube_distance_moment(d, beta))
    t, w = np.polynomial.legendre.leggauss(order)
    t, w = 0.5 * t * hs, 0.5 * w
    mesh = np.stack([m.ravel() for m in np.meshgrid(*([t] * d), indexing="ij")], axis=1)
    wm = np.prod(np.stack([m.ravel() for m in np.meshgrid(*([w] * d), indexing="ij")], axis=1), axis=1)
    out = np.empty(len(xs))
    for i, p in enumerate(xs):
        q = p + mesh
        ok = np.sum(q * q, axis=1) < 1 - 1e-12
        if not np.any(ok):
            q, wq = p[None, :], np.ones(1)
        else:
            q, wq = q[ok], wm[ok] / wm[ok].sum()
        H = _regular_part(alpha, q[:, None, :], q[None, :, :], d)
        out[i] = sing - wq @ H @ wq
    return out * radius ** (2 * alpha - d)


@lru_cache(maxsize=1)
def _cube_log_moment() -> float:
    """E ln|u - v| for u, v uniform on the unit square."""
    def inner(th):
        c, s = np.cos(th), np.sin(th)
        R = 1 / max(c, s)

        def prim(p):
            # int_0^R r^p ln r dr
            return R ** (p + 1) * (np.log(R) / (p + 1) - 1 / (p + 1) ** 2)
        return prim(1) - (c + s) * prim(2) + c * s * prim(3)
    val = sum(integrate.quad(inner, a, b, epsabs=0, epsrel=1e-12)[0]
              for a, b in ((0, np.pi / 4), (np.pi / 4, np.pi / 2)))
    return 4 * val


def fractional_green_covariance(points, alpha: float, h: float, radius: float = 1.0,
                                center=None) -> np.ndarray:
    """Ball Green covariance at nodes: point values off the diagonal, cell averages on it.

    ``alpha = 1`` gives the classical ball Green function.
    """
    pts = np.asarray(points, dtype=float)
    m, d = pts.shape
    c = np.zeros(d) if center is None else np.asarray(center, float)
    iu, ju = np.triu_indices(m, 1)
    C = np.empty((m, m))
    for s in range(0, len(iu), 200_000):
        a, b = iu[s:s + 200_000], ju[s:s + 200_000]
        if alpha == 1:
            v = _ball_green(pts[a] - c, pts[b] - c, radius, d)
        else:
            v = fractional_green_ball(alpha, pts[a], pts[b], radius=radius, center=c)
        C[a, b] = v
        C[b, a] = v
    C[np.diag_indices(m)] = fractional_green_cell_average(alpha, pts, h, radius, c)
    return C


def fractional_green_matrix(grid: Grid, alpha: float, mask=None) -> np.ndarray:
    """Covariance matrix of the (fractional) field at the interior nodes of a ball grid."""
    if grid.spec.kind != "ball":
        raise ParameterError("fractional Green matrix needs a ball domain")
    sel = grid.interior.ravel() if mask is None else np.asarray(mask).ravel()
    return fractional_green_covariance(grid.points[sel], alpha, grid.h, grid.spec.extent[0])


def green_ball_integral(eps: float, d: int) -> float:
    """``int_{B(0,eps)} G_{B(0,eps)}(0, y) dy`` by radial quadrature."""
    if eps <= 0:
        raise ParameterError("radius must be positive")
    if d == 1:
        val = integrate.quad(lambda r: (eps - r) / 2, 0, eps, epsabs=0, epsrel=1e-13)[0]
        return 2 * val
    A = sphere_area(d)
    if d == 2:
        f = lambda r: r * np.log(eps / r) / (2 * np.pi)
    else:
        f = lambda r: r ** (d - 1) * (r ** (2.0 - d) - eps ** (2.0 - d)) / ((d - 2) * A)
    return A * integrate.quad(f, 0, eps, epsabs=0, epsrel=1e-13)[0]
