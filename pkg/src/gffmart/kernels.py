"""Poisson kernels, fractional Poisson kernels and the alpha-mean kernel.

The fractional kernels share one normalising constant ``c(d, alpha)``,
computed here by radial quadrature rather than taken from a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .domain import DomainSpec, ball_volume, sphere_area
from .errors import ConfigurationError, DomainError, ParameterError

__all__ = [
    "Ball",
    "KernelConstant",
    "sphere_rule",
    "poisson_kernel_eval",
    "harmonic_extension",
    "frac_kernel_constant",
    "frac_poisson_kernel_eval",
    "frac_poisson_extension",
    "frac_poisson_mass",
    "alpha_mean_kernel_eval",
    "alpha_mean_integral",
    "alpha_mean_mass",
    "lune_integral",
    "c_profile",
    "weighted_ball_moment",
]


@dataclass(frozen=True)
class Ball:
    """Open ball ``B(center, radius)``, optionally tied to an enclosing domain."""

    center: tuple[float, ...]
    radius: float
    spec: DomainSpec | None = None

    def __post_init__(self):
        c = tuple(float(v) for v in np.atleast_1d(self.center))
        object.__setattr__(self, "center", c)
        if self.radius <= 0:
            raise ParameterError("ball radius must be positive")
        if self.spec is not None:
            if self.spec.d != len(c):
                raise ParameterError("ball and domain dimensions differ")
            if self.spec.boundary_distance(np.asarray(c))[0] <= self.radius:
                raise DomainError("ball not strictly inside the domain")

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.center)


def sphere_rule(d: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on the unit sphere and weights summing to its area.

    Trapezoid rule on the circle; Gauss-Legendre in ``cos(theta)`` times a
    trapezoid in azimuth on the 2-sphere (``n`` latitudes, ``2n`` longitudes).
    """
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.ones(2)
    if d == 2:
        t = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(t), np.sin(t)], axis=1), np.full(n, 2 * np.pi / n)
    if d == 3:
        u, wu = np.polynomial.legendre.leggauss(n)
        ph = np.pi * np.arange(2 * n) / n
        U, P = np.meshgrid(u, ph, indexing="ij")
        s = np.sqrt(1 - U ** 2)
        pts = np.stack([s * np.cos(P), s * np.sin(P), U], axis=-1).reshape(-1, 3)
        w = np.repeat(wu, 2 * n) * (np.pi / n)
        return pts, w
    raise ParameterError("only d in {1, 2, 3} is supported")


def _min_sphere_nodes(d: int) -> int:
    return {1: 2, 2: 64, 3: 512}[d]


def poisson_kernel_eval(ball: Ball, z, theta, tol: float = 1e-9):
    """Poisson kernel of ``B(x, eps)`` for interior ``z`` and boundary ``theta``."""
    x, eps, d = ball.x, ball.radius, ball.d
    z = np.atleast_2d(np.asarray(z, dtype=float))
    th = np.atleast_2d(np.asarray(theta, dtype=float))
    rz = np.linalg.norm(z - x, axis=1)
    if np.any(rz >= eps):
        raise DomainError("z must lie strictly inside the ball")
    if np.any(np.abs(np.linalg.norm(th - x, axis=1) - eps) > tol * eps):
        raise DomainError("theta must lie on the sphere")
    out = (eps ** 2 - rz ** 2) / (sphere_area(d) * eps * np.linalg.norm(z - th, axis=1) ** d)
    return float(out[0]) if out.size == 1 else out


def harmonic_extension(ball: Ball, g, z, n: int | None = None):
    """Harmonic extension of boundary data into the ball, evaluated at ``z``.

    ``g`` is either a callable on boundary points or an array of samples at
    the nodes of ``sphere_rule(d, n)`` (then ``n`` is inferred from its size).
    """
    d = ball.d
    z = np.atleast_2d(np.asarray(z, dtype=float))
    rz = np.linalg.norm(z - ball.x, axis=1)
    if np.any(rz >= ball.radius):
        raise DomainError("z must lie strictly inside the ball")
    if callable(g):
        if n is None:
            # the rule error decays like (|z - x| / eps)^n
            q = max(float(rz.max()) / ball.radius, 0.5)
            n = int(np.clip(np.ceil(np.log(1e-13) / np.log(q)), 128, 4096))
            if d == 3:
                n = min(max(24, n // 2), 256)
        u, w = sphere_rule(d, n)
        pts = ball.x + ball.radius * u
        gv = np.asarray(g(pts), dtype=float)
    else:
        gv = np.asarray(g, dtype=float).ravel()
        if d == 3:
            n = int(round(np.sqrt(len(gv) / 2)))
            if 2 * n * n != len(gv):
                raise ConfigurationError("sample count does not match a sphere rule")
        else:
            n = len(gv)
        u, w = sphere_rule(d, n)
        pts = ball.x + ball.radius * u
    if len(w) < _min_sphere_nodes(d):
        raise ConfigurationError("insufficient quadrature nodes on the sphere")
    eps = ball.radius
    dist = np.linalg.norm(z[:, None, :] - pts[None, :, :], axis=2)
    P = (eps ** 2 - rz[:, None] ** 2) / (sphere_area(d) * eps * dist ** d)
    out = (P * (w * eps ** (d - 1))) @ gv
    return float(out[0]) if out.size == 1 else out


def _radial_tail_integral(alpha: float) -> float:
    """``int_1^inf (r^2 - 1)^(-alpha) r^(-1) dr`` by panel quadrature."""
    x, w = special.roots_jacobi(40, 0.0, -alpha)
    # panel [1, 2] with weight (r - 1)^(-alpha)
    r = 1.5 + 0.5 * x
    val = 0.5 ** (1 - alpha) * np.sum(w * (r + 1) ** (-alpha) / r)
    # [2, R] in log r, geometric panels
    R = 1e3
    edges = np.geomspace(2.0, R, 41)
    t, wt = np.polynomial.legendre.leggauss(20)
    for a, b in zip(edges[:-1], edges[1:]):
        la, lb = np.log(a), np.log(b)
        s = np.exp(0.5 * (lb - la) * t + 0.5 * (lb + la))
        val += 0.5 * (lb - la) * np.sum(wt * (s * s - 1) ** (-alpha))
    # algebraic tail: (r^2-1)^-a = sum_k (a)_k/k! r^(-2a-2k)
    term, k, tail = 1.0, 0, 0.0
    while True:
        contrib = term * R ** (-2 * alpha - 2 * k) / (2 * alpha + 2 * k)
        tail += contrib
        if contrib < 1e-18 * tail:
            break
        term *= (alpha + k) / (k + 1)
        k += 1
    return val + tail


@lru_cache(maxsize=256)
def frac_kernel_constant(d: int, alpha: float) -> float:
    """Normalisation making the fractional Poisson kernel a probability density."""
    if not 0 < alpha < 1:
        raise ParameterError("alpha must lie in (0, 1)")
    return 1.0 / (sphere_area(d) * _radial_tail_integral(alpha))


@dataclass(frozen=True)
class KernelConstant:
    """Normalising constant of the fractional kernels for ``(d, alpha)``."""

    d: int
    alpha: float
    c: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "c", frac_kernel_constant(self.d, float(self.alpha)))


def _const(d, alpha, const):
    if const is None:
        return frac_kernel_constant(d, float(alpha))
    if isinstance(const, KernelConstant):
        if const.d != d or const.alpha != alpha:
            raise ParameterError("kernel constant built for another (d, alpha)")
        return const.c
    return float(const)


def frac_poisson_kernel_eval(ball: Ball, z, y, alpha: float, const=None):
    """Fractional Poisson kernel ``P(z, y)`` of ``B(x, eps)``; ``|y - x| > eps``."""
    x, eps, d = ball.x, ball.radius, ball.d
    c = _const(d, alpha, const)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    rz2 = np.sum((z - x) ** 2, axis=1)
    ry2 = np.sum((y - x) ** 2, axis=1)
    if np.any(ry2 <= eps * eps):
        raise DomainError("y must lie outside the closed ball")
    if np.any(rz2 >= eps * eps):
        raise DomainError("z must lie strictly inside the ball")
    out = c * ((eps * eps - rz2) / (ry2 - eps * eps)) ** alpha * np.linalg.norm(z - y, axis=1) ** (-d)
    return float(out[0]) if out.size == 1 else out


def _frac_kernel_matrix(x, eps, z, y, alpha, c):
    """Kernel for every (z_i, y_j); no validation."""
    d = x.size
    rz2 = np.sum((z - x) ** 2, axis=1)
    ry2 = np.sum((y - x) ** 2, axis=1)
    dist2 = np.sum((z[:, None, :] - y[None, :, :]) ** 2, axis=2)
    return (c * ((eps * eps - rz2)[:, None] / (ry2 - eps * eps)[None, :]) ** alpha
            * dist2 ** (-d / 2))


def alpha_mean_kernel_eval(ball: Ball, y, alpha: float, const=None):
    """Alpha-mean kernel of ``B(x, eps)``: zero on the closed ball."""
    x, eps, d = ball.x, ball.radius, ball.d
    c = _const(d, alpha, const)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    r2 = np.sum((y - x) ** 2, axis=1)
    out = np.zeros(len(y))
    ok = r2 > eps * eps
    out[ok] = c * eps ** (2 * alpha) * (r2[ok] - eps * eps) ** (-alpha) * r2[ok] ** (-d / 2)
    return float(out[0]) if out.size == 1 else out


def alpha_mean_mass(ball: Ball, alpha: float, const=None, n_ang: int = 64) -> float:
    """``int A_x^eps`` by the exterior polar rule (independent of the radial normalisation)."""
    pts, w = _polar_exterior_rule(ball.x, ball.radius, alpha, np.inf, n_ang, tail=True)
    return float(w @ alpha_mean_kernel_eval(ball, pts, alpha, const))


def _graded_panels(a, b, grade_lo, grade_hi, levels=12):
    """Partition of ``[a, b]`` refined dyadically toward the flagged endpoints."""
    pts = {a, b}
    for k in range(1, levels + 1):
        if grade_lo:
            pts.add(a + (b - a) * 2.0 ** -k)
        if grade_hi:
            pts.add(b - (b - a) * 2.0 ** -k)
    if not (grade_lo or grade_hi):
        pts.update(np.linspace(a, b, 5)[1:-1])
    return np.array(sorted(pts))


def alpha_mean_integral(ball: Ball, u, alpha: float, outer: float, breaks=(), const=None,
                        n_ang: int = 128, n_sing: int = 24, n_panel: int = 8) -> float:
    """``int A_x^eps(y) u(y) dy`` over ``eps < |y - x| < outer`` for callable ``u``.

    ``u`` must vanish beyond ``outer``. Radii in ``breaks`` are points where
    ``u`` is only Holder continuous (such as the sphere of a glued
    extension); panels are graded toward them. The kernel singularity at
    ``|y - x| = eps`` is absorbed by Gauss-Jacobi nodes.
    """
    x, eps, d = ball.x, ball.radius, ball.d
    c = _const(d, alpha, const)
    cuts = sorted({eps, outer, *[b for b in breaks if eps < b < outer]})
    t, wt = np.polynomial.legendre.leggauss(n_panel)
    xj, wj = special.roots_jacobi(n_sing, 0.0, -alpha)
    s_all, w_all = [], []
    first = eps + (cuts[1] - eps) * 2.0 ** -12
    half = 0.5 * (first - eps)
    s = eps + half * (xj + 1)
    s_all.append(s)
    # weights absorb (s - eps)^-alpha; multiply by the rest of the kernel
    w_all.append(wj * half ** (1 - alpha) * (s + eps) ** (-alpha) * s ** (-d) * s ** (d - 1))
    for k, (a, b) in enumerate(zip(cuts[:-1], cuts[1:])):
        lo = first if k == 0 else a
        edges = _graded_panels(lo, b, True, b < outer)
        if k == 0:
            edges = edges[edges >= first]
        A, B = edges[:-1, None], edges[1:, None]
        s = (0.5 * (B - A) * t + 0.5 * (B + A)).ravel()
        w = (0.5 * (B - A) * wt).ravel()
        s_all.append(s)
        w_all.append(w * (s * s - eps * eps) ** (-alpha) * s ** (-d) * s ** (d - 1))
    s = np.concatenate(s_all)
    w = np.concatenate(w_all) * c * eps ** (2 * alpha)
    uu, wu = sphere_rule(d, n_ang if d == 2 else max(8, n_ang // 4))
    pts = x + (s[:, None, None] * uu[None, :, :]).reshape(-1, d)
    vals = np.asarray(u(pts), dtype=float).reshape(len(s), len(uu))
    return float(w @ (vals @ wu))


def _polar_exterior_rule(x, eps, alpha, outer, n_ang, n_sing=24, n_panel=16, ratio=1.3,
                         tail=False):
    """Points and weights for ``int_{eps < |y-x| < outer}`` (``outer=inf`` with ``tail``).

    The first radial panel uses Gauss-Jacobi nodes for the ``(s-eps)^-alpha``
    edge singularity; the weights absorb that factor so callers multiply by
    the full kernel value.
    """
    d = x.size
    u, wu = sphere_rule(d, n_ang)
    s_list, w_list = [], []
    first = eps * min(ratio, outer / eps) if np.isfinite(outer) else eps * ratio
    xj, wj = special.roots_jacobi(n_sing, 0.0, -alpha)
    half = 0.5 * (first - eps)
    s = eps + half * (xj + 1)
    s_list.append(s)
    w_list.append(wj * half ** (1 - alpha) * (s - eps) ** alpha * s ** (d - 1))
    t, wt = np.polynomial.legendre.leggauss(n_panel)
    lo = first
    stop = outer if np.isfinite(outer) else eps * 64
    while lo < stop * (1 - 1e-14):
        hi = min(lo * ratio, stop)
        s = 0.5 * (hi - lo) * t + 0.5 * (hi + lo)
        s_list.append(s)
        w_list.append(0.5 * (hi - lo) * wt * s ** (d - 1))
        lo = hi
    if tail:
        # s = stop / v, v in (0, 1]; integrand ~ v^(2 alpha - 1) near 0
        xv, wv = special.roots_jacobi(n_panel, 0.0, 2 * alpha - 1)
        v = 0.5 * (xv + 1)
        s = stop / v
        s_list.append(s)
        w_list.append(wv * 0.5 ** (2 * alpha) * v ** (1 - 2 * alpha) * stop * s ** (d - 1) / v ** 2)
    s = np.concatenate(s_list)
    w = np.concatenate(w_list)
    pts = x + (s[:, None, None] * u[None, :, :]).reshape(-1, d)
    wts = (w[:, None] * wu[None, :]).ravel()
    return pts, wts


def _ball_rule(center, radius, d, n_rad=48, n_ang=96):
    """Polar Gauss rule on a ball (for smooth integrands)."""
    t, wt = np.polynomial.legendre.leggauss(n_rad)
    s = 0.5 * radius * (t + 1)
    w = 0.5 * radius * wt * s ** (d - 1)
    u, wu = sphere_rule(d, n_ang if d == 2 else max(8, n_ang // 4))
    pts = np.asarray(center) + (s[:, None, None] * u[None, :, :]).reshape(-1, d)
    return pts, (w[:, None] * wu[None, :]).ravel()


def _support(g):
    sup = getattr(g, "support", None)
    if sup is None:
        return None
    c, r = sup
    return np.asarray(c, dtype=float), float(r)


def frac_poisson_mass(ball: Ball, z, alpha: float, const=None, n_ang: int = 128,
                      domain: DomainSpec | None = None) -> np.ndarray:
    """``int P(z, y) dy`` over the exterior of the ball (inside ``domain`` if given)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    c = _const(ball.d, alpha, const)
    pts, w = _polar_exterior_rule(ball.x, ball.radius, alpha, np.inf, n_ang, tail=True)
    if domain is not None:
        w = w * domain.contains(pts)
    out = np.zeros(len(z))
    for s in range(0, len(pts), 20000):
        out += _frac_kernel_matrix(ball.x, ball.radius, z, pts[s:s + 20000], alpha, c) @ w[s:s + 20000]
    return out


def frac_poisson_extension(ball: Ball, g, z, alpha: float, const=None,
                           domain: DomainSpec | None = None, n_ang: int = 128):
    """Fractional harmonic extension ``int P(z, y) g(y) dy`` of exterior data.

    ``g`` may be a callable (optionally with a ``support = (center, radius)``
    attribute), or a grid field with ``grid`` and ``values`` attributes. Grid
    data is integrated with the node rule away from the ball and a refined
    polar rule in the annulus ``eps < |y - x| < 2 eps``, each refined point
    taking the value of the nearest exterior node of its cell.
    """
    if domain is not None:
        if domain.boundary_distance(ball.x)[0] <= ball.radius:
            raise DomainError("ball not strictly inside the domain")
    if not 0 < alpha < 1:
        raise ParameterError("alpha must lie in (0, 1)")
    zz = np.atleast_2d(np.asarray(z, dtype=float))
    if np.any(np.linalg.norm(zz - ball.x, axis=1) >= ball.radius):
        raise DomainError("z must lie strictly inside the ball")
    c = _const(ball.d, alpha, const)
    if hasattr(g, "grid") and hasattr(g, "values"):
        W, idx = _grid_extension_weights(ball, g.grid, zz, alpha, c)
        out = W @ np.asarray(g.values).ravel()[idx]
    else:
        out = _callable_extension(ball, g, zz, alpha, c, domain, n_ang)
    return float(out[0]) if np.ndim(z) == 1 else out


def _callable_extension(ball, g, z, alpha, c, domain, n_ang):
    x, eps, d = ball.x, ball.radius, ball.d
    sup = _support(g)
    if sup is not None and np.linalg.norm(sup[0] - x) - sup[1] > eps * (1 + 1e-9):
        pts, w = _ball_rule(sup[0], sup[1], d, n_ang=n_ang)
        inside = np.sum((pts - x) ** 2, axis=1) > eps * eps
        pts, w = pts[inside], w[inside]
    elif sup is not None:
        reach = np.linalg.norm(sup[0] - x) + sup[1]
        pts, w = _polar_exterior_rule(x, eps, alpha, max(reach, eps * 1.01), n_ang)
    else:
        pts, w = _polar_exterior_rule(x, eps, alpha, np.inf, n_ang, tail=True)
    if domain is not None:
        w = w * domain.contains(pts)
    gw = w * np.asarray(g(pts), dtype=float)
    live = gw != 0
    pts, gw = pts[live], gw[live]
    out = np.zeros(len(z))
    # keep kernel blocks near 4e6 entries
    zb = max(1, min(len(z), 4_000_000 // max(len(pts), 1)))
    pb = max(1, 4_000_000 // zb)
    for i in range(0, len(z), zb):
        for s in range(0, len(pts), pb):
            out[i:i + zb] += _frac_kernel_matrix(x, eps, z[i:i + zb], pts[s:s + pb], alpha, c) @ gw[s:s + pb]
    return out


def _grid_extension_weights(ball, grid, z, alpha, c, n_sing=12, per_h=2):
    """Matrix mapping exterior node values to extension values at ``z``."""
    x, eps, d = ball.x, ball.radius, ball.d
    h = grid.h
    pts = grid.points
    r = np.linalg.norm(pts - x, axis=1)
    live = grid.interior.ravel()
    far = live & (r >= 2 * eps)
    far_idx = np.nonzero(far)[0]
    Wf = _frac_kernel_matrix(x, eps, z, pts[far_idx], alpha, c) * grid.weights.ravel()[far_idx]

    # refined annulus eps < s < 2 eps
    n_ang = max(64, int(np.ceil(2 * np.pi * 2 * eps / (h / per_h))))
    u, wu = sphere_rule(d, n_ang if d == 2 else max(8, n_ang // 4))
    xj, wj = special.roots_jacobi(n_sing, 0.0, -alpha)
    first = min(eps + h, 2 * eps)
    half = 0.5 * (first - eps)
    s = eps + half * (xj + 1)
    ws = wj * half ** (1 - alpha) * (s - eps) ** alpha * s ** (d - 1)
    npan = max(1, int(np.ceil((2 * eps - first) / h)))
    edges = np.linspace(first, 2 * eps, npan + 1)
    t, wt = np.polynomial.legendre.leggauss(2 * per_h)
    s2 = (0.5 * (edges[1:] - edges[:-1])[:, None] * t + 0.5 * (edges[1:] + edges[:-1])[:, None]).ravel()
    w2 = (0.5 * (edges[1:] - edges[:-1])[:, None] * wt).ravel() * s2 ** (d - 1)
    s = np.concatenate([s, s2])
    ws = np.concatenate([ws, w2])
    q = x + (s[:, None, None] * u[None, :, :]).reshape(-1, d)
    wq = (ws[:, None] * wu[None, :]).ravel()
    keep = grid.spec.contains(q)
    q, wq = q[keep], wq[keep]
    # nearest exterior corner of the containing cell
    base = np.floor((q - grid.origin) / h).astype(int)
    best = np.full(len(q), -1)
    bestd = np.full(len(q), np.inf)
    shape = np.asarray(grid.shape)
    for corner in np.ndindex(*(2,) * d):
        idx = np.clip(base + np.asarray(corner), 0, shape - 1)
        node = grid.origin + idx * h
        ext = np.sum((node - x) ** 2, axis=1) > eps * eps
        dist = np.sum((node - q) ** 2, axis=1)
        flat = np.ravel_multi_index(idx.T, grid.shape)
        better = ext & (dist < bestd)
        best[better] = flat[better]
        bestd[better] = dist[better]
    ok = best >= 0
    q, wq, best = q[ok], wq[ok], best[ok]
    Kq = _frac_kernel_matrix(x, eps, z, q, alpha, c) * wq
    near_idx, inv = np.unique(best, return_inverse=True)
    Wn = np.zeros((len(z), len(near_idx)))
    np.add.at(Wn.T, inv, Kq.T)
    idx = np.concatenate([far_idx, near_idx])
    W = np.concatenate([Wf, Wn], axis=1)
    # fold duplicate indices (a near node may also be far-rule node)
    uidx, inv = np.unique(idx, return_inverse=True)
    Wu = np.zeros((len(z), len(uidx)))
    np.add.at(Wu.T, inv, W.T)
    return Wu, uidx


def weighted_ball_moment(alpha: float, d: int) -> float:
    """``int_{B(0,1)} (1 - |x|^2)^alpha dx``."""
    return float(np.pi ** (d / 2) * special.gamma(alpha + 1) / special.gamma(d / 2 + alpha + 1))


def _lune_inner(rho, phi, a, d):
    """Radial part of the lune integral along the ray at angle ``phi``.

    Polar coordinates about ``omega`` with ``phi`` measured from ``-omega``;
    along the ray ``1 - |y|^2 = (s_+ - s)(s - s_-)``.
    """
    c = np.cos(phi)
    disc = 1 - rho ** 2 * np.sin(phi) ** 2
    if disc <= 0:
        return 0.0
    sq = np.sqrt(disc)
    sp, sm = rho * c + sq, rho * c - sq
    if sp <= 1:
        return 0.0
    opts = dict(epsabs=1e-14, epsrel=1e-11, limit=200)
    if sm < 1:
        f = lambda s: ((s - sm) / (s + 1)) ** a * s ** (d - 1)
        return integrate.quad(f, 1, sp, weight="alg", wvar=(-a, a), **opts)[0]
    f = lambda s: ((s - 1) * (s + 1)) ** (-a) * s ** (d - 1)
    return integrate.quad(f, sm, sp, weight="alg", wvar=(a, a), **opts)[0]


def _lune_near(rho, a, d):
    if rho < np.sqrt(2):
        brk = [0.0, np.arccos(rho / 2)]
    else:
        end = np.arcsin(min(1.0, 1 / rho))
        brk = [0.0] + ([np.arccos(rho / 2)] if rho < 2 and np.arccos(rho / 2) < end else []) + [end]
    ang = (lambda p: 2.0) if d == 2 else (lambda p: 2 * np.pi * np.sin(p))
    tot = 0.0
    for lo, hi in zip(brk[:-1], brk[1:]):
        tot += integrate.quad(lambda p: ang(p) * _lune_inner(rho, p, a, d), lo, hi,
                              epsabs=1e-14, epsrel=1e-11, limit=200)[0]
    return tot


def _lune_far(rho, a, d, nt=40, nang=64):
    # y = t sigma over the whole unit ball (no cut once rho > 2)
    x, w = special.roots_jacobi(nt, a, 0.0)
    t = 0.5 * (x + 1)
    w = w / 2 ** (a + 1)
    if d == 2:
        psi = 2 * np.pi * np.arange(nang) / nang
        cosp, wp = np.cos(psi), np.full(nang, 2 * np.pi / nang)
    else:
        cosp, wp = np.polynomial.legendre.leggauss(nang)
        wp = 2 * np.pi * wp
    T, C = np.meshgrid(t, cosp, indexing="ij")
    val = (1 + T) ** a * (T * T - 2 * T * rho * C + rho * rho - 1) ** (-a) * T ** (d - 1)
    return float(np.sum(w[:, None] * wp[None, :] * val))


@lru_cache(maxsize=100_000)
def _lune_cached(rho, a, d):
    if rho >= 3:
        return _lune_far(rho, a, d)
    return _lune_near(rho, a, d)


def lune_integral(rho, alpha: float, d: int = 2):
    """``int_{B(0,1) minus B(w,1)} ((1-|y|^2)/(|y-w|^2-1))^alpha dy`` with ``|w| = rho``.

    Averaging the fractional kernels over ball centres reduces to this radial
    profile; it vanishes at ``rho = 0`` and decays like ``rho^(-2 alpha)``.
    """
    if not 0 < alpha < 1:
        raise ParameterError("alpha must lie in (0, 1)")
    if d not in (2, 3):
        raise ParameterError("lune integral implemented for d in {2, 3}")
    r = np.atleast_1d(np.asarray(rho, dtype=float))
    out = np.array([0.0 if v <= 0 else _lune_cached(float(v), float(alpha), d) for v in r])
    return float(out[0]) if np.ndim(rho) == 0 else out


def c_profile(r, alpha: float, d: int = 2):
    """Lune profile for offsets ``r`` in ``(0, 1)``; bounded by a multiple of ``r``."""
    rr = np.asarray(r, dtype=float)
    if np.any(rr >= 1) or np.any(rr < 0):
        raise ParameterError("offset must lie in [0, 1)")
    return lune_integral(r, alpha, d)
