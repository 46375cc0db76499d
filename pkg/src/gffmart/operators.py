"""Ball-averaged approximate Laplacians, the Riesz fractional Laplacian and constant calibration.

For smooth data the classical operator reduces to a radial kernel:
averaging the Poisson kernel of ``B(x, eps)`` over centres ``x`` in
``B(z, eps)`` gives

    int (g(z + w) - g(z)) k(|w|) dw,
    k(r) = eps^(d-2) r^(1-d) / A_d * int_S (2 eps s_1 - r)_+ ds,

supported on ``|w| < 2 eps``. The fractional operator reduces in the same way
to the lune profile of ``kernels.lune_integral``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .domain import DomainSpec, Grid, ball_volume, green_ball_integral, sphere_area
from .errors import CalibrationError, DomainError, ParameterError
from .fields import Field, TestFn, gaussian_bump, standard_bump, stencil_cache
from .kernels import (Ball, frac_kernel_constant, frac_poisson_extension, harmonic_extension,
                      lune_integral, sphere_rule, weighted_ball_moment)

__all__ = [
    "OperatorConfig",
    "analytic_constant",
    "green_exchange_constant",
    "delta_eps",
    "delta_eps_weak",
    "drift_functional",
    "riesz_laplacian",
    "delta_eps_frac",
    "calibrate_constant",
]


def analytic_constant(spec: DomainSpec, alpha: float = 1.0) -> float:
    """Clock constant making the ball average exact on quadratics (``alpha = 1``).

    For ``alpha < 1`` the constant normalising the fractional operator so that
    it converges to the unnormalised Riesz integral.
    """
    d = spec.d
    if alpha == 1:
        return d * (d + 2) * spec.volume / ball_volume(d)
    return ball_volume(d) / (frac_kernel_constant(d, float(alpha)) * weighted_ball_moment(alpha, d))


def green_exchange_constant(spec: DomainSpec, literal: bool = False) -> float:
    """Clock constant from the Green-function exchange argument.

    Taking ``Delta_eps g ~ tau V_d eps^d (int_B G) Delta g / |D|`` and solving
    for ``tau`` with the ball Green integral of this package (``-Delta``
    convention, ``eps^2 / (2d)``) gives ``2d |D| / V_d``. With ``literal=True``
    the exit-time value ``eps^2 / d`` is used instead, giving ``d |D| / V_d``.
    """
    d = spec.d
    green_int = green_ball_integral(1.0, d)
    if literal:
        green_int = 1.0 / d
    return spec.volume / (ball_volume(d) * green_int)


@dataclass
class OperatorConfig:
    """Radius, clock constant and centre-integration rule.

    ``rule`` is ``"exact"`` (deterministic quadrature) or ``"monte-carlo"``
    with ``n_centers`` seeded centres.
    """

    eps: float
    spec: DomainSpec = field(default_factory=DomainSpec.unit_square)
    C: float | None = None
    alpha: float = 1.0
    rule: str = "exact"
    n_centers: int = 256
    seed: int = 0
    n_ang: int = 64
    n_rad: int = 48

    def __post_init__(self):
        if self.eps <= 0:
            raise ParameterError("eps must be positive")
        if self.C is not None and self.C <= 0:
            raise ParameterError("clock constant must be positive")
        if self.rule not in ("exact", "monte-carlo"):
            raise ParameterError(f"unknown centre rule {self.rule!r}")
        if self.rule == "monte-carlo" and self.n_centers < 16:
            raise ParameterError("need at least 16 Monte Carlo centres")
        if not (self.alpha == 1 or 0 < self.alpha < 1):
            raise ParameterError("alpha must be 1 or lie in (0, 1)")

    @property
    def constant(self) -> float:
        return analytic_constant(self.spec, self.alpha) if self.C is None else float(self.C)

    @property
    def tau(self) -> float:
        d = self.spec.d
        expo = (2 + d) if self.alpha == 1 else (2 * self.alpha + d)
        return self.constant * self.eps ** (-expo)


def _check_point(spec: DomainSpec, z, eps):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if np.any(spec.boundary_distance(z) <= 2 * eps):
        raise DomainError("point too close to the boundary (need distance > 2 eps)")
    return z


def _radial_kernel_rule(eps: float, d: int, n: int):
    """Nodes ``r`` and weights for ``int_0^{2 eps} k(r) r^(d-1) (.) dr``."""
    t, w = np.polynomial.legendre.leggauss(n)
    if d == 2:
        # r = 2 eps cos(theta) makes the integrand smooth
        th = 0.25 * np.pi * (t + 1)
        r = 2 * eps * np.cos(th)
        kr = (2 * eps * np.sin(th) - r * th) / np.pi
        return r, 0.25 * np.pi * w * kr * 2 * eps * np.sin(th)
    r = eps * (t + 1)
    if d == 3:
        kr = (2 * eps - r) ** 2 / 8
    elif d == 1:
        kr = (2 * eps - r) / (2 * eps)
    else:
        raise ParameterError("only d in {1, 2, 3} is supported")
    return r, eps * w * kr


def _angular(d, n_ang):
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.ones(2)
    return sphere_rule(d, n_ang if d == 2 else max(8, n_ang // 4))


def _sphere_means(g, z, r, u, wu):
    """``m(r) = int_S (g(z + r s) - g(z)) ds`` for each point and radius."""
    z = np.atleast_2d(z)
    d = z.shape[1]
    g0 = np.asarray(g(z), dtype=float)
    out = -g0[:, None] * wu.sum() * np.ones(len(r))
    live = np.arange(len(z))
    if getattr(g, "compact", False) and g.support is not None:
        # spheres that miss a compact support see exact zeros
        c, rad = g.support
        live = live[np.linalg.norm(z - c, axis=1) < rad + r.max()]
    offsets = (r[:, None, None] * u[None, :, :]).reshape(-1, d)
    block = max(1, 2 ** 18 // len(offsets))
    for s in range(0, len(live), block):
        idx = live[s:s + block]
        pts = (z[idx][:, None, :] + offsets[None]).reshape(-1, d)
        vals = np.asarray(g(pts), dtype=float).reshape(len(idx), len(r), len(u))
        out[idx] += vals @ wu
    return out


def delta_eps(g, z, cfg: OperatorConfig, rng=None):
    """Ball-averaged Laplacian at ``z`` (scalar or array of points).

    Smooth test functions use the radial kernel (``rule="exact"``) or Monte
    Carlo centres with Poisson-kernel extensions. Fields use discrete
    harmonic extensions on the stencils of the centres.
    """
    spec, eps = cfg.spec, cfg.eps
    zz = _check_point(spec, z, eps)
    pref = cfg.tau / spec.volume
    if isinstance(g, Field):
        out = _delta_eps_field(g, zz, cfg, rng)
    elif cfg.rule == "exact":
        r, wr = _radial_kernel_rule(eps, spec.d, cfg.n_rad)
        u, wu = _angular(spec.d, cfg.n_ang)
        out = pref * (_sphere_means(g, zz, r, u, wu) @ wr)
    else:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        out = np.empty(len(zz))
        vol = ball_volume(spec.d) * eps ** spec.d
        for i, zi in enumerate(zz):
            xs = zi + DomainSpec.ball(eps, spec.d).sample_interior(rng, cfg.n_centers)
            vals = np.empty(cfg.n_centers)
            g0 = g(zi)
            for k, x in enumerate(xs):
                rho = np.linalg.norm(zi - x) / eps
                m = int(np.clip(np.log(1e-13) / np.log(max(rho, 1e-3)), 64, 8192))
                m += m % 2
                n = m if spec.d == 2 else max(24, int(np.sqrt(m)))
                vals[k] = harmonic_extension(Ball(tuple(x), eps), g, zi, n=n)
            out[i] = pref * vol * np.mean(vals - g0)
    return float(out[0]) if np.ndim(z) == 1 else out


def _center_lattice(region_lo, region_hi, spacing):
    axes = [np.arange(lo + spacing / 2, hi, spacing) for lo, hi in zip(region_lo, region_hi)]
    return np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)


def _delta_eps_field(h: Field, zz, cfg, rng):
    grid = h.grid
    eps, d = cfg.eps, grid.d
    cache = stencil_cache(grid)
    flat = h.values.ravel()
    pref = cfg.tau / grid.spec.volume
    vol = ball_volume(d) * eps ** d
    out = np.empty(len(zz))
    for i, zi in enumerate(zz):
        node = np.asarray(grid.nearest_index(zi))
        zf = int(np.ravel_multi_index(node, grid.shape))
        zpos = grid.origin + node * grid.h
        if cfg.rule == "exact":
            xs = _center_lattice(zpos - eps, zpos + eps, grid.h / 2)
            xs = xs[np.sum((xs - zpos) ** 2, axis=1) < eps * eps]
        else:
            rng = rng if rng is not None else np.random.default_rng(cfg.seed)
            xs = zpos + DomainSpec.ball(eps, d).sample_interior(rng, cfg.n_centers)
        acc = 0.0
        for x in xs:
            st = cache.get(x, eps)
            k = np.nonzero(st.nodes == zf)[0]
            if len(k):
                acc += st.harmonic(flat)[k[0]] - flat[zf]
        out[i] = pref * vol * acc / len(xs)
    return out


def drift_functional(grid: Grid, fw: np.ndarray, eps: float, rate: float, centers: np.ndarray,
                     center_weights: np.ndarray | None = None) -> np.ndarray:
    """Linear functional ``W`` with ``<W, h> = rate * sum_c q_c (phi_c - h, f)``.

    ``fw`` (one row per test function) holds the quadrature-weighted samples
    ``w * f``; ``phi_c`` is the discrete harmonic extension of ``h`` into the
    stencil of centre ``c`` and ``q_c`` the centre weights (default uniform
    ``1/len(centers)``).
    """
    cache = stencil_cache(grid)
    fw = np.asarray(fw, dtype=float)
    single = fw.size == grid.size
    fw = fw.reshape(-1, grid.size)
    q = np.full(len(centers), 1.0 / len(centers)) if center_weights is None else center_weights
    W = np.zeros_like(fw)
    for c, qc in zip(centers, q):
        st = cache.get(c, eps)
        fs = fw[:, st.nodes]
        if not np.any(fs):
            continue
        np.add.at(W.T, st.exterior, qc * (st.extension.T @ fs.T))
        W[:, st.nodes] -= qc * fs
    W *= rate
    return W[0] if single else W


def _weak_centers(grid, eps, rule, n_centers, rng, support=None):
    """Centres covering the whole domain and their weights ``dx / |D|``."""
    spec = grid.spec
    if rule == "exact":
        if spec.kind == "rectangle":
            lo, hi = np.zeros(spec.d), np.asarray(spec.extent)
        else:
            R = spec.extent[0]
            lo, hi = np.full(spec.d, -R), np.full(spec.d, R)
        sp = grid.h / 2
        if support is not None:
            c, r = support
            lo = np.maximum(lo, c - r - eps - sp)
            hi = np.minimum(hi, c + r + eps + sp)
            lo = lo - np.mod(lo, sp) if spec.kind == "rectangle" else lo
        xs = _center_lattice(lo, hi, sp)
        xs = xs[spec.contains(xs)]
        return xs, np.full(len(xs), sp ** spec.d / spec.volume)
    xs = spec.sample_interior(rng, n_centers)
    return xs, np.full(len(xs), 1.0 / n_centers)


def delta_eps_weak(g, f: TestFn, cfg: OperatorConfig, grid: Grid | None = None, rng=None) -> float:
    """``(Delta_eps g, f)``.

    For smooth ``g`` the pointwise kernel value is integrated against ``f``
    with the grid rule; for a Field the centre integral is carried by a
    precomputed drift functional.
    """
    spec, eps = cfg.spec, cfg.eps
    for fn in (g, f):
        if isinstance(fn, TestFn) and fn.support is not None:
            fn.check_inside(spec, margin=2 * eps)
    if isinstance(g, Field):
        grid = g.grid
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        xs, q = _weak_centers(grid, eps, cfg.rule, cfg.n_centers, rng, f.support)
        W = drift_functional(grid, f.weighted(grid), eps, cfg.tau, xs, q)
        return float(W @ g.values.ravel())
    if grid is None:
        n = int(np.ceil(min(spec.extent) / (eps / 8))) + 1 if spec.kind == "rectangle" else 129
        from .domain import build_grid
        grid = build_grid(spec, max(n, 129))
    pts = grid.points
    fv = np.asarray(f(pts), dtype=float)
    w = grid.weights.ravel()
    live = (np.abs(fv) > 0) & (w > 0) & (spec.boundary_distance(pts) > 2 * eps)
    vals = delta_eps(g, pts[live], cfg)
    return float(np.sum(w[live] * fv[live] * vals))


def _riesz_panels(lo, hi, scale, n):
    edges = [lo]
    while edges[-1] < hi * (1 - 1e-14):
        edges.append(min(hi, edges[-1] + min(max(edges[-1] * 0.5, scale / 4), scale)))
    edges = np.asarray(edges)
    t, w = np.polynomial.legendre.leggauss(n)
    a, b = edges[:-1, None], edges[1:, None]
    return (0.5 * (b - a) * t + 0.5 * (b + a)).ravel(), (0.5 * (b - a) * w).ravel()


def _reach(g, z):
    sup = getattr(g, "support", None)
    if sup is None:
        raise ParameterError("need a test function with known support")
    c, r = sup
    return np.linalg.norm(np.atleast_2d(z) - c, axis=1) + r, r


def riesz_laplacian(g: TestFn, z, alpha: float, delta: float | None = None, h: float | None = None,
                    n_ang: int = 128, n_inner: int = 24, n_panel: int = 16):
    """Principal-value integral ``int (g(z) - g(y)) |z - y|^(-d - 2 alpha) dy``.

    Unnormalised (no ``C(d, alpha)`` prefactor). Radii below ``delta``
    (default two grid spacings, or a sixteenth of the support radius) use
    Gauss-Jacobi nodes for ``r^(1-2 alpha)`` applied to the symmetric second
    difference; the far tail beyond the support is added in closed form.
    """
    if not 0 < alpha < 1:
        raise ParameterError("alpha must lie in (0, 1)")
    zz = np.atleast_2d(np.asarray(z, dtype=float))
    d = zz.shape[1]
    reach, rs = _reach(g, zz)
    if delta is None:
        delta = 2 * h if h is not None else rs / 16
    u, wu = _angular(d, n_ang)
    A = sphere_area(d)
    out = np.empty(len(zz))
    xj, wj = special.roots_jacobi(n_inner, 0.0, 1 - 2 * alpha)
    r_in = 0.5 * delta * (xj + 1)
    w_in = wj * (0.5 * delta) ** (2 - 2 * alpha)
    for i, zi in enumerate(zz):
        R = max(reach[i], 2 * delta)
        r_out, w_out = _riesz_panels(delta, R, rs / 4, n_panel)
        m_in = -_sphere_means(g, zi, r_in, u, wu)[0]
        m_out = -_sphere_means(g, zi, r_out, u, wu)[0]
        val = w_in @ (m_in / r_in ** 2) + w_out @ (m_out * r_out ** (-1 - 2 * alpha))
        val += A * float(g(zi)) * R ** (-2 * alpha) / (2 * alpha)
        out[i] = val
    return float(out[0]) if np.ndim(z) == 1 else out


_F_RULE_CACHE: dict = {}


def _lune_rule(alpha, d, n):
    """Nodes and ``F(rho)/rho``-weights on ``[0, 3]`` split at the lune breakpoints."""
    key = (float(alpha), d, n)
    hit = _F_RULE_CACHE.get(key)
    if hit is None:
        t, w = np.polynomial.legendre.leggauss(n)
        edges = [0.0, 1.0, np.sqrt(2.0), 2.0, 3.0]
        rho, wt = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            rho.append(0.5 * (b - a) * t + 0.5 * (b + a))
            wt.append(0.5 * (b - a) * w)
        rho = np.concatenate(rho)
        wt = np.concatenate(wt) * lune_integral(rho, alpha, d) / rho
        hit = (rho, wt)
        _F_RULE_CACHE[key] = hit
    return hit


def delta_eps_frac(g, z, cfg: OperatorConfig, rng=None, n_lune: int = 32):
    """Ball-averaged fractional Laplacian at ``z``.

    ``rule="exact"`` integrates the centre average in closed radial form via
    the lune profile; ``rule="monte-carlo"`` averages fractional Poisson
    extensions over random centres in ``B(z, eps)``.
    """
    alpha, eps, spec = cfg.alpha, cfg.eps, cfg.spec
    if not 0 < alpha < 1:
        raise ParameterError("fractional operator needs alpha in (0, 1)")
    zz = _check_point(spec, z, eps)
    d = spec.d
    I = weighted_ball_moment(alpha, d)
    ratio = cfg.constant / analytic_constant(spec, alpha)
    if isinstance(g, Field) or cfg.rule == "monte-carlo":
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        c = frac_kernel_constant(d, float(alpha))
        tau = cfg.tau
        out = np.empty(len(zz))
        for i, zi in enumerate(zz):
            xs = zi + DomainSpec.ball(eps, d).sample_interior(rng, cfg.n_centers)
            if isinstance(g, Field):
                flat = g.values.ravel()
                node = g.grid.nearest_index(zi)
                g0 = flat[np.ravel_multi_index(node, g.grid.shape)]
            else:
                g0 = float(g(zi))
            vals = np.array([frac_poisson_extension(Ball(tuple(x), eps), g, zi, alpha, c)
                             for x in xs])
            out[i] = tau * eps ** d * np.mean(g0 - vals)
        return float(out[0]) if np.ndim(z) == 1 else out
    u, wu = _angular(d, cfg.n_ang)
    reach, rs = _reach(g, zz)
    rho0, w0 = _lune_rule(alpha, d, n_lune)
    out = np.empty(len(zz))
    for i, zi in enumerate(zz):
        rhoR = max(reach[i] / eps, 3.0)
        r1, w1 = _riesz_panels(3.0, rhoR, rs / (4 * eps), 16)
        w1 = w1 * lune_integral(r1, alpha, d) / r1
        rho = np.concatenate([rho0, r1])
        w = np.concatenate([w0, w1])
        m = -_sphere_means(g, zi, eps * rho, u, wu)[0]
        val = w @ m
        # tail: rho = rhoR / v with weight v^(2 alpha - 1)
        xv, wv = special.roots_jacobi(24, 0.0, 2 * alpha - 1)
        v = 0.5 * (xv + 1)
        rt = rhoR / v
        phi = lune_integral(rt, alpha, d) * rt ** (2 * alpha)
        tail = rhoR ** (-2 * alpha) * 0.5 ** (2 * alpha) * (wv @ phi)
        val += sphere_area(d) * float(g(zi)) * tail
        out[i] = ratio * eps ** (-2 * alpha) * val / I
    return float(out[0]) if np.ndim(z) == 1 else out


def _default_battery(spec: DomainSpec, alpha: float) -> list:
    c = 0.5 * np.asarray(spec.extent, dtype=float) if spec.kind == "rectangle" else np.zeros(spec.d)
    shift = np.zeros(spec.d)
    shift[0] = 0.05 * min(spec.extent)
    r = min(spec.extent)
    if alpha == 1:
        return [gaussian_bump(c + k * shift, w * r) for k, w in ((0, 0.1), (1, 0.08), (-1, 0.12))]
    return [standard_bump(c + k * shift, s * r) for k, s in ((0, 0.25), (1, 0.2), (-1, 0.3))]


def calibrate_constant(d: int = 2, alpha: float = 1.0, mode: str = "analytic",
                       spec: DomainSpec | None = None, eps: float = 1 / 64,
                       battery: list | None = None, points=None, tol: float = 0.05):
    """Clock constant for the ball-averaged operator.

    ``analytic``: quadratic exactness (``alpha = 1``) or Riesz normalisation.
    ``green-exchange``: ``2d |D| / V_d`` (see ``green_exchange_constant``).
    ``empirical``: least-squares fit of
    ``Delta g = C * Delta_eps^{C=1} g`` over a battery of at least three
    bumps (three bumps near the domain centre by default); returns
    ``(C, residual)``.
    """
    spec = spec if spec is not None else (DomainSpec.unit_square() if d == 2 else DomainSpec.unit_cube(d))
    if spec.d != d:
        raise ParameterError("dimension does not match the domain")
    if mode == "analytic":
        return analytic_constant(spec, alpha)
    if mode == "green-exchange":
        if alpha != 1:
            raise ParameterError("the Green-exchange constant is defined for alpha = 1 only")
        return green_exchange_constant(spec)
    if mode != "empirical":
        raise ParameterError(f"unknown calibration mode {mode!r}")
    if battery is None:
        battery = _default_battery(spec, alpha)
    if len(battery) < 3:
        raise ParameterError("empirical calibration needs at least three test functions")
    cfg = OperatorConfig(eps, spec, C=1.0, alpha=alpha)
    a, b = [], []
    for g in battery:
        pts = np.atleast_2d(g.support[0]) if points is None else np.atleast_2d(points)
        if alpha == 1:
            a.append(np.atleast_1d(g.laplacian(pts)))
            b.append(np.atleast_1d(delta_eps(g, pts, cfg)))
        else:
            a.append(-np.atleast_1d(riesz_laplacian(g, pts, alpha)))
            b.append(-np.atleast_1d(delta_eps_frac(g, pts, cfg)))
    a, b = np.concatenate(a), np.concatenate(b)
    C = float(a @ b / (b @ b))
    resid = float(np.linalg.norm(a - C * b) / np.linalg.norm(a))
    if resid > tol:
        raise CalibrationError(f"empirical calibration residual {resid:.3%} exceeds {tol:.0%}")
    return C, resid
