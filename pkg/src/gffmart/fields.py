"""Random fields on grids, test functions and pairings."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, linalg

from .domain import DomainSpec, Grid, SpectralBasis, fractional_green_covariance, fractional_green_matrix, sphere_area
from .errors import DomainError, NumericalError, ParameterError
from .lattice import LatticeGFF, StencilCache

__all__ = [
    "Field",
    "TestFn",
    "gaussian_bump",
    "standard_bump",
    "mollifier",
    "product_sine",
    "collar_bump",
    "pair",
    "sample_gff",
    "sample_lattice_gff",
    "sample_fgf",
    "sample_white_noise",
    "sample_zero_boundary_field",
]

_MAGIC = b"GFFD"
_LAWS = ["gff", "lattice-gff", "fgf", "zero-boundary-ball", "she-state", "white-noise", "other"]


@dataclass
class Field:
    """Real values on the nodes of a grid; zero off the interior."""

    grid: Grid
    values: np.ndarray
    law: str = "other"
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("field values must be finite")

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.law, self.seed, dict(self.meta))

    def to_bytes(self) -> bytes:
        """Flat binary layout: magic, d, n, law tag, seed, row-major float64 payload."""
        law = self.law.split("(")[0]
        tag = _LAWS.index(law) if law in _LAWS else _LAWS.index("other")
        seed = -1 if self.seed is None else int(self.seed)
        head = _MAGIC + struct.pack("<iiiq", self.grid.d, self.grid.shape[0], tag, seed)
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, grid: Grid) -> "Field":
        if data[:4] != _MAGIC:
            raise ParameterError("not a field snapshot")
        d, n, tag, seed = struct.unpack("<iiiq", data[4:24])
        if d != grid.d or n != grid.shape[0]:
            raise ParameterError("snapshot does not match the grid")
        vals = np.frombuffer(data[24:], dtype="<f8").reshape(grid.shape)
        return cls(grid, vals.copy(), _LAWS[tag], None if seed < 0 else seed)

    def to_csv(self) -> str:
        pts = self.grid.points
        buf = io.StringIO()
        cols = ",".join(f"x{i + 1}" for i in range(self.grid.d))
        buf.write(f"{cols},value\n")
        np.savetxt(buf, np.column_stack([pts, self.values.ravel()]), delimiter=",", fmt="%.17g")
        return buf.getvalue()


class TestFn:
    """Smooth test function with an optional analytic Laplacian.

    ``support`` is ``(center, radius)`` when the function vanishes outside that
    ball (or is negligible there, for Gaussian bumps).
    """

    __test__ = False  # keep pytest from collecting the class

    def __init__(self, func: Callable, d: int, support=None, laplacian: Callable | None = None,
                 descriptor: dict | None = None, compact: bool = False):
        self.func = func
        self.d = d
        self.support = None if support is None else (np.asarray(support[0], float), float(support[1]))
        self.laplacian_fn = laplacian
        self.descriptor = descriptor or {}
        self.compact = compact

    def __call__(self, points):
        p = np.asarray(points, dtype=float)
        out = self.func(p.reshape(-1, self.d))
        return float(out[0]) if p.ndim == 1 else out

    def laplacian(self, points):
        if self.laplacian_fn is None:
            raise ParameterError("no analytic Laplacian for this test function")
        p = np.asarray(points, dtype=float)
        out = self.laplacian_fn(p.reshape(-1, self.d))
        return float(out[0]) if p.ndim == 1 else out

    def sample(self, grid: Grid) -> np.ndarray:
        return np.asarray(self.func(grid.points), dtype=float).reshape(grid.shape)

    def weighted(self, grid: Grid) -> np.ndarray:
        return self.sample(grid) * grid.weights

    def shifted(self, v) -> "TestFn":
        """``x -> f(x - v)``."""
        v = np.asarray(v, dtype=float)
        sup = None if self.support is None else (self.support[0] + v, self.support[1])
        lap = None if self.laplacian_fn is None else (lambda p, L=self.laplacian_fn: L(p - v))
        return TestFn(lambda p, F=self.func: F(p - v), self.d, sup, lap,
                      dict(self.descriptor, shift=v.tolist()), self.compact)

    def scaled(self, a: float) -> "TestFn":
        """``x -> a f(x)``."""
        lap = None if self.laplacian_fn is None else (lambda p, L=self.laplacian_fn: a * L(p))
        return TestFn(lambda p, F=self.func: a * F(p), self.d, self.support, lap,
                      dict(self.descriptor, scale=a), self.compact)

    def check_inside(self, spec: DomainSpec, margin: float = 0.0):
        if self.support is None:
            return
        c, r = self.support
        if spec.boundary_distance(c)[0] - r <= margin:
            raise DomainError("test function support leaves the admissible region")


def _sqdist(p, c):
    q = p - c
    return np.einsum("ij,ij->i", q, q)


def gaussian_bump(center, width: float, amplitude: float = 1.0) -> TestFn:
    """``A exp(-|x - c|^2 / (2 w^2))``; support radius taken as ``9 w``."""
    c = np.asarray(center, dtype=float)
    d = c.size
    w2 = width * width

    def f(p):
        return amplitude * np.exp(-_sqdist(p, c) / (2 * w2))

    def lap(p):
        r2 = _sqdist(p, c)
        return f(p) * (r2 / w2 ** 2 - d / w2)

    return TestFn(f, d, (c, 9 * width), lap,
                  {"kind": "gaussian-bump", "center": c.tolist(), "width": width, "amplitude": amplitude})


def _bump_profile(r2):
    out = np.zeros_like(r2)
    m = r2 < 1
    out[m] = np.exp(-1.0 / (1.0 - r2[m]))
    return out


@lru_cache(maxsize=8)
def _bump_mass(d: int) -> float:
    """``int_{B(0,1)} exp(-1/(1-|u|^2)) du``."""
    f = lambda r: np.exp(-1.0 / (1.0 - r * r)) * r ** (d - 1)
    return sphere_area(d) * integrate.quad(f, 0, 1, epsabs=0, epsrel=1e-13)[0]


def standard_bump(center, radius: float, amplitude: float = 1.0) -> TestFn:
    """``A exp(-1/(1 - |x-c|^2/R^2))`` on ``B(c, R)``, zero outside."""
    c = np.asarray(center, dtype=float)
    d = c.size
    R2 = radius * radius

    def f(p):
        return amplitude * _bump_profile(_sqdist(p, c) / R2)

    def lap(p):
        r2 = _sqdist(p, c) / R2
        out = np.zeros_like(r2)
        m = r2 < 1
        s = 1 - r2[m]
        phi = np.exp(-1 / s)
        out[m] = phi * (-2 * d / s ** 2 + 4 * r2[m] / s ** 4 - 8 * r2[m] / s ** 3)
        return amplitude * out / R2

    return TestFn(f, d, (c, radius), lap,
                  {"kind": "standard-bump", "center": c.tolist(), "radius": radius,
                   "amplitude": amplitude}, compact=True)


def mollifier(x, eps: float, grid: Grid | None = None) -> TestFn:
    """Unit-mass standard bump of radius ``eps`` at ``x``.

    With a grid the mass is renormalised so that the grid quadrature gives 1.
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    amp = 1.0 / (_bump_mass(d) * eps ** d)
    f = standard_bump(x, eps, amp)
    if grid is not None:
        q = grid.integrate(f.sample(grid))
        if q <= 0:
            raise ParameterError("mollifier not resolved by the grid")
        f = standard_bump(x, eps, amp / q)
    f.descriptor["kind"] = "mollifier"
    return f


def product_sine(spec: DomainSpec, mode) -> TestFn:
    """Normalised Dirichlet eigenfunction of a rectangle."""
    if spec.kind != "rectangle":
        raise ParameterError("product sines need a rectangle")
    k = np.asarray(mode, dtype=int)
    L = np.asarray(spec.extent)
    mu = float(np.pi ** 2 * np.sum(k ** 2 / L ** 2))

    def f(p):
        return np.prod(np.sqrt(2 / L) * np.sin(np.pi * k * p / L), axis=1)

    return TestFn(f, spec.d, None, lambda p: -mu * f(p),
                  {"kind": "product-sine", "mode": k.tolist(), "eigenvalue": mu})


def collar_bump(spec: DomainSpec, r: float, grid: Grid | None = None) -> TestFn:
    """Function of the boundary distance: a bump centred at distance ``r`` with half-width ``r/2``.

    Unit mass (grid quadrature when a grid is given).
    """
    lo, hi = 0.5 * r, 1.5 * r
    inr = spec.extent[0] if spec.kind == "ball" else min(spec.extent) / 2
    if hi >= inr:
        raise DomainError("collar bump leaves the domain")

    def prof(p):
        t = spec.boundary_distance(p)
        u = (t - r) / (0.5 * r)
        return _bump_profile(u * u)

    if grid is not None:
        mass = grid.integrate(prof(grid.points).reshape(grid.shape))
    else:
        pts = np.asarray(spec.sample_interior(np.random.default_rng(0), 200_000))
        mass = spec.volume * prof(pts).mean()
    if mass <= 0:
        raise ParameterError("collar bump not resolved by the grid")
    return TestFn(lambda p: prof(p) / mass, spec.d, None, None,
                  {"kind": "collar-bump", "distance": r, "width": 0.5 * r})


def pair(h, f) -> float | np.ndarray:
    """Quadrature pairing ``(h, f)``; ``f`` a TestFn, grid array or scalar 0.

    ``h`` may be a Field or an array of stacked field values.
    """
    if isinstance(h, Field):
        grid, vals = h.grid, h.values
    else:
        grid, vals = h[0], np.asarray(h[1])
    if isinstance(f, TestFn):
        fw = f.weighted(grid)
    elif np.isscalar(f):
        fw = np.full(grid.shape, float(f)) * grid.weights
    else:
        fw = np.asarray(f, dtype=float).reshape(grid.shape) * grid.weights
    axes = tuple(range(vals.ndim - grid.d, vals.ndim))
    out = np.tensordot(vals, fw, axes=(axes, tuple(range(grid.d))))
    return float(out) if np.ndim(out) == 0 else out


def _seed_of(rng):
    seq = getattr(getattr(rng, "bit_generator", None), "seed_seq", None)
    ent = getattr(seq, "entropy", None)
    return int(ent) if isinstance(ent, (int, np.integer)) and ent < 2 ** 63 else None


def sample_gff(basis: SpectralBasis, rng, size: int | None = None, chunk: int = 512):
    """Truncated spectral GFF ``sum_n xi_n f_n / sqrt(mu_n)``.

    Returns a Field, or an array of shape ``(size, *grid.shape)`` when ``size`` is given.
    """
    grid = basis.grid
    scale = 1.0 / np.sqrt(basis.eigenvalues)
    if size is None:
        xi = rng.standard_normal(basis.cutoff)
        vals = (xi * scale) @ basis.values
        return Field(grid, vals, "gff", _seed_of(rng), {"cutoff": basis.cutoff})
    out = np.empty((size, grid.size))
    for s in range(0, size, chunk):
        k = min(chunk, size - s)
        out[s:s + k] = (rng.standard_normal((k, basis.cutoff)) * scale) @ basis.values
    return out.reshape((size,) + grid.shape)


_LATTICES: dict = {}


def lattice_gff(grid: Grid) -> LatticeGFF:
    """Shared lattice sampler for a grid."""
    lat = _LATTICES.get(id(grid))
    if lat is None or lat.grid is not grid:
        lat = LatticeGFF(grid)
        _LATTICES[id(grid)] = lat
    return lat


def sample_lattice_gff(grid: Grid, rng, size: int | None = None):
    """Exact lattice GFF (precision ``h^(d-2)`` times the graph Laplacian)."""
    lat = lattice_gff(grid)
    if size is None:
        return Field(grid, lat.sample(rng, 1)[0], "lattice-gff", _seed_of(rng))
    return lat.sample(rng, size)


def sample_white_noise(grid: Grid, rng, size: int | None = None):
    """Discrete white noise: node values ``xi / sqrt(w)`` so that ``Var (h, g) = ||g||^2``."""
    w = grid.weights
    shape = grid.shape if size is None else (size,) + grid.shape
    vals = np.zeros(shape)
    m = grid.interior & (w > 0)
    noise = rng.standard_normal(shape)
    vals[..., m] = noise[..., m] / np.sqrt(w[m])
    if size is None:
        return Field(grid, vals, "white-noise", _seed_of(rng))
    return vals


_FGF_CACHE: dict = {}


def _jittered_cholesky(C: np.ndarray) -> np.ndarray:
    n = len(C)
    jitter = 1e-10 * np.trace(C) / n
    try:
        return linalg.cholesky(C + jitter * np.eye(n), lower=True)
    except linalg.LinAlgError:
        ev = np.linalg.eigvalsh(C).min()
        raise NumericalError(f"covariance not positive definite after jitter; smallest eigenvalue {ev:.3e}")


def sample_fgf(grid: Grid, alpha: float, rng, size: int | None = None):
    """Fractional Gaussian field on a ball grid by Cholesky of the Green matrix."""
    key = (id(grid), float(alpha))
    L = _FGF_CACHE.get(key)
    if L is None:
        L = _jittered_cholesky(fractional_green_matrix(grid, alpha))
        _FGF_CACHE[key] = L
    mask = grid.interior.ravel()
    n = 1 if size is None else size
    z = rng.standard_normal((n, L.shape[0]))
    vals = np.zeros((n, grid.size))
    vals[:, mask] = z @ L.T
    vals = vals.reshape((n,) + grid.shape)
    if size is None:
        return Field(grid, vals[0], f"fgf({alpha})", _seed_of(rng))
    return vals


_STENCIL_CACHES: dict = {}
_FRAC_STENCIL_CACHE: dict = {}


def stencil_cache(grid: Grid) -> StencilCache:
    cache = _STENCIL_CACHES.get(id(grid))
    if cache is None or cache.grid is not grid:
        cache = StencilCache(grid)
        _STENCIL_CACHES[id(grid)] = cache
    return cache


def frac_stencil(grid: Grid, center, eps: float, alpha: float):
    """Nodes of a ball stencil and the Cholesky factor of its fractional covariance."""
    cache = stencil_cache(grid)
    idx = cache.locate(center, eps)
    flat = np.ravel_multi_index(idx.T, grid.shape)
    rel = np.round((np.asarray(center) - grid.origin) / grid.h - idx.min(axis=0), 12)
    key = (id(grid), float(alpha), float(eps), idx.shape[0], (idx - idx.min(axis=0)).tobytes(), rel.tobytes())
    L = _FRAC_STENCIL_CACHE.get(key)
    if L is None:
        pts = grid.origin + idx * grid.h
        C = fractional_green_covariance(pts, alpha, grid.h, eps, center)
        L = _jittered_cholesky(C)
        if len(_FRAC_STENCIL_CACHE) > 4096:
            _FRAC_STENCIL_CACHE.clear()
        _FRAC_STENCIL_CACHE[key] = L
    return flat, L


def sample_zero_boundary_field(grid: Grid, center, eps: float, alpha: float, rng) -> Field:
    """Centred field on the ball stencil with zero exterior data.

    ``alpha = 1`` uses the discrete ball Green function (lattice Dirichlet
    problem); ``alpha < 1`` the continuum fractional ball Green function at
    the nodes.
    """
    vals = np.zeros(grid.size)
    if alpha == 1:
        st = stencil_cache(grid).get(center, eps)
        vals[st.nodes] = st.sample(rng)
    elif 0 < alpha < 1:
        flat, L = frac_stencil(grid, center, eps, alpha)
        vals[flat] = L @ rng.standard_normal(len(flat))
    else:
        raise ParameterError("alpha must be 1 or lie in (0, 1)")
    return Field(grid, vals, "zero-boundary-ball", _seed_of(rng),
                 {"center": list(map(float, center)), "eps": eps, "alpha": alpha})
