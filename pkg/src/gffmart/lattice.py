"""Lattice Gaussian free field and cached ball-stencil factorizations.

The lattice field on a rectangle grid has precision ``h^(d-2) (2d I - A)`` on
interior nodes, ``A`` the nearest-neighbour adjacency. Restricted to a ball
stencil ``S`` the conditional law given the rest of the field is Gaussian with
mean the discrete harmonic extension and covariance ``h^(2-d) M^-1``,
``M = 2d I - A_SS``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft, linalg

from .domain import Grid
from .errors import DomainError, NumericalError, ParameterError

__all__ = ["LatticeGFF", "Stencil", "StencilCache"]


class LatticeGFF:
    """Exact sampler and covariance oracle for the lattice GFF on a rectangle grid."""

    def __init__(self, grid: Grid):
        if grid.spec.kind != "rectangle":
            raise ParameterError("lattice sampler needs a rectangle grid")
        self.grid = grid
        inner = tuple(n - 2 for n in grid.shape)
        lam = np.zeros(inner)
        for i, m in enumerate(inner):
            k = np.arange(1, m + 1)
            shape = [1] * grid.d
            shape[i] = m
            lam = lam + (4 * np.sin(k * np.pi / (2 * (m + 1))) ** 2).reshape(shape)
        self.inner_shape = inner
        self.lam = lam
        self._axes = tuple(range(1, grid.d + 1))

    def _embed(self, inner_vals: np.ndarray) -> np.ndarray:
        out = np.zeros(inner_vals.shape[:1] + self.grid.shape)
        out[(slice(None),) + (slice(1, -1),) * self.grid.d] = inner_vals
        return out

    def sample(self, rng, size: int = 1) -> np.ndarray:
        """``size`` independent fields, shape ``(size, *grid.shape)``."""
        d, h = self.grid.d, self.grid.h
        xi = rng.standard_normal((size,) + self.inner_shape)
        vals = fft.dstn(xi / np.sqrt(self.lam), type=1, axes=self._axes, norm="ortho")
        return self._embed(vals * h ** ((2 - d) / 2))

    def _spectral(self, fvals) -> np.ndarray:
        f = np.asarray(fvals, dtype=float).reshape((-1,) + self.grid.shape)
        inner = f[(slice(None),) + (slice(1, -1),) * self.grid.d]
        return fft.dstn(inner, type=1, axes=self._axes, norm="ortho")

    def covariance(self, f, g=None) -> np.ndarray:
        """Exact ``Cov((h, f_i), (h, g_j))`` for grid-sampled test functions.

        Pairings use the interior weights ``h^d``.
        """
        d, h = self.grid.d, self.grid.h
        F = self._spectral(f).reshape(np.shape(f)[0] if np.ndim(f) > d else 1, -1)
        G = F if g is None else self._spectral(g).reshape(np.shape(g)[0] if np.ndim(g) > d else 1, -1)
        return h ** (d + 2) * (F / self.lam.ravel()) @ G.T

    def pairing_sampler(self, fvals):
        """Coefficients ``a`` with ``(h, f_i) = sum_k a_ik xi_k`` for iid normals ``xi``."""
        d, h = self.grid.d, self.grid.h
        F = self._spectral(fvals).reshape(-1, self.lam.size)
        return h ** ((d + 2) / 2) * F / np.sqrt(self.lam.ravel())


@dataclass(frozen=True)
class Stencil:
    """Interior nodes of a ball on the grid with its Dirichlet factorization."""

    nodes: np.ndarray        # flat indices of S
    exterior: np.ndarray     # flat indices of neighbours of S outside S
    extension: np.ndarray    # M^-1 B, maps exterior values to the harmonic extension on S
    chol: np.ndarray         # lower Cholesky factor of M
    h: float
    d: int

    def harmonic(self, values_flat: np.ndarray) -> np.ndarray:
        return self.extension @ values_flat[self.exterior]

    def sample(self, rng) -> np.ndarray:
        z = rng.standard_normal(len(self.nodes))
        return self.h ** ((2 - self.d) / 2) * linalg.solve_triangular(
            self.chol, z, lower=True, trans="T", check_finite=False)

    def variance(self, fw: np.ndarray) -> np.ndarray:
        """Variance of ``(h_tilde, f)`` for weighted samples ``fw = w * f`` on S."""
        y = linalg.solve_triangular(self.chol, np.atleast_2d(fw).T, lower=True, check_finite=False)
        return self.h ** (2 - self.d) * np.sum(y * y, axis=0)


class StencilCache:
    """Builds and memoises stencils by shape; safe to share read-only after warm-up."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self._cache: dict = {}
        self._shape = np.asarray(grid.shape)
        self._strides = np.array([int(np.prod(grid.shape[i + 1:])) for i in range(grid.d)])
        self._interior = grid.interior.ravel()
        d = grid.d
        self._nbr = np.concatenate([np.eye(d, dtype=int), -np.eye(d, dtype=int)])

    def __len__(self):
        return len(self._cache)

    def locate(self, center, eps: float):
        """Integer multi-indices of interior nodes strictly within ``eps`` of ``center``."""
        g = self.grid
        c = np.asarray(center, dtype=float)
        lo = np.maximum(np.ceil((c - eps - g.origin) / g.h - 1e-12).astype(int), 0)
        hi = np.minimum(np.floor((c + eps - g.origin) / g.h + 1e-12).astype(int), self._shape - 1)
        if np.any(hi < lo):
            raise DomainError("ball contains no grid node")
        rngs = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        idx = np.stack([m.ravel() for m in np.meshgrid(*rngs, indexing="ij")], axis=1)
        pos = g.origin + idx * g.h
        inside = np.sum((pos - c) ** 2, axis=1) < eps * eps
        idx = idx[inside]
        flat = idx @ self._strides
        keep = self._interior[flat]
        idx = idx[keep]
        if len(idx) == 0:
            raise DomainError("ball contains no interior grid node")
        return idx

    def get(self, center, eps: float) -> Stencil:
        idx = self.locate(center, eps)
        base = idx.min(axis=0)
        off = idx - base
        key = (off.shape[0], off.tobytes())
        proto = self._cache.get(key)
        if proto is None:
            proto = self._build(off)
            self._cache[key] = proto
        shift = int(base @ self._strides)
        return Stencil(proto[0] + shift, proto[1] + shift, proto[2], proto[3], self.grid.h, self.grid.d)

    def _build(self, off: np.ndarray):
        d = self.grid.d
        m = len(off)
        flat = off @ self._strides
        pos = {int(f): i for i, f in enumerate(flat)}
        M = np.zeros((m, m))
        M[np.diag_indices(m)] = 2 * d
        ext_pos: dict[int, int] = {}
        rows, cols = [], []
        for i, o in enumerate(off):
            for step in self._nbr:
                nf = int((o + step) @ self._strides)
                j = pos.get(nf)
                if j is not None:
                    M[i, j] = -1.0
                else:
                    k = ext_pos.setdefault(nf, len(ext_pos))
                    rows.append(i)
                    cols.append(k)
        B = np.zeros((m, len(ext_pos)))
        np.add.at(B, (rows, cols), 1.0)
        try:
            L = linalg.cholesky(M, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"stencil matrix not positive definite: {exc}") from exc
        H = linalg.cho_solve((L, True), B)
        ext = np.fromiter(ext_pos.keys(), dtype=int, count=len(ext_pos))
        return flat.astype(int), ext, H, L
