import numpy as np
import pytest
from scipy import sparse

from gffmart.domain import DomainSpec, build_grid
from gffmart.fields import gaussian_bump, lattice_gff, standard_bump, stencil_cache
from gffmart.lattice import LatticeGFF

from conftest import mc_close


def _precision(grid):
    # independent oracle: h^(d-2) times the Dirichlet graph Laplacian on interior nodes
    m = grid.shape[0] - 2
    T = sparse.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1])
    I = sparse.identity(m)
    L = sparse.kron(T, I) + sparse.kron(I, T)
    return grid.h ** (grid.d - 2) * L.toarray()


@pytest.fixture(scope="module")
def small():
    return build_grid(DomainSpec.unit_square(), 17)


def test_lattice_covariance_matches_dense_inverse(small):
    fs = [standard_bump((0.5, 0.5), 0.3), gaussian_bump((0.4, 0.6), 0.05)]
    F = np.stack([f.sample(small) for f in fs])
    inner = F[:, 1:-1, 1:-1].reshape(2, -1) * small.h ** 2
    oracle = inner @ np.linalg.solve(_precision(small), inner.T)
    assert np.allclose(lattice_gff(small).covariance(F), oracle, rtol=1e-10, atol=1e-14)


def test_lattice_sampler_covariance(small):
    lat = LatticeGFF(small)
    h = lat.sample(np.random.default_rng(2), 20000)
    inner = h[:, 1:-1, 1:-1].reshape(len(h), -1)
    emp = np.cov(inner[:, :5].T)
    oracle = np.linalg.inv(_precision(small))[:5, :5]
    se = np.sqrt((oracle ** 2 + np.outer(np.diag(oracle), np.diag(oracle))) / len(h))
    assert np.all(np.abs(emp - oracle) <= 4 * se)


def test_lattice_boundary_is_zero(small):
    h = LatticeGFF(small).sample(np.random.default_rng(0), 3)
    assert np.all(h[:, 0, :] == 0) and np.all(h[:, -1, :] == 0)
    assert np.all(h[:, :, 0] == 0) and np.all(h[:, :, -1] == 0)


def test_stencil_harmonic_extension_is_discrete_harmonic(grid64):
    st = stencil_cache(grid64).get((0.5, 0.5), 0.12)
    rng = np.random.default_rng(1)
    vals = rng.standard_normal(grid64.size)
    ext = vals.copy()
    ext[st.nodes] = st.harmonic(vals)
    n = grid64.shape[0]
    u = ext.reshape(n, n)
    for flat in st.nodes:
        i, j = divmod(int(flat), n)
        lap = u[i + 1, j] + u[i - 1, j] + u[i, j + 1] + u[i, j - 1] - 4 * u[i, j]
        assert abs(lap) <= 1e-10


def test_stencil_variance_matches_samples(grid64):
    st = stencil_cache(grid64).get((0.43, 0.57), 0.1)
    fw = np.random.default_rng(0).random(len(st.nodes))
    rng = np.random.default_rng(5)
    x = np.array([fw @ st.sample(rng) for _ in range(5000)])
    v = st.variance(fw)[0]
    assert mc_close(x.var(ddof=1), v, v * np.sqrt(2 / 4999))


def test_lattice_gff_is_stationary_under_ball_resampling(grid64):
    # resampling a ball keeps the exact lattice covariance of an observable
    lat = lattice_gff(grid64)
    f = standard_bump((0.5, 0.5), 0.2)
    fv = f.sample(grid64)
    fw = f.weighted(grid64).ravel()
    st = stencil_cache(grid64).get((0.52, 0.48), 0.15)
    rng = np.random.default_rng(11)
    h = lat.sample(rng, 4000).reshape(4000, -1)
    for k in range(len(h)):
        h[k, st.nodes] = st.harmonic(h[k]) + st.sample(rng)
    x = h @ fw
    target = float(lat.covariance(fv)[0, 0])
    assert mc_close(x.var(ddof=1), target, target * np.sqrt(2 / 3999))
