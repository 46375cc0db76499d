import numpy as np
import pytest
from scipy import stats as sps

from gffmart.domain import DomainSpec, build_grid
from gffmart.dynamics import (DynamicsConfig, EventLog, inner_region, martingale_path, quadratic_variation_path,
                              qv_oracle, replica_rng, resample_ball, run_dynamics, run_replicas,
                              stratified_centers)
from gffmart.errors import BudgetExceeded, DomainError, ParameterError
from gffmart.fields import Field, sample_lattice_gff, standard_bump, stencil_cache

from conftest import mc_close


@pytest.fixture(scope="module")
def g32():
    return build_grid(DomainSpec.unit_square(), 32)


def _f():
    return standard_bump((0.5, 0.5), 0.3)


def test_inner_region_volume():
    lo, hi, vol = inner_region(DomainSpec.unit_square(), 0.1)
    assert np.allclose(lo, 0.2) and np.allclose(hi, 0.8)
    assert vol == pytest.approx(0.36)
    with pytest.raises(DomainError):
        inner_region(DomainSpec.unit_square(), 0.3)


def test_event_rate_is_thinned_clock():
    spec = DomainSpec.unit_square()
    cfg = DynamicsConfig(0.1, 1.0)
    assert cfg.tau(spec) == pytest.approx(8 / np.pi * 0.1 ** -4)
    assert cfg.event_rate(spec) == pytest.approx(cfg.tau(spec) * 0.36)


def test_zero_horizon_has_only_initial_state(g32, rng):
    h0 = sample_lattice_gff(g32, rng)
    log = run_dynamics(h0, DynamicsConfig(0.1, 0.0, observables=(_f(),)))
    assert log.n_events == 0
    assert np.array_equal(log.final.values, h0.values)
    t, M = martingale_path(log, 0, [0.0])
    assert M[0] == pytest.approx(log.initial[0])


def test_event_counts_and_interarrivals(g32):
    spec = g32.spec
    cfg = DynamicsConfig(0.1, 0.0, drift_rule="none")
    rate = cfg.event_rate(spec)
    T = 5 / rate
    counts = []
    h0 = Field(g32, np.zeros(g32.shape))
    for r in range(1000):
        log = run_dynamics(h0, DynamicsConfig(0.1, T, seed=r, drift_rule="none"))
        counts.append(log.n_events)
    counts = np.array(counts)
    assert mc_close(counts.mean(), rate * T, np.sqrt(rate * T / len(counts)))
    # gaps of one long run; pooling short runs would censor long gaps
    log = run_dynamics(h0, DynamicsConfig(0.1, 5000 / rate, seed=1, drift_rule="none"))
    assert np.all(np.diff(log.times) > 0)
    assert np.all(spec.boundary_distance(log.centers) > 0.2)
    assert sps.kstest(np.diff(np.r_[0.0, log.times]) * rate, "expon").pvalue > 0.01


def test_resample_with_zero_draw_is_harmonic_extension(grid64, rng):
    h = sample_lattice_gff(grid64, rng)
    c, eps = (0.47, 0.51), 0.1
    out = resample_ball(h, c, eps, 1.0, rng, zero_draw=True)
    st = stencil_cache(grid64).get(c, eps)
    assert np.array_equal(out.values.ravel()[st.nodes], st.harmonic(h.values.ravel()))
    mask = np.ones(grid64.size, bool)
    mask[st.nodes] = False
    assert np.array_equal(out.values.ravel()[mask], h.values.ravel()[mask])


def test_resample_conditional_mean(grid64, rng):
    h = sample_lattice_gff(grid64, rng)
    c, eps = (0.5, 0.5), 0.1
    st = stencil_cache(grid64).get(c, eps)
    draws = np.array([resample_ball(h, c, eps, 1.0, rng).values.ravel()[st.nodes] for _ in range(1000)])
    phi = st.harmonic(h.values.ravel())
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    z = (draws.mean(axis=0) - phi) / se
    assert np.mean(np.abs(z) <= 3) >= 0.98


def test_resample_near_boundary_rejected(grid64, rng):
    h = sample_lattice_gff(grid64, rng)
    with pytest.raises(DomainError):
        resample_ball(h, (0.15, 0.5), 0.1, 1.0, rng)


def test_fractional_resample_keeps_outside(rng):
    disk = DomainSpec.unit_disk()
    grid = build_grid(disk, 32)
    h = Field(grid, np.where(grid.interior, 1.0, 0.0))
    out = resample_ball(h, (0.1, 0.0), 0.25, 0.5, rng)
    far = np.linalg.norm(grid.points - np.array([0.1, 0.0]), axis=1) >= 0.25
    assert np.array_equal(out.values.ravel()[far], h.values.ravel()[far])


def test_budget_guard(g32):
    cfg = DynamicsConfig(0.1, 1.0, budget=100)
    with pytest.raises(BudgetExceeded):
        cfg.check(g32.spec)
    log = run_dynamics(Field(g32, np.zeros(g32.shape)), cfg)
    assert log.truncated and log.n_events == 100
    assert log.horizon == log.times[-1]


def test_config_validation():
    with pytest.raises(ParameterError):
        DynamicsConfig(-0.1, 1.0)
    with pytest.raises(ParameterError):
        DynamicsConfig(0.1, 1.0, alpha=1.5)
    with pytest.raises(ParameterError):
        DynamicsConfig(0.1, 1.0, drift_rule="simpson")


def test_log_roundtrip_and_csv(g32, rng):
    h0 = sample_lattice_gff(g32, rng)
    cfg = DynamicsConfig(0.1, 20 / DynamicsConfig(0.1, 0).event_rate(g32.spec), observables=(_f(),),
                         record_times=(0.0,), seed=3)
    log = run_dynamics(h0, cfg)
    back = EventLog.from_bytes(log.to_bytes(), g32)
    for name in ("times", "centers", "pre", "post", "htilde", "var", "drift", "initial"):
        assert np.array_equal(getattr(back, name), getattr(log, name))
    assert np.array_equal(back.final.values, log.final.values)
    assert set(back.snapshots) == {0.0}
    lines = log.to_csv().splitlines()
    assert lines[0] == "n,T_n,U_1,U_2,pre_0,post_0"
    assert len(lines) == log.n_events + 1


def test_observables_track_field(g32, rng):
    h0 = sample_lattice_gff(g32, rng)
    f = _f()
    cfg = DynamicsConfig(0.1, 30 / DynamicsConfig(0.1, 0).event_rate(g32.spec), observables=(f,), seed=1)
    log = run_dynamics(h0, cfg)
    assert log.post[-1, 0] == pytest.approx(float(np.sum(f.weighted(g32) * log.final.values)), abs=1e-10)
    assert np.allclose(log.pre[1:], log.post[:-1])


def test_martingale_constant_without_events(g32, rng):
    h0 = sample_lattice_gff(g32, rng)
    cfg = DynamicsConfig(0.1, 1e-12, observables=(_f(),), seed=0)
    log = run_dynamics(h0, cfg)
    assert log.n_events == 0
    t, M = martingale_path(log, 0, [0.0, 1e-12])
    assert M[1] - M[0] == pytest.approx(-log.drift[0, 0] * 1e-12, rel=1e-6)
    assert abs(M[1] - log.initial[0]) <= 1e-9


def test_replicas_reproducible(g32):
    cfg = DynamicsConfig(0.1, 10 / DynamicsConfig(0.1, 0).event_rate(g32.spec), observables=(_f(),),
                         drift_rule="none")
    a = run_replicas(g32, cfg, 3, seed=5)
    b = run_replicas(g32, cfg, 3, seed=5)
    c = run_replicas(g32, cfg, 3, seed=6)
    assert all(np.array_equal(x.times, y.times) and np.array_equal(x.post, y.post) for x, y in zip(a, b))
    assert not np.array_equal(a[0].times, c[0].times)
    assert not np.array_equal(replica_rng(1, 0).random(3), replica_rng(1, 1).random(3))


@pytest.fixture(scope="module")
def replica_logs(g32):
    spec = g32.spec
    f, g = _f(), standard_bump((0.45, 0.55), 0.2)
    T = 60 / DynamicsConfig(0.1, 0).event_rate(spec)
    cfg = DynamicsConfig(0.1, T, observables=(f, g), seed=0)
    return T, run_replicas(g32, cfg, 500, seed=0)


def test_martingale_increments_uncorrelated_with_past(replica_logs):
    # regress M_T - M_{T/2} on pairings at T/2: coefficients vanish
    T, logs = replica_logs
    X, y = [], []
    for log in logs:
        _, M = martingale_path(log, 0, [T / 2, T])
        i = np.searchsorted(log.times, T / 2, side="right")
        state = log.initial if i == 0 else log.post[i - 1]
        X.append([1.0, state[0], state[1]])
        y.append(M[1] - M[0])
    X, y = np.array(X), np.array(y)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    cov = np.linalg.inv(X.T @ X) * resid.var(ddof=3)
    z = beta / np.sqrt(np.diag(cov))
    assert np.all(np.abs(z) <= 3)


def test_realized_qv_matches_compensator_and_oracle(replica_logs, g32):
    T, logs = replica_logs
    q = np.array([quadratic_variation_path(log, 0, [T])[1][0] for log in logs])
    c = np.array([quadratic_variation_path(log, 0, [T])[2][0] for log in logs])
    diff = q - c
    assert mc_close(diff.mean(), 0.0, diff.std(ddof=1) / np.sqrt(len(diff)))
    tau = DynamicsConfig(0.1, 0).tau(g32.spec)
    oracle, se = qv_oracle(g32, _f(), 0.1, tau)
    assert mc_close(q.mean() / T, oracle, np.hypot(q.std(ddof=1) / np.sqrt(len(q)) / T, se))


def test_stratified_centres_inside(g32, rng):
    xs = stratified_centers(g32, 0.1, rng)
    assert np.all(g32.spec.boundary_distance(xs) > 0.2)
    lo, hi, vol = inner_region(g32.spec, 0.1)
    assert len(xs) == pytest.approx(vol / (g32.h / 2) ** 2, rel=0.05)
