import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gffmart.domain import DomainSpec, build_grid
from gffmart.errors import ParameterError
from gffmart.stats import SampleSet, TestVerdict, boundary_decay_series, holm, moment_report, trend_fit, two_sample_test


def test_identical_samples():
    x = np.random.default_rng(1).standard_normal(500)
    v = two_sample_test(SampleSet(x), SampleSet(x.copy()))
    assert v.statistic == 0.0
    assert v.p_value == pytest.approx(1.0)
    assert v.passed


def test_ks_calibration_same_law():
    passes = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        v = two_sample_test(SampleSet(rng.standard_normal(10_000)), SampleSet(rng.standard_normal(10_000)))
        passes += v.passed
    assert passes >= 98


def test_ks_detects_shift():
    rng = np.random.default_rng(2)
    v = two_sample_test(SampleSet(rng.standard_normal(10_000)), SampleSet(rng.normal(0.5, 1, 10_000)))
    assert v.p_value < 1e-6
    assert not v.passed


def test_ks_rejects_small_samples():
    with pytest.raises(ParameterError):
        two_sample_test(SampleSet(np.arange(10.0)), SampleSet(np.arange(100.0)))


def test_sample_set_validation():
    with pytest.raises(ParameterError):
        SampleSet([1.0])
    with pytest.raises(ParameterError):
        SampleSet([1.0, np.nan])


def _v(p):
    return TestVerdict("t", 0.0, p)


def test_holm_known_values():
    adj, ok = holm([_v(0.01), _v(0.04), _v(0.03)], alpha=0.05)
    assert adj == pytest.approx([0.03, 0.06, 0.06])
    assert not ok
    adj, ok = holm([_v(0.5), _v(0.2)], alpha=0.01)
    assert adj == pytest.approx([0.5, 0.4])
    assert ok


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12))
def test_holm_properties(ps):
    adj, _ = holm([_v(p) for p in ps])
    adj = np.array(adj)
    assert np.all(adj >= np.array(ps) - 1e-15)
    assert np.all(adj <= 1.0)
    order = np.argsort(ps, kind="stable")
    assert np.all(np.diff(adj[order]) >= 0)


def test_wick_ratio_normal():
    x = np.random.default_rng(3).standard_normal(20_000)
    rep = moment_report(SampleSet(x), n_boot=300)
    lo, hi = rep["ci"]["wick_ratio"]
    assert lo <= 1.0 <= hi
    assert rep["wick_ratio"] == pytest.approx(1.0, abs=0.05)


def test_wick_ratio_uniform():
    # uniform law: m4 / (3 m2^2) = (1/80) / (3 / 144) = 0.6
    x = np.random.default_rng(4).uniform(-0.5, 0.5, 20_000)
    rep = moment_report(SampleSet(x), n_boot=300)
    lo, hi = rep["ci"]["wick_ratio"]
    assert lo <= 0.6 <= hi


def test_moment_report_degenerate_and_small():
    rep = moment_report(SampleSet(np.full(2000, 3.0)))
    assert rep["degenerate"] and rep["wick_ratio"] is None
    with pytest.raises(ParameterError):
        moment_report(SampleSet(np.arange(100.0)))


def test_moment_report_deterministic():
    x = np.random.default_rng(5).standard_normal(2000)
    assert moment_report(SampleSet(x), n_boot=100, seed=7) == moment_report(SampleSet(x), n_boot=100, seed=7)


@pytest.fixture(scope="module")
def grid():
    return build_grid(DomainSpec.unit_square(), 64)


def test_boundary_zero_field(grid):
    out = boundary_decay_series(lambda rng, k: np.zeros((k, grid.size)), grid, [0.2, 0.1, 0.05], 200)
    assert out["estimate"] == [0.0, 0.0, 0.0]
    assert not out["decreasing"]


def test_boundary_white_noise_control_fails(grid):
    w = grid.weights.ravel()
    sd = np.where(w > 0, 1 / np.sqrt(np.where(w > 0, w, 1)), 0.0)
    out = boundary_decay_series(lambda rng, k: rng.standard_normal((k, grid.size)) * sd, grid,
                                [0.2, 0.1, 0.05], 2000)
    assert not out["passed"]


def test_boundary_requires_two_scales(grid):
    with pytest.raises(ParameterError):
        boundary_decay_series(lambda rng, k: np.zeros((k, grid.size)), grid, [0.1])


def test_trend_exact_line():
    t = np.linspace(0, 5, 11)
    f = trend_fit(t, 2 * t)
    assert f.slope == pytest.approx(2.0, abs=1e-12)
    assert f.intercept == pytest.approx(0.0, abs=1e-12)
    assert f.r2 == pytest.approx(1.0)
    assert f.slope_se == pytest.approx(0.0, abs=1e-12)


def test_trend_constant_series():
    f = trend_fit(np.arange(6.0), np.full(6, 4.0))
    assert f.slope == pytest.approx(0.0, abs=1e-12)
    assert f.intercept == pytest.approx(4.0)


def test_trend_weighted_matches_numpy():
    rng = np.random.default_rng(6)
    x = np.linspace(0, 1, 20)
    se = rng.uniform(0.5, 2.0, 20)
    y = 3 * x + 1 + rng.standard_normal(20) * se
    f = trend_fit(x, y, se)
    ref = np.polyfit(x, y, 1, w=1 / se)
    assert [f.slope, f.intercept] == pytest.approx(ref, rel=1e-10)


def test_trend_rejects_bad_input():
    with pytest.raises(ParameterError):
        trend_fit([1, 2], [1, 2])
    with pytest.raises(ParameterError):
        trend_fit([1, 1, 1], [1, 2, 3])
