"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL`` line with its measured
values and runtime; the lines are repeated in the pytest terminal summary.
Suites shared with the command line are run through ``run_experiment`` so the
acceptance verdicts and the CLI verdicts come from the same code path.
"""

import json
import time

import numpy as np
import pytest

from gffmart.cli import ExperimentConfig, main, run_experiment
from gffmart.domain import DomainSpec, build_grid, fractional_green_ball, green, green_ball_integral, \
    laplacian_eigenbasis
from gffmart.fields import gaussian_bump, sample_fgf, sample_gff, standard_bump
from gffmart.operators import OperatorConfig, analytic_constant, delta_eps_weak
from gffmart.stats import SampleSet, moment_report

LINES: list[str] = []


def report(n: int, title: str, passed: bool, detail: str, seconds: float, limit: float) -> bool:
    ok = bool(passed) and seconds < limit
    line = f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {title}: {detail}  [{seconds:.1f}s < {limit:g}s]"
    LINES.append(line)
    print(line)
    return ok


_SUITES: dict = {}


def suite(name: str, **kw):
    """Run a CLI suite once per session; returns (checks by name, exit code, seconds)."""
    key = (name, tuple(sorted(kw.items())))
    if key not in _SUITES:
        t0 = time.perf_counter()
        code, res = run_experiment(ExperimentConfig(name, **kw), write=False)
        _SUITES[key] = ({c["check"]: c for c in res.checks}, code, time.perf_counter() - t0)
    return _SUITES[key]


def verdicts(checks, names):
    return all(checks[n]["verdict"] == "PASS" for n in names)


def polar_pairing(f, g, kernel, alpha, n_out=24, n_rad=32, n_ang=48):
    """``int int f(x) K(x, y) g(y) dx dy`` for compactly supported planar bumps.

    Outer Gauss product rule over the support of ``f``; inner polar rule centred
    at each outer node with ``rho = rho_max s^(1/(2 alpha))``, which cancels the
    ``|x - y|^(2 alpha - 2)`` singularity against the polar Jacobian.
    """
    (cf, rf), (cg, rg) = f.support, g.support
    t, w = np.polynomial.legendre.leggauss(n_out)
    X, Y = np.meshgrid(cf[0] + rf * t, cf[1] + rf * t, indexing="ij")
    P = np.stack([X.ravel(), Y.ravel()], 1)
    Wp = (np.outer(w, w) * rf * rf).ravel() * f(P)
    P, Wp = P[Wp != 0], Wp[Wp != 0]
    s, ws = np.polynomial.legendre.leggauss(n_rad)
    s, ws = 0.5 * (s + 1), 0.5 * ws
    th = 2 * np.pi * np.arange(n_ang) / n_ang
    e = np.stack([np.cos(th), np.sin(th)], 1)
    p = 1 / (2 * alpha)
    tot = 0.0
    for x, wx in zip(P, Wp):
        rmax = np.linalg.norm(x - cg) + rg
        rho = rmax * s ** p
        jac = rmax * p * s ** (p - 1) * rho * ws
        Q = x + (rho[:, None, None] * e[None]).reshape(-1, 2)
        gv = g(Q)
        m = gv != 0
        if not np.any(m):
            continue
        K = np.zeros(len(Q))
        K[m] = kernel(np.broadcast_to(x, Q[m].shape), Q[m])
        tot += wx * (2 * np.pi / n_ang) * np.sum((K * gv).reshape(n_rad, n_ang) * jac[:, None])
    return tot


def test_criterion_01_green_integral():
    t0 = time.perf_counter()
    ratios = {(d, e): green_ball_integral(e, d) * 2 * d / e ** 2 for d in (2, 3) for e in (1.0, 0.5, 0.25)}
    worst = max(abs(r - 1) for r in ratios.values())
    assert report(1, "Green ball integral", worst <= 1e-5, f"max |ratio - 1| = {worst:.2e}",
                  time.perf_counter() - t0, 5)


def test_criterion_02_delta_eps_convergence():
    checks, _, secs = suite("delta-eps-convergence")
    ok = verdicts(checks, ["sup_error_log2_slope", "quadratic_exactness"])
    detail = (f"log2 slope {checks['sup_error_log2_slope']['value']:.3f}, "
              f"quadratic error {checks['quadratic_exactness']['value']:.1e}")
    assert report(2, "Delta_eps convergence", ok, detail, secs, 60)


def test_criterion_03_integration_by_parts():
    t0 = time.perf_counter()
    spec = DomainSpec.unit_square()
    ocfg = OperatorConfig(1 / 32, spec, C=analytic_constant(spec))
    c0 = np.full(2, 0.5)
    pairs = [
        (gaussian_bump(c0 - 0.05, 0.04), standard_bump(c0 + 0.05, 0.2)),
        (standard_bump(c0, 0.25), gaussian_bump(c0 + 0.03, 0.03)),
        (gaussian_bump(c0 + 0.02, 0.035), gaussian_bump(c0 - 0.04, 0.03)),
        (standard_bump(c0 - 0.1, 0.2), standard_bump(c0 + 0.1, 0.22)),
        (standard_bump(c0, 0.15), standard_bump(c0 + 0.02, 0.3)),
    ]
    worst = 0.0
    for g, f in pairs:
        a = delta_eps_weak(g, f, ocfg)
        b = delta_eps_weak(f, g, ocfg)
        worst = max(worst, abs(a - b) / (1 + abs(a)))
    assert report(3, "integration by parts", worst <= 1e-6, f"worst scaled gap {worst:.2e}",
                  time.perf_counter() - t0, 30)


def test_criterion_04_field_covariance():
    t0 = time.perf_counter()
    n = 20_000
    pairs = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]
    zs = []

    sq = DomainSpec.unit_square()
    grid = build_grid(sq, 64)
    basis = laplacian_eigenbasis(sq, 512, grid)
    bumps = [standard_bump((0.4, 0.5), 0.25), standard_bump((0.6, 0.55), 0.2), standard_bump((0.5, 0.35), 0.3)]
    h = sample_gff(basis, np.random.default_rng(11), n).reshape(n, -1)
    X = h @ np.stack([b.weighted(grid).ravel() for b in bumps]).T
    for i, j in pairs:
        prod = X[:, i] * X[:, j]
        target = polar_pairing(bumps[i], bumps[j], lambda x, y: green(sq, x, y, cutoff=512), 1.0, 16, 24, 32)
        zs.append((prod.mean() - target) / (prod.std(ddof=1) / np.sqrt(n)))
    wick = moment_report(SampleSet(X[:, 0]))["wick_ratio"]

    disk = DomainSpec.unit_disk()
    dgrid = build_grid(disk, 64)
    fbumps = [standard_bump((0.1, 0.0), 0.4), standard_bump((-0.2, 0.3), 0.3), standard_bump((0.3, -0.3), 0.35)]
    alpha = 0.75
    hf = sample_fgf(dgrid, alpha, np.random.default_rng(12), n).reshape(n, -1)
    Y = hf @ np.stack([b.weighted(dgrid).ravel() for b in fbumps]).T
    for i, j in pairs:
        prod = Y[:, i] * Y[:, j]
        target = polar_pairing(fbumps[i], fbumps[j], lambda x, y: fractional_green_ball(alpha, x, y), alpha)
        zs.append((prod.mean() - target) / (prod.std(ddof=1) / np.sqrt(n)))

    zmax = float(np.max(np.abs(zs)))
    ok = zmax <= 3 and abs(wick - 1) <= 0.05
    assert report(4, "GFF/FGF covariance", ok, f"max |z| {zmax:.2f} over 10 pairs, Wick ratio {wick:.3f}",
                  time.perf_counter() - t0, 120)


def test_criterion_05_stationarity():
    checks, _, secs = suite("stationarity")
    c = checks["ks_family_holm"]
    assert report(5, "dynamics stationarity", c["verdict"] == "PASS",
                  f"min Holm-adjusted KS p {c['value']:.3f}, mean events {checks['mean_events']['value']:.1f}",
                  secs, 600)


def test_criterion_06_martingale_and_qv():
    checks, _, secs = suite("qv-linearity")
    ok = verdicts(checks, ["martingale_mean_z", "qv_slope_vs_oracle_z", "qv_linear_r2"])
    detail = (f"martingale z {checks['martingale_mean_z']['value']:.2f}, "
              f"slope {checks['qv_slope']['value']:.5f} vs oracle {checks['qv_oracle']['value']:.5f} "
              f"(z {checks['qv_slope_vs_oracle_z']['value']:.2f}), R2 {checks['qv_linear_r2']['value']:.4f}")
    assert report(6, "martingale and QV", ok, detail, secs, 600)


def test_criterion_07_jump_condition():
    checks, _, secs = suite("qv-linearity")
    c = checks["max_jump_sq_decreasing"]
    detail = "mean max-jump^2 " + ", ".join(f"{v:.2e}" for v in c["value"])
    assert report(7, "jump condition", c["verdict"] == "PASS", detail, secs, 600)


def test_criterion_08_she():
    checks, _, secs = suite("she-covariance")
    names = [k for k in checks if k.startswith(("stationary_variance_mode", "two_time_cov_t"))]
    names.append("step_splitting_holm")
    zmax = max(abs(checks[k]["value"]) for k in names if k != "step_splitting_holm")
    ok = verdicts(checks, names) and {"two_time_cov_t0.01_z", "two_time_cov_t0.05_z"} <= set(names)
    detail = f"max |z| {zmax:.2f}, step-splitting Holm p {checks['step_splitting_holm']['value']:.3f}"
    assert report(8, "SHE spectral solver", ok, detail, secs, 120)


def test_criterion_09_fractional_kernels():
    checks, _, secs = suite("frac-kernels")
    names = ["alpha_mean_mass", "frac_poisson_mass", "alpha_mean_scaling"]
    names += [k for k in checks if k.startswith(("alpha_mean_value_alpha", "c_over_r_bounded_alpha"))]
    detail = (f"mass {checks['alpha_mean_mass']['value']:.1e}, Poisson mass {checks['frac_poisson_mass']['value']:.1e},"
              f" scaling {checks['alpha_mean_scaling']['value']:.1e}")
    assert report(9, "fractional kernels", verdicts(checks, names) and len(names) >= 5, detail, secs, 120)


def test_criterion_10_fractional_delta_eps():
    checks, _, secs = suite("frac-kernels")
    names = ["frac_delta_eps_monotone_alpha0.4", "frac_delta_eps_monotone_alpha0.7"]
    detail = "; ".join(f"alpha {k[-3:]}: " + ", ".join(f"{v:.3f}" for v in checks[k]["value"]) for k in names)
    assert report(10, "fractional Delta_eps convergence", verdicts(checks, names), detail, secs, 300)


def test_criterion_11_boundary_decay():
    checks, _, secs = suite("boundary-decay")
    names = ["gff_decreasing", "gff_separated_where_resolvable", "white_noise_control_fails"]
    detail = "GFF series " + ", ".join(f"{v:.2e}" for v in checks["gff_decreasing"]["value"])
    assert report(11, "boundary decay", verdicts(checks, names), detail, secs, 120)


def test_criterion_12_constant_discrepancy(tmp_path):
    t0 = time.perf_counter()
    code = main(["run", "delta-eps-convergence", "--constant", "paper", "--out", str(tmp_path)])
    secs = time.perf_counter() - t0
    checks = {c["check"]: c for c in json.loads((tmp_path / "results.json").read_text())["checks"]}
    ratio = checks["laplacian_ratio"]["value"]
    target = (2 + 2) / 2
    ok = code != 0 and abs(ratio - target) <= 0.05 * target
    assert report(12, "constant discrepancy", ok, f"ratio {ratio:.4f} vs {target:g}, exit code {code}", secs, 60)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
