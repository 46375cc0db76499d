"""Statistical verdicts: two-sample tests, moment reports, collar decay and trend fits."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from .domain import Grid
from .errors import ParameterError
from .fields import TestFn, collar_bump

__all__ = [
    "SampleSet",
    "TestVerdict",
    "two_sample_test",
    "holm",
    "moment_report",
    "boundary_decay_series",
    "trend_fit",
    "TrendFit",
]


@dataclass
class SampleSet:
    """Finite scalar observations with a provenance tag."""

    values: np.ndarray
    tag: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size < 2:
            raise ParameterError("a sample set needs at least two observations")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("sample values must be finite")

    def __len__(self):
        return self.values.size


@dataclass
class TestVerdict:
    """Statistic, p-value or interval, and the pass flag at the configured threshold."""

    __test__ = False

    name: str
    statistic: float
    p_value: float | None = None
    ci: tuple[float, float] | None = None
    threshold: float | None = None
    passed: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        if out["ci"] is not None:
            out["ci"] = [float(c) for c in out["ci"]]
        return out


def two_sample_test(a: SampleSet, b: SampleSet, threshold: float = 0.01, name: str = "ks") -> TestVerdict:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    if len(a) < 50 or len(b) < 50:
        raise ParameterError("two-sample test needs at least 50 observations per sample")
    res = sps.ks_2samp(a.values, b.values, method="asymp")
    p = float(np.clip(res.pvalue, 0.0, 1.0))
    return TestVerdict(name, float(res.statistic), p, None, threshold, p > threshold,
                       {"n_a": len(a), "n_b": len(b), "tags": [a.tag, b.tag]})


def holm(verdicts: Sequence[TestVerdict], alpha: float = 0.01) -> tuple[list[float], bool]:
    """Holm step-down adjusted p-values and the family verdict at level ``alpha``.

    The family passes when every adjusted p-value exceeds ``alpha``.
    """
    p = np.array([v.p_value for v in verdicts], dtype=float)
    m = len(p)
    order = np.argsort(p, kind="stable")
    adj = np.empty(m)
    running = 0.0
    for rank, i in enumerate(order):
        running = max(running, min(1.0, (m - rank) * p[i]))
        adj[i] = running
    return adj.tolist(), bool(np.all(adj > alpha))


def _bootstrap(x: np.ndarray, stat: Callable, n_boot: int, rng) -> np.ndarray:
    out = np.empty(n_boot)
    n = len(x)
    for b in range(n_boot):
        out[b] = stat(x[rng.integers(0, n, n)])
    return out


def moment_report(s: SampleSet, n_boot: int = 1000, seed: int = 0, level: float = 0.95,
                  min_size: int = 1000) -> dict:
    """Mean, variance, fourth moment and Wick ratio ``m4 / (3 m2^2)`` with bootstrap intervals.

    Central moments are used. Zero variance flags the sample as degenerate and
    leaves the ratio undefined.
    """
    if len(s) < min_size:
        raise ParameterError(f"moment report needs at least {min_size} observations")
    x = s.values
    rng = np.random.default_rng(np.random.SeedSequence([seed, len(x)]))
    q = [(1 - level) / 2, (1 + level) / 2]

    def m2(v):
        return float(np.mean((v - v.mean()) ** 2))

    def m4(v):
        return float(np.mean((v - v.mean()) ** 4))

    def wick(v):
        a = m2(v)
        return m4(v) / (3 * a * a) if a > 0 else np.nan

    rep = {"n": len(x), "mean": float(x.mean()), "variance": m2(x), "m4": m4(x), "degenerate": m2(x) == 0}
    if rep["degenerate"]:
        rep.update(wick_ratio=None, ci={})
        return rep
    rep["wick_ratio"] = wick(x)
    rep["ci"] = {}
    for key, fn in (("mean", np.mean), ("variance", m2), ("m4", m4), ("wick_ratio", wick)):
        boots = _bootstrap(x, fn, n_boot, rng)
        rep["ci"][key] = [float(v) for v in np.quantile(boots, q)]
    return rep


def boundary_decay_series(sampler, grid: Grid, scales: Sequence[float], n_samples: int = 2000,
                          seed: int = 0, oracle=None, sigma: float = 3.0) -> dict:
    """Monte Carlo ``E[(h, g_k)^2]`` for unit-mass collar bumps at distances ``r_k``.

    ``sampler(rng, n)`` returns stacked field values. ``oracle(fvals)``, if
    given, returns exact second moments for comparison. The verdict asks for
    a strictly decreasing series, with adjacent estimates ``sigma``-separated
    whenever their gap exceeds the combined error, and a last value below a
    tenth of the first.
    """
    scales = np.asarray(sorted(scales, reverse=True), dtype=float)
    if len(scales) < 2:
        raise ParameterError("need at least two collar scales")
    bumps = [collar_bump(grid.spec, r, grid) for r in scales]
    fvals = np.stack([b.sample(grid) for b in bumps])
    fw = fvals * grid.weights
    rng = np.random.default_rng(np.random.SeedSequence([seed, len(scales)]))
    acc = np.zeros((n_samples, len(scales)))
    done = 0
    while done < n_samples:
        k = min(500, n_samples - done)
        vals = np.asarray(sampler(rng, k)).reshape(k, -1)
        acc[done:done + k] = vals @ fw.reshape(len(scales), -1).T
        done += k
    sq = acc ** 2
    est = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / np.sqrt(n_samples)
    diffs = est[:-1] - est[1:]
    comb = np.sqrt(se[:-1] ** 2 + se[1:] ** 2)
    decreasing = bool(np.all(diffs > 0))
    separated = [bool(dv > sigma * c) for dv, c in zip(diffs, comb)]
    vanishing = bool(est[-1] < 0.1 * est[0]) if est[0] > 0 else True
    out = {
        "scales": scales.tolist(),
        "estimate": est.tolist(),
        "stderr": se.tolist(),
        "separated": separated,
        "decreasing": decreasing,
        "vanishing": vanishing,
        "passed": decreasing and vanishing,
    }
    if oracle is not None:
        exact = np.asarray(oracle(fvals), dtype=float)
        out["oracle"] = exact.tolist()
        out["oracle_z"] = ((est - exact) / np.where(se > 0, se, np.inf)).tolist()
    return out


@dataclass
class TrendFit:
    slope: float
    intercept: float
    slope_se: float
    intercept_se: float
    r2: float
    residuals: np.ndarray

    def slope_ci(self, k: float = 3.0) -> tuple[float, float]:
        return self.slope - k * self.slope_se, self.slope + k * self.slope_se

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "slope_se": self.slope_se,
                "intercept_se": self.intercept_se, "r2": self.r2, "residuals": self.residuals.tolist()}


def trend_fit(x, y, se=None) -> TrendFit:
    """Weighted least squares line with standard errors, ``R^2`` and residuals.

    With ``se`` the weights are ``1 / se^2`` and parameter errors come from the
    given uncertainties; otherwise ordinary least squares with the residual
    variance.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3 or x.size != y.size:
        raise ParameterError("trend fit needs at least three matching points")
    if np.ptp(x) == 0:
        raise ParameterError("degenerate abscissae")
    w = np.ones_like(x) if se is None else 1.0 / np.asarray(se, dtype=float) ** 2
    X = np.column_stack([x, np.ones_like(x)])
    A = X.T @ (w[:, None] * X)
    beta = np.linalg.solve(A, X.T @ (w * y))
    resid = y - X @ beta
    cov = np.linalg.inv(A)
    if se is None:
        cov = cov * (np.sum(resid ** 2) / max(x.size - 2, 1))
    ybar = np.sum(w * y) / np.sum(w)
    sst = np.sum(w * (y - ybar) ** 2)
    r2 = 1.0 - np.sum(w * resid ** 2) / sst if sst > 0 else 1.0
    return TrendFit(float(beta[0]), float(beta[1]), float(np.sqrt(cov[0, 0])),
                    float(np.sqrt(cov[1, 1])), float(r2), resid)
