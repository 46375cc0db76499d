"""Poisson ball-resampling dynamics and its martingale observables.

At the rings of a Poisson clock with rate ``tau = C eps^-(2+d)`` (or
``C eps^-(2 alpha + d)``) a centre ``U`` is drawn uniformly from ``D``; when it
lies in ``D_eps = {x : d(x, boundary) > 2 eps}`` the field inside
``B(U, eps)`` is replaced by its harmonic extension plus a fresh zero-boundary
sample, otherwise nothing happens. Only effective moves are simulated and
logged: they form a Poisson process of rate ``tau |D_eps| / |D|`` with
centres uniform in ``D_eps``, so the generator carries the same ``tau / |D|``
normalisation as the discrete Laplacian. The lattice GFF is invariant for the
lattice version of the move.

For every observable ``f`` the log stores, per event, the pairing before and
after the move, the pre-event zero-boundary part ``(h - phi, f)`` and the
variance of the fresh part, so that jumps, realized quadratic variation and
its compensator need no further solves.
"""

from __future__ import annotations

import hashlib
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .domain import DomainSpec, Grid, ball_volume
from .errors import BudgetExceeded, ConfigurationError, DomainError, ParameterError
from .fields import Field, TestFn, frac_stencil, sample_lattice_gff, stencil_cache
from .kernels import Ball, _const, _grid_extension_weights
from .operators import analytic_constant, drift_functional

__all__ = [
    "DynamicsConfig",
    "EventLog",
    "resample_ball",
    "run_dynamics",
    "martingale_path",
    "quadratic_variation_path",
    "qv_oracle",
    "inner_region",
    "stratified_centers",
    "replica_rng",
    "run_replicas",
]

_LOG_VERSION = 1


def inner_region(spec: DomainSpec, eps: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Bounding box and volume of ``D_eps``."""
    m = 2 * eps
    if spec.kind == "rectangle":
        lo = np.full(spec.d, m)
        hi = np.asarray(spec.extent, dtype=float) - m
        vol = float(np.prod(hi - lo)) if np.all(hi > lo) else 0.0
    else:
        r = spec.extent[0] - m
        lo, hi = np.full(spec.d, -r), np.full(spec.d, r)
        vol = ball_volume(spec.d) * r ** spec.d if r > 0 else 0.0
    if vol <= 0:
        raise DomainError("eps too large: no admissible centres")
    return lo, hi, vol


@dataclass
class DynamicsConfig:
    """Radius, clock constant, horizon and observables of a run.

    ``C=None`` takes the analytic constant. ``record_times`` are wall times at
    which full field snapshots are kept. ``drift_rule`` selects the centre
    quadrature of the drift functional: one seeded jittered point per cell of
    side ``h/2`` over ``D_eps`` (``"stratified"``) or ``n_centers`` seeded
    uniform centres (``"monte-carlo"``).
    """

    eps: float
    T: float
    C: float | None = None
    alpha: float = 1.0
    observables: tuple = ()
    record_every_event: bool = True
    record_times: tuple = ()
    seed: int = 0
    budget: int = 10 ** 7
    drift_rule: str = "stratified"
    n_centers: int = 256

    def __post_init__(self):
        if self.eps <= 0:
            raise ParameterError("eps must be positive")
        if self.T < 0:
            raise ParameterError("horizon must be nonnegative")
        if not (self.alpha == 1 or 0 < self.alpha < 1):
            raise ParameterError("alpha must be 1 or lie in (0, 1)")
        if self.C is not None and self.C <= 0:
            raise ParameterError("clock constant must be positive")
        if self.drift_rule not in ("stratified", "monte-carlo", "none"):
            raise ParameterError(f"unknown drift rule {self.drift_rule!r}")
        self.observables = tuple(self.observables)
        self.record_times = tuple(sorted(float(t) for t in self.record_times))

    def constant(self, spec: DomainSpec) -> float:
        return analytic_constant(spec, self.alpha) if self.C is None else float(self.C)

    def tau(self, spec: DomainSpec) -> float:
        expo = spec.d + (2 if self.alpha == 1 else 2 * self.alpha)
        return self.constant(spec) * self.eps ** (-expo)

    def event_rate(self, spec: DomainSpec) -> float:
        """Rate of effective moves, ``tau |D_eps| / |D|``."""
        return self.tau(spec) * inner_region(spec, self.eps)[2] / spec.volume

    def check(self, spec: DomainSpec) -> float:
        """Validate against the domain; returns the expected event count."""
        expected = self.event_rate(spec) * self.T
        if expected > self.budget:
            raise BudgetExceeded(f"expected {expected:.3g} events exceeds budget {self.budget}")
        return expected


@dataclass
class EventLog:
    """Event times, centres and per-observable bookkeeping of one trajectory."""

    times: np.ndarray            # (n,)
    centers: np.ndarray          # (n, d)
    pre: np.ndarray              # (n, k) pairings before each event
    post: np.ndarray             # (n, k) pairings after each event
    htilde: np.ndarray           # (n, k) pre-event zero-boundary part (h - phi, f)
    var: np.ndarray              # (n, k) variance of the fresh zero-boundary pairing
    drift: np.ndarray | None     # (n + 1, k) drift rate <W, h> after 0..n events
    initial: np.ndarray          # (k,) pairings at time 0
    T: float
    tau: float
    eps: float
    alpha: float
    truncated: bool = False
    snapshots: dict = field(default_factory=dict)
    final: Field | None = None

    @property
    def n_events(self) -> int:
        return len(self.times)

    @property
    def n_observables(self) -> int:
        return len(self.initial)

    @property
    def horizon(self) -> float:
        """End of the simulated interval (last event time when truncated)."""
        return float(self.times[-1]) if self.truncated and self.n_events else self.T

    def to_bytes(self) -> bytes:
        """Versioned ``npz`` container (snapshots and final field values included)."""
        buf = io.BytesIO()
        snaps = sorted(self.snapshots)
        payload = dict(
            version=np.array(_LOG_VERSION), times=self.times, centers=self.centers, pre=self.pre,
            post=self.post, htilde=self.htilde, var=self.var, initial=self.initial,
            scalars=np.array([self.T, self.tau, self.eps, self.alpha, float(self.truncated)]),
            snapshot_times=np.array(snaps, dtype=float),
            snapshot_values=np.array([self.snapshots[t] for t in snaps], dtype=float),
        )
        if self.drift is not None:
            payload["drift"] = self.drift
        if self.final is not None:
            payload["final"] = self.final.values
        np.savez_compressed(buf, **payload)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, grid: Grid | None = None) -> "EventLog":
        z = np.load(io.BytesIO(data))
        if int(z["version"]) != _LOG_VERSION:
            raise ConfigurationError(f"unsupported event log version {int(z['version'])}")
        T, tau, eps, alpha, trunc = z["scalars"]
        snaps = {float(t): v for t, v in zip(z["snapshot_times"], z["snapshot_values"])}
        final = None
        if "final" in z.files and grid is not None:
            final = Field(grid, z["final"], "other")
        return cls(z["times"], z["centers"], z["pre"], z["post"], z["htilde"], z["var"],
                   z["drift"] if "drift" in z.files else None, z["initial"], float(T), float(tau),
                   float(eps), float(alpha), bool(trunc), snaps, final)

    def to_csv(self) -> str:
        """Event table: ``n, T_n, U_n`` coordinates, per-observable pre and post pairings."""
        d, k = self.centers.shape[1], self.n_observables
        cols = ["n", "T_n"] + [f"U_{i + 1}" for i in range(d)]
        for j in range(k):
            cols += [f"pre_{j}", f"post_{j}"]
        body = [np.arange(1, self.n_events + 1), self.times] + [self.centers[:, i] for i in range(d)]
        for j in range(k):
            body += [self.pre[:, j], self.post[:, j]]
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        if self.n_events:
            np.savetxt(buf, np.column_stack(body), delimiter=",", fmt="%.17g")
        return buf.getvalue()


def _stratified(grid: Grid, eps: float, rng, per_cell: int):
    spec = grid.spec
    lo, hi, _ = inner_region(spec, eps)
    sp = grid.h / 2
    axes = [np.arange(a, b, sp) for a, b in zip(lo, hi)]
    cells = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    ids = np.repeat(np.arange(len(cells)), per_cell)
    xs = cells[ids] + sp * rng.random((len(ids), spec.d))
    keep = (spec.boundary_distance(xs) > 2 * eps) & np.all(xs < hi, axis=1)
    return xs[keep], ids[keep]


def stratified_centers(grid: Grid, eps: float, rng, per_cell: int = 1) -> np.ndarray:
    """Uniform points in ``D_eps``, ``per_cell`` jittered per cell of side ``h/2``.

    An unbiased, low-variance rule for averages over uniform centres: the
    stencil of a ball changes on sub-cell scales, so a plain midpoint lattice
    is biased.
    """
    return _stratified(grid, eps, rng, per_cell)[0]


def _check_center(spec: DomainSpec, center, eps):
    c = np.asarray(center, dtype=float)
    if spec.boundary_distance(c)[0] <= 2 * eps:
        raise DomainError("centre too close to the boundary (need distance > 2 eps)")
    return c


def _frac_extension_matrix(grid: Grid, center, eps: float, alpha: float, nodes: np.ndarray):
    pts = grid.points[nodes]
    W, idx = _grid_extension_weights(Ball(tuple(center), eps), grid, pts, alpha,
                                     _const(grid.d, alpha, None))
    return W, idx


def resample_ball(state: Field, center, eps: float, alpha: float, rng, zero_draw: bool = False) -> Field:
    """Harmonic extension into ``B(center, eps)`` plus an independent zero-boundary sample.

    Nodes outside the ball are left untouched. ``zero_draw=True`` keeps only
    the extension.
    """
    grid = state.grid
    c = _check_center(grid.spec, center, eps)
    flat = state.values.ravel()
    out = state.copy()
    new = out.values.reshape(-1)
    if alpha == 1:
        st = stencil_cache(grid).get(c, eps)
        vals = st.harmonic(flat)
        if not zero_draw:
            vals = vals + st.sample(rng)
        new[st.nodes] = vals
    elif 0 < alpha < 1:
        nodes, L = frac_stencil(grid, c, eps, alpha)
        W, idx = _frac_extension_matrix(grid, c, eps, alpha, nodes)
        vals = W @ flat[idx]
        if not zero_draw:
            vals = vals + L @ rng.standard_normal(len(nodes))
        new[nodes] = vals
    else:
        raise ParameterError("alpha must be 1 or lie in (0, 1)")
    out.meta = {**state.meta, "last_center": c.tolist()}
    return out


_DRIFT_CACHE: dict = {}


def _drift_matrix(grid: Grid, fws: np.ndarray, cfg: DynamicsConfig, rate: float) -> np.ndarray:
    """Cached drift rows; Monte Carlo centre sets are drawn once per seed."""
    key = (id(grid), cfg.eps, cfg.alpha, rate, cfg.drift_rule, cfg.n_centers,
           cfg.seed if cfg.drift_rule == "monte-carlo" else None,
           hashlib.sha1(np.ascontiguousarray(fws).tobytes()).hexdigest())
    hit = _DRIFT_CACHE.get(key)
    if hit is None or hit[0] is not grid:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xD1]))
        if len(_DRIFT_CACHE) > 32:
            _DRIFT_CACHE.clear()
        hit = (grid, _build_drift_matrix(grid, fws, cfg, rate, rng))
        _DRIFT_CACHE[key] = hit
    return hit[1]


def _build_drift_matrix(grid: Grid, fws: np.ndarray, cfg: DynamicsConfig, rate: float, rng) -> np.ndarray:
    """Rows ``W_j`` with ``<W_j, h> = rate E_U[(phi^U - h, f_j)]``, ``U`` uniform in ``D_eps``."""
    spec, eps = grid.spec, cfg.eps
    if cfg.drift_rule == "stratified":
        xs = stratified_centers(grid, eps, rng)
    else:
        xs = spec.sample_interior(rng, cfg.n_centers, margin=2 * eps)
    if cfg.alpha == 1:
        return np.atleast_2d(drift_functional(grid, fws, eps, rate, xs))
    W = np.zeros_like(fws)
    cache = stencil_cache(grid)
    for x in xs:
        nodes = np.ravel_multi_index(cache.locate(x, eps).T, grid.shape)
        E, idx = _frac_extension_matrix(grid, x, eps, cfg.alpha, nodes)
        fs = fws[:, nodes]
        np.add.at(W.T, idx, (fs @ E).T)
        W[:, nodes] -= fs
    return rate * W / len(xs)


def run_dynamics(h0: Field, cfg: DynamicsConfig, rng=None) -> EventLog:
    """Event-driven simulation on ``[0, T]``.

    Clock, centres and resampling noise use independent child streams of the
    seed (or of ``rng``). Exceeding ``cfg.budget`` events stops the run and
    sets ``truncated``.
    """
    grid = h0.grid
    spec, eps, alpha = grid.spec, cfg.eps, cfg.alpha
    lo, hi, _ = inner_region(spec, eps)
    tau = cfg.tau(spec)
    rate = cfg.event_rate(spec)
    seq = np.random.SeedSequence(cfg.seed) if rng is None else np.random.SeedSequence(
        rng.integers(0, 2 ** 63, dtype=np.int64))
    clock, where, noise = (np.random.default_rng(s) for s in seq.spawn(3))

    fws = np.stack([f.weighted(grid).ravel() for f in cfg.observables]) if cfg.observables \
        else np.zeros((0, grid.size))
    k = len(fws)
    vals = h0.values.ravel().copy()
    W = _drift_matrix(grid, fws, cfg, rate) if (cfg.drift_rule != "none" and k) else None

    obs = fws @ vals
    initial = obs.copy()
    drift_now = W @ vals if W is not None else None
    times, centers, pre, post, ht, vs, drifts = [], [], [], [], [], [], []
    if W is not None:
        drifts.append(drift_now.copy())
    snapshots = {}
    rec = list(cfg.record_times)
    cache = stencil_cache(grid)
    var_cache: dict = {}
    t, truncated = 0.0, False
    while True:
        t += clock.exponential(1.0 / rate)
        while rec and rec[0] <= min(t, cfg.T):
            snapshots[rec.pop(0)] = vals.reshape(grid.shape).copy()
        if t > cfg.T:
            break
        if len(times) >= cfg.budget:
            truncated = True
            break
        # uniform centre in D_eps by rejection from its bounding box
        while True:
            c = lo + (hi - lo) * where.random(spec.d)
            if spec.boundary_distance(c)[0] > 2 * eps:
                break
        if alpha == 1:
            st = cache.get(c, eps)
            nodes = st.nodes
            phi = st.harmonic(vals)
            fresh = st.sample(noise)
            key = (nodes[0], len(nodes), st.chol.ctypes.data)
            v = var_cache.get(key)
            if v is None:
                v = st.variance(fws[:, nodes]) if k else np.zeros(0)
                var_cache[key] = v
        else:
            nodes, L = frac_stencil(grid, c, eps, alpha)
            E, idx = _frac_extension_matrix(grid, c, eps, alpha, nodes)
            phi = E @ vals[idx]
            fresh = L @ noise.standard_normal(len(nodes))
            y = fws[:, nodes] @ L
            v = np.sum(y * y, axis=1)
        old = vals[nodes]
        new = phi + fresh
        fs = fws[:, nodes]
        before = obs.copy()
        obs = obs + fs @ (new - old)
        vals[nodes] = new
        times.append(t)
        centers.append(c)
        if cfg.record_every_event:
            pre.append(before)
            post.append(obs.copy())
            ht.append(fs @ (old - phi))
            vs.append(v)
        if W is not None:
            drift_now = drift_now + W[:, nodes] @ (new - old)
            drifts.append(drift_now.copy())
    while rec:
        snapshots[rec.pop(0)] = vals.reshape(grid.shape).copy()

    n = len(times)

    def arr(x):
        return np.asarray(x, dtype=float).reshape(len(x), k) if len(x) else np.zeros((0, k))

    return EventLog(
        np.asarray(times, dtype=float), np.asarray(centers, dtype=float).reshape(n, spec.d),
        arr(pre), arr(post), arr(ht), arr(vs),
        np.asarray(drifts, dtype=float).reshape(n + 1, k) if W is not None else None,
        initial, float(cfg.T), tau, eps, float(alpha), truncated, snapshots,
        Field(grid, vals, h0.law, h0.seed, {"time": cfg.T, "events": n}),
    )


def _path_times(log: EventLog, times):
    if times is None:
        return np.concatenate([[0.0], log.times, [log.horizon]])
    t = np.asarray(times, dtype=float)
    if np.any(t < 0) or np.any(t > log.horizon * (1 + 1e-12)):
        raise ParameterError("requested times outside the simulated interval")
    return t


def martingale_path(log: EventLog, j: int = 0, times=None) -> tuple[np.ndarray, np.ndarray]:
    """``M_t = (h_t, f) - int_0^t <W, h_s> ds`` at event times (or ``times``).

    Paths are right-continuous; the drift integral is exact for the
    piecewise-constant field.
    """
    if log.drift is None:
        raise ConfigurationError("log has no drift record; rerun with a drift rule")
    if not len(log.pre) and log.n_events:
        raise ConfigurationError("log has no per-event pairings")
    t = _path_times(log, times)
    ev = np.concatenate([[0.0], log.times])
    obs = np.concatenate([[log.initial[j]], log.post[:, j]])
    rate = log.drift[:, j]
    cum = np.concatenate([[0.0], np.cumsum(rate[:-1] * np.diff(ev))])
    i = np.searchsorted(ev, t, side="right") - 1
    integral = cum[i] + rate[i] * (t - ev[i])
    return t, obs[i] - integral


def quadratic_variation_path(log: EventLog, j: int = 0, times=None):
    """Realized QV, compensator estimate and jump series of ``M`` for observable ``j``.

    The compensator estimate sums ``Var(fresh pairing) + (h - phi, f)^2`` over
    events, an unbiased estimate of ``rate int_0^t E_U[...] ds``.
    Returns ``(t, realized, compensator, jumps)`` with ``jumps`` per event.
    """
    if not len(log.pre) and log.n_events:
        raise ConfigurationError("log has no per-event pairings")
    t = _path_times(log, times)
    jumps = log.post[:, j] - log.pre[:, j]
    qv = np.concatenate([[0.0], np.cumsum(jumps ** 2)])
    comp = np.concatenate([[0.0], np.cumsum(log.var[:, j] + log.htilde[:, j] ** 2)])
    i = np.searchsorted(log.times, t, side="right")
    return t, qv[i], comp[i], jumps


def qv_oracle(grid: Grid, f: TestFn, eps: float, tau: float, alpha: float = 1.0,
              per_cell: int = 4, seed: int = 0) -> tuple[float, float]:
    """Stationary QV slope ``2 (tau / |D|) int_{D_eps} Var(h_tilde^x, f) dx``.

    Equivalently ``2 rate E_U[Var]`` with ``U`` uniform in ``D_eps``. The
    variance is the exact discrete ball Green quadratic form ``f G_B f``; the
    centre average uses seeded stratified points. Returns the value and
    its standard error.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0A]))
    xs, ids = _stratified(grid, eps, rng, max(per_cell, 2))
    fw = f.weighted(grid).ravel()
    cache = stencil_cache(grid)
    v = np.empty(len(xs))
    for i, x in enumerate(xs):
        if alpha == 1:
            st = cache.get(x, eps)
            v[i] = st.variance(fw[st.nodes])[0]
        else:
            nodes, L = frac_stencil(grid, x, eps, alpha)
            y = fw[nodes] @ L
            v[i] = y @ y
    # strata are independent: the error of the mean comes from within-cell spread
    n = len(v)
    _, inv, cnt = np.unique(ids, return_inverse=True, return_counts=True)
    m = np.bincount(inv, v) / cnt
    ss = np.bincount(inv, (v - m[inv]) ** 2)
    full = cnt > 1
    within = np.sum(cnt[full] * ss[full] / (cnt[full] - 1)) / np.sum(cnt[full])
    se = float(np.sqrt(within / n))
    rate = tau * inner_region(grid.spec, eps)[2] / grid.spec.volume
    return 2 * rate * float(v.mean()), 2 * rate * float(se)


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    """Independent stream for a replica, stable under scheduling."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(replica)]))


def _one_replica(args):
    grid, cfg, seed, r, init = args
    rng = replica_rng(seed, r)
    h0 = init(grid, rng) if init is not None else sample_lattice_gff(grid, rng)
    return run_dynamics(h0, cfg, rng)


def run_replicas(grid: Grid, cfg: DynamicsConfig, replicas: int, seed: int = 0,
                 init=None, workers: int = 1) -> list[EventLog]:
    """Independent trajectories started from the lattice GFF (or ``init(grid, rng)``)."""
    cfg.check(grid.spec)
    jobs = [(grid, cfg, seed, r, init) for r in range(replicas)]
    if workers <= 1:
        return [_one_replica(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_one_replica, jobs, chunksize=max(1, replicas // (4 * workers))))
