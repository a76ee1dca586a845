"""Irreversible growth: long-jump and corner dynamics on the torus, plus TASEP.

In the long-jump dynamics every particle jumps upwards by any admissible
distance ``n`` at rate 1 per destination, so its total rate is the number
``n_max`` of admissible destinations.  In the corner dynamics only the unit
jump is allowed, at rate 1.  Both are simulated exactly in law by kinetic
Monte Carlo: exponential waiting times with the total rate, the moving
particle chosen proportionally to its rate from a sum tree.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from . import _kernels as K
from .fitting import ExponentEstimate, compare_models, latter_half
from .gibbs import sample_gibbs
from .lattice import (
    HeightField,
    InterlacedConfig,
    Slope,
    TorusGeometry,
    height_to_particles,
    make_flat,
    particles_to_height,
    profile_initial,
    validate,
)
from .rng import kernel_seed, stream

Dynamics = Literal["longjump", "corner"]


def speed_function(rho) -> float:
    """Growth velocity ``sin(pi r1) sin(pi r2) / (pi sin(pi (r1 + r2)))``."""
    r = Slope.coerce(rho)
    a, b = math.pi * r.rho1, math.pi * r.rho2
    return math.sin(a) * math.sin(b) / (math.pi * math.sin(a + b))


def speed_array(r1, r2) -> np.ndarray:
    """Vectorised :func:`speed_function` without domain checks."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    return np.sin(np.pi * r1) * np.sin(np.pi * r2) / (np.pi * np.sin(np.pi * (r1 + r2)))


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------


def admissible_jumps(cfg: InterlacedConfig, particle: tuple[int, int]) -> int:
    """Number of admissible upward destinations of particle ``(m, j)``."""
    g = cfg.geometry
    m, j = particle
    upper = min(cfg.position(m + 1, j), cfg.position(m - 1, j + 1) - 1)
    return upper - cfg.position(m, j)


def jump(cfg: InterlacedConfig, particle: tuple[int, int], n: int) -> InterlacedConfig:
    """Configuration after particle ``(m, j)`` moves up by ``n`` (no validity check)."""
    g = cfg.geometry
    m, j = particle
    out = cfg.copy()
    q, m0 = divmod(m, g.L1)
    qj, j0 = divmod(j + q * g.W, g.N)
    out.positions[m0, j0] += n
    return out


class RateIndex:
    """Sum tree over particle rates supporting O(log P) sampling and updates."""

    def __init__(self, cfg: InterlacedConfig, corner: bool = False):
        g = cfg.geometry
        self.geometry = g
        self.corner = corner
        self.rates = K.particle_rates(cfg.positions, g.L1, g.L2, g.N, g.W, corner)
        self.tree = K.tree_build(self.rates)

    @property
    def total(self) -> int:
        return int(self.tree[1])

    def rate(self, m: int, j: int) -> int:
        size = self.tree.shape[0] // 2
        return int(self.tree[size + m * self.geometry.N + j])

    def leaves(self) -> np.ndarray:
        size = self.tree.shape[0] // 2
        return self.tree[size : size + self.geometry.L1 * self.geometry.N].copy()

    def consistent_with(self, positions: np.ndarray) -> bool:
        """True if stored rates and internal sums equal a fresh recount."""
        g = self.geometry
        fresh = K.particle_rates(positions, g.L1, g.L2, g.N, g.W, self.corner)
        return bool(np.array_equal(fresh, self.leaves())) and bool(
            np.array_equal(K.tree_build(fresh), self.tree)
        )


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


def default_tracked(g: TorusGeometry, n: int = 16) -> np.ndarray:
    """``n`` faces on a regular sublattice, as an array of ``(m, y)`` rows."""
    k = max(1, int(round(math.sqrt(n))))
    ms = (np.arange(k) * g.L1) // k
    ys = (np.arange(k) * g.L2) // k
    return np.array([(m, y) for m in ms for y in ys], dtype=np.int64)


@dataclass
class TrajectoryRecord:
    """Observation times, heights at tracked faces and the final state."""

    times: np.ndarray
    tracked: np.ndarray
    heights: np.ndarray
    events: np.ndarray
    seed: int
    initial_heights: np.ndarray = field(repr=False)
    final_heights: np.ndarray = field(repr=False)
    final: InterlacedConfig | None = field(default=None, repr=False)
    snapshots: np.ndarray | None = field(default=None, repr=False)
    jammed: bool = False
    violations: list = field(default_factory=list)
    rate_checks: int = 0
    total_events: int = 0

    @property
    def n_events(self) -> int:
        return int(self.total_events)

    def serialize(self) -> bytes:
        doc = {
            "times": self.times.tolist(),
            "tracked": self.tracked.tolist(),
            "heights": self.heights.tolist(),
            "events": self.events.tolist(),
            "total_events": self.total_events,
            "seed": self.seed,
            "jammed": self.jammed,
            "final": self.final.to_text() if self.final is not None else None,
        }
        return json.dumps(doc, sort_keys=True).encode()


def _advance(X, H, tree, g, corner, t, t_end, seed, debug, check_every, record):
    """Advance to ``t_end``; in debug mode validate every ``check_every`` events."""
    events = 0
    chunk = 0
    while True:
        t, ev, jammed = K.kmc_advance(
            X, H, tree, g.L1, g.L2, g.N, g.W, corner, t, t_end,
            check_every if debug else 0, kernel_seed(seed, chunk),
        )
        chunk += 1
        events += ev
        if debug:
            cfg = InterlacedConfig(g, X, 0)
            bad = validate(cfg)
            if bad:
                record.violations.extend(bad)
            fresh = K.particle_rates(X, g.L1, g.L2, g.N, g.W, corner)
            if not np.array_equal(K.tree_build(fresh), tree):
                record.violations.append(f"rate index out of sync at t={t}")
            record.rate_checks += 1
        if jammed or t >= t_end or not debug:
            return t, events, jammed


def _simulate(
    cfg0: InterlacedConfig,
    T: float,
    times,
    tracked,
    seed: int,
    corner: bool,
    debug: bool = False,
    check_every: int = 1000,
    keep_snapshots: bool = False,
) -> TrajectoryRecord:
    g = cfg0.geometry
    bad = validate(cfg0)
    if bad:
        raise ValueError("invalid initial configuration: " + bad[0])
    if T < 0:
        raise ValueError("T must be nonnegative")
    times = np.asarray([T] if times is None else times, dtype=float)
    if times.size and (np.any(np.diff(times) <= 0) or times[0] < 0 or times[-1] > T + 1e-12):
        raise ValueError("observation times must be strictly increasing inside [0, T]")
    tracked = default_tracked(g) if tracked is None else np.asarray(tracked, dtype=np.int64)
    X = cfg0.positions.copy()
    H = particles_to_height(cfg0).h.copy()
    H0 = H.copy()
    tree = K.tree_build(K.particle_rates(X, g.L1, g.L2, g.N, g.W, corner))
    rec = TrajectoryRecord(
        times=times,
        tracked=tracked,
        heights=np.empty((times.size, tracked.shape[0]), dtype=np.int64),
        events=np.empty(times.size, dtype=np.int64),
        seed=int(seed),
        initial_heights=H0,
        final_heights=H,
    )
    snaps = np.empty((times.size,) + H.shape, dtype=np.int64) if keep_snapshots else None
    t = 0.0
    total = 0
    for k, tk in enumerate(times):
        if not rec.jammed and tk > t:
            t, ev, jammed = _advance(
                X, H, tree, g, corner, t, float(tk), kernel_seed(seed, "kmc", k),
                debug, check_every, rec,
            )
            total += ev
            rec.jammed = rec.jammed or jammed
        rec.heights[k] = H[tracked[:, 0], tracked[:, 1]]
        rec.events[k] = total
        if snaps is not None:
            snaps[k] = H
    if not rec.jammed and t < T:
        t, ev, jammed = _advance(
            X, H, tree, g, corner, t, float(T), kernel_seed(seed, "kmc", "tail"),
            debug, check_every, rec,
        )
        total += ev
        rec.jammed = rec.jammed or jammed
    rec.final_heights = H
    rec.total_events = total
    rec.final = height_to_particles(HeightField(g, H))
    rec.snapshots = snaps
    return rec


def kmc_run(cfg0, T, observables=None, seed: int = 0, debug: bool = False, **kw) -> TrajectoryRecord:
    """Long-jump dynamics for time ``T`` from ``cfg0``.

    ``observables`` is ``None`` or a dict with optional keys ``times``
    (observation times, default ``[T]``), ``tracked`` (``(m, y)`` rows) and
    ``snapshots`` (keep full height fields at every observation time).
    """
    obs = observables or {}
    return _simulate(
        cfg0, T, obs.get("times"), obs.get("tracked"), seed, False, debug,
        keep_snapshots=obs.get("snapshots", False), **kw,
    )


def corner_growth_run(cfg0, T, observables=None, seed: int = 0, debug: bool = False, **kw):
    """Corner-growth dynamics (unit jumps at rate 1); arguments as :func:`kmc_run`."""
    obs = observables or {}
    return _simulate(
        cfg0, T, obs.get("times"), obs.get("tracked"), seed, True, debug,
        keep_snapshots=obs.get("snapshots", False), **kw,
    )


def instantaneous_growth_rate(cfg: InterlacedConfig, corner: bool = False) -> float:
    """Exact expected rate of increase of the mean height per face in state ``cfg``.

    A particle with ``n`` destinations raises ``1 + ... + n`` faces per unit
    time on average (long jump) or one face at rate 1 (corner).
    """
    g = cfg.geometry
    n = K.particle_rates(cfg.positions, g.L1, g.L2, g.N, g.W, False)
    if corner:
        return float(np.count_nonzero(n)) / (g.L1 * g.L2)
    return float(np.sum(n * (n + 1) // 2)) / (g.L1 * g.L2)


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------


@dataclass
class VelocityEstimate:
    value: float
    stderr: float
    per_replica: np.ndarray
    flagged: list[str]

    def within(self, target: float, n_stderr: float = 3.0, rel: float | None = None) -> bool:
        ok = abs(self.value - target) <= n_stderr * self.stderr
        if rel is not None:
            ok = ok and abs(self.value - target) <= rel * abs(target)
        return bool(ok)


def gibbs_starts(rho, g: TorusGeometry, replicas: int, seed: int, sweeps: int | None = None):
    """Initial configurations for ``replicas`` runs from one equilibrated Glauber chain."""
    if sweeps is None:
        sweeps = max(g.L1, g.L2) ** 2
    ens = sample_gibbs(rho, g, sweeps, seed, n_samples=replicas)
    return ens


def measure_velocity(
    rho,
    geometry,
    T: float,
    replicas: int,
    seed: int,
    dynamics: Dynamics = "longjump",
    start: Literal["gibbs", "flat"] = "gibbs",
) -> VelocityEstimate:
    """Mean height increase per unit time, averaged over all faces and replicas."""
    r = Slope.coerce(rho)
    g = geometry if isinstance(geometry, TorusGeometry) else TorusGeometry.for_slope(r, *geometry)
    flagged = []
    if start == "gibbs":
        heights = gibbs_starts(r, g, replicas, kernel_seed(seed, "init")).heights
        starts = [height_to_particles(HeightField(g, h)) for h in heights]
    else:
        starts = [make_flat(r, g)] * replicas
    run = kmc_run if dynamics == "longjump" else corner_growth_run
    vals = np.empty(replicas)
    for i, c0 in enumerate(starts):
        rec = run(c0, T, {"times": [T]}, seed=kernel_seed(seed, "replica", i))
        vals[i] = (rec.final_heights - rec.initial_heights).mean() / T
        if rec.jammed:
            flagged.append(f"replica {i} jammed")
    if replicas < 2:
        flagged.append("fewer than two replicas: no standard error")
        se = float("nan")
    else:
        se = float(vals.std(ddof=1) / math.sqrt(replicas))
    return VelocityEstimate(float(vals.mean()), se, vals, flagged)


@dataclass
class FluctuationResult:
    """Variance of the height increment versus time with both growth-law fits.

    ``var[k]`` is the spatial variance of ``h_x(t_k) - h_x(0)`` averaged over
    replicas.  ``beta`` is half the log-log slope (``Var ~ t^{2 beta}``).
    """

    times: np.ndarray
    var: np.ndarray
    var_stderr: np.ndarray
    mean_height: np.ndarray
    n_events: np.ndarray
    power: ExponentEstimate
    log: ExponentEstimate
    preferred: str
    window: tuple[float, float]
    replicas: int = 0
    censored: bool = False

    @property
    def beta(self) -> float:
        return 0.5 * self.power.value

    @property
    def beta_stderr(self) -> float:
        return 0.5 * self.power.stderr

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,mean_height,var_height,n_events\n")
            for row in zip(self.times, self.mean_height, self.var, self.n_events):
                fh.write("{:.10g},{:.10g},{:.10g},{:.10g}\n".format(*row))


def measure_fluctuations(
    dynamics: Dynamics,
    rho,
    geometry,
    times: Sequence[float],
    replicas: int,
    seed: int,
    start: Literal["gibbs", "flat"] | None = None,
    window: tuple[float, float] | None = None,
    should_stop=None,
) -> FluctuationResult:
    """Growth of height fluctuations, with power and logarithmic fits.

    The default start is a Gibbs sample for the long-jump dynamics (stationary
    start) and the flat configuration for corner growth.  Fits use the latter
    half of the time grid unless ``window`` is given.  ``should_stop(done,
    events)`` is asked before each replica after the first; a true answer
    ends the run early and marks the result censored.
    """
    times = np.asarray(times, dtype=float)
    if times.size < 5:
        raise ValueError("need at least 5 observation times")
    r = Slope.coerce(rho)
    g = geometry if isinstance(geometry, TorusGeometry) else TorusGeometry.for_slope(r, *geometry)
    if start is None:
        start = "gibbs" if dynamics == "longjump" else "flat"
    if start == "gibbs":
        hs = gibbs_starts(r, g, replicas, kernel_seed(seed, "init")).heights
        starts = [height_to_particles(HeightField(g, h)) for h in hs]
    else:
        starts = [make_flat(r, g)] * replicas
    run = kmc_run if dynamics == "longjump" else corner_growth_run
    per_var = np.empty((replicas, times.size))
    per_mean = np.empty((replicas, times.size))
    events = np.zeros(times.size)
    done = 0
    for i, c0 in enumerate(starts):
        if i > 0 and should_stop is not None and should_stop(i, float(events[-1])):
            break
        done += 1
        rec = run(c0, float(times[-1]), {"times": times, "snapshots": True},
                  seed=kernel_seed(seed, "replica", i))
        inc = (rec.snapshots - rec.initial_heights[None]).reshape(times.size, -1).astype(float)
        per_mean[i] = inc.mean(axis=1)
        per_var[i] = inc.var(axis=1)
        events += rec.events
    per_var = per_var[:done]
    per_mean = per_mean[:done]
    var = per_var.mean(axis=0)
    se = per_var.std(axis=0, ddof=1) / math.sqrt(done) if done > 1 else np.full(times.size, np.nan)
    if window is None:
        window = latter_half(times)
    fits = compare_models(times, var, window)
    return FluctuationResult(
        times, var, se, per_mean.mean(axis=0), events / done,
        fits["power"], fits["log"], fits["preferred"], window, done, done < replicas,
    )


# ---------------------------------------------------------------------------
# hydrodynamics
# ---------------------------------------------------------------------------


@dataclass
class HydroRow:
    epsilon: float
    L: int
    initial_error: float
    error_hopf: float
    error_pde: float
    n_events: int


def hydrodynamic_experiment(
    phi0_factory,
    epsilons: Sequence[float],
    T: float,
    seed: int,
    reference,
    window=None,
    pde_solution=None,
) -> list[HydroRow]:
    """Compare the rescaled long-jump height with a continuum solution.

    ``phi0_factory(eps)`` returns the :class:`~dimerlab.pde.ContinuumField`
    used to build the microscopic profile at scale ``eps``.  ``reference(x1,
    x2)`` evaluates the exact solution at time ``T`` (e.g. from the Hopf
    formula); errors are sup norms over faces whose planar position lies in
    ``window`` (a predicate on position arrays, default everywhere).
    ``pde_solution`` optionally supplies a second reference (e.g. an
    interpolated :func:`~dimerlab.pde.hj_solve` field).
    """
    rows = []
    for k, eps in enumerate(epsilons):
        phi0 = phi0_factory(eps)
        cfg, err0 = profile_initial(phi0, eps)
        L = cfg.geometry.L1
        rec = kmc_run(cfg, T / eps, {"times": [T / eps]}, seed=kernel_seed(seed, "hydro", k))
        m = np.arange(L)[:, None]
        y = np.arange(L)[None, :]
        # planar position of face (m, y) in macroscopic units, wrapped to [-1/2, 1/2)
        x1 = ((m + y) / L + 0.5) % 1.0 - 0.5
        x2 = np.broadcast_to(((y / L) + 0.5) % 1.0 - 0.5, x1.shape)
        # undo the wrap in the affine background of the height
        raw1 = (m + y) / L
        raw2 = np.broadcast_to(y / L, raw1.shape)
        b1, b2 = phi0.slope
        shift = b1 * (x1 - raw1) + b2 * (x2 - raw2)
        micro = eps * rec.final_heights + shift
        sel = np.ones(x1.shape, dtype=bool) if window is None else window(x1, x2)
        ref = reference(x1[sel], x2[sel])
        e_h = float(np.max(np.abs(micro[sel] - ref)))
        e_p = float("nan")
        if pde_solution is not None:
            e_p = float(np.max(np.abs(micro[sel] - pde_solution(x1[sel], x2[sel]))))
        rows.append(HydroRow(float(eps), L, float(err0), e_h, e_p, rec.n_events))
    return rows


# ---------------------------------------------------------------------------
# one-dimensional cross-check
# ---------------------------------------------------------------------------


def tasep_generator(L: int, n: int):
    """States and rate matrix of TASEP with ``n`` particles on a ring of ``L`` sites."""
    from itertools import combinations

    states = [frozenset(c) for c in combinations(range(L), n)]
    idx = {s: i for i, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    for i, s in enumerate(states):
        for x in s:
            if (x + 1) % L not in s:
                t = (s - {x}) | {(x + 1) % L}
                Q[i, idx[t]] += 1.0
    Q[np.diag_indices_from(Q)] = -Q.sum(axis=1)
    return states, Q


def tasep_current_exact(L: int, n: int) -> float:
    """Stationary current per bond from the null vector of the ring generator."""
    states, Q = tasep_generator(L, n)
    A = np.vstack([Q.T, np.ones(len(states))])
    b = np.zeros(len(states) + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    jumps = np.array([sum((x + 1) % L not in s for x in s) for s in states], dtype=float)
    return float(pi @ jumps) / L


def tasep_current_simulated(L: int, n: int, T: float, seed: int) -> float:
    """Current per bond of the corner rule restricted to one column (TASEP)."""
    rng = stream(seed, "tasep")
    occ = np.zeros(L, dtype=bool)
    occ[: 2 * n : 2] = True if 2 * n <= L else False
    if occ.sum() != n:
        occ[:] = False
        occ[:n] = True
    t = 0.0
    moves = 0
    while True:
        movable = np.flatnonzero(occ & ~np.roll(occ, -1))
        if movable.size == 0:
            break
        t += rng.exponential(1.0 / movable.size)
        if t > T:
            break
        x = movable[rng.integers(movable.size)]
        occ[x] = False
        occ[(x + 1) % L] = True
        moves += 1
    return moves / (T * L)
