"""Reversible dynamics: Glauber flips and tower moves, mobility and coupling times.

A tower move raises (or lowers) ``n`` vertically aligned faces of one column
by one; in particle language a single particle jumps ``n`` steps without
crossing another particle.  It happens at rate ``1/n``, which keeps the
uniform measure reversible.  Both dynamics run on a torus winding class
(:class:`~dimerlab.lattice.TorusGeometry`) or on a bounded
:class:`~dimerlab.domains.DomainSpec` with fixed boundary heights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Literal, Sequence

import numpy as np
from scipy import sparse

from . import _kernels as K
from .domains import DomainSpec
from .fitting import jackknife
from .gibbs import Enumeration, GibbsEnsemble
from .growth import speed_function
from .lattice import Slope, TorusGeometry, as_height_field, flat_heights
from .rng import kernel_seed, stream

__all__ = [
    "DomainSpec",
    "TowerResult",
    "tower_move",
    "ReversibleRecord",
    "reversible_run",
    "reversible_generator",
    "detailed_balance_defects",
    "stationarity_defects",
    "mobility",
    "MobilityEstimate",
    "mobility_estimate",
    "MixingEstimate",
    "coupling_time",
    "equilibrium_heights",
    "ladder_domain",
    "mobility_speed_gap",
    "replay",
]

Dynamics = Literal["glauber", "tower"]


def _args(target):
    """Kernel arguments ``(free, periodic, L1, L2, dN, W)`` and the free-face list."""
    if isinstance(target, TorusGeometry):
        g = target
        free = np.ones((g.L1, g.L2), dtype=np.bool_)
        return (free, True, g.L1, g.L2, g.dN, g.W), np.arange(g.L1 * g.L2, dtype=np.int64)
    if isinstance(target, DomainSpec) and target.bounded:
        return (target.free, False, 0, 0, 0, 0), target.faces()
    raise TypeError("target must be a TorusGeometry or a bounded DomainSpec")


def _max_len(target) -> int:
    if isinstance(target, TorusGeometry):
        return target.L2
    return target.free.shape[1]


def _heights(target, state) -> np.ndarray:
    if isinstance(target, TorusGeometry):
        h = as_height_field(state).h if not isinstance(state, np.ndarray) else state
    else:
        h = state
    return np.array(h, dtype=np.int64)


def _tower_faces(target, m: int, t: int, n: int, sign: int):
    rows = range(t - n + 1, t + 1) if sign > 0 else range(t, t + n)
    if isinstance(target, TorusGeometry):
        return [(m % target.L1, y % target.L2) for y in rows]
    return [(m, y) for y in rows]


# ---------------------------------------------------------------------------
# single moves
# ---------------------------------------------------------------------------


@dataclass
class TowerResult:
    heights: np.ndarray
    admissible: bool
    rate: Fraction
    faces: list[tuple[int, int]] = field(default_factory=list)


def _tower_length(h, args, m, t, sign, max_len) -> int:
    """Length of the single-particle tower with top face ``t`` (up) or bottom face ``t`` (down)."""
    free, periodic, L1, L2, dN, W = args
    n = 1
    while n <= max_len:
        x = t - n if sign > 0 else t + n - 1
        if not periodic and not (0 <= x and x + 1 < h.shape[1]):
            return 0
        if K.hval(h, m, x + 1, periodic, L1, L2, dN, W) == K.hval(h, m, x, periodic, L1, L2, dN, W):
            return n
        n += 1
    return 0


def tower_move(target, state, site: tuple[int, int], n: int, sign: int) -> TowerResult:
    """Shift the ``n`` aligned faces ending at ``site`` by ``sign``.

    For ``sign = +1`` the tower is faces ``t - n + 1 .. t`` of column ``m``
    (``site = (m, t)`` is its top); for ``sign = -1`` it is ``t .. t + n - 1``.
    The move is admissible when it is a single-particle jump of length ``n``
    and the result is a valid height function; then its rate is ``1/n``.
    An inadmissible move returns the heights unchanged with the flag unset.
    """
    if n < 1 or sign not in (1, -1):
        raise ValueError("need n >= 1 and sign in {+1, -1}")
    h = _heights(target, state)
    args, _ = _args(target)
    m, t = site
    rate = Fraction(1, n)
    ok = _tower_length(h, args, m, t, sign, _max_len(target)) == n
    if ok:
        lo, hi = (t - n + 1, t) if sign > 0 else (t, t + n - 1)
        test = K.segment_raisable if sign > 0 else K.segment_lowerable
        ok = bool(test(h, *args, m, lo, hi))
    if not ok:
        return TowerResult(h, False, rate)
    faces = _tower_faces(target, m, t, n, sign)
    for f in faces:
        h[f] += sign
    return TowerResult(h, True, rate, faces)


def _moves(target, h: np.ndarray, dynamics: Dynamics):
    """All admissible moves of ``h`` as ``(faces, sign, rate)``."""
    args, faces = _args(target)
    L = h.shape[1]
    ml = _max_len(target)
    for f in faces:
        m, t = divmod(int(f), L)
        for sign in (1, -1):
            if dynamics == "glauber":
                if K.flip_admissible(h, *args, m, t, sign):
                    yield [(m, t)], sign, Fraction(1)
                continue
            n = _tower_length(h, args, m, t, sign, ml)
            if n == 0:
                continue
            lo, hi = (t - n + 1, t) if sign > 0 else (t, t + n - 1)
            test = K.segment_raisable if sign > 0 else K.segment_lowerable
            if test(h, *args, m, lo, hi):
                yield _tower_faces(target, m, t, n, sign), sign, Fraction(1, n)


# ---------------------------------------------------------------------------
# explicit generators on enumerable state spaces
# ---------------------------------------------------------------------------


def reversible_generator(enum: Enumeration, dynamics: Dynamics = "tower", exact: bool = False):
    """Off-diagonal rates of the dynamics on the enumerated states.

    With ``exact`` the result is a dict ``{(a, b): Fraction}`` (off-diagonal
    only); otherwise a float CSR generator with the diagonal filled in.
    """
    idx = enum.index()
    rates: dict[tuple[int, int], Fraction] = {}
    for a, h in enumerate(enum.states):
        for faces, sign, r in _moves(enum.target, h, dynamics):
            h2 = h.copy()
            for f in faces:
                h2[f] += sign
            b = idx.get(enum.key(h2))
            if b is None:
                raise RuntimeError("move left the enumerated state space")
            rates[(a, b)] = rates.get((a, b), Fraction(0)) + r
    if exact:
        return rates
    n = enum.count
    keys = list(rates)
    Q = sparse.coo_matrix(
        ([float(rates[k]) for k in keys], ([k[0] for k in keys], [k[1] for k in keys])), shape=(n, n)
    ).tocsr()
    out = sparse.lil_matrix(Q)
    out.setdiag(-np.asarray(Q.sum(axis=1)).ravel())
    return out.tocsr()


def detailed_balance_defects(rates: dict) -> list[tuple[int, int]]:
    """Pairs violating ``Q(u, v) = Q(v, u)``, which is detailed balance for the uniform measure."""
    return [(a, b) for (a, b), r in rates.items() if rates.get((b, a), Fraction(0)) != r]


def stationarity_defects(rates: dict, n: int) -> list[int]:
    """States where inflow and outflow of the uniform measure differ (exact arithmetic)."""
    out = [Fraction(0)] * n
    inn = [Fraction(0)] * n
    for (a, b), r in rates.items():
        out[a] += r
        inn[b] += r
    return [i for i in range(n) if out[i] != inn[i]]


# ---------------------------------------------------------------------------
# continuous-time runs
# ---------------------------------------------------------------------------


@dataclass
class ReversibleRecord:
    """Snapshots of a reversible run at the requested times."""

    times: np.ndarray
    snapshots: np.ndarray = field(repr=False)
    proposals: int
    accepted: int
    displacement: int
    seed: int
    dynamics: str
    moves: np.ndarray | None = field(default=None, repr=False)

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]


def reversible_run(
    target,
    state,
    dynamics: Dynamics,
    T: float,
    seed: int,
    times: Sequence[float] | None = None,
    record_moves: bool = False,
) -> ReversibleRecord:
    """Exact continuous-time simulation by uniformisation.

    Every (face, direction) pair proposes at rate 1, so the number of
    proposals in an interval of length ``s`` is Poisson with mean
    ``2 * n_faces * s``.  Tower proposals are thinned with probability
    ``1/n``.  Snapshots are taken at ``times`` (default ``[T]``).  With
    ``record_moves`` the accepted moves ``(face, signed length)`` are kept.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    h = _heights(target, state)
    args, faces = _args(target)
    times = np.array([T] if times is None else times, dtype=float)
    if np.any(np.diff(times) < 0) or times[-1] > T + 1e-12:
        raise ValueError("observation times must be increasing and at most T")
    rng = stream(seed, "reversible", dynamics)
    rate = 2.0 * faces.size
    tower = dynamics == "tower"
    if dynamics not in ("glauber", "tower"):
        raise ValueError(f"unknown dynamics {dynamics!r}")
    snaps = np.empty((times.size,) + h.shape, dtype=np.int64)
    t = 0.0
    props = acc = disp = 0
    recs = []
    for k, tk in enumerate(times):
        n = int(rng.poisson(rate * (tk - t))) if tk > t else 0
        if n:
            path = K.move_path(h, args[0], faces, *args[1:], n, tower, _max_len(target), kernel_seed(seed, "move", k))
            props += n
            acc += path.shape[0]
            disp += int(path[:, 1].sum())
            if record_moves:
                recs.append(path)
        snaps[k] = h
        t = tk
    moves = np.concatenate(recs) if record_moves and recs else (np.empty((0, 2), np.int64) if record_moves else None)
    return ReversibleRecord(times, snaps, props, acc, disp, seed, dynamics, moves)


def replay(target, state, moves: np.ndarray) -> np.ndarray:
    """States visited by applying recorded moves; row 0 is the start."""
    h = _heights(target, state)
    L = h.shape[1]
    out = np.empty((moves.shape[0] + 1,) + h.shape, dtype=np.int64)
    out[0] = h
    for i, (f, s) in enumerate(moves):
        m, t = divmod(int(f), L)
        sign = 1 if s > 0 else -1
        for face in _tower_faces(target, m, t, abs(int(s)), sign):
            h[face] += sign
        out[i + 1] = h
    return out


# ---------------------------------------------------------------------------
# mobility
# ---------------------------------------------------------------------------


def mobility(r1, r2):
    """``mu(rho) = sin(pi rho1) sin(pi rho2) / (pi sin(pi (rho1 + rho2)))``."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    return np.sin(np.pi * r1) * np.sin(np.pi * r2) / (np.pi * np.sin(np.pi * (r1 + r2)))


@dataclass
class MobilityEstimate:
    """Static Green–Kubo estimate of the mobility from equilibrium samples.

    ``value`` counts a tower of length ``n`` as one jump of size ``n``
    (squared displacement ``n^2`` at rate ``1/n``); ``unit_value`` counts it
    as ``n`` unit events at rate ``1/n``.  ``drift_sums`` holds the exact
    per-sample sums of signed displacement rates, which vanish identically.
    """

    value: float
    stderr: float
    unit_value: float
    unit_stderr: float
    target: float
    drift_sums: np.ndarray
    n_samples: int
    flagged: list[str]

    def within(self, n_stderr: float = 3.0) -> bool:
        return abs(self.value - self.target) <= n_stderr * self.stderr


def _tower_statistics(h: np.ndarray, g: TorusGeometry) -> tuple[int, int, int]:
    """``(sum n(n+1)/2, number of towers, signed drift)`` over all particles, times 2."""
    free = np.ones(h.shape, dtype=np.bool_)
    up, down = K.jump_counts(h, free, True, g.L1, g.L2, g.dN, g.W, g.L2)
    sq = int(np.sum(up * (up + 1) // 2 + down * (down + 1) // 2))
    # sum over towers of rate * signed length: each tower contributes (1/n) * (+-n)
    drift = int(np.sum(up) - np.sum(down))
    return sq, int(np.sum(up) + np.sum(down)), drift


def mobility_estimate(rho, geometry: TorusGeometry, samples, min_samples: int = 8) -> MobilityEstimate:
    """``(1 / 2|Lambda|) E[sum over towers of rate * displacement^2]`` over equilibrium samples.

    ``samples`` is a :class:`~dimerlab.gibbs.GibbsEnsemble` or an array of
    torus height fields.  The signed drift of every sample is checked to be
    exactly zero; a nonzero value raises.
    """
    r = Slope.coerce(rho)
    hs = samples.heights if isinstance(samples, GibbsEnsemble) else np.asarray(samples)
    if hs.ndim == 2:
        hs = hs[None]
    area = geometry.L1 * geometry.L2
    vals = np.empty(hs.shape[0])
    unit = np.empty(hs.shape[0])
    drifts = np.empty(hs.shape[0], dtype=np.int64)
    for i, h in enumerate(hs):
        sq, count, drift = _tower_statistics(np.asarray(h, dtype=np.int64), geometry)
        if drift != 0:
            raise AssertionError(f"sample {i}: signed tower drift {drift} is not zero")
        vals[i] = sq / (2 * area)
        unit[i] = count / (2 * area)
        drifts[i] = drift
    flagged = []
    if hs.shape[0] < min_samples:
        flagged.append(f"only {hs.shape[0]} samples; at least {min_samples} needed for a stderr")
    v, se = jackknife(vals)
    u, use = jackknife(unit)
    return MobilityEstimate(
        float(v), float(se), float(u), float(use), float(mobility(*r.as_tuple())), drifts, int(hs.shape[0]), flagged
    )


def mobility_speed_gap(n: int = 50, margin: float = 0.02) -> float:
    """Largest ``|mu - v|`` over an ``n x n`` grid of interior slopes."""
    from .pde import interior_grid

    grid = interior_grid(n, margin)
    mu = mobility(grid[:, 0], grid[:, 1])
    v = np.array([speed_function(tuple(p)) for p in grid])
    return float(np.max(np.abs(mu - v)))


# ---------------------------------------------------------------------------
# coupling times
# ---------------------------------------------------------------------------


@dataclass
class MixingEstimate:
    """Coupling times of the grand monotone coupling across a ladder of sizes.

    Times are in continuous-time units (one proposal per face and direction
    per unit time).  Censored replicas are stored as ``inf``.
    """

    kind: str
    sizes: np.ndarray
    times: list[np.ndarray] = field(repr=False)
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    censored: np.ndarray
    exponent: float
    ci: tuple[float, float]
    flagged: list[str]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("size,median_time,q25,q75,n_censored\n")
            for row in zip(self.sizes, self.median, self.q25, self.q75, self.censored):
                fh.write("{:d},{:.10g},{:.10g},{:.10g},{:d}\n".format(*row))


def _loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def ladder_domain(kind: str, size: int, rho=(1 / 3, 1 / 3)) -> DomainSpec:
    """Domain of linear size ``size`` for a coupling ladder."""
    if kind == "hexagon":
        return DomainSpec.hexagon(size, size, size)
    if kind in ("torus", "rectangle"):
        return DomainSpec.rectangle(size, size, rho)
    raise ValueError(f"unknown ladder kind {kind!r}")


def coupling_time(
    kind: Literal["torus", "hexagon"],
    sizes: Sequence[int],
    replicas: int,
    seed: int,
    max_time: float | None = None,
    n_boot: int = 400,
    should_stop=None,
    max_proposals: int | None = None,
) -> MixingEstimate:
    """Median coalescence time of Glauber chains started from the extreme tilings.

    For ``kind="torus"`` each rung is an ``L x L`` block whose frame is the
    flat height of slope (1/3, 1/3) (the affine boundary class); for
    ``"hexagon"`` it is the regular hexagon of side ``L``.  The exponent is
    the log-log slope of median time against ``L`` with a bootstrap 95%
    interval over replicas.  Replicas not coalesced by ``max_time``
    (default ``50 L^3``), or after ``max_proposals`` single-face proposals,
    are censored.  ``should_stop(size)`` is asked
    before each rung after the first; a true answer truncates the ladder,
    which is flagged.
    """
    sizes = np.array(sorted(sizes), dtype=np.int64)
    if np.any(np.diff(sizes) <= 0):
        raise ValueError("ladder sizes must be strictly increasing")
    all_times = []
    censored = np.zeros(sizes.size, dtype=np.int64)
    flagged = []
    for i, L in enumerate(sizes):
        if i > 0 and should_stop is not None and should_stop(int(L)):
            flagged.append(f"ladder truncated before L={L}")
            sizes = sizes[:i]
            censored = censored[:i]
            break
        dom = ladder_domain(kind, int(L))
        faces = dom.faces()
        cap = 50.0 * L**3 if max_time is None else float(max_time)
        per_unit = 2 * faces.size
        if max_proposals is not None:
            cap = min(cap, max_proposals / per_unit)
        ts = np.empty(replicas)
        for r in range(replicas):
            Ha = dom.h_max.copy()
            Hb = dom.h_min.copy()
            steps = K.coupled_glauber(
                Ha, Hb, dom.free, faces, False, 0, 0, 0, 0,
                int(cap * per_unit), 0, kernel_seed(seed, "couple", kind, int(L), r),
            )
            if steps == -2:
                raise AssertionError(f"monotone coupling lost its order at L={L}, replica {r}")
            if steps < 0:
                ts[r] = np.inf
                censored[len(all_times)] += 1
            else:
                ts[r] = steps / per_unit
        all_times.append(ts)
        if censored[len(all_times) - 1]:
            flagged.append(f"L={L}: {censored[len(all_times) - 1]} of {replicas} replicas censored")
    med = np.array([np.median(t) for t in all_times])
    # censored replicas are +inf; an interpolation-free quantile keeps them ordered
    q25 = np.array([np.quantile(t, 0.25, method="inverted_cdf") for t in all_times])
    q75 = np.array([np.quantile(t, 0.75, method="inverted_cdf") for t in all_times])
    ok = np.isfinite(med)
    if ok.sum() >= 2:
        exponent = _loglog_slope(sizes[ok], med[ok])
        rng = stream(seed, "couple", "bootstrap")
        boots = []
        for _ in range(n_boot):
            m = [np.median(rng.choice(t, t.size)) for t in all_times]
            m = np.array(m)
            good = np.isfinite(m) & ok
            if good.sum() >= 2:
                boots.append(_loglog_slope(sizes[good], m[good]))
        ci = (float(np.quantile(boots, 0.025)), float(np.quantile(boots, 0.975)))
    else:
        exponent = float("nan")
        ci = (float("nan"), float("nan"))
        flagged.append("fewer than two uncensored sizes; no exponent")
    return MixingEstimate(kind, sizes, all_times, med, q25, q75, censored, float(exponent), ci, flagged)


def equilibrium_heights(target, seed: int, sweeps: int | None = None) -> np.ndarray:
    """A Glauber-equilibrated height field on ``target`` (torus class or bounded domain)."""
    if isinstance(target, TorusGeometry):
        h = flat_heights(target)
        n = target.L1 * target.L2
    else:
        h = target.h_min.copy()
        n = target.n_free
    sweeps = 10 * n if sweeps is None else sweeps
    args, faces = _args(target)
    K.glauber_sweep(h, args[0], faces, *args[1:], 2 * faces.size * sweeps, kernel_seed(seed, "equilibrate"))
    return h

