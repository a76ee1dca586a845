"""Equilibrium: uniform sampling, exact enumeration, free energy and surface tension.

The uniform measure on a torus winding class stands in for the ergodic Gibbs
state of the same slope; Glauber flips preserve the class.  Free energy and
surface tension refer to one face (equivalently one lozenge) of the lattice.
"""

from __future__ import annotations

import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy import integrate, sparse, stats
from scipy.interpolate import RectBivariateSpline

from . import _kernels as K
from .domains import DomainSpec
from .fitting import ExponentEstimate, fit_exponent
from .lattice import (
    HeightField,
    InterlacedConfig,
    Slope,
    TilingError,
    TorusGeometry,
    apply_flip,
    as_height_field,
    flat_heights,
    height_to_particles,
)
from .rng import kernel_seed

log = logging.getLogger(__name__)

BURN_IN_PER_FACE = 10


# ---------------------------------------------------------------------------
# Glauber dynamics
# ---------------------------------------------------------------------------


def glauber_step(cfg, face: tuple[int, int], direction: int, rng=None):
    """Rotate the three lozenges around ``face`` if that is admissible.

    Accepts and returns either an :class:`InterlacedConfig` or a
    :class:`HeightField`.  ``rng`` is unused (the move is deterministic given
    face and direction) and kept for signature symmetry with random callers.
    """
    hf = as_height_field(cfg)
    out = apply_flip(hf, face[0], face[1], direction)
    if isinstance(cfg, InterlacedConfig):
        return height_to_particles(out)
    return out


def run_glauber(H: np.ndarray, g: TorusGeometry, n_props: int, seed: int) -> int:
    """In-place Glauber proposals on a torus height array; returns accepted count."""
    return int(K.glauber_torus(H, g.L1, g.L2, g.dN, g.W, int(n_props), int(seed)))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def integrated_autocorrelation(x: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's self-consistent window."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0:
        return 0.5
    y = x - x.mean()
    f = np.fft.rfft(y, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 0.5
    for w in range(1, n):
        tau += acf[w]
        if w >= c * tau:
            break
    return max(float(tau), 0.5)


@dataclass
class GibbsEnsemble:
    """Samples of the uniform measure on one torus winding class."""

    slope: tuple[float, float]
    geometry: TorusGeometry
    heights: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def samples(self) -> list[InterlacedConfig]:
        return [height_to_particles(HeightField(self.geometry, h)) for h in self.heights]

    def __len__(self) -> int:
        return self.heights.shape[0]

    def save(self, directory) -> list[Path]:
        """Write ``manifest.json`` and one text configuration per sample."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        written = []
        for i, cfg in enumerate(self.samples):
            p = d / f"sample_{i:05d}.cfg"
            cfg.save(p)
            written.append(p)
        g = self.geometry
        manifest = {
            "geometry": {"L1": g.L1, "L2": g.L2, "N": g.N, "W": g.W},
            "slope": list(self.slope),
            "free_energy_normalization": "per face",
            "n_samples": len(self),
            "diagnostics": self.diagnostics,
            "files": [p.name for p in written],
        }
        mp = d / "manifest.json"
        tmp = mp.with_suffix(".tmp")
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        os.replace(tmp, mp)
        return written + [mp]

    @classmethod
    def load(cls, directory) -> "GibbsEnsemble":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        gd = manifest["geometry"]
        g = TorusGeometry(gd["L1"], gd["L2"], gd["N"], gd["W"])
        hs = []
        for name in manifest["files"]:
            cfg = InterlacedConfig.load(d / name)
            if cfg.geometry != g:
                raise TilingError(f"{name} has geometry {cfg.geometry}, expected {g}")
            hs.append(as_height_field(cfg).h)
        return cls(tuple(manifest["slope"]), g, np.array(hs), manifest["diagnostics"])


def sample_gibbs(
    rho,
    geometry: TorusGeometry | tuple[int, int],
    sweeps: int,
    seed: int,
    n_samples: int = 1,
    burn_in: int | None = None,
    start: np.ndarray | None = None,
) -> GibbsEnsemble:
    """Glauber-chain samples of the uniform measure on a torus winding class.

    A sweep is ``2 * L1 * L2`` single-face proposals, so every face and
    direction is proposed once per unit of time.  After ``burn_in`` sweeps
    (default ``10 * L1 * L2``) one sample is kept every ``sweeps`` sweeps.
    Diagnostics record acceptance counts and the effective sample size of
    the centred height at face ``(0, 0)``.
    """
    rho = Slope.coerce(rho)
    if isinstance(geometry, TorusGeometry):
        g = geometry
    else:
        g = TorusGeometry.for_slope(rho, *geometry)
    tol = 1.0 / min(g.L1, g.L2) + 1e-12
    if abs(g.slope[0] - rho.rho1) > tol or abs(g.slope[1] - rho.rho2) > tol:
        raise TilingError(f"slope {rho.as_tuple()} does not match the winding class {g.slope}")
    per_sweep = 2 * g.L1 * g.L2
    min_burn = BURN_IN_PER_FACE * g.L1 * g.L2
    burn = min_burn if burn_in is None else int(burn_in)
    warnings = []
    if burn < min_burn:
        warnings.append(f"burn-in of {burn} sweeps is below the documented minimum {min_burn}")
    H = flat_heights(g) if start is None else np.array(start, dtype=np.int64)
    accepted = run_glauber(H, g, burn * per_sweep, kernel_seed(seed, "gibbs", "burn"))
    out = np.empty((n_samples, g.L1, g.L2), dtype=np.int64)
    trace = np.empty(n_samples)
    for i in range(n_samples):
        if i > 0 or burn == 0:
            accepted += run_glauber(H, g, sweeps * per_sweep, kernel_seed(seed, "gibbs", i))
        out[i] = H
        trace[i] = H[0, 0] - H.mean()
    tau = integrated_autocorrelation(trace)
    ess = n_samples / (2 * tau)
    diag = {
        "seed": int(seed),
        "burn_in_sweeps": int(burn),
        "sweeps_between_samples": int(sweeps),
        "proposals": int(per_sweep * (burn + max(n_samples - 1, 0) * sweeps)),
        "accepted": int(accepted),
        "tau_int": float(tau),
        "effective_sample_size": float(ess),
        "warnings": warnings,
    }
    return GibbsEnsemble(g.slope, g, out, diag)


# ---------------------------------------------------------------------------
# exact enumeration
# ---------------------------------------------------------------------------


class EnumerationRefused(RuntimeError):
    def __init__(self, estimate: int, cap: int):
        super().__init__(f"state space has about {estimate} states, above the cap {cap}")
        self.estimate = estimate


def _column_transitions(L2: int, N: int):
    """Subsets of size N and, per ordered pair, the admissible increment vectors ``d``."""
    subsets = [frozenset(c) for c in combinations(range(L2), N)]
    trans = {}
    for i, P in enumerate(subsets):
        for j, Q in enumerate(subsets):
            ds = []
            for d0 in (0, 1):
                d = [d0]
                ok = True
                for y in range(L2 - 1):
                    d.append(d[-1] + (y in P) - (y in Q))
                for y in range(L2):
                    if d[y] not in (0, 1) or (y in P and d[y] != 0):
                        ok = False
                        break
                if ok:
                    ds.append(np.array(d, dtype=np.int64))
            if ds:
                trans[(i, j)] = ds
    return subsets, trans


def torus_count(g: TorusGeometry) -> int:
    """Number of tilings in the winding class of ``g`` by a column transfer matrix."""
    return torus_class_counts(g.L1, g.L2, g.N).get(g.W, 0)


def torus_class_counts(L1: int, L2: int, N: int) -> dict[int, int]:
    """Tilings of the ``L1 x L2`` torus with ``N`` particles per column, keyed by ``W``."""
    subsets, trans = _column_transitions(L2, N)
    s = len(subsets)
    # T[w][i, j]: transitions from subset i to j raising h(., 0) by w
    T = [np.zeros((s, s), dtype=object) for _ in range(2)]
    for (i, j), ds in trans.items():
        for d in ds:
            T[int(d[0])][i, j] += 1
    # polynomial matrix power by repeated multiplication, degree <= L1
    P = [np.identity(s, dtype=object)] + [np.zeros((s, s), dtype=object) for _ in range(L1)]
    for _ in range(L1):
        Q = [np.zeros((s, s), dtype=object) for _ in range(L1 + 1)]
        for w, Pw in enumerate(P):
            if not np.any(Pw):
                continue
            for e in (0, 1):
                if w + e <= L1:
                    Q[w + e] = Q[w + e] + Pw.dot(T[e])
        P = Q
    return {w: int(np.trace(Pw)) for w, Pw in enumerate(P) if np.trace(Pw) != 0}


@dataclass
class Enumeration:
    """All states of a small geometry with exact uniform sampling by index.

    Torus states are height arrays normalised to ``h(0, 0) = 0``; bounded
    domain states are full height arrays including the frozen frame.
    """

    target: object
    states: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return int(self.states.shape[0])

    def key(self, h: np.ndarray) -> bytes:
        h = np.asarray(h, dtype=np.int64)
        if isinstance(self.target, TorusGeometry):
            h = h - h[0, 0]
        return h.tobytes()

    def index(self) -> dict[bytes, int]:
        return {self.key(s): i for i, s in enumerate(self.states)}

    def state(self, i: int) -> np.ndarray:
        return self.states[i].copy()

    def sample(self, rng: np.random.Generator, size: int | None = None):
        idx = rng.integers(self.count, size=size)
        return self.states[idx].copy()


def enumerate_small(target, cap: int = 10**6) -> Enumeration:
    """Exhaustive list of the tilings of a torus winding class or a bounded domain.

    Raises :class:`EnumerationRefused` (with a state-count estimate) above ``cap``.
    """
    if isinstance(target, TorusGeometry):
        return _enumerate_torus(target, cap)
    if isinstance(target, DomainSpec) and target.bounded:
        return _enumerate_domain(target, cap)
    raise TypeError("target must be a TorusGeometry or a bounded DomainSpec")


def _enumerate_torus(g: TorusGeometry, cap: int) -> Enumeration:
    n = math.comb(g.L2, g.N)
    if n ** min(g.L1, 3) > 50 * cap and n > 1:
        raise EnumerationRefused(n**g.L1, cap)
    total = torus_count(g)
    if total > cap:
        raise EnumerationRefused(total, cap)
    subsets, trans = _column_transitions(g.L2, g.N)
    by_src = {}
    for (i, j), ds in trans.items():
        by_src.setdefault(i, []).extend((j, d) for d in ds)
    states = []
    cols = np.empty((g.L1, g.L2), dtype=np.int64)

    def rec(m, i):
        if m == g.L1 - 1:
            for j, d in by_src.get(i, []):
                if j == first and np.array_equal(cols[m] + d, cols[0] + g.W):
                    states.append(cols.copy())
            return
        for j, d in by_src.get(i, []):
            cols[m + 1] = cols[m] + d
            rec(m + 1, j)

    for first, P in enumerate(subsets):
        up = np.array([0 if y in P else 1 for y in range(g.L2)], dtype=np.int64)
        cols[0] = np.concatenate([[0], np.cumsum(up)[:-1]])
        rec(0, first)
    arr = np.array(states, dtype=np.int64).reshape(-1, g.L1, g.L2)
    if arr.shape[0] != total:
        raise RuntimeError(f"enumeration found {arr.shape[0]} states, transfer matrix {total}")
    return Enumeration(g, arr)


def _enumerate_domain(dom: DomainSpec, cap: int) -> Enumeration:
    """Breadth-first search of the flip graph from the minimal tiling.

    Simply connected domains are flip-connected, so this reaches every tiling.
    """
    free = dom.free
    faces = [tuple(f) for f in np.argwhere(free)]
    start = dom.h_min.copy()
    seen = {start.tobytes(): 0}
    order = [start]
    head = 0
    args = (free, False, 0, 0, 0, 0)
    while head < len(order):
        h = order[head]
        head += 1
        for m, y in faces:
            for d in (1, -1):
                if K.flip_admissible(h, *args, m, y, d):
                    h2 = h.copy()
                    h2[m, y] += d
                    k = h2.tobytes()
                    if k not in seen:
                        seen[k] = len(order)
                        order.append(h2)
                        if len(order) > cap:
                            raise EnumerationRefused(len(order), cap)
    return Enumeration(dom, np.array(order))


def enumeration_chi_square(g: TorusGeometry, n_samples: int, seed: int, sweeps: int = 12):
    """Pearson test of :func:`sample_gibbs` output against the uniform law on the class.

    Returns ``(statistic, p_value, counts)`` with counts indexed as in
    :func:`enumerate_small`.
    """
    enum = enumerate_small(g)
    index = enum.index()
    ens = sample_gibbs(g.slope, g, sweeps, seed, n_samples=n_samples)
    counts = np.zeros(enum.count, dtype=np.int64)
    for h in ens.heights:
        counts[index[enum.key(h)]] += 1
    res = stats.chisquare(counts)
    return float(res.statistic), float(res.pvalue), counts


def glauber_generator(enum: Enumeration) -> sparse.csr_matrix:
    """Exact Glauber rate matrix (rate 1 per admissible face rotation) on enumerated states."""
    idx = enum.index()
    n = enum.count
    rows, cols = [], []
    for a, h in enumerate(enum.states):
        for m, y, d in _admissible_moves(enum.target, h):
            h2 = h.copy()
            h2[m, y] += d
            b = idx.get(enum.key(h2))
            if b is None:
                raise RuntimeError("flip left the enumerated state space")
            rows.append(a)
            cols.append(b)
    Q = sparse.coo_matrix((np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(n, n)).tocsr()
    out = sparse.lil_matrix(Q)
    out.setdiag(-np.asarray(Q.sum(axis=1)).ravel())
    return out.tocsr()


def _admissible_moves(target, h: np.ndarray):
    if isinstance(target, TorusGeometry):
        g = target
        free = np.ones(h.shape, dtype=np.bool_)
        args = (free, True, g.L1, g.L2, g.dN, g.W)
        it = ((m, y) for m in range(g.L1) for y in range(g.L2))
    else:
        args = (target.free, False, 0, 0, 0, 0)
        it = (tuple(f) for f in np.argwhere(target.free))
    for m, y in it:
        for d in (1, -1):
            if K.flip_admissible(h, *args, m, y, d):
                yield m, y, d


# ---------------------------------------------------------------------------
# free energy and surface tension
# ---------------------------------------------------------------------------


def free_energy(a: float, b: float, with_error: bool = False):
    """Per-face free energy ``(2 pi)^-2 \\iint log|1 + a e^{i t} + b e^{i s}| dt ds``.

    Jensen's formula performs the inner integral exactly,
    ``(2 pi)^-1 \\int log|c + b e^{i s}| ds = log max(|c|, b)``, leaving a
    bounded one-dimensional integrand whose single kink is passed to the
    adaptive quadrature as a breakpoint.
    """
    if a <= 0 or b <= 0:
        raise ValueError("weights must be positive")

    def f(t):
        return 0.5 * math.log(max(1.0 + a * a + 2.0 * a * math.cos(t), b * b))

    c0 = (b * b - 1.0 - a * a) / (2.0 * a)
    pts = [math.acos(c0)] if -1.0 < c0 < 1.0 else None
    with warnings.catch_warnings():
        # extreme weights trip the roundoff detector long before the error matters
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(f, 0.0, math.pi, points=pts, epsabs=1e-14, epsrel=1e-13, limit=200)
    val /= math.pi
    err /= math.pi
    return (val, err) if with_error else val


def _angle_density(c: float) -> float:
    return (math.pi - math.acos(min(1.0, max(-1.0, c)))) / math.pi


def slope_of_weights(X: float, Y: float) -> tuple[float, float]:
    """Gradient of the free energy in ``(log a, log b)``: the two lozenge densities.

    By the same reduction, ``d F / d log b`` is the fraction of angles where
    ``|1 + a e^{it}| < b``, and symmetrically for ``a``.
    """
    a, b = math.exp(X), math.exp(Y)
    ca = (a * a - 1.0 - b * b) / (2.0 * b)
    cb = (b * b - 1.0 - a * a) / (2.0 * a)
    return _angle_density(ca), _angle_density(cb)


def _slope_jacobian(X: float, Y: float) -> np.ndarray:
    a, b = math.exp(X), math.exp(Y)
    ca = (a * a - 1.0 - b * b) / (2.0 * b)
    cb = (b * b - 1.0 - a * a) / (2.0 * a)
    J = np.zeros((2, 2))
    if abs(ca) < 1:
        k = 1.0 / (math.pi * math.sqrt(1.0 - ca * ca))
        J[0] = k * (a * a / b), k * (-ca - b)
    if abs(cb) < 1:
        k = 1.0 / (math.pi * math.sqrt(1.0 - cb * cb))
        J[1] = k * (-cb - a), k * (b * b / a)
    return J


def legendre_point(rho, tol: float = 1e-13, max_iter: int = 200) -> tuple[float, float]:
    """Solve ``grad F(X, Y) = rho`` by damped Newton iteration with backtracking."""
    r = np.array([rho[0], rho[1]], dtype=float)
    # start from the triangle with angles pi * rho (law of sines); Newton
    # only has to polish it, and the flat start fails near the corners
    s3 = math.sin(math.pi * (1.0 - r[0] - r[1]))
    if s3 > 0 and r.min() > 0:
        z = np.log(np.sin(np.pi * r) / s3)
    else:
        z = np.zeros(2)

    def resid(z):
        return np.array(slope_of_weights(z[0], z[1])) - r

    f = resid(z)
    for _ in range(max_iter):
        nf = float(np.max(np.abs(f)))
        if nf < tol:
            return float(z[0]), float(z[1])
        J = _slope_jacobian(*z)
        try:
            step = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            step = -f * 4.0
        lam = 1.0
        while lam > 1e-8:
            z2 = z + lam * step
            f2 = resid(z2)
            if float(np.max(np.abs(f2))) < nf:
                break
            lam *= 0.5
        else:
            # bisection-like fallback: small gradient step towards the target
            z2 = z - 0.5 * f
            f2 = resid(z2)
        z, f = z2, f2
    raise RuntimeError(f"Legendre solve did not converge at rho={tuple(r)}")


def sigma_value(rho) -> tuple[float, float, float]:
    """Surface tension by Legendre transform; returns ``(sigma, X, Y)``."""
    X, Y = legendre_point(rho)
    F = free_energy(math.exp(X), math.exp(Y))
    return rho[0] * X + rho[1] * Y - F, X, Y


def surface_tension(rho, step: float = 1e-5, with_residual: bool = False):
    """Surface tension ``sigma(rho)`` and its Hessian ``sigma_ij``.

    ``sigma(rho) = max_{X, Y} [rho . (X, Y) - F(e^X, e^Y)]``.  The gradient of
    sigma is the maximiser ``(X, Y)``; the Hessian is its central finite
    difference with the given step.
    """
    r = Slope.coerce(rho)
    if r.distance_to_boundary() < 1e-3:
        raise ValueError(f"slope {r.as_tuple()} is within 1e-3 of the triangle boundary")
    rho = r.as_tuple()
    sigma, X, Y = sigma_value(rho)
    hess = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = step
        zp = legendre_point((rho[0] + e[0], rho[1] + e[1]))
        zm = legendre_point((rho[0] - e[0], rho[1] - e[1]))
        hess[:, j] = (np.array(zp) - np.array(zm)) / (2 * step)
    hess = 0.5 * (hess + hess.T)
    if with_residual:
        res = np.max(np.abs(np.array(slope_of_weights(X, Y)) - np.array(rho)))
        return sigma, hess, float(res)
    return sigma, hess


class SurfaceTensionTable:
    """Tabulated surface tension and Hessian with bicubic interpolation.

    The triangle shrunk by ``margin`` is mapped to the unit square by
    ``u = (rho1 - m) / (1 - rho2 - 2 m)``, ``v = rho2``; values are tabulated
    on a tensor grid in ``(u, v)``, so every node keeps distance ``m`` from
    the boundary.
    """

    def __init__(self, n: int = 48, margin: float = 0.008):
        self.n = n
        self.margin = margin
        self.u = np.linspace(0.0, 1.0, n)
        self.v = np.linspace(margin, 1 - 2 * margin, n)
        sig = np.empty((n, n))
        hs = np.empty((3, n, n))
        gr = np.empty((2, n, n))
        for i, u in enumerate(self.u):
            for j, v in enumerate(self.v):
                rho = (margin + u * (1 - v - 2 * margin), v)
                s, h = surface_tension(rho, step=1e-6)
                sig[i, j] = s
                hs[:, i, j] = h[0, 0], h[0, 1], h[1, 1]
                gr[:, i, j] = legendre_point(rho)
        self.sigma_grid = sig
        self.hess_grid = hs
        self.grad_grid = gr
        self._s = RectBivariateSpline(self.u, self.v, sig, kx=3, ky=3)
        self._h = [RectBivariateSpline(self.u, self.v, hs[k], kx=3, ky=3) for k in range(3)]
        self._g = [RectBivariateSpline(self.u, self.v, gr[k], kx=3, ky=3) for k in range(2)]

    @property
    def slopes(self) -> np.ndarray:
        U, V = np.meshgrid(self.u, self.v, indexing="ij")
        return np.stack([self.margin + U * (1 - V - 2 * self.margin), V], axis=-1)

    def _uv(self, r1, r2):
        r1 = np.asarray(r1, dtype=float)
        r2 = np.asarray(r2, dtype=float)
        m = self.margin
        return (r1 - m) / (1.0 - r2 - 2 * m), r2

    def sigma(self, r1, r2) -> np.ndarray:
        u, v = self._uv(r1, r2)
        return self._s.ev(u, v)

    def gradient(self, r1, r2) -> tuple[np.ndarray, np.ndarray]:
        """Interpolated ``(d sigma / d rho1, d sigma / d rho2)``."""
        u, v = self._uv(r1, r2)
        return self._g[0].ev(u, v), self._g[1].ev(u, v)

    def hessian(self, r1, r2) -> np.ndarray:
        """Array of shape ``(..., 2, 2)`` of interpolated ``sigma_ij``."""
        u, v = self._uv(r1, r2)
        h11, h12, h22 = (s.ev(u, v) for s in self._h)
        out = np.empty(np.shape(h11) + (2, 2))
        out[..., 0, 0] = h11
        out[..., 0, 1] = h12
        out[..., 1, 0] = h12
        out[..., 1, 1] = h22
        return out


# ---------------------------------------------------------------------------
# spatial fluctuations
# ---------------------------------------------------------------------------


@dataclass
class VarianceProfile:
    r: np.ndarray
    var: np.ndarray
    stderr: np.ndarray
    fit: ExponentEstimate | None
    fit_window: tuple[int, int]
    warnings: list[str]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("r_lattice_spacings,var_height_diff_height_units_sq,jackknife_stderr\n")
            for r, v, s in zip(self.r, self.var, self.stderr):
                fh.write(f"{int(r)},{v:.10g},{s:.10g}\n")

    def monotone(self) -> bool:
        lo, hi = self.fit_window
        sel = (self.r >= lo) & (self.r <= hi)
        return bool(np.all(np.diff(self.var[sel]) >= 0))


def height_variance_profile(
    ensemble: GibbsEnsemble,
    max_r: int,
    fit_window: tuple[int, int] = (4, 32),
    axis: int = 1,
) -> VarianceProfile:
    """``Var(h_x - h_{x+r})`` along a lattice axis, averaged over all faces.

    ``axis=1`` shifts along the columns, ``axis=0`` across them.  Errors are
    delete-one-sample jackknife estimates; the table is fitted by
    ``c log r + d`` over ``fit_window``.
    """
    g = ensemble.geometry
    L = (g.L1, g.L2)[axis]
    warnings = []
    if max_r > L // 4:
        warnings.append(f"max_r={max_r} exceeds L/4={L // 4}; truncated")
        max_r = L // 4
    rs = np.arange(0, max_r + 1)
    per = np.empty((len(ensemble), rs.size))
    per_mean = np.empty_like(per)
    wrap = g.dN if axis == 1 else g.W
    for k, h in enumerate(ensemble.heights):
        h = h.astype(float)
        for i, r in enumerate(rs):
            shifted = np.roll(h, -r, axis=axis)
            if r > 0:
                if axis == 1:
                    shifted[:, L - r :] += wrap
                else:
                    shifted[L - r :, :] += wrap
            diff = shifted - h
            per_mean[k, i] = diff.mean()
            per[k, i] = (diff**2).mean()
    n = len(ensemble)

    def stat(idx):
        m1 = per_mean[idx].mean(axis=0)
        m2 = per[idx].mean(axis=0)
        return m2 - m1**2

    var = stat(np.arange(n))
    if n >= 2:
        loo = np.array([stat(np.delete(np.arange(n), i)) for i in range(n)])
        se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    else:
        se = np.full(rs.size, np.nan)
        warnings.append("a single sample gives no jackknife error")
    fit = None
    lo, hi = fit_window
    hi = min(hi, max_r)
    try:
        fit = fit_exponent(rs[rs > 0], var[rs > 0], "log", (lo, hi))
    except ValueError as exc:
        warnings.append(f"log fit failed: {exc}")
    return VarianceProfile(rs, var, se, fit, (lo, hi), warnings)
