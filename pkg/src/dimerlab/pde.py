"""Continuum solvers: Hamilton–Jacobi growth, diffusive relaxation, bumps and a KPZ-type SPDE.

Fields live on periodic ``n1 x n2`` grids.  A :class:`ContinuumField` stores
the periodic part of the solution plus an affine background slope, so tilted
interfaces on the torus need no special boundary treatment.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numba import njit

from .fitting import ExponentEstimate, compare_models, latter_half
from .rng import stream

SLOPE_MARGIN = 0.02
_NOISE_CHUNK = 64


class CFLError(ValueError):
    pass


class GradientExit(RuntimeError):
    """Raised when a solution's gradient leaves the admissible slope region."""

    def __init__(self, msg: str, snapshot: "ContinuumField"):
        super().__init__(msg)
        self.snapshot = snapshot


class BlowUp(RuntimeError):
    def __init__(self, msg: str, last_stable_time: float):
        super().__init__(msg)
        self.last_stable_time = last_stable_time


@dataclass
class ContinuumField:
    """``phi(x) = <slope, x> + values`` on a periodic grid with spacing ``dx``.

    Node ``(i, j)`` sits at ``origin + (i, j) * dx``; the period is
    ``(n1 * dx, n2 * dx)``.
    """

    values: np.ndarray
    dx: float
    slope: tuple[float, float] = (0.0, 0.0)
    origin: tuple[float, float] = (0.0, 0.0)
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        self.slope = (float(self.slope[0]), float(self.slope[1]))

    @classmethod
    def from_function(cls, f: Callable, n: int, slope=(0.0, 0.0), extent: float = 1.0, origin=(0.0, 0.0)):
        """Sample the periodic part ``f(x1, x2)`` on an ``n x n`` grid."""
        dx = extent / n
        x1, x2 = cls.grid_coords(n, n, dx, origin)
        return cls(f(x1, x2), dx, slope, origin)

    @staticmethod
    def grid_coords(n1, n2, dx, origin=(0.0, 0.0)):
        i = np.arange(n1)[:, None]
        j = np.arange(n2)[None, :]
        return origin[0] + i * dx + 0 * j, origin[1] + j * dx + 0 * i

    @property
    def shape(self):
        return self.values.shape

    @property
    def coords(self):
        return self.grid_coords(*self.shape, self.dx, self.origin)

    def full(self) -> np.ndarray:
        x1, x2 = self.coords
        return self.values + self.slope[0] * x1 + self.slope[1] * x2

    def copy(self) -> "ContinuumField":
        return ContinuumField(self.values.copy(), self.dx, self.slope, self.origin, self.time)

    def differences(self):
        """Forward differences of the full field along ``e1``, ``e2`` and ``e1 + e2``, divided by dx."""
        u = self.values
        d1 = (np.roll(u, -1, 0) - u) / self.dx + self.slope[0]
        d2 = (np.roll(u, -1, 1) - u) / self.dx + self.slope[1]
        d12 = (np.roll(np.roll(u, -1, 0), -1, 1) - u) / self.dx + self.slope[0] + self.slope[1]
        return d1, d2, d12

    def gradient(self):
        """Central-difference gradient of the full field."""
        u = self.values
        g1 = (np.roll(u, -1, 0) - np.roll(u, 1, 0)) / (2 * self.dx) + self.slope[0]
        g2 = (np.roll(u, -1, 1) - np.roll(u, 1, 1)) / (2 * self.dx) + self.slope[1]
        return g1, g2

    def slope_violations(self, margin: float = 0.0) -> list[str]:
        """Locations where grid differences leave the slope triangle (shrunk by ``margin``)."""
        out = []
        d1, d2, d12 = self.differences()
        for name, d in (("e1", d1), ("e2", d2), ("e1+e2", d12)):
            bad = np.argwhere((d < margin - 1e-12) | (d > 1 - margin + 1e-12))
            for i, j in bad[:3]:
                x = (self.origin[0] + i * self.dx, self.origin[1] + j * self.dx)
                out.append(f"difference along {name} = {d[i, j]:.4f} at x=({x[0]:.4f}, {x[1]:.4f})")
        return out

    def interpolate(self, px, py) -> np.ndarray:
        """Piecewise-linear interpolation on the triangulation split along ``e1 + e2``."""
        n1, n2 = self.shape
        px = np.asarray(px, dtype=float)
        py = np.asarray(py, dtype=float)
        s = (px - self.origin[0]) / self.dx
        t = (py - self.origin[1]) / self.dx
        i = np.floor(s).astype(np.int64)
        j = np.floor(t).astype(np.int64)
        a = s - i
        b = t - j
        u = self.values
        i0, j0 = i % n1, j % n2
        i1, j1 = (i + 1) % n1, (j + 1) % n2
        u00, u10, u01, u11 = u[i0, j0], u[i1, j0], u[i0, j1], u[i1, j1]
        lower = u00 + a * (u10 - u00) + b * (u11 - u10)
        upper = u00 + b * (u01 - u00) + a * (u11 - u01)
        per = np.where(a >= b, lower, upper)
        return per + self.slope[0] * px + self.slope[1] * py

    def save(self, path, scheme: str = "", parameters: dict | None = None) -> list[Path]:
        """CSV grid of full values plus a JSON sidecar with mesh and metadata."""
        p = Path(path)
        np.savetxt(p, self.full(), delimiter=",", fmt="%.12g")
        side = p.with_suffix(".json")
        side.write_text(json.dumps({
            "shape": list(self.shape),
            "dx": self.dx,
            "origin": list(self.origin),
            "slope": list(self.slope),
            "time": self.time,
            "scheme": scheme,
            "parameters": parameters or {},
        }, indent=2, sort_keys=True))
        return [p, side]


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------


class Hamiltonian:
    """A speed function ``v(p)`` with its gradient, acting on arrays."""

    def value(self, p1, p2):
        raise NotImplementedError

    def grad(self, p1, p2):
        raise NotImplementedError


class DimerSpeed(Hamiltonian):
    """``v(p) = sin(pi p1) sin(pi p2) / (pi sin(pi (p1 + p2)))``."""

    def value(self, p1, p2):
        return np.sin(np.pi * p1) * np.sin(np.pi * p2) / (np.pi * np.sin(np.pi * (p1 + p2)))

    def grad(self, p1, p2):
        v = self.value(p1, p2)
        cot_c = 1.0 / np.tan(np.pi * (p1 + p2))
        g1 = np.pi * v * (1.0 / np.tan(np.pi * p1) - cot_c)
        g2 = np.pi * v * (1.0 / np.tan(np.pi * p2) - cot_c)
        return g1, g2

    def hessian(self, p1, p2):
        """Closed-form second derivatives ``(v11, v12, v22)``."""
        v = self.value(p1, p2)
        a, b, c = np.pi * p1, np.pi * p2, np.pi * (p1 + p2)
        l1 = np.pi * (1 / np.tan(a) - 1 / np.tan(c))
        l2 = np.pi * (1 / np.tan(b) - 1 / np.tan(c))
        csc2c = 1 / np.sin(c) ** 2
        l11 = np.pi**2 * (csc2c - 1 / np.sin(a) ** 2)
        l22 = np.pi**2 * (csc2c - 1 / np.sin(b) ** 2)
        l12 = np.pi**2 * csc2c
        return v * (l1 * l1 + l11), v * (l1 * l2 + l12), v * (l2 * l2 + l22)


class QuadraticHamiltonian(Hamiltonian):
    """``v(p) = <p, H p>`` for a symmetric 2x2 matrix ``H``."""

    def __init__(self, H):
        self.H = np.asarray(H, dtype=float)
        if not np.allclose(self.H, self.H.T):
            raise ValueError("H must be symmetric")

    def value(self, p1, p2):
        H = self.H
        return H[0, 0] * p1 * p1 + 2 * H[0, 1] * p1 * p2 + H[1, 1] * p2 * p2

    def grad(self, p1, p2):
        H = self.H
        return 2 * (H[0, 0] * p1 + H[0, 1] * p2), 2 * (H[0, 1] * p1 + H[1, 1] * p2)


DIMER_SPEED = DimerSpeed()


# ---------------------------------------------------------------------------
# Hamilton–Jacobi equation
# ---------------------------------------------------------------------------


@dataclass
class HJResult:
    field: ContinuumField
    steps: int
    dt_max: float
    viscosity: float


def _llf_rate(u, dx, s1, s2, ham: Hamiltonian, fixed=None):
    """Local Lax–Friedrichs right-hand side and the dissipation coefficients used."""
    pm1 = (u - np.roll(u, 1, 0)) / dx + s1
    pp1 = (np.roll(u, -1, 0) - u) / dx + s1
    pm2 = (u - np.roll(u, 1, 1)) / dx + s2
    pp2 = (np.roll(u, -1, 1) - u) / dx + s2
    a1 = np.zeros_like(u)
    a2 = np.zeros_like(u)
    hess = getattr(ham, "hessian", None)
    c11 = np.zeros_like(u)
    c12 = np.zeros_like(u)
    c22 = np.zeros_like(u)
    for q1 in (pm1, pp1):
        for q2 in (pm2, pp2):
            g1, g2 = ham.grad(q1, q2)
            a1 = np.maximum(a1, np.abs(g1))
            a2 = np.maximum(a2, np.abs(g2))
            if hess is not None:
                h11, h12, h22 = hess(q1, q2)
                c11 = np.maximum(c11, np.abs(h11))
                c12 = np.maximum(c12, np.abs(h12))
                c22 = np.maximum(c22, np.abs(h22))
    if hess is not None:
        # |dv/dp| may peak inside the gradient box when v is not convex;
        # pad the corner values by curvature times the half-width
        w1 = 0.5 * np.abs(pp1 - pm1)
        w2 = 0.5 * np.abs(pp2 - pm2)
        a1 = a1 + c11 * w1 + c12 * w2
        a2 = a2 + c12 * w1 + c22 * w2
    if fixed is not None:
        b1, b2 = float(fixed[0]), float(fixed[1])
        if a1.max() > b1 or a2.max() > b2:
            raise ValueError(
                f"dissipation ({b1:g}, {b2:g}) below the local bound ({a1.max():.6g}, {a2.max():.6g})"
            )
        a1 = np.full_like(u, b1)
        a2 = np.full_like(u, b2)
    rate = ham.value(0.5 * (pm1 + pp1), 0.5 * (pm2 + pp2)) + 0.5 * a1 * (pp1 - pm1) + 0.5 * a2 * (pp2 - pm2)
    return rate, a1, a2


def hj_solve(
    phi0: ContinuumField,
    T: float,
    ham: Hamiltonian = DIMER_SPEED,
    cfl: float = 0.45,
    dt: float | None = None,
    check_slopes: bool = True,
    callback=None,
    dissipation=None,
) -> HJResult:
    """Solve ``phi_t = v(grad phi)`` by the explicit local Lax–Friedrichs scheme.

    The step is stable when ``dt * (a1 + a2) / dx <= 1`` with ``a_i`` the
    local bounds on ``|dv/dp_i|``; by default the step adapts to
    ``cfl * dx / max(a1 + a2)``.  A fixed ``dt`` violating the bound raises
    :class:`CFLError` naming the required step.  The reported viscosity is the
    largest dissipation coefficient ``max(a) * dx / 2`` seen.

    Because the local coefficients depend on the solution, the local scheme
    is order preserving only up to terms of second order in the mesh.
    Passing ``dissipation=(a1, a2)`` freezes the coefficients (global
    Lax–Friedrichs); the update is then exactly monotone, and a
    :class:`ValueError` is raised if the constants stop bounding the local
    ones.
    """
    if check_slopes and isinstance(ham, DimerSpeed):
        bad = phi0.slope_violations()
        if bad:
            raise ValueError("initial gradient outside the slope triangle: " + bad[0])
    u = phi0.values.copy()
    dx = phi0.dx
    s1, s2 = phi0.slope
    t = 0.0
    steps = 0
    dt_max = 0.0
    visc = 0.0
    while t < T - 1e-14:
        rate, a1, a2 = _llf_rate(u, dx, s1, s2, ham, dissipation)
        amax = float(np.max(a1 + a2))
        limit = dx / amax if amax > 0 else np.inf
        if dt is None:
            h = min(cfl * limit, T - t)
        else:
            if dt > limit * (1 + 1e-12):
                raise CFLError(f"time step {dt:g} violates the CFL bound; need dt <= {limit:.6g}")
            h = min(dt, T - t)
        u = u + h * rate
        t += h
        steps += 1
        dt_max = max(dt_max, h)
        visc = max(visc, 0.5 * dx * float(max(a1.max(), a2.max())))
        if callback is not None:
            callback(t, u)
    out = ContinuumField(u, dx, phi0.slope, phi0.origin, phi0.time + T)
    return HJResult(out, steps, dt_max, visc)


def hopf_oracle(
    conjugate: Callable,
    x,
    t: float,
    box,
    ham: Hamiltonian = DIMER_SPEED,
    n: int = 64,
    refinements: int = 2,
    with_accuracy: bool = False,
):
    """Hopf formula ``sup_p [<x, p> - phi0*(p) + t v(p)]`` for convex initial data.

    ``conjugate(p1, p2)`` evaluates the Legendre transform of the initial
    datum (``+inf`` outside its domain) and ``box = ((lo1, hi1), (lo2, hi2))``
    bounds the slopes searched; a degenerate side (``lo == hi``) reduces the
    search to one dimension.  The maximum is located on an ``n``-point grid
    per dimension, then refined ``refinements`` times by dyadic zooms around
    the argmax.  With ``with_accuracy`` the change from the last refinement
    is returned as well.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    (lo1, hi1), (lo2, hi2) = box
    out = np.empty(x.shape[0])
    acc = np.zeros(x.shape[0])
    for k, (x1, x2) in enumerate(x):
        c = ((lo1 + hi1) / 2, (lo2 + hi2) / 2)
        w = ((hi1 - lo1) / 2, (hi2 - lo2) / 2)
        prev = None
        for level in range(refinements + 1):
            g1 = np.linspace(c[0] - w[0], c[0] + w[0], n) if w[0] > 0 else np.array([c[0]])
            g2 = np.linspace(c[1] - w[1], c[1] + w[1], n) if w[1] > 0 else np.array([c[1]])
            g1 = np.clip(g1, lo1, hi1)
            g2 = np.clip(g2, lo2, hi2)
            P1, P2 = np.meshgrid(g1, g2, indexing="ij")
            with np.errstate(invalid="ignore", divide="ignore"):
                vals = x1 * P1 + x2 * P2 - conjugate(P1, P2) + t * ham.value(P1, P2)
            vals = np.where(np.isfinite(vals), vals, -np.inf)
            # ties: smallest lexicographic slope (first index in C order of (p1, p2))
            idx = np.unravel_index(int(np.argmax(vals)), vals.shape)
            best = float(vals[idx])
            if prev is not None:
                acc[k] = abs(best - prev)
            prev = best
            c = (P1[idx], P2[idx])
            step1 = (g1[1] - g1[0]) if g1.size > 1 else 0.0
            step2 = (g2[1] - g2[0]) if g2.size > 1 else 0.0
            w = (2 * step1, 2 * step2)
        out[k] = prev
    if with_accuracy:
        return out, acc
    return out


def check_convex(f: Callable, box, n: int = 2000, seed: int = 0) -> bool:
    """Midpoint convexity test on random pairs of points in ``box``."""
    rng = stream(seed, "convexity")
    (a1, b1), (a2, b2) = box
    P = np.column_stack([rng.uniform(a1, b1, n), rng.uniform(a2, b2, n)])
    Q = np.column_stack([rng.uniform(a1, b1, n), rng.uniform(a2, b2, n)])
    M = 0.5 * (P + Q)
    lhs = f(M[:, 0], M[:, 1])
    rhs = 0.5 * (f(P[:, 0], P[:, 1]) + f(Q[:, 0], Q[:, 1]))
    return bool(np.all(lhs <= rhs + 1e-10 * (1 + np.abs(rhs))))


def discrete_conjugate(f: Callable, xbox, n: int = 400):
    """Legendre transform of ``f`` computed by maximising over an ``n x n`` grid of ``xbox``."""
    (a1, b1), (a2, b2) = xbox
    X1, X2 = np.meshgrid(np.linspace(a1, b1, n), np.linspace(a2, b2, n), indexing="ij")
    F = f(X1, X2).ravel()
    X1 = X1.ravel()
    X2 = X2.ravel()

    def conj(p1, p2):
        p1 = np.asarray(p1, dtype=float)
        p2 = np.asarray(p2, dtype=float)
        flat1 = p1.ravel()
        flat2 = p2.ravel()
        res = np.empty(flat1.size)
        for i in range(flat1.size):
            res[i] = np.max(flat1[i] * X1 + flat2[i] * X2 - F)
        return res.reshape(p1.shape)

    return conj


# ---------------------------------------------------------------------------
# diffusive equation
# ---------------------------------------------------------------------------


def mobility(r1, r2):
    """Green–Kubo mobility ``mu(rho)``; the same closed form as the growth speed."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    return np.sin(np.pi * r1) * np.sin(np.pi * r2) / (np.pi * np.sin(np.pi * (r1 + r2)))


def _second_derivatives(u, dx):
    u11 = (np.roll(u, -1, 0) - 2 * u + np.roll(u, 1, 0)) / dx**2
    u22 = (np.roll(u, -1, 1) - 2 * u + np.roll(u, 1, 1)) / dx**2
    u12 = (
        np.roll(np.roll(u, -1, 0), -1, 1)
        - np.roll(np.roll(u, -1, 0), 1, 1)
        - np.roll(np.roll(u, 1, 0), -1, 1)
        + np.roll(np.roll(u, 1, 0), 1, 1)
    ) / (4 * dx**2)
    return u11, u12, u22


def parabolic_rhs(f: ContinuumField, table, mob=mobility):
    """``mu(grad phi) sum_ij sigma_ij(grad phi) d_ij phi`` with central differences."""
    g1, g2 = f.gradient()
    S = table.hessian(g1, g2)
    u11, u12, u22 = _second_derivatives(f.values, f.dx)
    m = mob(g1, g2)
    return m * (S[..., 0, 0] * u11 + 2 * S[..., 0, 1] * u12 + S[..., 1, 1] * u22), m, S


def variational_rhs(f: ContinuumField, table, mob=mobility):
    """``-mu * dF/dphi / dx^2`` for ``F = sum sigma(D^+ phi) dx^2`` (divergence form)."""
    d1, d2, _ = f.differences()
    X1, X2 = table.gradient(d1, d2)
    div = (X1 - np.roll(X1, 1, 0)) / f.dx + (X2 - np.roll(X2, 1, 1)) / f.dx
    g1, g2 = f.gradient()
    return mob(g1, g2) * div


@dataclass
class ParabolicResult:
    field: ContinuumField
    times: np.ndarray
    steps: int
    dt: float


def parabolic_solve(
    phi0: ContinuumField,
    T: float,
    table,
    mob=mobility,
    cfl: float = 0.2,
    margin: float = SLOPE_MARGIN,
    record_every: int = 0,
    callback=None,
    dt: float | None = None,
) -> ParabolicResult:
    """Explicit solver for ``phi_t = mu(grad phi) sigma_ij(grad phi) d_ij phi``.

    ``table`` supplies ``hessian(r1, r2)`` (and ``gradient`` for the
    divergence-form check), typically a
    :class:`~dimerlab.gibbs.SurfaceTensionTable`.  Gradients are checked after
    every step; leaving the slope triangle shrunk by ``margin`` aborts with
    :class:`GradientExit` carrying the offending field.
    """
    f = phi0.copy()
    bad = f.slope_violations(margin)
    if bad:
        raise GradientExit("initial gradient too close to the triangle boundary: " + bad[0], f)
    t = 0.0
    steps = 0
    times = [0.0]
    h_used = 0.0
    while t < T - 1e-14:
        rhs, m, S = parabolic_rhs(f, table, mob)
        lam = np.max(m * (S[..., 0, 0] + S[..., 1, 1] + 2 * np.abs(S[..., 0, 1])))
        h = cfl * f.dx**2 / lam if dt is None else dt
        h = min(h, T - t)
        f.values = f.values + h * rhs
        t += h
        steps += 1
        h_used = max(h_used, h)
        f.time = phi0.time + t
        bad = f.slope_violations(margin)
        if bad:
            raise GradientExit(f"gradient left the admissible region at t={t:.6g}: " + bad[0], f.copy())
        if callback is not None:
            callback(t, f)
        if record_every and steps % record_every == 0:
            times.append(t)
    return ParabolicResult(f, np.array(times), steps, h_used)


def l2_distance_history(phi_a: ContinuumField, phi_b: ContinuumField, T: float, table, n_out: int = 50):
    """``D2(t) = \\int (phi_a - phi_b)^2`` along simultaneous runs with a common time step."""
    fa, fb = phi_a.copy(), phi_b.copy()
    ts, ds = [0.0], [float(np.sum((fa.values - fb.values) ** 2) * fa.dx**2)]
    t = 0.0
    grid = np.linspace(0, T, n_out + 1)[1:]
    k = 0
    while t < T - 1e-14:
        ra, ma, Sa = parabolic_rhs(fa, table)
        rb, mb, Sb = parabolic_rhs(fb, table)
        lam = max(
            np.max(ma * (Sa[..., 0, 0] + Sa[..., 1, 1] + 2 * np.abs(Sa[..., 0, 1]))),
            np.max(mb * (Sb[..., 0, 0] + Sb[..., 1, 1] + 2 * np.abs(Sb[..., 0, 1]))),
        )
        h = min(0.2 * fa.dx**2 / lam, T - t)
        fa.values = fa.values + h * ra
        fb.values = fb.values + h * rb
        t += h
        for f in (fa, fb):
            bad = f.slope_violations(SLOPE_MARGIN)
            if bad:
                raise GradientExit(f"gradient left the admissible region at t={t:.6g}: " + bad[0], f.copy())
        if k < grid.size and t >= grid[k] - 1e-14:
            ts.append(t)
            ds.append(float(np.sum((fa.values - fb.values) ** 2) * fa.dx**2))
            k += 1
    return np.array(ts), np.array(ds)


# ---------------------------------------------------------------------------
# Hessian analysis of the speed function
# ---------------------------------------------------------------------------


@dataclass
class HessianReport:
    slopes: np.ndarray
    analytic: np.ndarray
    finite_difference: np.ndarray
    rel_error: np.ndarray
    det: np.ndarray

    @property
    def det_sign(self) -> np.ndarray:
        return np.sign(self.det)

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_error.max())


def interior_grid(n: int, margin: float = 0.02) -> np.ndarray:
    """``n x n`` grid over the triangle interior via ``(u, v) -> (u (1 - v), v)``."""
    u = np.linspace(margin, 1 - margin, n)
    v = np.linspace(margin, 1 - 2 * margin, n)
    U, V = np.meshgrid(u, v, indexing="ij")
    r1 = U * (1 - V)
    r2 = V
    keep = (r1 >= margin) & (1 - r1 - r2 >= margin)
    r1 = np.where(keep, r1, np.clip(r1, margin, None))
    r1 = np.minimum(r1, 1 - r2 - margin)
    return np.stack([r1, r2], axis=-1).reshape(-1, 2)


def hessian_report(ham: DimerSpeed = DIMER_SPEED, slopes=None, step: float = 1e-4) -> HessianReport:
    """Closed-form Hessian of the speed function with a finite-difference cross-check.

    The cross-check uses the fourth-order centred stencil with the given step.
    """
    slopes = interior_grid(50) if slopes is None else np.asarray(slopes, dtype=float)
    p1, p2 = slopes[:, 0], slopes[:, 1]
    h11, h12, h22 = ham.hessian(p1, p2)
    A = np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)
    v = ham.value
    h = step

    def d2(f0, fp, fm, fpp, fmm):
        return (-fpp + 16 * fp - 30 * f0 + 16 * fm - fmm) / (12 * h * h)

    f0 = v(p1, p2)
    fd11 = d2(f0, v(p1 + h, p2), v(p1 - h, p2), v(p1 + 2 * h, p2), v(p1 - 2 * h, p2))
    fd22 = d2(f0, v(p1, p2 + h), v(p1, p2 - h), v(p1, p2 + 2 * h), v(p1, p2 - 2 * h))

    def cross(k):
        return (
            v(p1 + k * h, p2 + k * h) - v(p1 + k * h, p2 - k * h)
            - v(p1 - k * h, p2 + k * h) + v(p1 - k * h, p2 - k * h)
        ) / (4 * k * k * h * h)

    fd12 = (4 * cross(1) - cross(2)) / 3
    B = np.stack([np.stack([fd11, fd12], -1), np.stack([fd12, fd22], -1)], -2)
    rel = np.max(np.abs(A - B), axis=(1, 2)) / np.max(np.abs(A), axis=(1, 2))
    det = h11 * h22 - h12 * h12
    return HessianReport(slopes, A, B, rel, det)


# ---------------------------------------------------------------------------
# bumps under a quadratic Hamiltonian
# ---------------------------------------------------------------------------


@dataclass
class BumpTable:
    times: np.ndarray
    height: np.ndarray
    width: np.ndarray
    flagged: list[str] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,height,width\n")
            for row in zip(self.times, self.height, self.width):
                fh.write("{:.10g},{:.10g},{:.10g}\n".format(*row))


def quartic_bump(x1, x2, amplitude: float, radius: float):
    s2 = (x1**2 + x2**2) / radius**2
    return np.where(s2 < 1, amplitude * (1 - s2) ** 2, 0.0)


def _half_max_width(u: np.ndarray, dx: float, peak_index, level: float) -> float:
    """Width of the superlevel set ``{u >= level}`` along the first axis through the peak."""
    i0, j0 = peak_index
    line = u[:, j0]
    above = line >= level
    lo = i0
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = i0
    while hi < line.size - 1 and above[hi + 1]:
        hi += 1

    # linear interpolation of the crossings
    def cross(a, b):
        return a + (level - line[a]) / (line[b] - line[a]) * (b - a) if line[b] != line[a] else a

    left = cross(lo, lo - 1) if lo > 0 else lo
    right = cross(hi, hi + 1) if hi < line.size - 1 else hi
    return float(abs(right - left) * dx)


def bump_evolution(
    H,
    sign: int,
    T: float,
    times=None,
    amplitude: float = 8.0,
    radius: float = 1.0,
    extent: float | None = None,
    n: int | None = None,
    dx: float | None = None,
) -> BumpTable:
    """Peak height (signed extremum) and half-maximum width of a bump under ``<grad, H grad>``.

    The bump is ``sign * amplitude * (1 - |x|^2 / radius^2)^2`` on a periodic
    square large enough that the solution stays compactly supported.  For a
    negative bump the tracked height is the minimum (negative).  The default
    mesh is ``radius / 5`` for positive bumps, which spread over a large
    region, and ``radius / 40`` for negative ones, whose ``1/t`` decay is
    otherwise masked by scheme viscosity.
    """
    Hm = np.asarray(H, dtype=float)
    flagged = []
    if abs(np.linalg.det(Hm)) < 1e-12:
        flagged.append("degenerate H (det = 0)")
    times = np.geomspace(T / 10, T, 11) if times is None else np.asarray(times, dtype=float)
    if extent is None:
        lam = float(np.max(np.abs(np.linalg.eigvalsh(Hm))))
        reach = radius + math.sqrt(4 * lam * amplitude * T) + 2.0 if sign > 0 else radius + 2.0
        extent = 2 * reach
    if dx is None:
        dx = radius / 5 if sign > 0 else radius / 40
    if n is None:
        n = int(math.ceil(extent / dx))
        n += n % 2
    dx = extent / n
    f = ContinuumField.from_function(
        lambda a, b: sign * quartic_bump(a, b, amplitude, radius),
        n, extent=extent, origin=(-extent / 2, -extent / 2),
    )
    ham = QuadraticHamiltonian(Hm)
    heights = []
    widths = []
    t = 0.0
    for tk in times:
        res = hj_solve(f, tk - t, ham, check_slopes=False)
        f = res.field
        t = tk
        u = f.values if sign > 0 else -f.values
        idx = np.unravel_index(int(np.argmax(u)), u.shape)
        peak = float(u[idx])
        heights.append(sign * peak)
        widths.append(_half_max_width(u, dx, idx, 0.5 * peak))
    return BumpTable(times, np.array(heights), np.array(widths), flagged)


# ---------------------------------------------------------------------------
# stochastic equation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpdeParams:
    """Coefficients of ``psi_t = nu lap psi + <grad psi, H grad psi> + xi``.

    The noise is Gaussian, white in time and mollified in space by a
    normalised Gaussian kernel of standard deviation ``corr_length`` (in
    units of the mesh), so ``amplitude**2`` is the noise strength seen at
    wavelengths much longer than the correlation length.

    ``saturation = c > 0`` replaces the quadratic term ``q`` by
    ``sign(q) (1 - exp(-c |q|)) / c``, which agrees with ``q`` for small
    gradients and suppresses the lattice-scale blow-up of the explicit
    scheme at strong coupling; ``0`` keeps the plain equation.
    """

    nu: float
    H: tuple[tuple[float, float], tuple[float, float]]
    corr_length: float = 1.0
    amplitude: float = 1.0
    saturation: float = 0.0

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.saturation < 0:
            raise ValueError("saturation must be non-negative")
        if self.corr_length < 1.0:
            raise ValueError("correlation length must be at least one mesh cell")
        H = np.asarray(self.H, dtype=float)
        if H.shape != (2, 2) or not np.allclose(H, H.T):
            raise ValueError("H must be a symmetric 2x2 matrix")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["H"] = [list(r) for r in self.H]
        return d


def _gaussian_kernel(ell: float) -> np.ndarray:
    r = int(math.ceil(3 * ell))
    x = np.arange(-r, r + 1)
    k = np.exp(-0.5 * (x / ell) ** 2)
    return k / np.sum(k)


@njit(cache=True)
def _smooth_periodic(a, k, wrap, tmp, out):
    """Separable periodic convolution; ``wrap[i + r + q]`` is ``(i + q) mod n``."""
    n1, n2 = a.shape
    r = (k.size - 1) // 2
    for i in range(n1):
        for j in range(n2):
            tmp[i, j] = 0.0
        for q in range(-r, r + 1):
            w = k[q + r]
            row = wrap[i + q + r]
            for j in range(n2):
                tmp[i, j] += w * a[row, j]
    for i in range(n1):
        for j in range(n2):
            s = 0.0
            for q in range(-r, r + 1):
                s += k[q + r] * tmp[i, wrap[j + q + r]]
            out[i, j] = s


@njit(cache=True)
def _spde_advance(u, xi_block, nsteps, nu, h11, h12, h22, dt, dx, amp, kern, noise, sat):
    """``nsteps`` Euler–Maruyama steps in place; returns False on a non-finite value.

    ``xi_block[s]`` holds the white noise of step ``s`` before smoothing.

    The squared derivatives along the axes use the symmetric three-term
    form ``(a^2 + a b + b^2) / 3`` of the one-sided differences ``a, b``,
    which is consistent with ``(d psi)^2`` and better behaved than the
    square of the central difference; the mixed term uses central
    differences.
    """
    n = u.shape[0]
    r = (kern.size - 1) // 2
    wrap = np.empty(n + 2 * r, dtype=np.int64)
    for i in range(n + 2 * r):
        wrap[i] = (i - r) % n
    tmp = np.empty_like(u)
    sm = np.zeros_like(u)
    new = np.empty_like(u)
    inv = 1.0 / dx
    for step in range(nsteps):
        if noise:
            _smooth_periodic(xi_block[step], kern, wrap, tmp, sm)
        bad = False
        for i in range(n):
            ip = wrap[i + r + 1]
            im = wrap[i + r - 1]
            for j in range(n):
                jp = wrap[j + r + 1]
                jm = wrap[j + r - 1]
                c = u[i, j]
                a1 = (u[ip, j] - c) * inv
                b1 = (c - u[im, j]) * inv
                a2 = (u[i, jp] - c) * inv
                b2 = (c - u[i, jm]) * inv
                lap = (a1 - b1 + a2 - b2) * inv
                s11 = (a1 * a1 + a1 * b1 + b1 * b1) / 3.0
                s22 = (a2 * a2 + a2 * b2 + b2 * b2) / 3.0
                g12 = 0.25 * (a1 + b1) * (a2 + b2)
                q = h11 * s11 + 2.0 * h12 * g12 + h22 * s22
                if sat > 0.0:
                    q = np.sign(q) * (1.0 - np.exp(-sat * abs(q))) / sat
                v = c + dt * (nu * lap + q) + amp * sm[i, j]
                if not np.isfinite(v):
                    bad = True
                new[i, j] = v
        u[:, :] = new
        if bad:
            return False
    return True


@dataclass
class SpdeResult:
    params: SpdeParams
    times: np.ndarray
    var: np.ndarray
    var_stderr: np.ndarray
    mean: np.ndarray
    structure_r: np.ndarray
    structure: np.ndarray
    power: ExponentEstimate | None
    log: ExponentEstimate | None
    preferred: str | None
    replicas: int
    final: np.ndarray = field(repr=False)

    @property
    def beta(self) -> float:
        return 0.5 * self.power.value

    def alpha(self, window=(2, 8)) -> float:
        """Roughness exponent from the structure function, ``S(r) ~ r^{2 alpha}``."""
        sel = (self.structure_r >= window[0]) & (self.structure_r <= window[1])
        return 0.5 * float(np.polyfit(np.log(self.structure_r[sel]), np.log(self.structure[sel]), 1)[0])

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,mean,var,var_stderr\n")
            for row in zip(self.times, self.mean, self.var, self.var_stderr):
                fh.write("{:.10g},{:.10g},{:.10g},{:.10g}\n".format(*row))


def spde_run(
    params: SpdeParams,
    n: int,
    T: float,
    seed: int,
    dt: float = 0.05,
    dx: float = 1.0,
    times=None,
    initial=None,
    noise: bool = True,
    window=None,
    replicas: int = 1,
    should_stop=None,
) -> SpdeResult:
    """Euler–Maruyama integration from ``initial`` (default flat) on an ``n x n`` torus.

    Records the spatial variance of ``psi`` at ``times`` averaged over
    ``replicas`` independent noise realisations and, at the end, the
    structure function ``<(psi(x + r e1) - psi(x))^2>``.  Fits use the
    latter half of the time grid unless ``window`` is given.  Raises
    :class:`BlowUp` with the last stable time if the field stops being finite.
    ``should_stop(done)`` is asked before each replica after the first; the
    result then averages the replicas completed so far.
    """
    if dt * params.nu * 4 / dx**2 > 0.5:
        raise CFLError(f"dt={dt} too large for nu={params.nu}, dx={dx}; need dt <= {dx**2 / (8 * params.nu):.4g}")
    H = np.asarray(params.H, dtype=float)
    times = np.geomspace(1.0, T, 30) if times is None else np.asarray(times, dtype=float)
    steps_at = np.round(times / dt).astype(np.int64)
    if np.any(np.diff(steps_at) < 0) or steps_at[-1] > round(T / dt):
        raise ValueError("observation times must be increasing and at most T")
    kern = _gaussian_kernel(params.corr_length)
    amp = params.amplitude * math.sqrt(dt) / dx
    var = np.empty((replicas, times.size))
    mean = np.empty((replicas, times.size))
    sf = np.zeros(n // 4)
    rs = np.arange(1, n // 4 + 1)
    done_replicas = replicas
    for r in range(replicas):
        if r > 0 and should_stop is not None and should_stop(r):
            done_replicas = r
            break
        u = np.zeros((n, n)) if initial is None else np.array(initial, dtype=float)
        rng = stream(seed, "spde", "noise", r)
        done = 0
        for k, target in enumerate(steps_at):
            while target > done:
                c = int(min(_NOISE_CHUNK, target - done))
                block = rng.standard_normal((c, n, n)) if noise else np.zeros((1, 1, 1))
                ok = _spde_advance(
                    u, block, c, params.nu, H[0, 0], H[0, 1], H[1, 1], dt, dx, amp, kern, noise, params.saturation
                )
                if not ok:
                    raise BlowUp(f"non-finite field before t={(done + c) * dt:.4g} (replica {r})", done * dt)
                done += c
            var[r, k] = u.var()
            mean[r, k] = u.mean()
        sf += np.array([np.mean((np.roll(u, -q, 0) - u) ** 2) for q in rs])
    replicas = done_replicas
    sf /= replicas
    var, mean = var[:replicas], mean[:replicas]
    v = var.mean(axis=0)
    se = var.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.full(times.size, np.nan)
    power = log = preferred = None
    if noise and times.size >= 5 and np.all(v[times >= (latter_half(times) if window is None else window)[0]] > 0):
        w = latter_half(times) if window is None else window
        fits = compare_models(times, v, w)
        power, log, preferred = fits["power"], fits["log"], fits["preferred"]
    return SpdeResult(params, times, v, se, mean.mean(axis=0), rs, sf, power, log, preferred, replicas, u)
