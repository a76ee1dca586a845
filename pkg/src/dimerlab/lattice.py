"""Lozenge tilings of the torus as interlaced particles and as height functions.

Coordinates
-----------
Faces of the hexagonal lattice (vertices of the triangular lattice) are
labelled ``(m, y)``: ``m`` is the column and ``y`` the position inside the
column.  A height function ``h`` takes integer values on faces and its
increments along the three lattice directions

    (m, y) -> (m, y + 1),   (m, y) -> (m + 1, y),   (m, y) -> (m - 1, y + 1)

all lie in ``{0, 1}``.  A particle sits at ``(m, x)`` exactly when
``h(m, x + 1) == h(m, x)``, i.e. when the vertical increment vanishes.

Particles in a column carry integer labels ``j`` in increasing order, and the
columns interlace as

    x^m_j <= x^{m+1}_j < x^m_{j+1}.

With the label of face ``(m, y)`` defined as ``J(m, y) = min{j : x^m_j >= y}``
the height is ``h(m, y) = y - J(m, y) + height_offset``.

On the torus with ``L1`` columns of ``L2`` sites and ``N`` particles per column
the labels satisfy ``x^m_{j+N} = x^m_j + L2`` and ``x^{m+L1}_j = x^m_{j+W}``.
The second winding number ``W`` fixes the tilt along the columns, so the
average slope is

    rho1 = W / L1,   rho2 = 1 - N / L2 - W / L1,

and the particle density ``N / L2 = 1 - rho1 - rho2`` is the third lozenge
density.  Placing face ``(m, y)`` at the planar point ``(m + y, y)`` turns
``(rho1, rho2)`` into the ordinary gradient of the height.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from ._kernels import flip_admissible


class TilingError(ValueError):
    """Raised for invalid tilings, height fields or geometries."""


@dataclass(frozen=True)
class Slope:
    """Average gradient ``(rho1, rho2)``; interior of the slope triangle by default."""

    rho1: float
    rho2: float

    def __post_init__(self):
        if not (self.rho1 > 0 and self.rho2 > 0 and self.rho1 + self.rho2 < 1):
            raise TilingError(
                f"slope ({self.rho1}, {self.rho2}) is not in the interior of the slope triangle"
            )

    @property
    def rho3(self) -> float:
        return 1.0 - self.rho1 - self.rho2

    def as_tuple(self) -> tuple[float, float]:
        return (float(self.rho1), float(self.rho2))

    def distance_to_boundary(self) -> float:
        return min(self.rho1, self.rho2, self.rho3)

    @classmethod
    def coerce(cls, rho) -> "Slope":
        if isinstance(rho, Slope):
            return rho
        r1, r2 = rho
        return cls(float(r1), float(r2))


@dataclass(frozen=True)
class TorusGeometry:
    """Torus of ``L1`` columns with ``L2`` sites each, ``N`` particles per column and tilt ``W``."""

    L1: int
    L2: int
    N: int
    W: int = 0

    def __post_init__(self):
        if self.L1 < 1 or self.L2 < 1:
            raise TilingError("L1 and L2 must be positive")
        if not 1 <= self.N <= self.L2:
            raise TilingError(f"need 1 <= N <= L2, got N={self.N}, L2={self.L2}")
        # rho1 >= 0 and rho2 >= 0
        if self.W < 0 or self.W * self.L2 > self.L1 * (self.L2 - self.N):
            raise TilingError(
                f"winding W={self.W} incompatible with N={self.N} on a {self.L1}x{self.L2} torus"
            )

    @property
    def dN(self) -> int:
        return self.L2 - self.N

    @property
    def exact_slope(self) -> tuple[Fraction, Fraction]:
        r1 = Fraction(self.W, self.L1)
        return r1, 1 - Fraction(self.N, self.L2) - r1

    @property
    def slope(self) -> tuple[float, float]:
        r1, r2 = self.exact_slope
        return float(r1), float(r2)

    @property
    def n_faces(self) -> int:
        return self.L1 * self.L2

    @classmethod
    def for_slope(cls, rho, L1: int, L2: int | None = None) -> "TorusGeometry":
        """Closest torus winding class to ``rho``; ``rho`` must be in the open triangle."""
        rho = Slope.coerce(rho)
        L2 = L1 if L2 is None else L2
        N = int(round(rho.rho3 * L2))
        N = min(max(N, 1), L2)
        W = int(round(rho.rho1 * L1))
        W = max(0, min(W, (L1 * (L2 - N)) // L2))
        return cls(L1, L2, N, W)


@dataclass
class InterlacedConfig:
    """Particle positions ``positions[m, j] = x^m_j`` for labels ``j = 0..N-1``.

    Positions are lifted integers (not reduced mod ``L2``); the labelling is
    canonical when ``0 <= positions[0, 0] < L2`` and ``height_offset`` is the
    height of face ``(0, 0)``.
    """

    geometry: TorusGeometry
    positions: np.ndarray
    height_offset: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.int64).reshape(
            self.geometry.L1, self.geometry.N
        )
        self.height_offset = int(self.height_offset)

    def copy(self) -> "InterlacedConfig":
        return InterlacedConfig(self.geometry, self.positions.copy(), self.height_offset)

    def position(self, m: int, j: int) -> int:
        """Lifted position of particle ``j`` of column ``m`` for arbitrary integer labels."""
        g = self.geometry
        q, m0 = divmod(m, g.L1)
        qj, j0 = divmod(j + q * g.W, g.N)
        return int(self.positions[m0, j0] + qj * g.L2)

    def __eq__(self, other):
        if not isinstance(other, InterlacedConfig):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.height_offset == other.height_offset
            and np.array_equal(self.positions, other.positions)
        )

    def to_text(self) -> str:
        g = self.geometry
        buf = io.StringIO()
        buf.write("# interlaced lozenge configuration\n")
        buf.write(f"L1={g.L1} L2={g.L2} N={g.N} W={g.W} height_offset={self.height_offset}\n")
        for row in self.positions:
            buf.write(" ".join(str(int(v)) for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "InterlacedConfig":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not lines:
            raise TilingError("empty configuration text")
        header = dict(tok.split("=", 1) for tok in lines[0].split())
        try:
            g = TorusGeometry(
                int(header["L1"]), int(header["L2"]), int(header["N"]), int(header.get("W", 0))
            )
            h0 = int(header["height_offset"])
        except KeyError as exc:
            raise TilingError(f"missing header field {exc}") from None
        rows = lines[1:]
        if len(rows) != g.L1:
            raise TilingError(f"expected {g.L1} position lines, found {len(rows)}")
        pos = np.array([[int(v) for v in r.split()] for r in rows], dtype=np.int64)
        if pos.shape != (g.L1, g.N):
            raise TilingError(f"position block has shape {pos.shape}, expected {(g.L1, g.N)}")
        return cls(g, pos, h0)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "InterlacedConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())


@dataclass
class HeightField:
    """Heights ``h[m, y]`` on the fundamental domain of the torus."""

    geometry: TorusGeometry
    h: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.int64).reshape(self.geometry.L1, self.geometry.L2)

    @property
    def slope(self) -> tuple[float, float]:
        return self.geometry.slope

    def at(self, m: int, y: int) -> int:
        g = self.geometry
        qm, m0 = divmod(m, g.L1)
        qy, y0 = divmod(y, g.L2)
        return int(self.h[m0, y0] + qm * g.W + qy * g.dN)

    def copy(self) -> "HeightField":
        return HeightField(self.geometry, self.h.copy())

    def __eq__(self, other):
        if not isinstance(other, HeightField):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.h, other.h)

    def increments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Increments along ``(0, 1)``, ``(1, 0)`` and ``(-1, 1)`` in ``(m, y)`` coordinates."""
        g = self.geometry
        h = self.h
        up = np.roll(h, -1, axis=1) - h
        up[:, -1] += g.dN
        right = np.roll(h, -1, axis=0) - h
        right[-1, :] += g.W
        diag = np.roll(np.roll(h, 1, axis=0), -1, axis=1) - h
        diag[:, -1] += g.dN
        diag[0, :] -= g.W
        return up, right, diag

    def average_gradient(self) -> tuple[float, float]:
        """Mean planar gradient ``(rho1, rho2)`` measured from the increments."""
        _, right, diag = self.increments()
        return float(right.mean()), float(diag.mean())


# ---------------------------------------------------------------------------
# bijections and validation
# ---------------------------------------------------------------------------


def height_values(cfg: InterlacedConfig) -> np.ndarray:
    g = cfg.geometry
    y = np.arange(g.L2, dtype=np.int64)
    # ceil((y - x) / L2) counts, for each residue class of labels, those below y
    J = -((cfg.positions[:, None, :] - y[None, :, None]) // g.L2)
    J = J.sum(axis=2)
    return y[None, :] - J + cfg.height_offset


def particles_to_height(cfg: InterlacedConfig) -> HeightField:
    """Height function of a valid interlaced configuration."""
    violations = validate(cfg)
    if violations:
        raise TilingError("invalid configuration: " + "; ".join(violations[:5]))
    return HeightField(cfg.geometry, height_values(cfg))


def check_height_field(hf: HeightField) -> list[str]:
    """Edges whose increments leave ``{0, 1}``, described in words."""
    out = []
    names = ("(m,y)->(m,y+1)", "(m,y)->(m+1,y)", "(m,y)->(m-1,y+1)")
    for name, inc in zip(names, hf.increments()):
        bad = np.argwhere((inc != 0) & (inc != 1))
        for m, y in bad[:10]:
            out.append(f"edge {name} at m={m}, y={y} has increment {int(inc[m, y])}")
    return out


def height_to_particles(hf: HeightField) -> InterlacedConfig:
    """Inverse of :func:`particles_to_height`."""
    errs = check_height_field(hf)
    if errs:
        raise TilingError("height field violates the gradient constraints: " + "; ".join(errs))
    g = hf.geometry
    h = hf.h
    h0 = int(h[0, 0])
    up, _, _ = hf.increments()
    pos = np.empty((g.L1, g.N), dtype=np.int64)
    for m in range(g.L1):
        ys = np.flatnonzero(up[m] == 0)
        if ys.size != g.N:
            raise TilingError(f"column {m} carries {ys.size} particles, expected {g.N}")
        labels = ys - h[m, ys] + h0
        q, k = np.divmod(labels, g.N)
        pos[m, k] = ys - q * g.L2
    return InterlacedConfig(g, pos, h0)


def validate(cfg: InterlacedConfig) -> list[str]:
    """All ordering and interlacement violations of ``cfg`` (empty if valid)."""
    g = cfg.geometry
    X = cfg.positions
    out = []
    if X.shape != (g.L1, g.N):
        return [f"positions have shape {X.shape}, expected {(g.L1, g.N)}"]
    for m in range(g.L1):
        for j in range(g.N):
            a = cfg.position(m, j)
            b = cfg.position(m, j + 1)
            if not a < b:
                out.append(f"ordering: column {m}, particles {j} and {j + 1} at {a} and {b}")
    for m in range(g.L1):
        for j in range(g.N):
            lo = cfg.position(m, j)
            hi = cfg.position(m, j + 1)
            x = cfg.position(m + 1, j)
            if not lo <= x < hi:
                out.append(
                    f"interlacement: particle {j} of column {(m + 1) % g.L1} at {x} "
                    f"outside window [{lo}, {hi}) of column {m}"
                )
    return out


def canonical(cfg: InterlacedConfig) -> InterlacedConfig:
    """Relabel so that particle 0 of column 0 is the first one at or above site 0."""
    return height_to_particles(particles_to_height(cfg))


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def flat_heights(g: TorusGeometry) -> np.ndarray:
    m = np.arange(g.L1, dtype=np.int64)[:, None]
    y = np.arange(g.L2, dtype=np.int64)[None, :]
    return (g.W * g.L2 * m + g.dN * g.L1 * y) // (g.L1 * g.L2)


def make_flat(rho, geometry) -> InterlacedConfig:
    """Deterministic quasi-periodic configuration of slope close to ``rho``.

    ``geometry`` is either a :class:`TorusGeometry` (whose winding must match
    ``rho`` within ``1/min(L1, L2)``) or a pair ``(L1, L2)``.
    """
    rho = Slope.coerce(rho)
    if isinstance(geometry, TorusGeometry):
        g = geometry
    else:
        L1, L2 = geometry
        g = TorusGeometry.for_slope(rho, L1, L2)
    tol = 1.0 / min(g.L1, g.L2) + 1e-12
    s = g.slope
    if abs(s[0] - rho.rho1) > tol or abs(s[1] - rho.rho2) > tol:
        raise TilingError(f"geometry slope {s} is not within {tol:.3g} of {rho.as_tuple()}")
    return height_to_particles(HeightField(g, flat_heights(g)))


def profile_initial(phi0, epsilon: float) -> tuple[InterlacedConfig, float]:
    """Microscopic configuration with ``epsilon * h(x / epsilon) ~ phi0(x)``.

    ``phi0`` is a :class:`dimerlab.pde.ContinuumField` on the unit torus whose
    background slope times ``1/epsilon`` is integral.  The field is extended
    by piecewise-linear interpolation on the triangulation generated by
    ``e1, e2, e1 + e2``, so its gradient stays in the slope triangle whenever
    the grid differences do, and the height is the floor of ``phi0 / epsilon``.

    Returns the configuration and the realised sup-norm error
    ``max |epsilon * h - phi0|`` over faces.
    """
    L = int(round(1.0 / epsilon))
    if abs(L * epsilon - 1.0) > 1e-9:
        raise TilingError("1/epsilon must be an integer")
    bad = phi0.slope_violations()
    if bad:
        raise TilingError("phi0 gradient leaves the slope triangle: " + bad[0])
    b1, b2 = phi0.slope
    W = b1 * L
    dN = (b1 + b2) * L
    if abs(W - round(W)) > 1e-9 or abs(dN - round(dN)) > 1e-9:
        raise TilingError(f"background slope {phi0.slope} times L={L} is not integral")
    g = TorusGeometry(L, L, L - int(round(dN)), int(round(W)))
    m = np.arange(L)[:, None]
    y = np.arange(L)[None, :]
    px = (m + y) / L
    py = np.broadcast_to(y / L, px.shape)
    vals = phi0.interpolate(px, py) / epsilon
    h = np.floor(vals + 1e-9).astype(np.int64)
    hf = HeightField(g, h)
    errs = check_height_field(hf)
    if errs:
        raise TilingError("rounded profile is not a height function: " + errs[0])
    cfg = height_to_particles(hf)
    err = float(np.max(np.abs(h * epsilon - vals * epsilon)))
    return cfg, err


# ---------------------------------------------------------------------------
# single flips at the level of values
# ---------------------------------------------------------------------------


def _kernel_args(g: TorusGeometry):
    return True, g.L1, g.L2, g.dN, g.W


def flip_is_admissible(hf: HeightField, m: int, y: int, direction: int) -> bool:
    g = hf.geometry
    free = np.ones((g.L1, g.L2), dtype=np.bool_)
    return bool(flip_admissible(hf.h, free, *_kernel_args(g), m % g.L1, y % g.L2, int(direction)))


def admissible_flips(hf: HeightField) -> list[tuple[int, int, int]]:
    """All ``(m, y, direction)`` single-face rotations allowed in ``hf``."""
    g = hf.geometry
    return [
        (m, y, d)
        for m in range(g.L1)
        for y in range(g.L2)
        for d in (1, -1)
        if flip_is_admissible(hf, m, y, d)
    ]


def apply_flip(hf: HeightField, m: int, y: int, direction: int) -> HeightField:
    """New height field after rotating face ``(m, y)``; unchanged if not admissible."""
    out = hf.copy()
    if flip_is_admissible(hf, m, y, direction):
        g = hf.geometry
        out.h[m % g.L1, y % g.L2] += direction
    return out


def as_height_field(obj) -> HeightField:
    if isinstance(obj, HeightField):
        return obj
    if isinstance(obj, InterlacedConfig):
        return particles_to_height(obj)
    raise TypeError(f"expected HeightField or InterlacedConfig, got {type(obj).__name__}")


def from_rows(geometry: TorusGeometry, rows: Sequence[Sequence[int]], height_offset: int = 0):
    return InterlacedConfig(geometry, np.array(rows, dtype=np.int64), height_offset)
