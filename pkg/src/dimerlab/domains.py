"""Bounded domains with fixed boundary heights (hexagons and rectangles).

A bounded domain is a rectangular array of faces in ``(m, y)`` coordinates,
a boolean mask of free faces and fixed heights on the remaining faces.  Free
faces never touch the array border, so every kernel can look at all six
neighbours without bounds checks.  The admissible height functions form a
distributive lattice whose extreme elements are computed by shortest paths
over the difference constraints.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from math import prod
from typing import Literal

import numpy as np

from .lattice import TilingError

# (dm, dy, lo, hi): lo <= h(m + dm, y + dy) - h(m, y) <= hi
_STEPS = ((0, 1, 0, 1), (1, 0, 0, 1), (-1, 1, 0, 1), (0, -1, -1, 0), (-1, 0, -1, 0), (1, -1, -1, 0))


def boxed_plane_partitions(a: int, b: int, c: int) -> int:
    """MacMahon's product formula for plane partitions in an ``a x b x c`` box."""
    num = prod(i + j + k - 1 for i in range(1, a + 1) for j in range(1, b + 1) for k in range(1, c + 1))
    den = prod(i + j + k - 2 for i in range(1, a + 1) for j in range(1, b + 1) for k in range(1, c + 1))
    return num // den


def _surface_height(x1: int, x2: int, a: int, b: int, cols: np.ndarray) -> int:
    """Height at plane point ``(x1, x2)`` of the stepped surface of a plane partition.

    ``cols[i, j]`` is the stack height over cell ``(i, j)`` of the ``a x b``
    floor.  The point sees the surface point ``(x1 + k, x2 + k, k)`` with the
    largest ``k`` inside the solid, and its height is ``-k``.
    """
    k = min(-x1, -x2, 0) - 1
    while True:
        p1, p2, p3 = x1 + k + 1, x2 + k + 1, k + 1
        inside = p1 <= 0 or p2 <= 0 or p3 <= 0
        if not inside and 1 <= p1 <= a and 1 <= p2 <= b:
            inside = p3 <= cols[p1 - 1, p2 - 1]
        if not inside:
            return -k
        k += 1


def _hexagon_arrays(a: int, b: int, c: int, pad: int = 2):
    empty = np.zeros((a, b), dtype=np.int64)
    full = np.full((a, b), c, dtype=np.int64)
    free_pts = []
    for x1 in range(-c - 1, a + 2):
        for x2 in range(-c - 1, b + 2):
            if _surface_height(x1, x2, a, b, empty) != _surface_height(x1, x2, a, b, full):
                free_pts.append((x1 - x2, x2))
    ms = [p[0] for p in free_pts]
    ys = [p[1] for p in free_pts]
    m0, y0 = min(ms) - pad, min(ys) - pad
    shape = (max(ms) + pad - m0 + 1, max(ys) + pad - y0 + 1)
    lo = np.zeros(shape, dtype=np.int64)
    hi = np.zeros(shape, dtype=np.int64)
    for i in range(shape[0]):
        for j in range(shape[1]):
            m, y = i + m0, j + y0
            lo[i, j] = _surface_height(m + y, y, a, b, full)
            hi[i, j] = _surface_height(m + y, y, a, b, empty)
    return lo, hi, lo != hi


def extremal_heights(fixed: np.ndarray, free: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimal and maximal height functions agreeing with ``fixed`` off ``free``.

    Raises :class:`TilingError` if no admissible height function exists.
    """
    shape = fixed.shape
    out = []
    for sign in (1, -1):
        # h_max(f) = min_b [h(b) + d(b, f)] where an edge u -> v carries the
        # largest allowed h(v) - h(u); for the minimum negate everything.
        dist = np.full(shape, np.iinfo(np.int64).max, dtype=np.int64)
        heap = []
        for m, y in np.argwhere(~free):
            v = int(sign * fixed[m, y])
            dist[m, y] = v
            heap.append((v, int(m), int(y)))
        heapq.heapify(heap)
        while heap:
            d, m, y = heapq.heappop(heap)
            if d > dist[m, y]:
                continue
            for dm, dy, lo, hi in _STEPS:
                mm, yy = m + dm, y + dy
                if not (0 <= mm < shape[0] and 0 <= yy < shape[1]) or not free[mm, yy]:
                    continue
                w = hi if sign == 1 else -lo
                if d + w < dist[mm, yy]:
                    dist[mm, yy] = d + w
                    heapq.heappush(heap, (d + w, mm, yy))
        out.append(sign * dist)
    h_max, h_min = out
    if np.any(h_min > h_max):
        raise TilingError("boundary heights admit no tiling of the domain")
    for h in (h_min, h_max):
        bad = domain_violations(h, free)
        if bad:
            raise TilingError("boundary heights are inconsistent: " + bad[0])
    return h_min, h_max


def domain_violations(h: np.ndarray, free: np.ndarray) -> list[str]:
    """Gradient violations on edges touching at least one free face."""
    out = []
    for m, y in np.argwhere(free):
        for dm, dy, lo, hi in _STEPS[:3]:
            for sm, sy, s in ((m, y, 1), (m - dm, y - dy, -1)):
                mm, yy = sm + dm, sy + dy
                d = h[mm, yy] - h[sm, sy]
                if not lo <= d <= hi:
                    out.append(f"edge ({sm},{sy})->({mm},{yy}) has increment {d}")
    return out


@dataclass
class DomainSpec:
    """Simply connected domain with Dirichlet heights, or a torus marker.

    ``kind`` is ``"torus"``, ``"hexagon"`` (sides ``a, b, c``) or
    ``"rectangle"`` (an ``L1 x L2`` block of free faces whose frame is fixed
    to the flat height of slope ``rho``).  For bounded kinds ``h_min`` and
    ``h_max`` are the extreme tilings and ``free`` marks the interior.
    """

    kind: Literal["torus", "hexagon", "rectangle"]
    sides: tuple[int, ...] = ()
    rho: tuple[float, float] | None = None
    free: np.ndarray | None = field(default=None, repr=False)
    h_min: np.ndarray | None = field(default=None, repr=False)
    h_max: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def hexagon(cls, a: int, b: int, c: int) -> "DomainSpec":
        if min(a, b, c) < 1:
            raise TilingError("hexagon sides must be positive")
        h_lo, h_hi, free = _hexagon_arrays(a, b, c)
        for h in (h_lo, h_hi):
            bad = domain_violations(h, free)
            if bad:
                raise TilingError("internal error building hexagon: " + bad[0])
        return cls("hexagon", (a, b, c), None, free, h_lo, h_hi)

    @classmethod
    def rectangle(cls, L1: int, L2: int, rho=(1 / 3, 1 / 3)) -> "DomainSpec":
        """``L1 x L2`` free faces framed by the flat height of slope ``rho``."""
        r1, r2 = float(rho[0]), float(rho[1])
        if not (r1 >= 0 and r2 >= 0 and r1 + r2 <= 1):
            raise TilingError(f"boundary slope {rho} outside the slope triangle")
        m = np.arange(L1 + 2)[:, None]
        y = np.arange(L2 + 2)[None, :]
        fixed = np.floor(r1 * m + (r1 + r2) * y + 1e-9).astype(np.int64)
        free = np.zeros(fixed.shape, dtype=np.bool_)
        free[1:-1, 1:-1] = True
        h_min, h_max = extremal_heights(fixed, free)
        return cls("rectangle", (L1, L2), (r1, r2), free, h_min, h_max)

    @classmethod
    def torus(cls) -> "DomainSpec":
        return cls("torus")

    @property
    def bounded(self) -> bool:
        return self.kind != "torus"

    @property
    def n_free(self) -> int:
        return int(self.free.sum()) if self.free is not None else 0

    @property
    def linear_size(self) -> int:
        return max(self.sides) if self.sides else 0

    def faces(self) -> np.ndarray:
        """Flattened indices ``m * shape[1] + y`` of the free faces."""
        return np.flatnonzero(self.free.ravel()).astype(np.int64)

    def contains(self, h: np.ndarray) -> bool:
        return (
            h.shape == self.free.shape
            and bool(np.all(h[~self.free] == self.h_min[~self.free]))
            and not domain_violations(h, self.free)
        )
