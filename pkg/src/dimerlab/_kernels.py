"""Compiled inner loops shared by the equilibrium and growth dynamics.

Every kernel works on an integer height array ``H[m, y]`` indexed by column
``m`` and row ``y``.  On the torus, heights outside the fundamental domain are
recovered from the winding numbers::

    H(m, y + L2) = H(m, y) + (L2 - N)
    H(m + L1, y) = H(m, y) + W

For bounded domains (``periodic=False``) the caller guarantees that every free
face has all six neighbours inside the array.

Each kernel seeds numba's generator on entry, so a call is a pure function of
its arguments and its seed.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def hval(H, m, y, periodic, L1, L2, dN, W):
    if not periodic:
        return H[m, y]
    qm = m // L1
    qy = y // L2
    return H[m - qm * L1, y - qy * L2] + qm * W + qy * dN


@njit(cache=True, inline="always")
def _wrap(m, y, periodic, L1, L2):
    if periodic:
        return m % L1, y % L2
    return m, y


@njit(cache=True)
def segment_raisable(H, free, periodic, L1, L2, dN, W, m, lo, hi):
    """True if raising faces ``lo..hi`` of column ``m`` by one gives a valid field."""
    if hval(H, m, lo, periodic, L1, L2, dN, W) != hval(H, m, lo - 1, periodic, L1, L2, dN, W):
        return False
    if hval(H, m, hi + 1, periodic, L1, L2, dN, W) != hval(H, m, hi, periodic, L1, L2, dN, W) + 1:
        return False
    for k in range(lo, hi + 1):
        mm, kk = _wrap(m, k, periodic, L1, L2)
        if not free[mm, kk]:
            return False
        h = hval(H, m, k, periodic, L1, L2, dN, W)
        if hval(H, m + 1, k, periodic, L1, L2, dN, W) != h + 1:
            return False
        if hval(H, m - 1, k + 1, periodic, L1, L2, dN, W) != h + 1:
            return False
        if hval(H, m - 1, k, periodic, L1, L2, dN, W) != h:
            return False
        if hval(H, m + 1, k - 1, periodic, L1, L2, dN, W) != h:
            return False
    return True


@njit(cache=True)
def segment_lowerable(H, free, periodic, L1, L2, dN, W, m, lo, hi):
    """True if lowering faces ``lo..hi`` of column ``m`` by one gives a valid field."""
    if hval(H, m, lo, periodic, L1, L2, dN, W) != hval(H, m, lo - 1, periodic, L1, L2, dN, W) + 1:
        return False
    if hval(H, m, hi + 1, periodic, L1, L2, dN, W) != hval(H, m, hi, periodic, L1, L2, dN, W):
        return False
    for k in range(lo, hi + 1):
        mm, kk = _wrap(m, k, periodic, L1, L2)
        if not free[mm, kk]:
            return False
        h = hval(H, m, k, periodic, L1, L2, dN, W)
        if hval(H, m + 1, k, periodic, L1, L2, dN, W) != h:
            return False
        if hval(H, m - 1, k + 1, periodic, L1, L2, dN, W) != h:
            return False
        if hval(H, m - 1, k, periodic, L1, L2, dN, W) != h - 1:
            return False
        if hval(H, m + 1, k - 1, periodic, L1, L2, dN, W) != h - 1:
            return False
    return True


@njit(cache=True)
def up_reach(H, free, periodic, L1, L2, dN, W, m, x, cap):
    """Number of admissible upward jumps of the particle sitting at ``(m, x)``."""
    if hval(H, m, x + 1, periodic, L1, L2, dN, W) != hval(H, m, x, periodic, L1, L2, dN, W):
        return 0
    n = 0
    k = x + 1
    while n < cap:
        mm, kk = _wrap(m, k, periodic, L1, L2)
        if not periodic and (kk + 1 >= H.shape[1] or mm + 1 >= H.shape[0] or mm < 1 or kk < 1):
            break
        if not free[mm, kk]:
            break
        h = hval(H, m, k, periodic, L1, L2, dN, W)
        if hval(H, m + 1, k, periodic, L1, L2, dN, W) != h + 1:
            break
        if hval(H, m - 1, k + 1, periodic, L1, L2, dN, W) != h + 1:
            break
        if hval(H, m - 1, k, periodic, L1, L2, dN, W) != h:
            break
        if hval(H, m + 1, k - 1, periodic, L1, L2, dN, W) != h:
            break
        if hval(H, m, k + 1, periodic, L1, L2, dN, W) != h + 1:
            break
        n += 1
        k += 1
    return n


@njit(cache=True)
def down_reach(H, free, periodic, L1, L2, dN, W, m, x, cap):
    """Number of admissible downward jumps of the particle sitting at ``(m, x)``."""
    if hval(H, m, x + 1, periodic, L1, L2, dN, W) != hval(H, m, x, periodic, L1, L2, dN, W):
        return 0
    n = 0
    k = x
    while n < cap:
        mm, kk = _wrap(m, k, periodic, L1, L2)
        if not periodic and (kk < 1 or mm < 1 or mm + 1 >= H.shape[0] or kk + 1 >= H.shape[1]):
            break
        if not free[mm, kk]:
            break
        h = hval(H, m, k, periodic, L1, L2, dN, W)
        if hval(H, m + 1, k, periodic, L1, L2, dN, W) != h:
            break
        if hval(H, m - 1, k + 1, periodic, L1, L2, dN, W) != h:
            break
        if hval(H, m - 1, k, periodic, L1, L2, dN, W) != h - 1:
            break
        if hval(H, m + 1, k - 1, periodic, L1, L2, dN, W) != h - 1:
            break
        if hval(H, m, k - 1, periodic, L1, L2, dN, W) != h - 1:
            break
        n += 1
        k -= 1
    return n


@njit(cache=True)
def flip_admissible(H, free, periodic, L1, L2, dN, W, m, y, d):
    if d > 0:
        return segment_raisable(H, free, periodic, L1, L2, dN, W, m, y, y)
    return segment_lowerable(H, free, periodic, L1, L2, dN, W, m, y, y)


@njit(cache=True)
def glauber_sweep(H, free, faces, periodic, L1, L2, dN, W, n_props, seed):
    """Apply ``n_props`` uniform (face, direction) proposals; returns accepted count."""
    np.random.seed(seed)
    L = H.shape[1]
    nf = faces.shape[0]
    acc = 0
    for _ in range(n_props):
        f = faces[np.random.randint(nf)]
        m = f // L
        y = f - m * L
        d = 1 if np.random.random() < 0.5 else -1
        if flip_admissible(H, free, periodic, L1, L2, dN, W, m, y, d):
            H[m, y] += d
            acc += 1
    return acc


@njit(cache=True)
def _tower_try(H, free, periodic, L1, L2, dN, W, m, t, d, max_len, u):
    """One tower proposal at face ``t`` of column ``m``; returns signed length or 0."""
    if d > 0:
        # tower whose top face is t: the particle below t jumps up to t
        n = 1
        while n <= max_len:
            x = t - n
            if hval(H, m, x + 1, periodic, L1, L2, dN, W) == hval(H, m, x, periodic, L1, L2, dN, W):
                break
            if not periodic and x < 1:
                return 0
            n += 1
        if n > max_len:
            return 0
        if u * n >= 1.0:
            return 0
        if not segment_raisable(H, free, periodic, L1, L2, dN, W, m, t - n + 1, t):
            return 0
        for k in range(t - n + 1, t + 1):
            mm, kk = _wrap(m, k, periodic, L1, L2)
            H[mm, kk] += 1
        return n
    # tower whose lowest face is t: the particle at or above t jumps down to t - 1
    n = 1
    while n <= max_len:
        x = t + n - 1
        if not periodic and x + 1 >= H.shape[1]:
            return 0
        if hval(H, m, x + 1, periodic, L1, L2, dN, W) == hval(H, m, x, periodic, L1, L2, dN, W):
            break
        n += 1
    if n > max_len:
        return 0
    if u * n >= 1.0:
        return 0
    if not segment_lowerable(H, free, periodic, L1, L2, dN, W, m, t, t + n - 1):
        return 0
    for k in range(t, t + n):
        mm, kk = _wrap(m, k, periodic, L1, L2)
        H[mm, kk] -= 1
    return -n


@njit(cache=True)
def tower_sweep(H, free, faces, periodic, L1, L2, dN, W, n_props, max_len, seed):
    """Tower dynamics by thinning: a tower of length n is accepted with probability 1/n.

    Returns (accepted moves, sum of signed lengths).
    """
    np.random.seed(seed)
    L = H.shape[1]
    nf = faces.shape[0]
    acc = 0
    disp = 0
    for _ in range(n_props):
        f = faces[np.random.randint(nf)]
        m = f // L
        t = f - m * L
        d = 1 if np.random.random() < 0.5 else -1
        u = np.random.random()
        s = _tower_try(H, free, periodic, L1, L2, dN, W, m, t, d, max_len, u)
        if s != 0:
            acc += 1
            disp += s
    return acc, disp


@njit(cache=True)
def coupled_glauber(Ha, Hb, free, faces, periodic, L1, L2, dN, W, max_props, check_every, seed):
    """Grand monotone coupling of two Glauber chains driven by one proposal stream.

    Returns the number of proposals until the chains agree, or -1 if they have
    not met after ``max_props``.  The pointwise order ``Ha >= Hb`` is asserted
    at every accepted update (returns -2 on violation).
    """
    np.random.seed(seed)
    L = Ha.shape[1]
    nf = faces.shape[0]
    ndiff = 0
    for i in range(nf):
        f = faces[i]
        if Ha[f // L, f % L] != Hb[f // L, f % L]:
            ndiff += 1
    if ndiff == 0:
        return 0
    for step in range(1, max_props + 1):
        f = faces[np.random.randint(nf)]
        m = f // L
        y = f - m * L
        d = 1 if np.random.random() < 0.5 else -1
        before = Ha[m, y] != Hb[m, y]
        if flip_admissible(Ha, free, periodic, L1, L2, dN, W, m, y, d):
            Ha[m, y] += d
        if flip_admissible(Hb, free, periodic, L1, L2, dN, W, m, y, d):
            Hb[m, y] += d
        if Ha[m, y] < Hb[m, y]:
            return -2
        after = Ha[m, y] != Hb[m, y]
        if before and not after:
            ndiff -= 1
        elif after and not before:
            ndiff += 1
        if ndiff == 0:
            return step
    return -1


@njit(cache=True)
def jump_counts(H, free, periodic, L1, L2, dN, W, cap):
    """Per-face arrays of admissible up/down jump counts (zero where no particle)."""
    up = np.zeros(H.shape, dtype=np.int64)
    down = np.zeros(H.shape, dtype=np.int64)
    Lm, Ly = H.shape
    for m in range(Lm):
        for y in range(Ly):
            if not periodic and (m < 1 or y < 1 or m + 1 >= Lm or y + 1 >= Ly):
                continue
            if hval(H, m, y + 1, periodic, L1, L2, dN, W) == hval(H, m, y, periodic, L1, L2, dN, W):
                up[m, y] = up_reach(H, free, periodic, L1, L2, dN, W, m, y, cap)
                down[m, y] = down_reach(H, free, periodic, L1, L2, dN, W, m, y, cap)
    return up, down


# ---------------------------------------------------------------------------
# Particle-based kinetic Monte Carlo on the torus
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def xget(X, m, j, L1, L2, N, W):
    q = m // L1
    m0 = m - q * L1
    j2 = j + q * W
    qj = j2 // N
    return X[m0, j2 - qj * N] + qj * L2


@njit(cache=True, inline="always")
def pindex(m, j, L1, N, W):
    q = m // L1
    m0 = m - q * L1
    j2 = (j + q * W) % N
    return m0 * N + j2


@njit(cache=True)
def particle_nmax(X, m, j, L1, L2, N, W):
    upper = min(xget(X, m + 1, j, L1, L2, N, W), xget(X, m - 1, j + 1, L1, L2, N, W) - 1)
    return upper - xget(X, m, j, L1, L2, N, W)


@njit(cache=True)
def tree_build(rates):
    P = rates.shape[0]
    size = 1
    while size < P:
        size *= 2
    tree = np.zeros(2 * size, dtype=np.int64)
    for i in range(P):
        tree[size + i] = rates[i]
    for i in range(size - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]
    return tree


@njit(cache=True, inline="always")
def tree_set(tree, i, value):
    size = tree.shape[0] // 2
    k = size + i
    delta = value - tree[k]
    while k >= 1:
        tree[k] += delta
        k //= 2


@njit(cache=True, inline="always")
def tree_find(tree, r):
    size = tree.shape[0] // 2
    k = 1
    while k < size:
        if r < tree[2 * k]:
            k = 2 * k
        else:
            r -= tree[2 * k]
            k = 2 * k + 1
    return k - size


@njit(cache=True)
def particle_rates(X, L1, L2, N, W, corner):
    rates = np.zeros(L1 * N, dtype=np.int64)
    for m in range(L1):
        for j in range(N):
            n = particle_nmax(X, m, j, L1, L2, N, W)
            if corner:
                rates[m * N + j] = 1 if n >= 1 else 0
            else:
                rates[m * N + j] = n
    return rates


@njit(cache=True)
def kmc_advance(X, H, tree, L1, L2, N, W, corner, t0, t_end, max_events, seed):
    """Advance the totally asymmetric jump dynamics from ``t0`` towards ``t_end``.

    Rate 1 per admissible destination (``corner=False``) or rate 1 for the
    unit jump only (``corner=True``).  Returns (time reached, events, jammed).
    Stops early after ``max_events`` events when that is positive.
    """
    np.random.seed(seed)
    t = t0
    events = 0
    while True:
        total = tree[1]
        if total == 0:
            return t, events, True
        dt = -np.log(1.0 - np.random.random()) / total
        if t + dt > t_end:
            return t_end, events, False
        t += dt
        p = tree_find(tree, np.random.randint(total))
        m = p // N
        j = p - m * N
        nm = particle_nmax(X, m, j, L1, L2, N, W)
        if corner:
            n = 1
        else:
            n = 1 + np.random.randint(nm)
        x = X[m, j]
        for k in range(x + 1, x + n + 1):
            H[m, k % L2] += 1
        X[m, j] = x + n
        for (mm, jj) in ((m, j), (m - 1, j), (m + 1, j - 1)):
            q = pindex(mm, jj, L1, N, W)
            qm = q // N
            nn = particle_nmax(X, qm, q - qm * N, L1, L2, N, W)
            if corner:
                tree_set(tree, q, 1 if nn >= 1 else 0)
            else:
                tree_set(tree, q, nn)
        events += 1
        if max_events > 0 and events >= max_events:
            return t, events, False


@njit(cache=True)
def glauber_torus(H, L1, L2, dN, W, n_props, seed):
    """Fast path of :func:`glauber_sweep` for the full torus (all faces free)."""
    np.random.seed(seed)
    acc = 0
    nf2 = 2 * L1 * L2
    for _ in range(n_props):
        r = np.random.randint(nf2)
        d = 1 - 2 * (r & 1)
        f = r >> 1
        m = f // L2
        y = f - m * L2
        if 0 < m < L1 - 1 and 0 < y < L2 - 1:
            h = H[m, y]
            if d > 0:
                ok = (
                    H[m, y + 1] == h + 1
                    and H[m + 1, y] == h + 1
                    and H[m - 1, y + 1] == h + 1
                    and H[m, y - 1] == h
                    and H[m - 1, y] == h
                    and H[m + 1, y - 1] == h
                )
            else:
                ok = (
                    H[m, y + 1] == h
                    and H[m + 1, y] == h
                    and H[m - 1, y + 1] == h
                    and H[m, y - 1] == h - 1
                    and H[m - 1, y] == h - 1
                    and H[m + 1, y - 1] == h - 1
                )
        else:
            ok = _flip_torus_edge(H, L1, L2, dN, W, m, y, d)
        if ok:
            H[m, y] += d
            acc += 1
    return acc


@njit(cache=True)
def _flip_torus_edge(H, L1, L2, dN, W, m, y, d):
    h = H[m, y]
    e = 1 if d > 0 else 0
    if hval(H, m, y + 1, True, L1, L2, dN, W) != h + e:
        return False
    if hval(H, m + 1, y, True, L1, L2, dN, W) != h + e:
        return False
    if hval(H, m - 1, y + 1, True, L1, L2, dN, W) != h + e:
        return False
    if hval(H, m, y - 1, True, L1, L2, dN, W) != h + e - 1:
        return False
    if hval(H, m - 1, y, True, L1, L2, dN, W) != h + e - 1:
        return False
    if hval(H, m + 1, y - 1, True, L1, L2, dN, W) != h + e - 1:
        return False
    return True


@njit(cache=True)
def move_path(H, free, faces, periodic, L1, L2, dN, W, n_props, tower, max_len, seed):
    """Run ``n_props`` proposals and record ``(face, signed length)`` of each accepted move.

    Uses the Glauber rule, or the tower rule by thinning when ``tower`` is set.
    """
    np.random.seed(seed)
    L = H.shape[1]
    nf = faces.shape[0]
    rec = np.empty((n_props, 2), dtype=np.int64)
    k = 0
    for _ in range(n_props):
        f = faces[np.random.randint(nf)]
        m = f // L
        t = f - m * L
        d = 1 if np.random.random() < 0.5 else -1
        if tower:
            u = np.random.random()
            s = _tower_try(H, free, periodic, L1, L2, dN, W, m, t, d, max_len, u)
        else:
            s = 0
            if flip_admissible(H, free, periodic, L1, L2, dN, W, m, t, d):
                H[m, t] += d
                s = d
        if s != 0:
            rec[k, 0] = f
            rec[k, 1] = s
            k += 1
    return rec[:k]
