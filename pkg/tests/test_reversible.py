from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dimerlab import _kernels as K
from dimerlab.domains import DomainSpec
from dimerlab.gibbs import enumerate_small, glauber_generator, sample_gibbs
from dimerlab.lattice import TorusGeometry, flat_heights
from dimerlab.reversible import (
    coupling_time,
    detailed_balance_defects,
    equilibrium_heights,
    mobility,
    mobility_estimate,
    mobility_speed_gap,
    replay,
    reversible_generator,
    reversible_run,
    stationarity_defects,
    tower_move,
)

TARGETS = [DomainSpec.hexagon(2, 2, 2), TorusGeometry(4, 4, 2, 1), DomainSpec.hexagon(1, 2, 3)]


@pytest.mark.parametrize("target", TARGETS)
def test_unit_towers_are_glauber_flips(target):
    en = enumerate_small(target)
    tower = reversible_generator(en, "tower", exact=True)
    unit = {k for k, r in tower.items() if r == 1}
    G = glauber_generator(en).tocoo()
    glauber = {(int(a), int(b)) for a, b, v in zip(G.row, G.col, G.data) if a != b and v > 0}
    assert unit == glauber
    assert reversible_generator(en, "glauber", exact=True).keys() == glauber


@pytest.mark.parametrize("target", TARGETS)
@pytest.mark.parametrize("dynamics", ["glauber", "tower"])
def test_exact_detailed_balance(target, dynamics):
    en = enumerate_small(target)
    rates = reversible_generator(en, dynamics, exact=True)
    assert all(isinstance(r, Fraction) for r in rates.values())
    assert detailed_balance_defects(rates) == []
    assert stationarity_defects(rates, en.count) == []


def test_long_towers_occur():
    en = enumerate_small(DomainSpec.hexagon(2, 2, 2))
    rates = reversible_generator(en, "tower", exact=True)
    assert any(r < 1 for r in rates.values())


@pytest.mark.parametrize("target", TARGETS)
def test_tower_then_reverse_restores(target):
    en = enumerate_small(target)
    for h in en.states:
        for m in range(h.shape[0]):
            for t in range(h.shape[1]):
                for n in range(1, 4):
                    up = tower_move(target, h, (m, t), n, +1)
                    if not up.admissible:
                        continue
                    assert up.rate == Fraction(1, n)
                    assert len(up.faces) == n
                    back = tower_move(target, up.heights, (m, t - n + 1), n, -1)
                    assert back.admissible
                    assert np.array_equal(back.heights, h)


def test_tower_rejects_bad_arguments():
    with pytest.raises(ValueError):
        tower_move(TorusGeometry(4, 4, 2, 1), flat_heights(TorusGeometry(4, 4, 2, 1)), (0, 0), 0, 1)


@pytest.mark.parametrize("dynamics", ["glauber", "tower"])
def test_zero_time_run(dynamics):
    g = TorusGeometry(6, 6, 2, 2)
    h = flat_heights(g)
    rec = reversible_run(g, h, dynamics, 0.0, seed=1)
    assert np.array_equal(rec.final, h)
    assert rec.proposals == 0


@pytest.mark.parametrize("dynamics", ["glauber", "tower"])
def test_replay_reproduces_run(dynamics):
    dom = DomainSpec.hexagon(3, 3, 3)
    h0 = dom.h_min.copy()
    rec = reversible_run(dom, h0, dynamics, 3.0, seed=4, record_moves=True)
    path = replay(dom, h0, rec.moves)
    assert np.array_equal(path[-1], rec.final)
    assert rec.accepted == rec.moves.shape[0]
    for h in path[:: max(1, len(path) // 20)]:
        assert dom.contains(h)


def test_run_is_deterministic():
    g = TorusGeometry(9, 9, 3, 3)
    h = flat_heights(g)
    a = reversible_run(g, h, "tower", 2.0, seed=7, times=[1.0, 2.0])
    b = reversible_run(g, h, "tower", 2.0, seed=7, times=[1.0, 2.0])
    assert np.array_equal(a.snapshots, b.snapshots)


def test_tower_stationary_drift_matches_zero():
    # mean displacement per unit time in equilibrium vanishes
    g = TorusGeometry(12, 12, 4, 4)
    h = equilibrium_heights(g, seed=1)
    rec = reversible_run(g, h, "tower", 40.0, seed=2)
    assert abs(rec.displacement) < 6 * np.sqrt(rec.accepted * 2.0)


def test_mobility_samples_have_zero_drift():
    ens = sample_gibbs((0.25, 0.25), (16, 16), sweeps=40, seed=3, n_samples=10)
    est = mobility_estimate((0.25, 0.25), ens.geometry, ens)
    assert np.all(est.drift_sums == 0)
    assert est.value > est.unit_value > 0
    assert not est.flagged
    few = mobility_estimate((0.25, 0.25), ens.geometry, ens.heights[:3])
    assert few.flagged


@given(st.floats(0.02, 0.96), st.floats(0.02, 0.96))
def test_mobility_symmetric(r1, r2):
    if r1 + r2 >= 0.98:
        return
    assert mobility(r1, r2) == pytest.approx(mobility(r2, r1), rel=1e-12)


def test_mobility_equals_speed():
    assert mobility_speed_gap(n=30) <= 1e-12


def test_smallest_hexagon_coupling():
    est = coupling_time("hexagon", [1, 2], replicas=6, seed=1, n_boot=50)
    assert np.all(np.isfinite(est.median))
    assert est.censored.sum() == 0


def test_coupling_censoring_and_truncation():
    est = coupling_time("hexagon", [3, 4, 5], replicas=3, seed=1, max_proposals=50, n_boot=20,
                        should_stop=lambda L: L >= 5)
    assert list(est.sizes) == [3, 4]
    assert est.censored.sum() > 0
    assert any("truncated" in f for f in est.flagged)


def _ordered_pairs():
    dom = DomainSpec.hexagon(2, 2, 2)
    en = enumerate_small(dom)
    S = en.states
    return dom, [(a, b) for a in range(en.count) for b in range(en.count) if np.all(S[a] >= S[b])], S


_DOM, _PAIRS, _STATES = _ordered_pairs()


@given(st.sampled_from(_PAIRS), st.integers(0, 2**31 - 1), st.integers(1, 400))
def test_coupling_preserves_order(pair, seed, props):
    a, b = pair
    Ha, Hb = _STATES[a].copy(), _STATES[b].copy()
    faces = _DOM.faces()
    res = K.coupled_glauber(Ha, Hb, _DOM.free, faces, False, 0, 0, 0, 0, props, 0, seed)
    assert res != -2
    assert np.all(Ha >= Hb)
    if res >= 0:
        assert np.array_equal(Ha, Hb)
