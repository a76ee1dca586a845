import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dimerlab.gibbs import enumerate_small, sample_gibbs
from dimerlab.growth import (
    RateIndex,
    admissible_jumps,
    corner_growth_run,
    instantaneous_growth_rate,
    jump,
    kmc_run,
    measure_fluctuations,
    measure_velocity,
    speed_function,
    tasep_current_exact,
    tasep_current_simulated,
)
from dimerlab.lattice import HeightField, TorusGeometry, height_to_particles, make_flat, validate


def _brute_jumps(cfg, m, j):
    n = 0
    while not validate(jump(cfg, (m, j), n + 1)):
        n += 1
    return n


def test_admissible_jumps_match_brute_force_on_a_whole_class():
    g = TorusGeometry(4, 4, 2, 1)
    en = enumerate_small(g)
    for i in range(en.count):
        cfg = height_to_particles(HeightField(g, en.state(i)))
        idx = RateIndex(cfg)
        for m in range(g.L1):
            for j in range(g.N):
                n = admissible_jumps(cfg, (m, j))
                assert n == _brute_jumps(cfg, m, j)
                assert idx.rate(m, j) == n


def test_rate_index_corner_counts_movable_particles():
    cfg = make_flat((0.25, 0.25), (8, 8))
    idx = RateIndex(cfg, corner=True)
    full = RateIndex(cfg)
    assert np.array_equal(idx.leaves(), (full.leaves() > 0).astype(idx.leaves().dtype))
    assert idx.consistent_with(cfg.positions)


@pytest.mark.parametrize(
    "rho, v",
    [((1 / 3, 1 / 3), math.sqrt(3) / (2 * math.pi)), ((0.25, 0.25), 0.5 / math.pi), ((0.5, 0.25), 1 / math.pi)],
)
def test_speed_function_values(rho, v):
    assert speed_function(rho) == pytest.approx(v, rel=1e-12)


def test_speed_function_rejects_boundary():
    with pytest.raises(ValueError):
        speed_function((0.5, 0.5))


def test_zero_time_leaves_configuration_unchanged():
    cfg = make_flat((1 / 3, 1 / 3), (9, 9))
    rec = kmc_run(cfg, 0.0, seed=1)
    assert rec.final == cfg
    assert rec.n_events == 0


def test_debug_run_is_clean():
    cfg = make_flat((0.25, 0.25), (32, 32))
    for run in (kmc_run, corner_growth_run):
        rec = run(cfg, 3.0, seed=2, debug=True, check_every=200)
        assert rec.violations == []
        assert rec.rate_checks > 0
        assert validate(rec.final) == []


def test_runs_are_reproducible():
    cfg = make_flat((0.25, 0.25), (16, 16))
    obs = {"times": [0.5, 1.0, 2.0]}
    a = kmc_run(cfg, 2.0, obs, seed=5).serialize()
    b = kmc_run(cfg, 2.0, obs, seed=5).serialize()
    c = kmc_run(cfg, 2.0, obs, seed=6).serialize()
    assert a == b
    assert a != c


@given(st.integers(0, 10**6))
def test_heights_never_decrease(seed):
    cfg = make_flat((1 / 3, 1 / 3), (12, 12))
    times = np.linspace(0.1, 2.0, 10)
    rec = kmc_run(cfg, 2.0, {"times": times, "snapshots": True}, seed=seed)
    assert np.all(np.diff(rec.snapshots, axis=0) >= 0)
    assert np.all(rec.snapshots[0] >= rec.initial_heights)
    assert np.all(np.diff(rec.events) >= 0)


def test_invalid_observation_times():
    cfg = make_flat((1 / 3, 1 / 3), (6, 6))
    with pytest.raises(ValueError):
        kmc_run(cfg, 1.0, {"times": [0.5, 0.2]})
    with pytest.raises(ValueError):
        kmc_run(cfg, -1.0)


def test_instantaneous_rate_brute_force():
    g = TorusGeometry(4, 4, 2, 1)
    cfg = make_flat(g.slope, g)
    total = 0
    for m in range(4):
        for j in range(2):
            n = admissible_jumps(cfg, (m, j))
            # a jump by k raises k faces
            total += sum(range(1, n + 1))
    assert instantaneous_growth_rate(cfg) == pytest.approx(total / 16)


def test_tasep_exact_current():
    L, n = 6, 3
    assert tasep_current_exact(L, n) == pytest.approx(n * (L - n) / (L * (L - 1)), abs=1e-12)


def test_tasep_simulated_current():
    s = np.array([tasep_current_simulated(6, 3, 2000.0, k) for k in range(8)])
    se = s.std(ddof=1) / math.sqrt(s.size)
    assert abs(s.mean() - 0.3) <= 3 * se


def test_velocity_small_torus():
    v = measure_velocity((0.25, 0.25), (24, 24), T=10, replicas=8, seed=1)
    assert v.within(speed_function((0.25, 0.25)), n_stderr=3, rel=0.05)
    assert not v.flagged


def test_corner_velocity_differs():
    lj = measure_velocity((0.25, 0.25), (24, 24), T=10, replicas=8, seed=1)
    co = measure_velocity((0.25, 0.25), (24, 24), T=10, replicas=8, seed=1, dynamics="corner")
    assert abs(lj.value - co.value) > 5 * math.hypot(lj.stderr, co.stderr)


def test_gibbs_start_rate_matches_speed():
    # the stationary expected growth rate equals the speed function exactly,
    # so its sample mean over Gibbs states must agree statistically
    ens = sample_gibbs((1 / 3, 1 / 3), (18, 18), sweeps=30, seed=3, n_samples=30)
    rates = np.array([instantaneous_growth_rate(c) for c in ens.samples])
    se = rates.std(ddof=1) / math.sqrt(rates.size)
    assert abs(rates.mean() - speed_function((1 / 3, 1 / 3))) <= 4 * se + 0.01


def test_fluctuations_censoring_hook():
    res = measure_fluctuations(
        "corner", (0.25, 0.25), (16, 16), np.geomspace(0.5, 4, 10), replicas=4, seed=1,
        should_stop=lambda i, ev: i >= 2,
    )
    assert res.replicas == 2 and res.censored
    assert res.var.shape == (10,)
    assert np.all(np.diff(res.mean_height) > 0)
