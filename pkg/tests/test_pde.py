import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dimerlab.pde import (
    DIMER_SPEED,
    BlowUp,
    CFLError,
    ContinuumField,
    GradientExit,
    QuadraticHamiltonian,
    SpdeParams,
    bump_evolution,
    check_convex,
    discrete_conjugate,
    hessian_report,
    hj_solve,
    hopf_oracle,
    interior_grid,
    l2_distance_history,
    parabolic_solve,
    spde_run,
)
from dimerlab.growth import speed_function
from dimerlab.recipes import _hydro_setup
from dimerlab.rng import stream


@given(st.floats(0.05, 0.45))
def test_hessian_symmetric_on_diagonal(r):
    h11, h12, h22 = DIMER_SPEED.hessian(r, r)
    assert h11 == pytest.approx(h22, rel=1e-10)


def test_hessian_closed_form_matches_finite_differences():
    rep = hessian_report(slopes=interior_grid(12))
    assert rep.max_rel_error <= 1e-6
    assert np.all(rep.det < 0)
    assert np.allclose(rep.analytic, np.swapaxes(rep.analytic, 1, 2))


def test_speed_gradient_matches_finite_differences():
    p = interior_grid(8, margin=0.05)
    g1, g2 = DIMER_SPEED.grad(p[:, 0], p[:, 1])
    h = 1e-6
    fd1 = (DIMER_SPEED.value(p[:, 0] + h, p[:, 1]) - DIMER_SPEED.value(p[:, 0] - h, p[:, 1])) / (2 * h)
    fd2 = (DIMER_SPEED.value(p[:, 0], p[:, 1] + h) - DIMER_SPEED.value(p[:, 0], p[:, 1] - h)) / (2 * h)
    assert np.allclose(g1, fd1, rtol=1e-6) and np.allclose(g2, fd2, rtol=1e-6)


def test_affine_data_moves_at_constant_speed():
    f = ContinuumField(np.zeros((16, 16)), 1 / 16, slope=(0.2, 0.3))
    u = hj_solve(f, 0.5).field
    assert np.allclose(u.values, 0.5 * speed_function((0.2, 0.3)), atol=1e-12)


def _smooth(seed, n=32, amp=0.01):
    rng = stream(seed, "smooth-test")
    x1, x2 = ContinuumField.grid_coords(n, n, 1 / n)
    out = np.zeros((n, n))
    for _ in range(4):
        k1, k2 = rng.integers(-2, 3, size=2)
        out += amp * rng.uniform(-1, 1) * np.cos(2 * np.pi * (k1 * x1 + k2 * x2) + rng.uniform(0, 2 * np.pi))
    return out


@given(st.integers(0, 10**6), st.floats(0.0, 0.02))
def test_hj_comparison_principle(seed, shift):
    a = _smooth(seed, amp=0.003)
    b = np.maximum(a, _smooth(seed + 1, amp=0.003)) + shift
    fa = ContinuumField(a, 1 / 32, slope=(1 / 3, 1 / 3))
    fb = ContinuumField(b, 1 / 32, slope=(1 / 3, 1 / 3))

    def run(f, **kw):
        return hj_solve(f, 0.05, dt=0.001, **kw).field.values

    # frozen coefficients: exactly monotone
    assert np.all(run(fa, dissipation=(8.0, 8.0)) <= run(fb, dissipation=(8.0, 8.0)))
    # solution-dependent coefficients: ordered up to second-order terms
    assert np.all(run(fa) <= run(fb) + 1e-6)


def test_fixed_dissipation_must_bound_local():
    f = ContinuumField(_smooth(2, amp=0.003), 1 / 32, slope=(1 / 3, 1 / 3))
    with pytest.raises(ValueError, match="dissipation"):
        hj_solve(f, 0.01, dt=0.001, dissipation=(0.1, 0.1))


def test_hj_converges_to_hopf_formula():
    rho, _, gstar, box = _hydro_setup()
    A = 0.15 / (2 * math.pi)
    T = 0.25
    errs = []
    for n in (32, 64, 128):
        f = ContinuumField.from_function(lambda a, b: -A * np.cos(2 * np.pi * a) + 0 * b, n, slope=rho)
        u = hj_solve(f, T).field
        x1 = np.arange(n) * u.dx
        sel = x1 <= 0.09
        ref = hopf_oracle(lambda p1, p2: gstar(p1 - rho[0]), np.column_stack([x1[sel], 0 * x1[sel]]), T, box)
        errs.append(np.max(np.abs(u.full()[sel, 0] - ref)))
    # first-order scheme: the error halves with the mesh
    assert errs[0] / errs[1] > 1.7 and errs[1] / errs[2] > 1.7
    assert errs[-1] < 5e-4


def test_hopf_oracle_on_quadratic_hamiltonian():
    # phi0 = |x|^2 / 2 under v(p) = |p|^2 gives phi = |x|^2 / (2 (1 - 2t))
    ham = QuadraticHamiltonian(np.eye(2))
    conj = lambda p1, p2: 0.5 * (p1**2 + p2**2)
    x = np.array([[0.3, -0.2], [0.1, 0.4]])
    t = 0.1
    vals, acc = hopf_oracle(conj, x, t, ((-2, 2), (-2, 2)), ham, n=101, refinements=4, with_accuracy=True)
    assert np.allclose(vals, np.sum(x**2, axis=1) / (2 * (1 - 2 * t)), atol=1e-6)


def test_convexity_and_conjugate_helpers():
    f = lambda a, b: a**2 + 2 * b**2
    assert check_convex(f, ((-1, 1), (-1, 1)))
    assert not check_convex(lambda a, b: -f(a, b), ((-1, 1), (-1, 1)))
    conj = discrete_conjugate(f, ((-2, 2), (-2, 2)), n=201)
    assert conj(np.array(1.0), np.array(1.0)) == pytest.approx(0.25 + 0.125, abs=1e-3)


def test_hj_cfl_error():
    f = ContinuumField(_smooth(1), 1 / 32, slope=(1 / 3, 1 / 3))
    with pytest.raises(CFLError, match="need dt"):
        hj_solve(f, 0.1, dt=1.0)


def test_hj_rejects_bad_initial_gradient():
    f = ContinuumField(np.zeros((8, 8)), 1 / 8, slope=(0.7, 0.5))
    with pytest.raises(ValueError):
        hj_solve(f, 0.1)


def test_parabolic_contraction(sigma_table):
    a = ContinuumField(_smooth(3, 24, 0.006), 1 / 24, slope=(1 / 3, 1 / 3))
    b = ContinuumField(_smooth(4, 24, 0.006), 1 / 24, slope=(1 / 3, 1 / 3))
    ts, d2 = l2_distance_history(a, b, 0.02, sigma_table, n_out=20)
    assert np.all(np.diff(d2) <= 0)
    assert d2[-1] < d2[0]


def test_parabolic_flat_is_stationary(sigma_table):
    f = ContinuumField(np.zeros((12, 12)), 1 / 12, slope=(0.2, 0.4))
    res = parabolic_solve(f, 0.01, sigma_table)
    assert np.allclose(res.field.values, 0.0)


def test_parabolic_gradient_exit(sigma_table):
    f = ContinuumField(np.zeros((12, 12)), 1 / 12, slope=(0.001, 0.4))
    with pytest.raises(GradientExit) as exc:
        parabolic_solve(f, 0.01, sigma_table)
    assert exc.value.snapshot is not None


def test_heat_decay_without_noise():
    p = SpdeParams(nu=1.0, H=((0, 0), (0, 0)))
    n = 32
    x = np.arange(n)
    init = np.cos(2 * np.pi * x / n)[:, None] * np.ones((1, n))
    r = spde_run(p, n, 20.0, seed=1, noise=False, initial=init, times=np.linspace(1, 20, 5))
    lam = 2 - 2 * math.cos(2 * math.pi / n)
    expected = r.var[0] * np.exp(-2 * lam * (r.times - r.times[0]))
    assert np.allclose(r.var, expected, rtol=0.02)


def test_edwards_wilkinson_grows_logarithmically():
    p = SpdeParams(nu=1.0, H=((0, 0), (0, 0)))
    r = spde_run(p, 64, 50.0, seed=2, replicas=4, times=np.geomspace(1, 50, 20), window=(3, 50))
    assert r.log.r2 >= 0.95
    assert np.all(np.isfinite(r.var))


def test_spde_is_reproducible_and_hook_truncates():
    p = SpdeParams(nu=1.0, H=((1, 0), (0, -1)), amplitude=1.0, saturation=0.5)
    kw = dict(n=16, T=2.0, seed=5, times=np.linspace(0.2, 2.0, 10))
    a = spde_run(p, replicas=2, **kw)
    b = spde_run(p, replicas=2, **kw)
    assert np.array_equal(a.var, b.var)
    c = spde_run(p, replicas=3, should_stop=lambda r: r >= 1, **kw)
    assert c.replicas == 1
    assert np.array_equal(c.var, spde_run(p, replicas=1, **kw).var)


def test_spde_cfl_error():
    with pytest.raises(CFLError):
        spde_run(SpdeParams(nu=1.0, H=((0, 0), (0, 0))), 16, 1.0, seed=0, dt=0.5)


def test_spde_blowup_reports_time():
    p = SpdeParams(nu=0.1, H=((50, 0), (0, 50)), amplitude=20.0)
    with pytest.raises(BlowUp) as exc:
        spde_run(p, 16, 50.0, seed=1, dt=0.05)
    assert exc.value.last_stable_time >= 0


def test_degenerate_h_is_flagged():
    b = bump_evolution([[1, 0], [0, 0]], +1, 2.0, times=np.geomspace(0.5, 2, 5))
    assert b.flagged


def test_indefinite_positive_bump_decays():
    b = bump_evolution([[1, 0], [0, -1]], +1, 4.0, times=np.geomspace(0.5, 4, 5))
    assert not b.flagged
    assert np.all(np.diff(b.height) < 0)


def test_definite_bump_scaling():
    times = np.geomspace(2, 16, 4)
    b = bump_evolution(np.eye(2), -1, 16.0, times=times)
    # a negative bump under |grad|^2 decays like 1/t
    prod = -b.height * b.times
    assert np.max(np.abs(prod / prod.mean() - 1)) < 0.2
