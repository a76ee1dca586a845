import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dimerlab.gibbs import enumerate_small, torus_count
from dimerlab.lattice import (
    HeightField,
    InterlacedConfig,
    Slope,
    TilingError,
    TorusGeometry,
    admissible_flips,
    apply_flip,
    check_height_field,
    from_rows,
    height_to_particles,
    make_flat,
    particles_to_height,
    profile_initial,
    validate,
)
from dimerlab.pde import ContinuumField


@pytest.mark.parametrize(
    "rho, L, expected",
    [((1 / 3, 1 / 3), 6, (1 / 3, 1 / 3)), ((1 / 2, 1 / 4), 8, (1 / 2, 1 / 4)), ((0.2, 0.3), 10, (0.2, 0.3))],
)
def test_make_flat_has_requested_gradient(rho, L, expected):
    cfg = make_flat(rho, (L, L))
    assert validate(cfg) == []
    grad = particles_to_height(cfg).average_gradient()
    assert grad == pytest.approx(expected, abs=1e-12)


def test_boundary_slope_rejected():
    with pytest.raises(TilingError):
        make_flat((0.0, 0.5), (8, 8))
    with pytest.raises(TilingError):
        Slope(0.5, 0.5)


def test_geometry_rejects_incompatible_winding():
    with pytest.raises(TilingError):
        TorusGeometry(4, 4, 4, 1)


@pytest.mark.parametrize("L1, L2", [(2, 2), (2, 3), (3, 3), (3, 4), (4, 4)])
def test_bijection_on_every_small_class(L1, L2):
    for N in range(1, L2 + 1):
        for W in range(0, L1 * (L2 - N) // L2 + 1):
            g = TorusGeometry(L1, L2, N, W)
            en = enumerate_small(g)
            seen = set()
            for i in range(en.count):
                hf = HeightField(g, en.state(i))
                cfg = height_to_particles(hf)
                assert validate(cfg) == []
                assert particles_to_height(cfg) == hf
                seen.add(cfg.to_text())
            # distinct height functions give distinct configurations
            assert len(seen) == en.count


@pytest.mark.parametrize("g", [TorusGeometry(3, 3, 1, 1), TorusGeometry(3, 3, 2, 0), TorusGeometry(4, 4, 2, 1)])
def test_enumeration_matches_transfer_matrix(g):
    assert enumerate_small(g).count == torus_count(g)


def test_single_interlacement_violation_is_reported():
    g = TorusGeometry(4, 4, 2, 1)
    cfg = from_rows(g, [[0, 1], [0, 1], [0, 2], [1, 2]])
    assert validate(cfg) == []
    cfg.positions[1, 0] = -1
    msgs = validate(cfg)
    assert len(msgs) == 1
    assert "particle 0 of column 1" in msgs[0] and "column 0" in msgs[0]
    with pytest.raises(TilingError):
        particles_to_height(cfg)


def test_coinciding_particles_are_an_ordering_violation():
    cfg = make_flat((1 / 3, 1 / 3), TorusGeometry(6, 6, 2, 2))
    cfg.positions[2, 1] = cfg.positions[2, 0]
    msgs = validate(cfg)
    assert any(m.startswith("ordering: column 2") for m in msgs)


def test_illegal_height_field_names_the_edge():
    g = TorusGeometry(6, 6, 2, 2)
    h = particles_to_height(make_flat((1 / 3, 1 / 3), g)).h.copy()
    h[2, 3] += 2
    errs = check_height_field(HeightField(g, h))
    assert errs and all("increment" in e for e in errs)
    assert any("m=2, y=3" in e or "m=2, y=2" in e for e in errs)
    with pytest.raises(TilingError, match="edge"):
        height_to_particles(HeightField(g, h))


def test_text_round_trip(tmp_path):
    cfg = make_flat((0.25, 0.5), (8, 8))
    assert InterlacedConfig.from_text(cfg.to_text()) == cfg
    cfg.save(tmp_path / "c.txt")
    assert InterlacedConfig.load(tmp_path / "c.txt") == cfg
    with pytest.raises(TilingError):
        InterlacedConfig.from_text("")


@given(st.integers(0, 10**6), st.integers(1, 40))
def test_flips_are_local_and_stay_valid(seed, n_flips):
    g = TorusGeometry(6, 6, 2, 2)
    hf = particles_to_height(make_flat((1 / 3, 1 / 3), g))
    rng = np.random.default_rng(seed)
    for _ in range(n_flips):
        moves = admissible_flips(hf)
        assert moves
        m, y, d = moves[rng.integers(len(moves))]
        new = apply_flip(hf, m, y, d)
        diff = np.argwhere(new.h != hf.h)
        assert diff.tolist() == [[m, y]]
        assert new.h[m, y] - hf.h[m, y] == d
        assert check_height_field(new) == []
        # class is preserved
        assert validate(height_to_particles(new)) == []
        hf = new


def test_inadmissible_flip_is_a_no_op():
    g = TorusGeometry(6, 6, 2, 2)
    hf = particles_to_height(make_flat((1 / 3, 1 / 3), g))
    allowed = set(admissible_flips(hf))
    for m in range(6):
        for y in range(6):
            for d in (1, -1):
                if (m, y, d) not in allowed:
                    assert apply_flip(hf, m, y, d) == hf


def test_profile_initial_affine_matches_flat():
    phi = ContinuumField.from_function(lambda x1, x2: 0 * x1, 48, slope=(1 / 3, 1 / 3))
    cfg, err = profile_initial(phi, 1 / 48)
    assert err < 1 / 48
    assert particles_to_height(cfg).average_gradient() == pytest.approx((1 / 3, 1 / 3))
    assert particles_to_height(cfg).h.tolist() == particles_to_height(make_flat((1 / 3, 1 / 3), (48, 48))).h.tolist()


def test_profile_initial_curved_error_bound():
    def bump(x1, x2):
        return 0.02 * (np.cos(2 * np.pi * x1) + np.cos(2 * np.pi * x2))

    phi = ContinuumField.from_function(bump, 64, slope=(0.25, 0.25))
    cfg, err = profile_initial(phi, 1 / 64)
    assert validate(cfg) == []
    assert err <= 2 / 64


def test_profile_initial_rejects_steep_gradient():
    phi = ContinuumField.from_function(lambda x1, x2: 0.2 * np.sin(2 * np.pi * x1), 32, slope=(0.25, 0.25))
    # d/dx1 reaches 0.25 + 0.4 pi > 1
    with pytest.raises(TilingError, match="slope triangle"):
        profile_initial(phi, 1 / 32)
