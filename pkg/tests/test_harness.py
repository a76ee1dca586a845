import json

import pytest
from pydantic import ValidationError

from dimerlab.harness import (
    ConfigError,
    ExperimentConfig,
    RunManifest,
    config_to_ini,
    load_config,
    parse_overrides,
    run_experiment,
    sha256,
    unlisted_files,
)

SMALL_GROWTH = [
    "kind=growth", "growth.L=12", "growth.T=2", "growth.t_min=0.2", "growth.n_times=10",
    "growth.replicas=2", "growth.rho1=0.25", "growth.rho2=0.25",
]


def _data_files(d):
    return {p.name: p.read_bytes() for p in d.iterdir() if p.suffix == ".csv"}


def test_same_seed_same_bytes(tmp_path):
    out = tmp_path / "run"
    cfg = load_config(overrides=SMALL_GROWTH + ["seed=3", f"out={out}"])
    m1 = run_experiment(cfg)
    first = _data_files(out)
    cfg2 = load_config(overrides=SMALL_GROWTH + ["seed=3", f"out={out}", "overwrite=true"])
    m2 = run_experiment(cfg2)
    assert m1.status == m2.status == "ok"
    assert _data_files(out) == first
    assert {k: v for k, v in m1.outputs.items() if k.endswith(".csv")} == {
        k: v for k, v in m2.outputs.items() if k.endswith(".csv")
    }


def test_refuses_nonempty_directory(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    (out / "stray.txt").write_text("x")
    cfg = load_config(overrides=SMALL_GROWTH + ["seed=1", f"out={out}"])
    with pytest.raises(ConfigError):
        run_experiment(cfg)
    cfg = load_config(overrides=SMALL_GROWTH + ["seed=1", f"out={out}", "overwrite=true"])
    with pytest.raises(ConfigError, match="no manifest"):
        run_experiment(cfg)


@pytest.mark.parametrize("override", ["growth.rho1=0.0", "growth.rho1=0.75", "pde.rho2=-0.1", "equilibrium.rho1=1"])
def test_boundary_slope_rejected_before_work(tmp_path, override):
    with pytest.raises(ValidationError, match="interior"):
        load_config(overrides=SMALL_GROWTH + ["seed=1", f"out={tmp_path / 'x'}", override])
    assert not (tmp_path / "x").exists()


def test_seed_is_required():
    with pytest.raises(ValidationError):
        load_config(overrides=["kind=growth"])


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ValidationError):
        load_config(overrides=["kind=growth", "seed=1", "growth.speed=3"])
    ini = tmp_path / "c.ini"
    ini.write_text("[experiment]\nkind = growth\nseed = 1\n[nonsense]\na = 1\n")
    with pytest.raises(ConfigError, match="nonsense"):
        load_config(ini)


def test_ladder_must_increase():
    with pytest.raises(ValidationError):
        load_config(overrides=["kind=mixing", "seed=1", "mixing.sizes=8,8,12"])


def test_overrides_parse():
    assert parse_overrides(["growth.T=5", "seed=2"]) == {"growth": {"T": "5"}, "experiment": {"seed": "2"}}
    with pytest.raises(ConfigError):
        parse_overrides(["growth.T"])


def test_config_round_trip(tmp_path):
    cfg = load_config(overrides=SMALL_GROWTH + [
        "seed=4", "max_events=100", "pde.H=1,0.5,-1", "pde.sign=-1", "mixing.sizes=4,6,9", "acceptance.criteria=2,5",
    ])
    p = tmp_path / "c.ini"
    p.write_text(config_to_ini(cfg))
    assert load_config(p) == cfg
    assert isinstance(cfg, ExperimentConfig)
    with pytest.raises(ValidationError):
        cfg.seed = 5  # frozen


def test_manifest_lists_every_file(tmp_path):
    out = tmp_path / "eq"
    cfg = load_config(overrides=[
        "kind=equilibrium", "seed=2", f"out={out}", "equilibrium.L=12", "equilibrium.samples=4",
        "equilibrium.sweeps=4", "equilibrium.max_r=3", "equilibrium.fit_lo=1", "equilibrium.fit_hi=3",
    ])
    man = run_experiment(cfg)
    assert man.status == "ok", man.errors
    assert unlisted_files(out) == []
    for rel, digest in man.outputs.items():
        assert sha256(out / rel) == digest
    back = RunManifest.load(out)
    assert back.config == cfg
    assert "config.ini" in back.outputs and "summary.json" in back.outputs


def test_censored_mixing_keeps_partial_ladder(tmp_path):
    out = tmp_path / "mix"
    cfg = load_config(overrides=[
        "kind=mixing", "seed=1", f"out={out}", "mixing.ladder=hexagon", "mixing.sizes=2,3,4",
        "mixing.replicas=2", "max_events=200",
    ])
    man = run_experiment(cfg)
    assert man.status == "CENSORED"
    assert man.censored
    summary = json.loads((out / "summary.json").read_text())
    assert summary["censored"] and summary["censored_replicas"] > 0
    assert (out / "mixing_summary.csv").exists()
    assert unlisted_files(out) == []


def test_errors_are_recorded(tmp_path):
    out = tmp_path / "bad"
    # an initial profile steeper than the slope triangle fails inside the run
    cfg = load_config(overrides=["kind=pde", "seed=1", f"out={out}", "pde.solver=hj", "pde.amplitude=0.5", "pde.n=16"])
    man = run_experiment(cfg)
    assert man.status == "error"
    assert man.errors
    assert RunManifest.load(out).status == "error"
