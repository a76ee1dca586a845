import json

from click.testing import CliRunner

from dimerlab import __version__
from dimerlab.cli import main
from dimerlab.harness import RunManifest


def _run(*args):
    return CliRunner().invoke(main, list(args), catch_exceptions=False)


def test_version():
    res = _run("--version")
    assert res.exit_code == 0
    assert __version__ in res.output


def test_growth_velocity(tmp_path):
    out = tmp_path / "g"
    res = _run("growth", "--measure", "velocity", "--rho", "0.25,0.25", "--size", "12x12", "--time", "2",
               "--replicas", "2", "--seed", "1", "--out", str(out))
    assert res.exit_code == 0, res.output
    assert "status: ok" in res.output
    assert (out / "velocity.csv").exists()
    assert RunManifest.load(out).config.growth.L2 == 12


def test_config_file_and_set(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[experiment]\nseed = 5\n[pde]\nn = 16\nT = 0.01\n")
    out = tmp_path / "p"
    res = _run("pde", "hj", "--config", str(ini), "--set", "pde.n=24", "--out", str(out))
    assert res.exit_code == 0, res.output
    man = RunManifest.load(out)
    assert man.config.seed == 5 and man.config.pde.n == 24


def test_invalid_config_exit_code(tmp_path):
    res = _run("growth", "--rho", "0.5,0.5", "--seed", "1", "--out", str(tmp_path / "x"))
    assert res.exit_code == 64
    assert "interior" in res.output


def test_missing_seed_exit_code(tmp_path):
    res = _run("mixing", "--out", str(tmp_path / "x"))
    assert res.exit_code == 64


def test_censored_exit_code(tmp_path):
    out = tmp_path / "m"
    res = _run("mixing", "--ladder", "2,3", "--domain", "hexagon", "--replicas", "2", "--seed", "1",
               "--out", str(out), "--set", "max_events=100")
    assert res.exit_code == 2, res.output
    assert "CENSORED" in res.output


def test_runtime_error_exit_code(tmp_path):
    res = _run("pde", "hj", "--seed", "1", "--out", str(tmp_path / "e"), "--set", "pde.amplitude=0.5",
               "--set", "pde.n=16")
    assert res.exit_code == 1


def test_strict_turns_warnings_into_failure(tmp_path):
    args = ["equilibrium", "--seed", "1", "--set", "equilibrium.L=12", "--set", "equilibrium.samples=2",
            "--set", "equilibrium.sweeps=2", "--set", "equilibrium.max_r=3", "--set", "equilibrium.fit_lo=1",
            "--set", "equilibrium.fit_hi=3", "--set", "equilibrium.observable=mobility"]
    res = _run(*args, "--out", str(tmp_path / "a"))
    assert res.exit_code == 0, res.output
    man = RunManifest.load(tmp_path / "a")
    assert man.warnings
    res = _run(*args, "--out", str(tmp_path / "b"), "--strict")
    assert res.exit_code == 3


def test_acceptance_subset(tmp_path):
    out = tmp_path / "acc"
    res = _run("acceptance", "--only", "2", "--out", str(out))
    assert res.exit_code == 0, res.output
    assert "[PASS]  2" in res.output
    summary = json.loads((out / "summary.json").read_text())
    assert summary["2"]["passed"]
