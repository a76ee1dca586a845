"""``dimerlab`` command line: config-driven runs and the acceptance suite.

Every subcommand accepts ``--config FILE`` (INI), repeated ``--set
section.key=value`` overrides and ``--strict``.  The exit code is 0 only when
the run finished without errors and without censored outputs (and, with
``--strict``, without warnings).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
from pydantic import ValidationError

from .harness import ConfigError, RunManifest, load_config, run_experiment


def _common(f):
    f = click.option("--strict", is_flag=True, help="Treat warnings as failures.")(f)
    f = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                     help="Override a config value, e.g. growth.T=100 or seed=3.")(f)
    f = click.option("--out", default=None, help="Output directory (overrides the config).")(f)
    f = click.option("--seed", type=int, default=None, help="Master seed (overrides the config).")(f)
    f = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="INI file with an [experiment] section and per-family sections.")(f)
    return f


def _pairs(**kw) -> list[str]:
    return [f"{k}={v}" for k, v in kw.items() if v is not None]


def _size(text):
    if text is None:
        return {}
    parts = text.lower().split("x")
    if len(parts) == 1:
        return {"L": int(parts[0])}
    return {"L": int(parts[0]), "L2": int(parts[1])}


def _rho(text):
    if text is None:
        return {}
    r1, r2 = text.split(",")
    return {"rho1": r1, "rho2": r2}


def _exit_code(man: RunManifest, strict: bool) -> int:
    if man.status == "error":
        return 1
    if man.status == "CENSORED":
        return 2
    if strict and man.warnings:
        return 3
    return 0


def _report(man: RunManifest) -> None:
    click.echo(f"status: {man.status}")
    click.echo(f"outputs: {len(man.outputs)} files in {man.config.out}")
    for w in man.warnings:
        click.echo(f"warning: {w}", err=True)
    for e in man.errors:
        click.echo(f"error: {e}", err=True)


def _run(kind, config_path, seed, out, overrides, strict, extra=()):
    sets = list(extra) + list(overrides)
    sets.insert(0, f"kind={kind}")
    if seed is not None:
        sets.append(f"seed={seed}")
    if out is not None:
        sets.append(f"out={out}")
    try:
        cfg = load_config(config_path, sets)
    except (ValidationError, ConfigError) as exc:
        click.echo(f"invalid configuration:\n{exc}", err=True)
        sys.exit(64)
    try:
        man = run_experiment(cfg)
    except ConfigError as exc:
        click.echo(str(exc), err=True)
        sys.exit(64)
    _report(man)
    return man


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Lozenge-tiling growth, equilibrium and continuum experiments."""


@main.command()
@click.option("--dynamics", type=click.Choice(["longjump", "corner"]), default=None)
@click.option("--measure", type=click.Choice(["fluctuations", "velocity"]), default=None)
@click.option("--rho", default=None, metavar="R1,R2", help="Slope.")
@click.option("--size", default=None, metavar="L1xL2", help="Torus size.")
@click.option("--time", "T", type=float, default=None, help="Final time.")
@click.option("--replicas", type=int, default=None)
@_common
def growth(dynamics, measure, rho, size, T, replicas, config_path, seed, out, overrides, strict):
    """Long-jump or corner growth: velocity or fluctuation growth."""
    kw = dict(dynamics=dynamics, measure=measure, T=T, replicas=replicas, **_rho(rho), **_size(size))
    extra = ["growth." + p for p in _pairs(**kw)]
    man = _run("growth", config_path, seed, out, overrides, strict, extra=extra)
    sys.exit(_exit_code(man, strict))


@main.command()
@click.option("--dynamics", type=click.Choice(["glauber", "tower"]), default=None)
@click.option("--domain", type=click.Choice(["torus", "hexagon"]), default=None)
@click.option("--observable", type=click.Choice(["variance", "mobility"]), default=None)
@click.option("--rho", default=None, metavar="R1,R2", help="Slope (torus).")
@_common
def equilibrium(dynamics, domain, observable, rho, config_path, seed, out, overrides, strict):
    """Equilibrium sampling: variance profile or mobility on a torus, mean heights on a hexagon."""
    kw = dict(dynamics=dynamics, geometry=domain, observable=observable, **_rho(rho))
    extra = ["equilibrium." + p for p in _pairs(**kw)]
    man = _run("equilibrium", config_path, seed, out, overrides, strict, extra=extra)
    sys.exit(_exit_code(man, strict))


@main.command()
@click.option("--ladder", default=None, metavar="L,L,...", help="Strictly increasing linear sizes.")
@click.option("--domain", type=click.Choice(["torus", "hexagon"]), default=None)
@click.option("--replicas", type=int, default=None)
@_common
def mixing(ladder, domain, replicas, config_path, seed, out, overrides, strict):
    """Coupling times of monotone Glauber chains along a size ladder."""
    extra = ["mixing." + p for p in _pairs(sizes=ladder, ladder=domain, replicas=replicas)]
    man = _run("mixing", config_path, seed, out, overrides, strict, extra=extra)
    sys.exit(_exit_code(man, strict))


@main.command()
@click.argument("solver", type=click.Choice(["hj", "parabolic", "spde", "hessian", "bump"]))
@_common
def pde(solver, config_path, seed, out, overrides, strict):
    """Continuum solvers and analyses."""
    man = _run("pde", config_path, seed, out, overrides, strict, extra=[f"pde.solver={solver}"])
    sys.exit(_exit_code(man, strict))


@main.command()
@click.option("--only", "only", default=None, help="Comma-separated criterion numbers (default: all).")
@_common
def acceptance(only, config_path, seed, out, overrides, strict):
    """Run the acceptance recipes and print one PASS/FAIL line per criterion."""
    extra = [f"acceptance.criteria={only}"] if only else []
    if seed is None:
        seed = 0
    man = _run("acceptance", config_path, seed, out, overrides, strict, extra=extra)
    if man.status != "error":
        summary = json.loads((Path(man.config.out) / "summary.json").read_text())
        for k in man.config.acceptance.criteria:
            r = summary.get(str(k))
            if r is not None:
                click.echo(f"[{'PASS' if r['passed'] else 'FAIL'}] {k:>2} {r['name']}: {r['summary']}")
        code = _exit_code(man, strict)
        if code == 0 and not summary.get("all_passed", False):
            code = 1
        sys.exit(code)
    sys.exit(1)


if __name__ == "__main__":
    main()
