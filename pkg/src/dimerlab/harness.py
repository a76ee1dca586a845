"""Config-driven experiment runs with checksummed output manifests.

A run is described by an :class:`ExperimentConfig` (loaded from an INI file
with an ``[experiment]`` section plus one section per experiment family) and
executed by :func:`run_experiment`, which writes plot-ready CSV files
atomically and then a ``manifest.json`` listing every file with its SHA-256.
Resource caps stop work early; the partial outputs are kept and the manifest
is marked ``CENSORED``.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import platform
import time
from datetime import datetime, timezone
from io import StringIO
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import __version__

MANIFEST = "manifest.json"


class ConfigError(ValueError):
    pass


def _split_list(v):
    if isinstance(v, str):
        v = [x for x in v.replace(";", ",").split(",") if x.strip()]
    return v


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _check_slope(r1: float, r2: float, what: str) -> None:
    if not (r1 > 0 and r2 > 0 and r1 + r2 < 1):
        raise ValueError(f"{what} slope ({r1}, {r2}) is not in the interior of the slope triangle")


class GrowthSection(_Section):
    dynamics: Literal["longjump", "corner"] = "longjump"
    measure: Literal["fluctuations", "velocity"] = "fluctuations"
    rho1: float = 1 / 3
    rho2: float = 1 / 3
    L: int = Field(63, ge=3)
    L2: int | None = Field(None, ge=3)
    T: float = Field(50.0, gt=0)
    t_min: float = Field(1.0, gt=0)
    n_times: int = Field(20, ge=10)  # the latter-half fit needs five points
    replicas: int = Field(4, ge=1)
    start: Literal["gibbs", "flat", "default"] = "default"


class EquilibriumSection(_Section):
    geometry: Literal["torus", "hexagon"] = "torus"
    dynamics: Literal["glauber", "tower"] = "glauber"
    observable: Literal["variance", "mobility"] = "variance"
    rho1: float = 1 / 3
    rho2: float = 1 / 3
    L: int = Field(30, ge=3)
    samples: int = Field(8, ge=1)
    sweeps: int = Field(0, ge=0)
    max_r: int = Field(8, ge=1)
    fit_lo: int = Field(2, ge=1)
    fit_hi: int = Field(8, ge=1)
    a: int = Field(4, ge=1)
    b: int = Field(4, ge=1)
    c: int = Field(4, ge=1)


class MixingSection(_Section):
    ladder: Literal["torus", "hexagon"] = "torus"
    sizes: list[int] = [8, 12, 16]
    replicas: int = Field(8, ge=1)
    max_time: float | None = None

    _split = field_validator("sizes", mode="before")(_split_list)

    @field_validator("sizes")
    @classmethod
    def _increasing(cls, v):
        if len(v) < 2 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("ladder sizes must be strictly increasing with at least two entries")
        return v


class PdeSection(_Section):
    solver: Literal["hj", "parabolic", "spde", "hessian", "bump"] = "hj"
    rho1: float = 1 / 3
    rho2: float = 1 / 3
    n: int = Field(64, ge=8)
    T: float = Field(0.1, gt=0)
    amplitude: float = 0.01
    # spde and bump
    H: list[float] = [1.0, 0.0, 1.0]
    nu: float = Field(1.0, gt=0)
    corr_length: float = Field(1.0, gt=0)
    noise_amplitude: float = Field(1.0, ge=0)
    saturation: float = Field(0.0, ge=0)
    dt: float = Field(0.05, gt=0)
    replicas: int = Field(1, ge=1)
    sign: int = 1

    _split = field_validator("H", mode="before")(_split_list)

    @field_validator("sign")
    @classmethod
    def _sign(cls, v):
        if v not in (1, -1):
            raise ValueError("sign must be 1 or -1")
        return v

    @field_validator("H")
    @classmethod
    def _three(cls, v):
        if len(v) != 3:
            raise ValueError("H is given as h11,h12,h22")
        return v


class AcceptanceSection(_Section):
    criteria: list[int] = list(range(1, 13))

    _split = field_validator("criteria", mode="before")(_split_list)

    @field_validator("criteria")
    @classmethod
    def _known(cls, v):
        bad = [k for k in v if not 1 <= k <= 12]
        if bad:
            raise ValueError(f"unknown criteria {bad}")
        return v


class ExperimentConfig(BaseModel):
    """Everything a run needs; the seed is mandatory (no implicit entropy)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["growth", "equilibrium", "mixing", "pde", "acceptance"]
    seed: int = Field(ge=0)
    out: str = "runs/out"
    overwrite: bool = False
    max_events: int | None = Field(None, ge=1)
    max_wall_time: float | None = Field(None, gt=0)
    growth: GrowthSection = GrowthSection()
    equilibrium: EquilibriumSection = EquilibriumSection()
    mixing: MixingSection = MixingSection()
    pde: PdeSection = PdeSection()
    acceptance: AcceptanceSection = AcceptanceSection()

    @model_validator(mode="after")
    def _slopes(self):
        _check_slope(self.growth.rho1, self.growth.rho2, "growth")
        _check_slope(self.equilibrium.rho1, self.equilibrium.rho2, "equilibrium")
        _check_slope(self.pde.rho1, self.pde.rho2, "pde")
        return self


SECTIONS = ("growth", "equilibrium", "mixing", "pde", "acceptance")


def _nest(flat: dict[str, dict[str, str]]) -> dict:
    doc = dict(flat.get("experiment", {}))
    for name, values in flat.items():
        if name == "experiment":
            continue
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        doc[name] = dict(values)
    return doc


def parse_overrides(items) -> dict[str, dict[str, str]]:
    """``section.key=value`` (or ``key=value`` for ``[experiment]``) into a section map."""
    out: dict[str, dict[str, str]] = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        section, _, name = key.strip().rpartition(".")
        out.setdefault(section or "experiment", {})[name] = value.strip()
    return out


def load_config(path=None, overrides=(), **defaults) -> ExperimentConfig:
    """Read an INI file, apply ``--set`` overrides and validate."""
    flat: dict[str, dict[str, str]] = {"experiment": {k: str(v) for k, v in defaults.items() if v is not None}}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        if not cp.read(path):
            raise ConfigError(f"cannot read config file {path}")
        for name in cp.sections():
            flat.setdefault(name, {}).update(cp[name])
    for name, values in parse_overrides(overrides).items():
        flat.setdefault(name, {}).update(values)
    # empty strings mean "unset"
    flat = {s: {k: v for k, v in d.items() if v != "" and v.lower() != "none"} for s, d in flat.items()}
    return ExperimentConfig.model_validate(_nest(flat))


def config_to_ini(config: ExperimentConfig) -> str:
    """The INI text that :func:`load_config` reads back to an equal config."""
    doc = config.model_dump()
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str

    def fmt(v):
        if isinstance(v, list):
            return ",".join(repr(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)

    cp["experiment"] = {k: fmt(v) for k, v in doc.items() if k not in SECTIONS and v is not None}
    for name in SECTIONS:
        cp[name] = {k: fmt(v) for k, v in doc[name].items() if v is not None}
    buf = StringIO()
    cp.write(buf)
    return buf.getvalue()


class RunManifest(BaseModel):
    config: ExperimentConfig
    code_version: str
    started: str
    finished: str
    status: Literal["ok", "CENSORED", "error"]
    outputs: dict[str, str]
    warnings: list[str] = []
    errors: list[str] = []
    timings: dict[str, float] = {}

    @property
    def censored(self) -> bool:
        return self.status == "CENSORED"

    @classmethod
    def load(cls, directory) -> "RunManifest":
        return cls.model_validate_json((Path(directory) / MANIFEST).read_text())


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


class _Writer:
    """Atomic writes into the run directory, remembering every file produced."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[str] = []

    def _atomic(self, rel: str, data: bytes) -> None:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
        with open(tmp, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        if rel not in self.files:
            self.files.append(rel)

    def csv(self, rel: str, header, rows) -> None:
        lines = [",".join(header)] + [",".join(_fmt(x) for x in row) for row in rows]
        self._atomic(rel, ("\n".join(lines) + "\n").encode())

    def json(self, rel: str, doc) -> None:
        self._atomic(rel, (json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n").encode())

    def text(self, rel: str, text: str) -> None:
        self._atomic(rel, text.encode())


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


class _Budget:
    def __init__(self, config: ExperimentConfig):
        self.deadline = None if config.max_wall_time is None else time.monotonic() + config.max_wall_time
        self.max_events = config.max_events
        self.hit: list[str] = []

    def out_of_time(self) -> bool:
        if self.deadline is not None and time.monotonic() > self.deadline:
            self.hit.append("max_wall_time reached")
            return True
        return False

    def over_events(self, events: float) -> bool:
        if self.max_events is not None and events >= self.max_events:
            self.hit.append(f"max_events reached after {int(events)} events")
            return True
        return False


class _Stop(Exception):
    pass


def _prepare_dir(root: Path, overwrite: bool) -> None:
    if root.exists() and any(root.iterdir()):
        if not overwrite:
            raise ConfigError(f"output directory {root} is not empty (set overwrite=true to replace a previous run)")
        man = root / MANIFEST
        if not man.exists():
            raise ConfigError(f"refusing to clear {root}: it holds no manifest from a previous run")
        old = json.loads(man.read_text())
        for rel in old.get("outputs", {}):
            (root / rel).unlink(missing_ok=True)
        man.unlink()
        left = [p for p in root.rglob("*") if p.is_file()]
        if left:
            raise ConfigError(f"{root} holds files not listed in its manifest: {left[0]}")
    root.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------------------
# experiment families
# ---------------------------------------------------------------------------


def _growth(cfg: ExperimentConfig, w: _Writer, budget: _Budget, warnings: list[str]) -> dict:
    from .growth import measure_fluctuations, measure_velocity
    from .lattice import TorusGeometry

    s = cfg.growth
    rho = (s.rho1, s.rho2)
    g = TorusGeometry.for_slope(rho, s.L, s.L2)
    if abs(g.slope[0] - s.rho1) > 1e-12 or abs(g.slope[1] - s.rho2) > 1e-12:
        warnings.append(f"slope rounded to the winding class {g.slope} at L={s.L}")
    start = None if s.start == "default" else s.start
    if s.measure == "velocity":
        est = measure_velocity(rho, g, s.T, s.replicas, cfg.seed, dynamics=s.dynamics, start=start or "gibbs")
        warnings.extend(est.flagged)
        w.csv("velocity.csv", ["replica", "velocity"], enumerate(est.per_replica))
        return {"velocity": est.value, "stderr": est.stderr, "geometry_slope": g.slope}
    times = np.geomspace(s.t_min, s.T, s.n_times)
    res = measure_fluctuations(
        s.dynamics, rho, g, times, s.replicas, cfg.seed, start=start,
        should_stop=lambda i, ev: budget.out_of_time() or budget.over_events(ev),
    )
    w.csv("fluctuations.csv", ["t", "mean_height", "var_height", "var_stderr", "n_events"],
          zip(res.times, res.mean_height, res.var, res.var_stderr, res.n_events))
    return {
        "replicas_completed": res.replicas,
        "power": res.power.to_dict(),
        "log": res.log.to_dict(),
        "preferred": res.preferred,
        "beta": res.beta,
        "censored": res.censored,
    }


def _equilibrium(cfg: ExperimentConfig, w: _Writer, budget: _Budget, warnings: list[str]) -> dict:
    from .domains import DomainSpec
    from .gibbs import GibbsEnsemble, height_variance_profile, sample_gibbs
    from .lattice import TorusGeometry, flat_heights
    from .reversible import equilibrium_heights, mobility_estimate, reversible_run
    from .rng import kernel_seed

    s = cfg.equilibrium
    if s.geometry == "hexagon":
        dom = DomainSpec.hexagon(s.a, s.b, s.c)
        acc = []
        for i in range(s.samples):
            if i > 0 and budget.out_of_time():
                break
            seed_i = kernel_seed(cfg.seed, "hexagon", i)
            if s.dynamics == "tower":
                T = float(s.sweeps or 10 * dom.n_free)
                acc.append(reversible_run(dom, dom.h_min, "tower", T, seed_i).final)
            else:
                acc.append(equilibrium_heights(dom, seed=seed_i, sweeps=s.sweeps or None))
        mean = np.mean(acc, axis=0)
        rows = [(i, j, mean[i, j], int(dom.free[i, j])) for i in range(mean.shape[0]) for j in range(mean.shape[1])]
        w.csv("heights.csv", ["m", "y", "mean_height", "free"], rows)
        return {"samples_completed": len(acc), "states": "hexagon", "sides": [s.a, s.b, s.c],
                "censored": len(acc) < s.samples}
    rho = (s.rho1, s.rho2)
    g = TorusGeometry.for_slope(rho, s.L)
    sweeps = s.sweeps or g.L1 * g.L2
    if s.dynamics == "tower":
        burn = 10 * g.L1 * g.L2
        times = burn + sweeps * np.arange(s.samples, dtype=float)
        rec = reversible_run(g, flat_heights(g), "tower", float(times[-1]), cfg.seed, times=times)
        diag = {"seed": cfg.seed, "dynamics": "tower", "burn_in": burn, "time_between_samples": sweeps,
                "proposals": rec.proposals, "accepted": rec.accepted, "warnings": []}
        ens = GibbsEnsemble(g.slope, g, rec.snapshots, diag)
    else:
        ens = sample_gibbs(g.slope, g, sweeps, cfg.seed, n_samples=s.samples)
    warnings.extend(ens.diagnostics["warnings"])
    if s.observable == "mobility":
        est = mobility_estimate(g.slope, g, ens)
        warnings.extend(est.flagged)
        w.csv("mobility_samples.csv", ["sample", "drift_sum"], enumerate(est.drift_sums))
        return {"mobility": est.value, "stderr": est.stderr, "target": est.target,
                "unit_event_value": est.unit_value, "diagnostics": ens.diagnostics}
    prof = height_variance_profile(ens, s.max_r, (s.fit_lo, s.fit_hi))
    warnings.extend(prof.warnings)
    w.csv("variance_profile.csv", ["r", "var", "stderr"], zip(prof.r, prof.var, prof.stderr))
    return {"fit": prof.fit.to_dict() if prof.fit else None, "diagnostics": ens.diagnostics}


def _mixing(cfg: ExperimentConfig, w: _Writer, budget: _Budget, warnings: list[str]) -> dict:
    from .reversible import coupling_time

    s = cfg.mixing
    est = coupling_time(
        s.ladder, s.sizes, s.replicas, cfg.seed, max_time=s.max_time,
        should_stop=lambda L: budget.out_of_time(), max_proposals=cfg.max_events,
    )
    rows = [(int(L), r, t) for L, ts in zip(est.sizes, est.times) for r, t in enumerate(ts)]
    w.csv("mixing.csv", ["L", "replica", "coupling_time"], rows)
    w.csv("mixing_summary.csv", ["L", "median", "q25", "q75", "censored"],
          zip(est.sizes, est.median, est.q25, est.q75, est.censored))
    warnings.extend(est.flagged)
    partial = len(est.sizes) < len(s.sizes) or int(np.sum(est.censored)) > 0
    if partial and not budget.hit:
        budget.hit.append("coupling not reached within the time cap for some replicas")
    return {"exponent": est.exponent, "ci": list(est.ci), "sizes_completed": [int(x) for x in est.sizes],
            "censored_replicas": int(np.sum(est.censored)), "censored": partial}


def _initial_field(s: PdeSection):
    from .pde import ContinuumField

    A = s.amplitude
    return ContinuumField.from_function(
        lambda a, b: A * np.cos(2 * np.pi * a) * np.cos(2 * np.pi * b) + 0.5 * A * np.sin(2 * np.pi * (a + b)),
        s.n, slope=(s.rho1, s.rho2),
    )


def _pde(cfg: ExperimentConfig, w: _Writer, budget: _Budget, warnings: list[str]) -> dict:
    from . import pde

    s = cfg.pde
    H = np.array([[s.H[0], s.H[1]], [s.H[1], s.H[2]]])

    def check(t, f):
        if budget.out_of_time():
            raise _Stop(t)

    if s.solver in ("hj", "parabolic"):
        phi0 = _initial_field(s)
        stopped = None
        try:
            if s.solver == "hj":
                res = pde.hj_solve(phi0, s.T, callback=check)
            else:
                from .gibbs import SurfaceTensionTable

                res = pde.parabolic_solve(phi0, s.T, SurfaceTensionTable(), callback=check)
            field = res.field
        except _Stop as exc:
            stopped = float(exc.args[0])
            field = None
        if field is not None:
            _save_field(w, f"{s.solver}_field", field, s.solver, s.model_dump())
        return {"solver": s.solver, "final_time": s.T if stopped is None else stopped,
                "steps": getattr(res, "steps", None) if stopped is None else None, "censored": stopped is not None}
    if s.solver == "hessian":
        rep = pde.hessian_report(pde.DIMER_SPEED, pde.interior_grid(s.n))
        rows = [(p[0], p[1], a[0, 0], a[0, 1], a[1, 1], d, e)
                for p, a, d, e in zip(rep.slopes, rep.analytic, rep.det, rep.rel_error)]
        w.csv("hessian.csv", ["rho1", "rho2", "v11", "v12", "v22", "det", "rel_error"], rows)
        return {"max_det": float(rep.det.max()), "max_rel_error": rep.max_rel_error}
    if s.solver == "bump":
        tab = pde.bump_evolution(H, s.sign, s.T)
        warnings.extend(tab.flagged)
        w.csv("bump.csv", ["t", "height", "width"], zip(tab.times, tab.height, tab.width))
        return {"sign": s.sign, "H": H.tolist()}
    p = pde.SpdeParams(nu=s.nu, H=tuple(map(tuple, H)), corr_length=s.corr_length,
                       amplitude=s.noise_amplitude, saturation=s.saturation)
    res = pde.spde_run(p, s.n, s.T, cfg.seed, dt=s.dt, replicas=s.replicas,
                       should_stop=lambda r: budget.out_of_time())
    w.csv("spde_variance.csv", ["t", "mean", "var", "var_stderr"], zip(res.times, res.mean, res.var, res.var_stderr))
    w.csv("spde_structure.csv", ["r", "structure"], zip(res.structure_r, res.structure))
    out = {"params": p.to_dict(), "replicas_completed": res.replicas, "censored": res.replicas < s.replicas}
    if res.power is not None:
        out.update(power=res.power.to_dict(), log=res.log.to_dict(), preferred=res.preferred, beta=res.beta)
    return out


def _save_field(w: _Writer, stem: str, field, scheme: str, parameters: dict) -> None:
    full = field.full()
    w.csv(f"{stem}.csv", [f"c{j}" for j in range(full.shape[1])], full)
    w.json(f"{stem}.json", {
        "shape": list(field.shape), "dx": field.dx, "origin": list(field.origin), "slope": list(field.slope),
        "time": field.time, "scheme": scheme, "parameters": parameters,
    })


def _acceptance(cfg: ExperimentConfig, w: _Writer, budget: _Budget, warnings: list[str], timings) -> dict:
    from .recipes import run_criterion

    rows, out = [], {}
    for k in cfg.acceptance.criteria:
        if rows and budget.out_of_time():
            break
        res = run_criterion(k)
        timings[f"criterion_{k}"] = res.seconds
        rows.append((res.number, res.name.replace(",", ";"), int(res.passed), res.summary.replace(",", ";")))
        for name, tab in res.tables.items():
            w.csv(f"criterion_{k:02d}_{name}.csv", tab["header"], tab["rows"])
        out[str(k)] = {"name": res.name, "passed": res.passed, "summary": res.summary, "details": res.details}
    w.csv("acceptance.csv", ["criterion", "name", "passed", "summary"], rows)
    out["censored"] = len(rows) < len(cfg.acceptance.criteria)
    out["all_passed"] = all(r[2] for r in rows)
    return out


def run_experiment(config: ExperimentConfig) -> RunManifest:
    """Run ``config`` and write its outputs and manifest under ``config.out``."""
    root = Path(config.out)
    _prepare_dir(root, config.overwrite)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    w = _Writer(root)
    warnings: list[str] = []
    errors: list[str] = []
    timings: dict[str, float] = {}
    budget = _Budget(config)
    summary: dict = {}
    w.text("config.ini", config_to_ini(config))
    try:
        if config.kind == "growth":
            summary = _growth(config, w, budget, warnings)
        elif config.kind == "equilibrium":
            summary = _equilibrium(config, w, budget, warnings)
        elif config.kind == "mixing":
            summary = _mixing(config, w, budget, warnings)
        elif config.kind == "pde":
            summary = _pde(config, w, budget, warnings)
        else:
            summary = _acceptance(config, w, budget, warnings, timings)
    except Exception as exc:  # recorded in the manifest; the CLI turns it into a failure
        errors.append(f"{type(exc).__name__}: {exc}")
    if summary:
        w.json("summary.json", summary)
    censored = bool(summary.get("censored")) or bool(budget.hit)
    warnings.extend(dict.fromkeys(budget.hit))
    timings["total_seconds"] = time.perf_counter() - t0
    status = "error" if errors else ("CENSORED" if censored else "ok")
    manifest = RunManifest(
        config=config,
        code_version=f"dimerlab {__version__}; python {platform.python_version()}; numpy {np.__version__}",
        started=started,
        finished=datetime.now(timezone.utc).isoformat(),
        status=status,
        outputs={rel: sha256(root / rel) for rel in w.files},
        warnings=warnings,
        errors=errors,
        timings=timings,
    )
    w._atomic(MANIFEST, (manifest.model_dump_json(indent=2) + "\n").encode())
    return manifest


def unlisted_files(directory) -> list[str]:
    """Files in a run directory that its manifest does not list."""
    root = Path(directory)
    listed = set(RunManifest.load(root).outputs) | {MANIFEST}
    return sorted(str(p.relative_to(root)) for p in root.rglob("*") if p.is_file() and str(p.relative_to(root)) not in listed)
