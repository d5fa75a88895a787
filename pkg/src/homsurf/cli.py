"""Command line runner: TOML config in, CSV / SVG / OBJ artifacts and a manifest out.

Config grammar (TOML)::

    seed = 24301                  # optional, default 0x5EED

    [scenario]
    name = "star_graph"           # see `homsurf list-scenarios`
    oscillation = "sin2"          # profile id: sin2, sin, sin2_slow, zero
    amplitude = 1.0
    R = 1.0
    inner_cutoff = 0.05           # default 0.05 R (0.05 pi rad on the spheres)
    # width = 0.015625            # laminate_strip only
    # [[scenario.bumps]]          # local_bumps only
    # center = [0.3, 0.5]
    # outer = 0.18
    # inner = 0.09

    [sweep]
    eps_list = [0.25, 0.125]      # strictly decreasing
    k_eigs = 5
    cells_per_eps = 8             # mesh rule: h_max <= eps_min / cells_per_eps
    osc_refine = 2                # extra refinement across the oscillation
    max_nodes = 1048576
    m = 0.0
    reference = "closed_form"     # or "cell", "identity"
    shift = 0.0                   # laminate_strip only
    # mesh = [n1, n2]             # explicit mesh, still checked against the rule
    # [sweep.loads]               # presence switches on source and flux diagnostics
    # f = 1.0
    # F = [0.0, 0.0]

    [output]
    directory = "out"
    csv = true
    svg = true
    obj = true
    obj_resolution = [48, 96]

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .convergence import REFERENCES, SWEEP_SCENARIOS, SweepConfig, make_problem, run_sweep, sweep_mesh
from .errors import ConfigError, HomsurfError, NumericalError
from .export import write_csv, write_surface, write_svg
from .fem import DEFAULT_SEED
from .geometry import OSCILLATIONS, Bump

log = logging.getLogger("homsurf")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

SCENARIO_HELP = {
    "star_graph": "graph over the punctured disk, oscillating in the angle (profile family)",
    "radial_graph": "graph over the punctured disk, oscillating in the radius (height family)",
    "sphere_longitude": "perturbed sphere, oscillating along the longitude angle",
    "sphere_latitude": "perturbed sphere, oscillating along the polar angle",
    "local_bumps": "plane with compactly supported oscillating bumps",
    "laminate_strip": "flat {1, 4} laminate strip with a 1D closed-form limit",
}

_SPHERES = ("sphere_longitude", "sphere_latitude")
_SCENARIO_KEYS = {"name", "oscillation", "amplitude", "R", "inner_cutoff", "bumps", "width", "box"}
_SWEEP_KEYS = {"eps_list", "k_eigs", "cells_per_eps", "osc_refine", "max_nodes", "m", "loads", "shift",
               "reference", "mesh", "dirichlet_sides"}
_OUTPUT_KEYS = {"directory", "csv", "svg", "obj", "obj_resolution"}
_TOP_KEYS = {"seed", "scenario", "sweep", "output"}


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioBlock:
    name: str
    oscillation: str = "sin2"
    amplitude: float = 1.0
    R: float = 1.0
    inner_cutoff: float | None = None
    bumps: tuple | None = None
    width: float | None = None
    box: tuple = ((0.0, 1.0), (0.0, 1.0))


@dataclass(frozen=True)
class SweepBlock:
    eps_list: tuple
    k_eigs: int = 5
    cells_per_eps: float = 8.0
    osc_refine: int = 2
    max_nodes: int = 1024 * 1024
    m: float = 0.0
    loads: dict | None = None
    shift: float = 0.0
    reference: str = "closed_form"
    mesh: tuple | None = None
    dirichlet_sides: tuple | None = None


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "homsurf_out"
    csv: bool = True
    svg: bool = True
    obj: bool = True
    obj_resolution: tuple = (48, 96)


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioBlock
    sweep: SweepBlock
    output: OutputBlock = field(default_factory=OutputBlock)
    seed: int = DEFAULT_SEED
    jobs: int = 1

    def echo(self) -> dict:
        """JSON-ready view of the resolved config; parses back to an equal config.

        ``jobs`` is a runtime choice and is left out.
        """
        d = asdict(self)
        d.pop("jobs")
        if self.scenario.bumps is not None:
            d["scenario"]["bumps"] = [{"center": list(b.center), "outer": b.outer, "inner": b.inner}
                                      for b in self.scenario.bumps]
        # unset options are omitted, as TOML has no null
        for block in ("scenario", "sweep", "output"):
            d[block] = {k: v for k, v in d[block].items() if v is not None}
        return json.loads(json.dumps(d))

    def digest(self) -> str:
        """Hash of everything that affects numbers (output choices excluded)."""
        d = self.echo()
        d.pop("output")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def sweep_config(self) -> SweepConfig:
        sc, sw = self.scenario, self.sweep
        if sc.name == "laminate_strip":
            params = {} if sc.width is None else {"width": sc.width}
        else:
            params = {"oscillation": sc.oscillation, "amplitude": sc.amplitude, "R": sc.R,
                      "inner_cutoff": sc.inner_cutoff}
            if sc.name == "local_bumps":
                params = {"oscillation": sc.oscillation, "amplitude": sc.amplitude, "bumps": sc.bumps,
                          "box": sc.box}
        return SweepConfig(scenario=sc.name, params=params, eps_list=sw.eps_list, k_eigs=sw.k_eigs,
                           cells_per_eps=sw.cells_per_eps, max_nodes=sw.max_nodes, m=sw.m, loads=sw.loads,
                           shift=sw.shift, reference=sw.reference, seed=self.seed, jobs=self.jobs,
                           mesh=sw.mesh, dirichlet_sides=sw.dirichlet_sides, osc_refine=sw.osc_refine)


def _unknown(block, allowed, where):
    extra = sorted(set(block) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _table(data, key):
    v = data.get(key, {})
    if not isinstance(v, dict):
        raise ConfigError(f"[{key}] must be a table")
    return v


def _number(v, what, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{what} must be a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{what} must be an integer, got {v!r}")
    return int(v) if integer else float(v)


def _pair(v, what, integer=False):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{what} must be a list of two numbers")
    return tuple(_number(x, what, integer) for x in v)


def _default_cutoff(name, R):
    # spheres are parametrised by angle, so their cutoff is an angle
    return 0.05 * math.pi if name in _SPHERES else 0.05 * R


def _scenario_block(sc) -> ScenarioBlock:
    _unknown(sc, _SCENARIO_KEYS, "[scenario]")
    name = sc.get("name")
    if name not in SWEEP_SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; valid names: {', '.join(SWEEP_SCENARIOS)}")
    osc = sc.get("oscillation", "sin2")
    if osc not in OSCILLATIONS:
        raise ConfigError(f"unknown oscillation profile {osc!r}; valid: {', '.join(sorted(OSCILLATIONS))}")
    R = _number(sc.get("R", 1.0), "scenario.R")
    if R <= 0:
        raise ConfigError("scenario.R must be positive")
    cutoff = sc.get("inner_cutoff")
    cutoff = _default_cutoff(name, R) if cutoff is None else _number(cutoff, "scenario.inner_cutoff")
    if cutoff <= 0:
        raise ConfigError("scenario.inner_cutoff must be positive")
    bumps = None
    if "bumps" in sc:
        if name != "local_bumps":
            raise ConfigError("scenario.bumps applies to local_bumps only")
        try:
            bumps = tuple(Bump(_pair(b["center"], "bump center"), _number(b["outer"], "bump outer"),
                               _number(b.get("inner", 0.0), "bump inner")) for b in sc["bumps"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"each [[scenario.bumps]] needs center and outer ({exc})") from None
    width = sc.get("width")
    if width is not None:
        if name != "laminate_strip":
            raise ConfigError("scenario.width applies to laminate_strip only")
        width = _number(width, "scenario.width")
    box = sc.get("box", ((0.0, 1.0), (0.0, 1.0)))
    box = tuple(_pair(b, "scenario.box") for b in box)
    return ScenarioBlock(name, osc, _number(sc.get("amplitude", 1.0), "scenario.amplitude"), R,
                         cutoff if name not in ("local_bumps", "laminate_strip") else None, bumps, width, box)


def _sweep_block(sw) -> SweepBlock:
    _unknown(sw, _SWEEP_KEYS, "[sweep]")
    if "eps_list" not in sw:
        raise ConfigError("[sweep] needs eps_list")
    eps = sw["eps_list"]
    if not isinstance(eps, list) or not eps:
        raise ConfigError("sweep.eps_list must be a non-empty list")
    eps = tuple(_number(e, "sweep.eps_list") for e in eps)
    if any(e <= 0 for e in eps):
        raise ConfigError("sweep.eps_list must hold positive values")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError(f"sweep.eps_list must be strictly decreasing, got {list(eps)}")
    loads = sw.get("loads")
    if loads is not None:
        if not isinstance(loads, dict) or set(loads) - {"f", "F"}:
            raise ConfigError("sweep.loads must be a table with keys f and/or F")
        loads = {k: (_number(v, "loads.f") if k == "f" else list(_pair(v, "loads.F"))) for k, v in loads.items()}
    ref = sw.get("reference", "closed_form")
    if ref not in REFERENCES:
        raise ConfigError(f"unknown reference {ref!r}; valid: {', '.join(REFERENCES)}")
    mesh = sw.get("mesh")
    mesh = None if mesh is None else _pair(mesh, "sweep.mesh", integer=True)
    sides = sw.get("dirichlet_sides")
    sides = None if sides is None else tuple(str(s) for s in sides)
    k = _number(sw.get("k_eigs", 5), "sweep.k_eigs", integer=True)
    if k < 1:
        raise ConfigError("sweep.k_eigs must be at least 1")
    return SweepBlock(eps, k, _number(sw.get("cells_per_eps", 8), "sweep.cells_per_eps"),
                      _number(sw.get("osc_refine", 2), "sweep.osc_refine", integer=True),
                      _number(sw.get("max_nodes", 1024 * 1024), "sweep.max_nodes", integer=True),
                      _number(sw.get("m", 0.0), "sweep.m"), loads, _number(sw.get("shift", 0.0), "sweep.shift"),
                      ref, mesh, sides)


def _output_block(out) -> OutputBlock:
    _unknown(out, _OUTPUT_KEYS, "[output]")
    flags = {}
    for key in ("csv", "svg", "obj"):
        v = out.get(key, True)
        if not isinstance(v, bool):
            raise ConfigError(f"output.{key} must be true or false")
        flags[key] = v
    res = _pair(out.get("obj_resolution", (48, 96)), "output.obj_resolution", integer=True)
    return OutputBlock(str(out.get("directory", "homsurf_out")), obj_resolution=res, **flags)


def config_from_dict(data: dict) -> RunConfig:
    """Validated RunConfig with defaults filled."""
    _unknown(data, _TOP_KEYS, "the top level")
    if "scenario" not in data:
        raise ConfigError("config needs a [scenario] table")
    seed = _number(data.get("seed", DEFAULT_SEED), "seed", integer=True)
    cfg = RunConfig(_scenario_block(_table(data, "scenario")), _sweep_block(_table(data, "sweep")),
                    _output_block(_table(data, "output")), seed)
    cfg.sweep_config()  # cross-field checks (shift on non-strip scenarios, ...)
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from None
    return config_from_dict(data)


def check_output_dir(directory) -> Path:
    """Raise ConfigError unless ``directory`` exists writable or can be created."""
    d = Path(directory).resolve()
    probe = d
    while not probe.exists():
        probe = probe.parent
    if not probe.is_dir() or not os.access(probe, os.W_OK):
        raise ConfigError(f"output directory {d} is not writable")
    return d


# ----------------------------------------------------------------------------
# running
# ----------------------------------------------------------------------------

@dataclass
class RunManifest:
    config: dict
    artifacts: dict
    timings: dict
    version: str
    config_hash: str
    path: str | None = None

    def files(self):
        out = []
        for v in self.artifacts.values():
            out.extend(v if isinstance(v, list) else [v])
        return out

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("path")
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


@contextmanager
def _stage(name, timings):
    t0 = time.perf_counter()
    try:
        yield
    except HomsurfError as exc:
        if not hasattr(exc, "stage"):
            exc.stage = name
        raise
    finally:
        timings[name] = round(time.perf_counter() - t0, 6)


def _obj_resolution(cfg: RunConfig, problem, eps):
    # at least 12 samples per oscillation period along each oscillating axis
    n1, n2 = cfg.output.obj_resolution
    L1, L2 = problem.domain.lengths
    period = problem.limit.family.oscillation.period
    need = [math.ceil(12 * L / (period * eps)) for L in (L1, L2)]
    if 0 in problem.osc_axes:
        n1 = max(n1, min(need[0], 4096))
    if 1 in problem.osc_axes:
        n2 = max(n2, min(need[1], 4096))
    return n1, n2


def _write_objs(cfg, problem, outdir, created):
    sl = problem.limit
    if sl is None:
        log.info("%s is flat; no OBJ surfaces written", problem.name)
        return []
    paths = []
    for i, e in enumerate(cfg.sweep.eps_list):
        p = outdir / f"{sl.name}_eps{i:02d}.obj"
        created.append(p)
        write_surface(sl.immersion(e), p, *_obj_resolution(cfg, problem, e), name=f"{sl.name} eps={e:g}")
        paths.append(str(p))
    p = outdir / f"{sl.name}_limit.obj"
    created.append(p)
    write_surface(sl.embedding().h0, p, *cfg.output.obj_resolution, name=f"{sl.name} limit")
    paths.append(str(p))
    return paths


def run_scenario(cfg: RunConfig) -> RunManifest:
    """Run the sweep, write the enabled artifacts and the manifest.

    On failure every file written by this run is removed (and the output
    directory too if this run created it and it is left empty).
    """
    outdir = check_output_dir(cfg.output.directory)
    made_dir = not outdir.exists()
    timings, artifacts, created = {}, {}, []
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        with _stage("setup", timings):
            scfg = cfg.sweep_config()
            problem = make_problem(scfg)
        with _stage("sweep", timings):
            table = run_sweep(scfg)
        base = cfg.scenario.name
        if cfg.output.csv:
            with _stage("csv", timings):
                p = outdir / f"{base}_convergence.csv"
                created.append(p)
                artifacts["csv"] = str(write_csv(table, p))
        if cfg.output.svg:
            with _stage("svg", timings):
                p = outdir / f"{base}_convergence.svg"
                created.append(p)
                artifacts["svg"] = str(write_svg(table, p))
        if cfg.output.obj:
            with _stage("obj", timings):
                objs = _write_objs(cfg, problem, outdir, created)
                if objs:
                    artifacts["obj"] = objs
        man = RunManifest(cfg.echo(), artifacts, timings, __version__, cfg.digest())
        p = outdir / "manifest.json"
        created.append(p)
        p.write_text(man.to_json())
        man.path = str(p)
        return man
    except BaseException:
        for p in created:
            Path(p).unlink(missing_ok=True)
        if made_dir and outdir.exists() and not any(outdir.iterdir()):
            outdir.rmdir()
        raise


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------

def _setup_logging():
    raw = os.environ.get("HOMSURF_LOG", "WARNING").strip().upper()
    level = int(raw) if raw.isdigit() else logging.getLevelName(raw)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="homsurf", description="Homogenization sweeps on oscillating surfaces.")
    ap.add_argument("--version", action="version", version=f"homsurf {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a config and write artifacts")
    run.add_argument("config")
    run.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    run.add_argument("--seed", type=int, metavar="N", help="eigensolver start-vector seed")
    run.add_argument("--no-obj", action="store_true", help="skip OBJ surface meshes")
    run.add_argument("--no-svg", action="store_true", help="skip the SVG plot")
    run.add_argument("--jobs", type=int, default=1, metavar="N", help="eps rows computed concurrently")
    sub.add_parser("list-scenarios", help="list built-in scenarios")
    val = sub.add_parser("validate", help="parse a config and check the mesh rule without solving")
    val.add_argument("config")
    return ap


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    out = cfg.output
    if args.out:
        out = replace(out, directory=args.out)
    if args.no_obj:
        out = replace(out, obj=False)
    if args.no_svg:
        out = replace(out, svg=False)
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    seed = cfg.seed if args.seed is None else args.seed
    return replace(cfg, output=out, seed=seed, jobs=args.jobs)


def _validate(cfg: RunConfig):
    check_output_dir(cfg.output.directory)
    scfg = cfg.sweep_config()
    mesh = sweep_mesh(scfg, make_problem(scfg))
    print(f"ok: {cfg.scenario.name}, eps {list(scfg.eps_list)}, mesh {mesh.shape[0]}x{mesh.shape[1]} "
          f"({mesh.n_nodes} nodes, h_max {mesh.h_max:.4g}), config hash {cfg.digest()[:12]}")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list-scenarios":
            for name in SWEEP_SCENARIOS:
                print(f"{name:18s} {SCENARIO_HELP.get(name, '')}")
            return EXIT_OK
        cfg = parse_config(args.config)
        if args.command == "validate":
            _validate(cfg)
            return EXIT_OK
        man = run_scenario(_apply_flags(cfg, args))
        for path in man.files():
            print(path)
        print(man.path)
        return EXIT_OK
    except ConfigError as exc:
        print(f"homsurf: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        stage = getattr(exc, "stage", "?")
        print(f"homsurf: numerical failure in stage {stage}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
