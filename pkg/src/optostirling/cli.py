"""Command-line interface: ``optostirling {map,cycle,sweep,validate}``.

Exit codes: 0 success, 2 configuration error, 3 the levels do not close a
cycle, 4 the cycle produces no net work.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import _io
from .errors import NoClosedLoop, NotAnEngine, OptoStirlingError
from .landscape import PLANES, GridSpec, default_grid, map_plane
from .params import PRESET_NAMES, load_config, load_preset, params_from_config, validate_params
from .sweep import (RT_GRID, TTOT_GRID, VARIABLES, CycleSetup, SweepSpec, max_power_to_csv,
                    max_power_vs_temperature, run_cycle, run_sweep)

__all__ = ["main", "build_parser", "ConfigError"]

EXIT_OK, EXIT_CONFIG, EXIT_GEOMETRY, EXIT_NOT_ENGINE = 0, 2, 3, 4
DEFAULT_TTOT = 2000.0


class ConfigError(Exception):
    """Invalid or incomplete run configuration."""


def _floats(text: str, n: int | None = None, name: str = "value") -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as numbers") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{name}: expected {n} comma-separated numbers, got {len(vals)}")
    return vals


def _ints(text: str, n: int, name: str) -> tuple[int, ...]:
    vals = _floats(text, n, name)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"{name}: expected integers")
    return tuple(int(v) for v in vals)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("configuration")
    g.add_argument("--preset", help=f"shipped preset: {', '.join(PRESET_NAMES)}")
    g.add_argument("--config", type=Path, help="key = value file; overrides the preset")
    g.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    g.add_argument("--plane", choices=tuple(PLANES), default="feedback")
    g.add_argument("--grid", default="400,400", help="nx,ny")
    g.add_argument("--window", help="x0,x1,y0,y1 of the control plane")
    g.add_argument("--margin", type=float, default=0.0, help="stability margin")

    cyc = argparse.ArgumentParser(add_help=False)
    c = cyc.add_argument_group("cycle")
    c.add_argument("--levels", help="T_hot,T_cold,Dm_h,Dm_l (K, K, omega_m, omega_m)")
    c.add_argument("--ttot", type=float, help=f"cycle time in 1/omega_m (default {DEFAULT_TTOT:g})")
    c.add_argument("--rT", type=float, help="isothermal time fraction (default 0.5)")
    c.add_argument("--samples", type=int, default=200, help="samples per stroke")
    c.add_argument("--branch", type=int, default=0, help="loop index when several close")
    c.add_argument("--admit-nonadiabatic", action="store_true", default=None,
                   help="let strokes cross cells where the cavity is too slow")
    c.add_argument("--tol-refine", type=float, default=1e-6)
    c.add_argument("--tol-ode", type=float, default=1e-9)
    c.add_argument("--tol-conv", type=float, default=1e-6)
    c.add_argument("--max-cycles", type=int, default=50)

    parser = argparse.ArgumentParser(prog="optostirling",
                                     description="Feedback-controlled optomechanical Stirling engine")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("map", parents=[common], help="map effective parameters over a plane")
    pc = sub.add_parser("cycle", parents=[common, cyc], help="build and run one cycle")
    pc.add_argument("--joules", action="store_true", help="also report energies in joules")
    ps = sub.add_parser("sweep", parents=[common, cyc], help="families of cycles")
    ps.add_argument("--variable", required=True, choices=VARIABLES + ("MaxPower",))
    ps.add_argument("--values", required=True,
                    help="comma-separated values; MaxPower takes T_hot/T_cold ratios")
    ps.add_argument("--ttot-grid", default=",".join(f"{v:g}" for v in TTOT_GRID))
    ps.add_argument("--rT-grid", default=",".join(f"{v:g}" for v in RT_GRID))
    ps.add_argument("--workers", type=int, default=None, help="worker processes")
    sub.add_parser("validate", parents=[common], help="check the parameters")
    return parser


def _load(args) -> tuple[dict, str | None]:
    if args.preset is None and args.config is None:
        raise ConfigError("no parameters given: pass --preset or --config")
    cfg: dict[str, str] = {}
    if args.preset is not None:
        if args.preset not in PRESET_NAMES:
            raise ConfigError(f"--preset: unknown preset {args.preset!r}; "
                              f"choose from {', '.join(PRESET_NAMES)}")
        cfg.update(load_preset(args.preset)[1])
    if args.config is not None:
        try:
            cfg.update(load_config(args.config))
        except OSError as exc:
            raise ConfigError(f"--config: {exc}") from None
    return cfg, args.preset


def _params(cfg: dict):
    try:
        p = params_from_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"parameters: {exc}") from None
    res = validate_params(p)
    if not res.ok:
        raise ConfigError("invalid parameters: " + "; ".join(res.violations))
    return p


def _grid(args, p) -> GridSpec:
    nx, ny = _ints(args.grid, 2, "--grid")
    if args.window is None:
        spec = default_grid(p, args.plane, nx, ny)
        return spec
    x0, x1, y0, y1 = _floats(args.window, 4, "--window")
    x_name, y_name = PLANES[args.plane]
    try:
        return GridSpec(x_name, y_name, x0, x1, y0, y1, nx, ny)
    except ValueError as exc:
        raise ConfigError(f"--window/--grid: {exc}") from None


def _setup(args, cfg, preset) -> CycleSetup:
    p = _params(cfg)
    nx, ny = _ints(args.grid, 2, "--grid")
    key = f"cycle_window_{args.plane}"
    if args.window is None and key not in cfg:
        raise ConfigError(f"--window: not given and the configuration has no {key}")
    if args.window is not None:
        cfg = dict(cfg, **{key: args.window})
    over = dict(n_samples=args.samples, refine_tol=args.tol_refine, ode_tol=args.tol_ode,
                conv_tol=args.tol_conv, max_cycles=args.max_cycles, branch=args.branch,
                margin=args.margin)
    if args.levels is not None:
        over["levels"] = _floats(args.levels, 4, "--levels")
    elif f"cycle_levels_{args.plane}" not in cfg:
        raise ConfigError(f"--levels: not given and the configuration has no "
                          f"cycle_levels_{args.plane}")
    if args.ttot is not None:
        over["t_tot"] = args.ttot
    elif f"cycle_ttot_{args.plane}" not in cfg:
        over["t_tot"] = DEFAULT_TTOT
    if args.rT is not None:
        over["r_T"] = args.rT
    if args.admit_nonadiabatic:
        over["admit_nonadiabatic"] = True
    try:
        setup = CycleSetup.from_config(cfg, args.plane, nx, ny, preset=preset, **over)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"cycle configuration: {exc}") from None
    Th, Tc, Dh, Dl = setup.levels
    if not (Th > Tc > 0 and Dh > Dl):
        raise ConfigError("--levels: need T_hot > T_cold > 0 and Dm_h > Dm_l")
    if not setup.t_tot > 0:
        raise ConfigError("--ttot: must be positive")
    if not 0 < setup.r_T < 1:
        raise ConfigError("--rT: must lie in (0, 1)")
    if setup.n_samples < 4:
        raise ConfigError("--samples: need at least 4")
    return setup


def cmd_map(args) -> int:
    cfg, preset = _load(args)
    p = _params(cfg)
    spec = _grid(args, p)
    m = map_plane(p, args.plane, spec, args.margin, provenance={"preset": preset})
    out = args.out
    m.to_csv(out / f"landscape_{args.plane}.csv")
    m.to_json(out / f"landscape_{args.plane}.json")
    counts = m.counts()
    print(f"map {args.plane}: {spec.nx}x{spec.ny} cells, "
          + ", ".join(f"{k} {v}" for k, v in counts.items()))
    return EXIT_OK


def cmd_cycle(args) -> int:
    cfg, preset = _load(args)
    setup = _setup(args, cfg, preset)
    run = run_cycle(setup)
    prov = _io.provenance(preset=preset, setup=setup.describe())
    out = args.out
    run.cycle.to_json(out / "cycle.json")
    run.schedule.to_csv(out / "schedule.csv")
    run.trajectory.to_csv(out / "trajectory.csv", prov)
    rep = run.report
    extra = dict(prov, levels=list(setup.levels), t_tot=setup.t_tot, r_T=setup.r_T,
                 ode_tol=setup.ode_tol, conv_tol=setup.conv_tol)
    if args.joules:
        extra["joules"] = rep.in_joules(setup.params.omega_m)
    rep.to_json(out / "report.json", extra)
    print(f"eta = {rep.eta:.6g}  P = {rep.P:.6g}  eta_C = {rep.eta_C:.6g}  "
          f"eta_CA = {rep.eta_CA:.6g}  converged = {rep.converged} "
          f"after {rep.cycles_run} cycles")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, preset = _load(args)
    values = _floats(args.values, name="--values")
    if not values:
        raise ConfigError("--values: empty list")
    setup = _setup(args, cfg, preset)
    out = args.out
    if args.variable == "MaxPower":
        t_grid = _floats(args.ttot_grid, name="--ttot-grid")
        r_grid = _floats(args.rT_grid, name="--rT-grid")
        if not t_grid or not r_grid:
            raise ConfigError("--ttot-grid/--rT-grid: empty grid")
        pts = max_power_vs_temperature(setup, values, t_grid, r_grid, args.workers)
        prov = _io.provenance(preset=preset, setup=setup.describe(), ttot_grid=list(t_grid),
                              rT_grid=list(r_grid))
        max_power_to_csv(pts, out / "max_power.csv", prov)
        doc = {"provenance": prov,
               "points": [{k: (_io.json_value(v) if isinstance(v, float) else v)
                           for k, v in pt.summary().items()} for pt in pts]}
        _io.atomic_write(out / "max_power.json", _io.dumps(doc))
        for pt in pts:
            print(f"T_hot/T_cold = {pt.T_ratio:.6g}: {pt.status} eta* = {pt.eta:.6g} "
                  f"t_tot* = {pt.t_tot:g} r_T* = {pt.r_T:g}")
        return EXIT_OK
    try:
        spec = SweepSpec(args.variable, values, setup)
    except ValueError as exc:
        raise ConfigError(f"--values: {exc}") from None
    res = run_sweep(spec, args.workers)
    stem = f"sweep_{args.variable}"
    res.to_csv(out / f"{stem}.csv")
    res.to_json(out / f"{stem}.json")
    for r in res.rows:
        print(f"{args.variable} = {r.value:.6g}: {r.status} eta = {r.eta:.6g} P = {r.P:.6g}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg, _ = _load(args)
    try:
        p = params_from_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"parameters: {exc}") from None
    res = validate_params(p)
    if res.ok:
        print("Ok")
        print(json.dumps(asdict(p), sort_keys=True))
        return EXIT_OK
    for v in res.violations:
        print(f"violation: {v}")
    return EXIT_CONFIG


COMMANDS = {"map": cmd_map, "cycle": cmd_cycle, "sweep": cmd_sweep, "validate": cmd_validate}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoClosedLoop as exc:
        print(f"error: no closed cycle: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except NotAnEngine as exc:
        print(f"error: not an engine: {exc}", file=sys.stderr)
        return EXIT_NOT_ENGINE
    except OptoStirlingError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY


if __name__ == "__main__":
    sys.exit(main())
