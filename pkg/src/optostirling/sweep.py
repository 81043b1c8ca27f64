"""End-to-end cycle runs and families of them.

:class:`CycleSetup` bundles everything needed to go from device parameters
to an engine report: the control plane and window, the four cycle levels, the
timing and the numerical tolerances.  :func:`run_cycle` executes that
pipeline once; :func:`run_sweep` repeats it along one swept variable and
:func:`efficiency_at_max_power` searches a time grid for the most powerful
schedule.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import _io
from .cycle import VALID_ONLY, WITH_NONADIABATIC, Schedule, StirlingCycle, build_cycle, make_schedule
from .engine import EngineReport, Trajectory, report, run_to_limit_cycle
from .errors import NotAnEngine, OptoStirlingError
from .landscape import PLANES, GridSpec, LandscapeMap, map_plane
from .params import PhysicalParams, load_preset, params_from_config

__all__ = [
    "VARIABLES",
    "TTOT_GRID",
    "RT_GRID",
    "CycleSetup",
    "CycleRun",
    "SweepSpec",
    "SweepRow",
    "SweepResult",
    "MaxPowerPoint",
    "run_cycle",
    "run_sweep",
    "efficiency_at_max_power",
    "max_power_vs_temperature",
    "max_power_to_csv",
    "compression_ratio",
    "spring_from_compression",
]

log = logging.getLogger(__name__)

VARIABLES = ("TemperatureRatio", "CompressionRatio", "TotalTime", "IsothermalFraction")
TTOT_GRID = (200.0, 500.0, 1000.0, 1500.0, 2000.0, 3000.0, 4000.0)
RT_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def compression_ratio(Dm_h: float, Dm_l: float) -> float:
    """High to low mechanical frequency ratio ``(1 + Dm_h)/(1 + Dm_l)``."""
    return (1 + Dm_h) / (1 + Dm_l)


def spring_from_compression(ratio: float) -> float:
    """Symmetric spring ``d`` with ``(1 + d)/(1 - d) = ratio``."""
    if not ratio > 1:
        raise ValueError("a compression ratio must exceed 1")
    return (ratio - 1) / (ratio + 1)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


@dataclass(frozen=True)
class CycleSetup:
    """Inputs of one cycle run.

    ``window`` fixes the control plane grid; ``levels`` is
    ``(T_hot, T_cold, Dm_h, Dm_l)`` with temperatures in kelvin and springs
    in units of ``omega_m``.  Times are in units of ``1/omega_m``.
    """

    params: PhysicalParams
    plane: str
    window: GridSpec
    levels: tuple[float, float, float, float]
    t_tot: float = 2000.0
    r_T: float = 0.5
    n_samples: int = 200
    refine_tol: float = 1e-6
    ode_tol: float = 1e-9
    conv_tol: float = 1e-6
    max_cycles: int = 50
    branch: int = 0
    admit_nonadiabatic: bool = False
    margin: float = 0.0
    preset: str | None = None

    def __post_init__(self):
        if self.plane not in PLANES:
            raise ValueError(f"unknown plane {self.plane!r}")
        if len(self.levels) != 4:
            raise ValueError("levels must be T_hot, T_cold, Dm_h, Dm_l")
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))

    @classmethod
    def from_config(cls, cfg: dict[str, str], plane: str, nx: int = 400, ny: int = 400,
                    preset: str | None = None, **overrides) -> "CycleSetup":
        """Read ``cycle_*_<plane>`` keys of a config mapping.

        Recognised keys are ``cycle_window_<plane>`` (x0, x1, y0, y1),
        ``cycle_levels_<plane>``, ``cycle_ttot_<plane>``, ``cycle_rT_<plane>``
        and ``cycle_admit_nonadiabatic_<plane>``.  ``overrides`` replace any
        field afterwards.
        """
        if plane not in PLANES:
            raise ValueError(f"unknown plane {plane!r}")
        x_name, y_name = PLANES[plane]
        try:
            window = _floats(cfg[f"cycle_window_{plane}"])
        except KeyError:
            raise KeyError(f"config has no cycle_window_{plane}") from None
        kw = {}
        if f"cycle_levels_{plane}" in cfg:
            kw["levels"] = _floats(cfg[f"cycle_levels_{plane}"])
        if f"cycle_ttot_{plane}" in cfg:
            kw["t_tot"] = float(cfg[f"cycle_ttot_{plane}"])
        if f"cycle_rT_{plane}" in cfg:
            kw["r_T"] = float(cfg[f"cycle_rT_{plane}"])
        if f"cycle_admit_nonadiabatic_{plane}" in cfg:
            kw["admit_nonadiabatic"] = bool(int(cfg[f"cycle_admit_nonadiabatic_{plane}"]))
        kw.update(overrides)
        if "levels" not in kw:
            raise KeyError(f"config has no cycle_levels_{plane}")
        spec = GridSpec(x_name, y_name, *window, nx, ny)
        return cls(params_from_config(cfg), plane, spec, preset=preset, **kw)

    @classmethod
    def from_preset(cls, name: str, plane: str, **overrides) -> "CycleSetup":
        _, cfg = load_preset(name)
        grid = {k: overrides.pop(k) for k in ("nx", "ny") if k in overrides}
        return cls.from_config(cfg, plane, preset=name, **grid, **overrides)

    def evolve(self, **changes) -> "CycleSetup":
        return replace(self, **changes)

    @property
    def allowed(self):
        return WITH_NONADIABATIC if self.admit_nonadiabatic else VALID_ONLY

    def describe(self) -> dict:
        """JSON-friendly record of every input, used as provenance."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (PhysicalParams, GridSpec)):
                v = asdict(v)
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


@dataclass
class CycleRun:
    setup: CycleSetup
    landscape: LandscapeMap
    cycle: StirlingCycle
    schedule: Schedule
    trajectory: Trajectory
    report: EngineReport


def _map(setup: CycleSetup) -> LandscapeMap:
    return map_plane(setup.params, setup.plane, setup.window, setup.margin,
                     provenance={"preset": setup.preset})


def _cycle(setup: CycleSetup, m: LandscapeMap) -> StirlingCycle:
    return build_cycle(m, *setup.levels, refine_tol=setup.refine_tol, branch=setup.branch,
                       allowed=setup.allowed)


def _engine(setup: CycleSetup, s: Schedule) -> tuple[Trajectory, EngineReport]:
    traj = run_to_limit_cycle(s, setup.conv_tol, setup.max_cycles, setup.ode_tol)
    return traj, report(traj, s)


def run_cycle(setup: CycleSetup, landscape: LandscapeMap | None = None) -> CycleRun:
    """Map, cycle, schedule, limit cycle and report for one setup.

    Raises
    ------
    NoClosedLoop
        If the levels do not close a loop in the window.
    NotAnEngine
        If the limit cycle produces no net work.
    """
    m = _map(setup) if landscape is None else landscape
    c = _cycle(setup, m)
    s = make_schedule(c, setup.params, setup.t_tot, setup.r_T, setup.n_samples, setup.refine_tol)
    traj, rep = _engine(setup, s)
    return CycleRun(setup, m, c, s, traj, rep)


# -- sweeps -----------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    """One swept variable on top of a base setup.

    ``TemperatureRatio`` sets ``T_hot = value*T_cold``; ``CompressionRatio``
    sets ``Dm_h = -Dm_l = d`` with ``(1+d)/(1-d) = value``; ``TotalTime`` and
    ``IsothermalFraction`` replace ``t_tot`` and ``r_T``.
    """

    variable: str
    values: tuple[float, ...]
    setup: CycleSetup

    def __post_init__(self):
        if self.variable not in VARIABLES:
            raise ValueError(f"unknown sweep variable {self.variable!r}")
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("a sweep needs at least one value")
        d = np.diff(vals)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("sweep values must be strictly monotone")
        object.__setattr__(self, "values", vals)

    @property
    def changes_geometry(self) -> bool:
        return self.variable in ("TemperatureRatio", "CompressionRatio")

    def setup_for(self, value: float) -> CycleSetup:
        Th, Tc, Dh, Dl = self.setup.levels
        if self.variable == "TemperatureRatio":
            return self.setup.evolve(levels=(value * Tc, Tc, Dh, Dl))
        if self.variable == "CompressionRatio":
            d = spring_from_compression(value)
            return self.setup.evolve(levels=(Th, Tc, d, -d))
        if self.variable == "TotalTime":
            return self.setup.evolve(t_tot=value)
        return self.setup.evolve(r_T=value)


@dataclass(frozen=True)
class SweepRow:
    value: float
    status: str
    reason: str = ""
    eta: float = math.nan
    P: float = math.nan
    eta_C: float = math.nan
    eta_CA: float = math.nan
    W_tot: float = math.nan
    Q_abs: float = math.nan
    converged: bool = False
    cycles_run: int = 0
    touches_nonadiabatic: bool = False
    T_hot: float = math.nan
    T_cold: float = math.nan
    Dm_h: float = math.nan
    Dm_l: float = math.nan
    t_tot: float = math.nan
    r_T: float = math.nan

    @property
    def ok(self) -> bool:
        return self.status == "ok"


_ROW_FIELDS = tuple(f.name for f in fields(SweepRow))


def _row(value: float, setup: CycleSetup, cycle: StirlingCycle | None = None,
         traj: Trajectory | None = None, rep: EngineReport | None = None,
         error: Exception | None = None) -> SweepRow:
    Th, Tc, Dh, Dl = setup.levels
    base = dict(value=float(value), T_hot=Th, T_cold=Tc, Dm_h=Dh, Dm_l=Dl, t_tot=setup.t_tot,
                r_T=setup.r_T, eta_C=1 - Tc / Th, eta_CA=1 - math.sqrt(Tc / Th))
    if cycle is not None:
        base["touches_nonadiabatic"] = bool(cycle.touches_nonadiabatic)
    if traj is not None:
        base.update(converged=bool(traj.converged), cycles_run=int(traj.cycles_run))
    if error is not None:
        return SweepRow(status=type(error).__name__, reason=str(error), **base)
    return SweepRow(status="ok", eta=rep.eta, P=rep.P, W_tot=rep.W_tot, Q_abs=rep.Q_abs, **base)


def _timed_row(value, setup: CycleSetup, cycle: StirlingCycle, s: Schedule) -> SweepRow:
    s = s.retime(setup.t_tot, setup.r_T)
    traj = None
    try:
        traj = run_to_limit_cycle(s, setup.conv_tol, setup.max_cycles, setup.ode_tol)
        return _row(value, setup, cycle, traj, report(traj, s))
    except OptoStirlingError as exc:
        return _row(value, setup, cycle, traj, error=exc)


def _geometry_row(value, setup: CycleSetup, m: LandscapeMap) -> SweepRow:
    try:
        c = _cycle(setup, m)
    except (OptoStirlingError, ValueError) as exc:
        return _row(value, setup, error=exc)
    s = make_schedule(c, setup.params, setup.t_tot, setup.r_T, setup.n_samples, setup.refine_tol)
    return _timed_row(value, setup, c, s)


# Per-process state for pooled evaluation.
_WORKER: dict = {}


def _init_worker(state: dict):
    _WORKER.clear()
    _WORKER.update(state)


def _call(task):
    kind, value, setup = task
    if kind == "geometry":
        return _geometry_row(value, setup, _WORKER["map"])
    return _timed_row(value, setup, _WORKER["cycle"], _WORKER["schedule"])


def _evaluate(tasks: list, state: dict, workers: int | None) -> list:
    if workers is None or workers <= 1 or len(tasks) <= 1:
        _init_worker(state)
        try:
            return [_call(t) for t in tasks]
        finally:
            _WORKER.clear()
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(state,)) as pool:
        return list(pool.map(_call, tasks))


@dataclass
class SweepResult:
    variable: str
    rows: list[SweepRow]
    setup: CycleSetup
    provenance: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def _prov(self) -> dict:
        return dict(self.provenance, variable=self.variable, setup=self.setup.describe())

    def to_csv(self, path) -> Path:
        lines = [",".join(_ROW_FIELDS)]
        for r in self.rows:
            vals = []
            for name in _ROW_FIELDS:
                v = getattr(r, name)
                if isinstance(v, str):
                    vals.append(v.replace(",", ";").replace("\n", " "))
                elif isinstance(v, bool):
                    vals.append(str(int(v)))
                else:
                    vals.append(_io.fmt(float(v)) if isinstance(v, float) else str(v))
            lines.append(",".join(vals))
        return _io.atomic_write(path, _io.csv_header(self._prov()) + "\n".join(lines) + "\n")

    def to_json(self, path) -> Path:
        rows = [{k: (_io.json_value(v) if isinstance(v, float) else v)
                 for k, v in asdict(r).items()} for r in self.rows]
        return _io.atomic_write(path, _io.dumps({"provenance": self._prov(), "rows": rows}))


def run_sweep(spec: SweepSpec, workers: int | None = None,
              landscape: LandscapeMap | None = None) -> SweepResult:
    """Evaluate every value of ``spec``; failures become rows with a reason.

    Level sweeps re-trace the isolines for every value on one shared map;
    timing sweeps build the cycle once and retime its schedule.  Row order
    follows ``spec.values`` whatever the number of ``workers``.
    """
    base = spec.setup
    m = _map(base) if landscape is None else landscape
    setups = [spec.setup_for(v) for v in spec.values]
    if spec.changes_geometry:
        tasks = [("geometry", v, s) for v, s in zip(spec.values, setups)]
        rows = _evaluate(tasks, {"map": m}, workers)
    else:
        try:
            c = _cycle(base, m)
        except (OptoStirlingError, ValueError) as exc:
            rows = [_row(v, s, error=exc) for v, s in zip(spec.values, setups)]
        else:
            sched = make_schedule(c, base.params, base.t_tot, base.r_T, base.n_samples,
                                  base.refine_tol)
            tasks = [("timing", v, s) for v, s in zip(spec.values, setups)]
            rows = _evaluate(tasks, {"cycle": c, "schedule": sched}, workers)
    return SweepResult(spec.variable, rows, base, _io.provenance(preset=base.preset))


# -- efficiency at maximum power ---------------------------------------------


@dataclass
class MaxPowerPoint:
    """Most powerful schedule on a ``t_tot`` by ``r_T`` grid for one level set."""

    T_ratio: float
    status: str
    reason: str = ""
    eta: float = math.nan
    P: float = math.nan
    t_tot: float = math.nan
    r_T: float = math.nan
    eta_C: float = math.nan
    eta_CA: float = math.nan
    grid: list[SweepRow] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("grid")
        return d


def _argmax_power(rows: list[SweepRow]) -> SweepRow | None:
    best = None
    for r in sorted((r for r in rows if r.ok), key=lambda r: (r.t_tot, r.r_T)):
        if best is None or r.P > best.P:
            best = r
    return best


def _rT_spread(rows: list[SweepRow]):
    for t in sorted({r.t_tot for r in rows}):
        eta = np.array([r.eta for r in rows if r.t_tot == t and r.ok])
        if eta.size > 1 and np.mean(eta) > 0:
            spread = (eta.max() - eta.min()) / np.mean(eta)
            if spread > 0.3:
                log.warning("efficiency spread over r_T at t_tot=%g is %.0f%%", t, 100 * spread)


def efficiency_at_max_power(setup: CycleSetup, t_tots=TTOT_GRID, r_Ts=RT_GRID,
                            workers: int | None = None,
                            landscape: LandscapeMap | None = None) -> MaxPowerPoint:
    """Efficiency of the highest-power point on the ``t_tot`` by ``r_T`` grid.

    The cycle is built once; each grid point retimes the same samples.  Ties
    in power go to the smaller ``t_tot``, then the smaller ``r_T``.

    Raises
    ------
    NotAnEngine
        If no grid point yields net work.
    NoClosedLoop
        If the cycle cannot be built.
    """
    if not len(t_tots) or not len(r_Ts):
        raise ValueError("the search grid is empty")
    m = _map(setup) if landscape is None else landscape
    c = _cycle(setup, m)
    sched = make_schedule(c, setup.params, setup.t_tot, setup.r_T, setup.n_samples,
                          setup.refine_tol)
    tasks = [("timing", float(t), setup.evolve(t_tot=float(t), r_T=float(r)))
             for t in t_tots for r in r_Ts]
    rows = _evaluate(tasks, {"cycle": c, "schedule": sched}, workers)
    _rT_spread(rows)
    best = _argmax_power(rows)
    Th, Tc = setup.levels[:2]
    if best is None:
        raise NotAnEngine(f"no grid point extracts work at T_hot/T_cold = {Th / Tc:.6g}")
    return MaxPowerPoint(Th / Tc, "ok", "", best.eta, best.P, best.t_tot, best.r_T,
                         best.eta_C, best.eta_CA, rows)


def max_power_vs_temperature(setup: CycleSetup, ratios, t_tots=TTOT_GRID, r_Ts=RT_GRID,
                             workers: int | None = None) -> list[MaxPowerPoint]:
    """One :class:`MaxPowerPoint` per ``T_hot/T_cold`` ratio at fixed ``T_cold``.

    Ratios whose cycle cannot be built, or that never extract work, are
    returned with the failure recorded in ``status`` and ``reason``.
    """
    m = _map(setup)
    Th, Tc, Dh, Dl = setup.levels
    out = []
    for ratio in ratios:
        s = setup.evolve(levels=(ratio * Tc, Tc, Dh, Dl))
        try:
            out.append(efficiency_at_max_power(s, t_tots, r_Ts, workers, m))
        except (OptoStirlingError, ValueError) as exc:
            out.append(MaxPowerPoint(float(ratio), type(exc).__name__, str(exc),
                                     eta_C=1 - 1 / ratio, eta_CA=1 - math.sqrt(1 / ratio)))
    return out


def max_power_to_csv(points: list[MaxPowerPoint], path, provenance: dict | None = None) -> Path:
    names = ("T_ratio", "status", "reason", "eta", "P", "t_tot", "r_T", "eta_C", "eta_CA")
    lines = [",".join(names)]
    for p in points:
        d = p.summary()
        lines.append(",".join(d[k].replace(",", ";") if isinstance(d[k], str)
                              else _io.fmt(float(d[k])) for k in names))
    return _io.atomic_write(path, _io.csv_header(dict(provenance or {})) + "\n".join(lines) + "\n")
