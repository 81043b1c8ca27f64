"""Excitation-number dynamics along a schedule and the resulting thermodynamics.

Energies are in units of hbar*omega_m and times in units of 1/omega_m.  With
``U = (1 + Delta_m) n_b`` the heat current is
``(gamma + Gamma_m)(1 + Delta_m)(n_m - n_b)`` and the work is what is left of
the change of ``U``.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp, trapezoid

from . import _io
from .cycle import STROKES, Schedule
from .errors import NotAnEngine, StepFailure
from .params import CODATA, Constants

__all__ = [
    "Trajectory",
    "StrokeBalance",
    "EngineReport",
    "integrate_schedule",
    "run_to_limit_cycle",
    "heat",
    "work",
    "work_estimate",
    "report",
]


@dataclass
class Trajectory:
    """One period of ``n_b(t)`` on the integration mesh.

    ``t`` merges the solver steps with a refinement of the schedule sample
    times; ``n_b_samples`` holds the values at the schedule samples.
    """

    t: np.ndarray
    n_b: np.ndarray
    U: np.ndarray
    Q_cum: np.ndarray
    W_cum: np.ndarray
    n_b_samples: np.ndarray
    cycles_run: int = 1
    converged: bool = False
    ode_tol: float = 1e-9
    history: list = field(default_factory=list)

    def to_csv(self, path, provenance: dict | None = None) -> Path:
        prov = dict(provenance or {}, cycles_run=self.cycles_run, converged=self.converged,
                    ode_tol=self.ode_tol)
        rows = np.column_stack([self.t, self.n_b, self.U, self.Q_cum, self.W_cum])
        body = "\n".join(",".join(_io.fmt(float(v)) for v in r) for r in rows)
        return _io.atomic_write(path, _io.csv_header(prov) + "t,n_b,U,Q_cum,W_cum\n" + body + "\n")


def _coefficients(s: Schedule):
    """Right-hand side for ``y = (phi, p)``, the unit-start and zero-start solutions.

    The rate and target are interpolated linearly between schedule samples.
    """
    t = s.t.tolist()
    dt = np.diff(s.t)
    rate = s.gamma + s.Gamma_m
    with np.errstate(divide="ignore", invalid="ignore"):
        d_rate = np.where(dt > 0, np.diff(rate) / dt, 0.0).tolist()
        d_nm = np.where(dt > 0, np.diff(s.n_m) / dt, 0.0).tolist()
    rate, n_m = rate.tolist(), s.n_m.tolist()
    last = len(t) - 2

    def rhs(time, y):
        i = min(max(bisect_right(t, time) - 1, 0), last)
        u = time - t[i]
        a = rate[i] + d_rate[i] * u
        return np.array([-a * y[0], -a * (y[1] - n_m[i] - d_nm[i] * u)])

    return rhs


def _mesh(s: Schedule, solver_t: np.ndarray, refine: int) -> np.ndarray:
    t = s.t
    sub = (t[:-1, None] + (t[1:] - t[:-1])[:, None] * np.arange(refine)[None, :] / refine).ravel()
    return np.unique(np.concatenate([sub, [t[-1]], solver_t]))


@dataclass
class _Propagator:
    """One period of ``n_b(t) = phi(t) n_b0 + p(t)`` on the integration mesh."""

    mesh: np.ndarray
    phi: np.ndarray
    p: np.ndarray
    phi_s: np.ndarray
    p_s: np.ndarray


# solver tolerance relative to ode_tol; keeps the accumulated error within 10*ode_tol
_RTOL_FACTOR = 0.25


def _propagate(s: Schedule, ode_tol: float, mesh_refine: int, n_ref: float) -> _Propagator:
    # absolute tolerances sized so that phi*n_ref + p stays accurate relative to its floor
    floor = max(min(n_ref, float(np.min(np.abs(s.n_m)))), 1e-300)
    rtol = ode_tol * _RTOL_FACTOR
    atol = [rtol * 1e-3 * floor / max(n_ref, floor), rtol * 1e-3 * floor]
    sol = solve_ivp(_coefficients(s), (float(s.t[0]), float(s.t[-1])), [1.0, 0.0],
                    method="RK45", rtol=rtol, atol=atol, dense_output=True)
    if sol.status != 0:
        raise StepFailure(sol.message)
    mesh = _mesh(s, sol.t, mesh_refine)
    y, ys = sol.sol(mesh), sol.sol(s.t)
    for a in (y, ys):
        a[:, 0] = (1.0, 0.0)
        a[:, -1] = sol.y[:, -1]
    return _Propagator(mesh, y[0], y[1], ys[0], ys[1])


def _trajectory(s: Schedule, prop: _Propagator, n_b0: float, ode_tol: float) -> Trajectory:
    mesh = prop.mesh
    n_b = np.maximum(prop.phi * n_b0 + prop.p, 0.0)
    samples = np.maximum(prop.phi_s * n_b0 + prop.p_s, 0.0)
    rate = s.gamma + np.interp(mesh, s.t, s.Gamma_m)
    shift = 1 + np.interp(mesh, s.t, s.Delta_m)
    n_m = np.interp(mesh, s.t, s.n_m)
    U = shift * n_b
    current = rate * shift * (n_m - n_b)
    Q = np.concatenate([[0.0], np.cumsum(0.5 * (current[1:] + current[:-1]) * np.diff(mesh))])
    W = (U - U[0]) - Q
    return Trajectory(mesh, n_b, U, Q, W, samples, 1, False, ode_tol)


def _single(s: Schedule, n_b0: float, ode_tol: float, cycles_run: int) -> Trajectory:
    U = np.array([(1 + s.Delta_m[0]) * n_b0])
    z = np.zeros(1)
    return Trajectory(s.t[:1].copy(), np.array([float(n_b0)]), U, z, z.copy(),
                      np.array([float(n_b0)]), cycles_run, False, ode_tol)


def integrate_schedule(s: Schedule, n_b0: float, ode_tol: float = 1e-9,
                       mesh_refine: int = 4) -> Trajectory:
    """Integrate ``dn_b/dt = -(gamma + Gamma_m(t))(n_b - n_m(t))`` over one period.

    Coefficients are interpolated linearly between schedule samples.  The
    embedded Dormand-Prince 5(4) pair of :func:`scipy.integrate.solve_ivp`
    controls the local error at a quarter of ``ode_tol`` so that the
    accumulated error stays within ``10*ode_tol``.  The equation
    is linear, so the unit-start and zero-start solutions are integrated
    together and combined as ``phi*n_b0 + p``.

    Raises
    ------
    StepFailure
        If the step size underflows.
    """
    if n_b0 < 0:
        raise ValueError("n_b0 must be non-negative")
    if len(s.t) < 2 or s.t[-1] <= s.t[0]:
        return _single(s, n_b0, ode_tol, 1)
    return _trajectory(s, _propagate(s, ode_tol, mesh_refine, float(n_b0)), float(n_b0),
                       ode_tol)


def run_to_limit_cycle(s: Schedule, conv_tol: float = 1e-6, max_cycles: int = 50,
                       ode_tol: float = 1e-9, n_b0: float | None = None) -> Trajectory:
    """Repeat the schedule until ``n_b`` is periodic.

    The first cycle starts from ``n_b0`` (default: the instantaneous steady
    state ``n_m`` at ``t = 0``); cycle zero is taken as the constant
    ``n_b0``.  Convergence is declared when the largest change between
    consecutive cycles at the sample times, relative to the largest ``n_b``,
    is below ``conv_tol``.  One period is integrated once; repeating it
    reuses that propagator, which is exact for this linear equation.
    """
    n0 = float(s.n_m[0]) if n_b0 is None else float(n_b0)
    if max_cycles <= 0:
        return _single(s, n0, ode_tol, 0)
    if len(s.t) < 2 or s.t[-1] <= s.t[0]:
        return _single(s, n0, ode_tol, 1)
    prop = _propagate(s, ode_tol, 4, n0)
    prev = np.full(len(s.t), n0)
    history = []
    converged = False
    k = 0
    for k in range(1, max_cycles + 1):
        cur = np.maximum(prop.phi_s * n0 + prop.p_s, 0.0)
        change = float(np.max(np.abs(cur - prev)) / np.max(np.abs(cur)))
        history.append(change)
        if change < conv_tol:
            converged = True
            break
        if k < max_cycles:
            prev = cur
            n0 = float(cur[-1])
    traj = _trajectory(s, prop, n0, ode_tol)
    traj.cycles_run = k
    traj.converged = converged
    traj.history = history
    return traj


def _at(traj: Trajectory, arr: np.ndarray, t: float) -> float:
    return float(np.interp(t, traj.t, arr))


def heat(traj: Trajectory, s: Schedule, t_i: float, t_f: float) -> float:
    """Heat absorbed between ``t_i`` and ``t_f`` (trapezoid on the mesh)."""
    return _at(traj, traj.Q_cum, t_f) - _at(traj, traj.Q_cum, t_i)


def work(traj: Trajectory, s: Schedule, t_i: float, t_f: float) -> float:
    """Work done on the resonator, ``Delta U - Q``."""
    dU = _at(traj, traj.U, t_f) - _at(traj, traj.U, t_i)
    return dU - heat(traj, s, t_i, t_f)


def work_estimate(traj: Trajectory, s: Schedule, stroke: int) -> float:
    """Independent estimate ``int dDelta_m/dt n_b dt`` over one stroke.

    ``dDelta_m/dt`` comes from centred differences of the schedule samples
    of that stroke.
    """
    a, b = s.bounds[stroke], s.bounds[stroke + 1]
    t = s.t[a:b + 1]
    if len(t) < 2 or t[-1] <= t[0]:
        return 0.0
    rate = np.gradient(s.Delta_m[a:b + 1], t)
    nb = np.interp(t, traj.t, traj.n_b)
    return float(trapezoid(rate * nb, t))


@dataclass(frozen=True)
class StrokeBalance:
    name: str
    t_start: float
    t_end: float
    Q: float
    W: float
    dU: float
    W_est: float


@dataclass
class EngineReport:
    """Per-cycle thermodynamic totals.

    ``Q_abs`` sums the strokes with positive heat and ``Q_rej`` is the
    magnitude of the heat released by the remaining strokes.
    """

    eta: float
    P: float
    Q_abs: float
    Q_rej: float
    W_tot: float
    eta_C: float
    eta_CA: float
    t_tot: float
    per_stroke: list[StrokeBalance]
    dU_cycle: float
    converged: bool
    cycles_run: int

    def first_law_residuals(self) -> list[float]:
        """``|dU - Q - W_est| / |Q|`` for each stroke."""
        return [abs(b.dU - b.Q - b.W_est) / max(abs(b.Q), 1e-300) for b in self.per_stroke]

    def in_joules(self, omega_m: float, c: Constants = CODATA) -> dict:
        quantum = c.hbar * omega_m
        return {"Q_abs": self.Q_abs * quantum, "Q_rej": self.Q_rej * quantum,
                "W_tot": self.W_tot * quantum, "P": self.P * quantum * omega_m}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_stroke"] = [asdict(b) for b in self.per_stroke]
        return d

    def to_json(self, path, provenance: dict | None = None) -> Path:
        doc = {"provenance": dict(provenance or {}), "report": self.to_dict()}
        return _io.atomic_write(path, _io.dumps(doc))


def report(traj: Trajectory, s: Schedule) -> EngineReport:
    """Efficiency, power and per-stroke balances of a (converged) cycle.

    Raises
    ------
    NotAnEngine
        If the net work on the resonator is not negative.
    """
    per = []
    for k, (ta, tb) in enumerate(s.stroke_times()):
        Q = heat(traj, s, ta, tb)
        W = work(traj, s, ta, tb)
        dU = _at(traj, traj.U, tb) - _at(traj, traj.U, ta)
        name = STROKES[k] if s.n_strokes == 4 else f"stroke{k}"
        per.append(StrokeBalance(name, ta, tb, Q, W, dU, work_estimate(traj, s, k)))
    W_tot = sum(b.W for b in per)
    Q_abs = sum(b.Q for b in per if b.Q > 0)
    Q_rej = -sum(b.Q for b in per if b.Q <= 0)
    if not W_tot < 0:
        raise NotAnEngine(f"net work per cycle W_tot = {W_tot:.6g} is not negative")
    Th, Tc = s.levels.get("T_hot", math.nan), s.levels.get("T_cold", math.nan)
    eta_C = 1 - Tc / Th
    eta_CA = 1 - math.sqrt(Tc / Th)
    return EngineReport(eta=-W_tot / Q_abs, P=-W_tot / s.t_tot, Q_abs=Q_abs, Q_rej=Q_rej,
                        W_tot=W_tot, eta_C=eta_C, eta_CA=eta_CA, t_tot=s.t_tot, per_stroke=per,
                        dU_cycle=float(traj.U[-1] - traj.U[0]), converged=traj.converged,
                        cycles_run=traj.cycles_run)
