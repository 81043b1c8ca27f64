"""Acceptance criteria.

Each test prints one ``PASS`` or ``FAIL`` line for its criterion, listing
the individual checks, and then asserts them all.
"""
import math
import time

import numpy as np
import pytest

from optostirling import cli
from optostirling.cavity import big_lambda, effective_cavity, small_lambda, spectrum_x0
from optostirling.cycle import build_cycle, constant_schedule, trace_isoline
from optostirling.engine import integrate_schedule
from optostirling.landscape import GridSpec, LandscapeMap
from optostirling.mech import delta_m, gamma_m, nb_analytic
from optostirling.params import FeedbackParams, PhysicalParams
from optostirling.stability import RegimeClass, regime_classify
from optostirling.sweep import (
    RT_GRID, TTOT_GRID, CycleSetup, SweepSpec, max_power_vs_temperature, run_cycle, run_sweep,
)

from conftest import T_HOT_VALUES

REFINE_TOL = 1e-6
ODE_TOL = 1e-9


class Checks:
    """Collects named checks and reports them as one verdict line."""

    def __init__(self, criterion: str):
        self.criterion = criterion
        self.items: list[tuple[str, bool, str]] = []

    def add(self, name: str, ok: bool, detail: str = ""):
        self.items.append((name, bool(ok), detail))

    def finish(self, capsys):
        failed = [n for n, ok, _ in self.items if not ok]
        body = "; ".join(f"{n}{' ' + d if d else ''}{'' if ok else ' [FAIL]'}"
                         for n, ok, d in self.items)
        with capsys.disabled():
            print(f"\n{'FAIL' if failed else 'PASS'} {self.criterion}: {body}")
        assert not failed, f"failed checks: {', '.join(failed)}"


def within(value, target, tol):
    return abs(value - target) <= tol


@pytest.fixture(scope="module")
def preset_runs():
    runs = {}
    for name, plane in (("fig3", "nofeedback"), ("appB-weak", "feedback"),
                        ("appB-weak", "nofeedback"), ("appB-strong", "feedback"),
                        ("appB-strong", "nofeedback")):
        runs[name, plane] = run_cycle(CycleSetup.from_preset(name, plane))
    return runs


@pytest.fixture(scope="module")
def max_power_points(fig3_setup):
    ratios = [t / fig3_setup.levels[1] for t in T_HOT_VALUES]
    return max_power_vs_temperature(fig3_setup, ratios, TTOT_GRID, RT_GRID)


@pytest.fixture(scope="module")
def timing_sweeps(fig3_setup, fig3_run):
    return [run_sweep(SweepSpec("TotalTime", TTOT_GRID, fig3_setup), landscape=fig3_run.landscape),
            run_sweep(SweepSpec("IsothermalFraction", RT_GRID, fig3_setup),
                      landscape=fig3_run.landscape)]


def test_criterion_1_reference_numbers(capsys, preset_runs, max_power_points):
    c = Checks("criterion 1 (reference-number regression)")
    start = time.perf_counter()
    fig3 = run_cycle(CycleSetup.from_preset("fig3", "feedback")).report
    elapsed = time.perf_counter() - start
    c.add("fig3 eta", within(fig3.eta, 0.13, 0.02), f"{fig3.eta:.4f}")
    c.add("fig3 runtime", elapsed < 30, f"{elapsed:.1f}s")

    nofb = preset_runs["fig3", "nofeedback"].report
    c.add("no-feedback eta", within(nofb.eta, 0.002, 0.001), f"{nofb.eta:.5f}")
    c.add("feedback gain", fig3.eta / nofb.eta >= 20, f"{fig3.eta / nofb.eta:.0f}x")

    weak_fb = preset_runs["appB-weak", "feedback"].report.eta
    weak_nofb = preset_runs["appB-weak", "nofeedback"].report.eta
    strong_fb = preset_runs["appB-strong", "feedback"].report.eta
    strong_nofb = preset_runs["appB-strong", "nofeedback"].report.eta
    c.add("weak coupling eta", within(weak_fb, 0.010, 0.005), f"{weak_fb:.5f}")
    c.add("weak coupling no-feedback eta", within(weak_nofb, 0.001, 0.0008), f"{weak_nofb:.5f}")
    c.add("strong coupling eta", within(strong_fb, 0.06, 0.02), f"{strong_fb:.4f}")
    c.add("strong coupling no-feedback eta", within(strong_nofb, 0.06, 0.02), f"{strong_nofb:.4f}")
    rel = abs(strong_fb - strong_nofb) / max(strong_fb, strong_nofb)
    c.add("strong coupling agreement", rel <= 0.3, f"{100 * rel:.0f}%")

    times = [pt.t_tot for pt in max_power_points]
    c.add("max-power t_tot", all(pt.ok for pt in max_power_points) and set(times) == {200.0},
          "/".join(f"{t:g}" for t in times))
    c.finish(capsys)


def test_criterion_2_bounds(capsys, temperature_sweep, compression_sweep, timing_sweeps,
                            max_power_points):
    c = Checks("criterion 2 (efficiency bounds)")
    rows = [r for res in (temperature_sweep, compression_sweep, *timing_sweeps) for r in res.rows]
    rows += [r for pt in max_power_points for r in pt.grid]
    engines = [r for r in rows if r.ok and r.converged]
    bad = [r for r in engines if not r.eta < r.eta_C]
    c.add("eta < eta_C", not bad, f"{len(engines)} converged engine rows, {len(bad)} violations")
    c.add("limit cycles converged", all(r.converged for r in rows),
          f"{len(rows)} rows, {len(rows) - len(engines)} without net work")
    over = [pt for pt in max_power_points if not (pt.ok and pt.eta <= pt.eta_CA)]
    c.add("eta at max power <= eta_CA", not over,
          f"{len(max_power_points)} ratios, {len(over)} violations")
    c.finish(capsys)


def test_criterion_3_integrator_oracle(capsys):
    c = Checks("criterion 3 (integrator vs closed form)")
    rng = np.random.default_rng(20240601)
    worst = 0.0
    for _ in range(50):
        t_tot = rng.uniform(10.0, 5000.0)
        gamma = 10 ** rng.uniform(-5, -3)
        Gamma_m = 10 ** rng.uniform(-4, math.log10(0.05))
        n_m = 10 ** rng.uniform(0, 7)
        n_b0 = 10 ** rng.uniform(0, 7)
        s = constant_schedule(t_tot, gamma, Gamma_m, n_m, n_samples=33)
        traj = integrate_schedule(s, n_b0, ODE_TOL)
        exact = nb_analytic(s.t, n_b0, gamma, Gamma_m, n_m)
        worst = max(worst, float(np.max(np.abs(traj.n_b_samples - exact) / exact)))
    c.add("50 schedules", worst <= 10 * ODE_TOL, f"max rel err {worst:.2e}")
    c.finish(capsys)


def _stable_points(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        p = PhysicalParams(kappa1=rng.uniform(0.05, 2), kappa2=rng.uniform(0.05, 2),
                           Delta=rng.uniform(-2, 2), G=rng.uniform(0.001, 0.2),
                           eta_d=rng.uniform(0.1, 1.0))
        fb = FeedbackParams(g_fb=rng.uniform(0, 1.5), phi=rng.uniform(0, 2 * np.pi))
        if regime_classify(p, fb) <= RegimeClass.NONADIABATIC:
            out.append((p, fb, rng.uniform(-3, 3)))
    return out


def test_criterion_4_identities(capsys):
    c = Checks("criterion 4 (algebraic identities)")
    worst = dict(mu=0.0, n_eff=0.0, lam=0.0, spectral=0.0)
    for p, fb, w in _stable_points(100, 7):
        eff = effective_cavity(p, fb)
        worst["mu"] = max(worst["mu"], abs(eff.mu.real + eff.kappa_eff - p.kappa) / p.kappa,
                          abs(eff.mu.imag + eff.Delta_eff - p.Delta) / max(abs(p.Delta), 1.0))
        a = p.kappa1 * fb.g_fb**2 / eff.kappa_eff
        b = abs(eff.mu) ** 2 / (4 * p.eta_d * eff.kappa_eff * p.kappa2)
        d = ((p.kappa - eff.kappa_eff) ** 2 + (p.Delta - eff.Delta_eff) ** 2) / (
            4 * p.eta_d * eff.kappa_eff * p.kappa2)
        if a > 0:
            worst["n_eff"] = max(worst["n_eff"], abs(a - b) / a, abs(a - d) / a)
        lhs = small_lambda(w, eff) - np.conj(small_lambda(-w, eff))
        rhs = big_lambda(w, eff) - np.conj(big_lambda(-w, eff))
        worst["lam"] = max(worst["lam"], abs(lhs - rhs) / abs(rhs))
        Gm = gamma_m(eff, p.G)
        spec = p.G**2 * (spectrum_x0(1.0, eff) - spectrum_x0(-1.0, eff))
        worst["spectral"] = max(worst["spectral"], abs(Gm - spec) / abs(spec))
    for name, label in (("mu", "mu decomposition"), ("n_eff", "n_eff three ways"),
                        ("lam", "response difference"), ("spectral", "damping spectrum")):
        c.add(label, worst[name] <= 1e-10, f"{worst[name]:.1e}")
    c.finish(capsys)


def test_criterion_5_closed_form(capsys):
    c = Checks("criterion 5 (no-feedback closed form)")
    p = PhysicalParams(kappa1=1, kappa2=1, Delta=1, G=0.1)
    eff = effective_cavity(p, FeedbackParams())
    Gm, Dm = gamma_m(eff, p.G), delta_m(eff, p.G)
    c.add("Gamma_m", abs(Gm - 0.005) <= 1e-12 * 0.005, f"{Gm:.15g}")
    c.add("Delta_m", abs(Dm + 0.0025) <= 1e-12 * 0.0025, f"{Dm:.15g}")
    c.finish(capsys)


def test_criterion_6_thermodynamics(capsys, fig3_run, preset_runs):
    c = Checks("criterion 6 (thermodynamic consistency)")
    reports = [fig3_run.report] + [r.report for r in preset_runs.values()]
    first_law = max(max(r.first_law_residuals()) for r in reports)
    isochoric = max(abs(b.W) / abs(b.Q) for r in reports for b in r.per_stroke[1::2])
    cyclic = max(abs(r.dU_cycle) / r.Q_abs for r in reports)
    c.add("per-stroke first law", first_law <= 1e-3, f"{first_law:.1e}")
    c.add("isochoric work", isochoric <= 1e-3, f"{isochoric:.1e}")
    c.add("cycle energy", cyclic <= 1e-3, f"{cyclic:.1e}")
    c.add("converged", all(r.converged for r in reports), f"{len(reports)} cycles")
    c.finish(capsys)


def test_criterion_7_geometry(capsys, fig3_run):
    c = Checks("criterion 7 (geometry)")
    spec = GridSpec("x", "y", 0.0, 1.0, 0.0, 1.0, 21, 21)
    m = LandscapeMap.from_function(spec, lambda x, y: {
        "T": x, "Delta_m": y, "Gamma_m": 0.01 + 0 * x, "n_m": 1 + 0 * x})
    (line,) = trace_isoline(m, "Delta_m", 0.5, REFINE_TOL)
    err = float(np.max(np.abs(line.points[:, 1] - 0.5)))
    c.add("linear isoline", err <= REFINE_TOL * 0.5, f"{err:.1e}")
    rect = build_cycle(m, 0.7, 0.3, 0.6, 0.2, REFINE_TOL)
    corner_err = float(np.max(np.abs(rect.corners - [[0.7, 0.6], [0.7, 0.2], [0.3, 0.2],
                                                       [0.3, 0.6]])))
    c.add("rectangle corners", corner_err <= REFINE_TOL, f"{corner_err:.1e}")
    gap = fig3_run.cycle.closure_gap()
    c.add("fig3 closure", gap <= REFINE_TOL, f"{gap:.1e}")
    c.finish(capsys)


def test_criterion_8_determinism(capsys, tmp_path):
    c = Checks("criterion 8 (determinism)")
    commands = {
        "map": ["map", "--preset", "fig3", "--grid", "60,60"],
        "cycle": ["cycle", "--preset", "fig3", "--grid", "200,200"],
        "sweep": ["sweep", "--preset", "fig3", "--grid", "200,200", "--variable",
                  "TotalTime", "--values", "200,2000"],
        "validate": ["validate", "--preset", "fig3"],
    }
    for name, argv in commands.items():
        outputs = []
        for k in range(2):
            out = tmp_path / f"{name}{k}"
            code = cli.main(argv + ["--out", str(out)])
            stdout = capsys.readouterr().out
            files = {f.name: f.read_bytes() for f in sorted(out.glob("*"))} if out.exists() else {}
            outputs.append((code, stdout, files))
        same = outputs[0] == outputs[1] and outputs[0][0] == 0
        c.add(name, same, f"{len(outputs[0][2])} files")
    c.finish(capsys)
