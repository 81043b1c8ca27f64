from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optostirling.cycle import constant_schedule
from optostirling.engine import (
    heat, integrate_schedule, report, run_to_limit_cycle, work,
)
from optostirling.errors import NotAnEngine
from optostirling.mech import nb_analytic

ODE_TOL = 1e-9


@settings(max_examples=25, deadline=None)
@given(st.floats(10.0, 5000.0), st.floats(1e-5, 1e-3), st.floats(1e-4, 0.05),
       st.floats(1.0, 1e7), st.floats(1.0, 1e7))
def test_matches_analytic(t_tot, gamma, Gamma_m, n_m, n_b0):
    s = constant_schedule(t_tot, gamma, Gamma_m, n_m, n_samples=17)
    traj = integrate_schedule(s, n_b0, ODE_TOL)
    exact = nb_analytic(s.t, n_b0, gamma, Gamma_m, n_m)
    assert np.max(np.abs(traj.n_b_samples - exact) / exact) <= 10 * ODE_TOL
    mesh_exact = nb_analytic(traj.t, n_b0, gamma, Gamma_m, n_m)
    assert np.max(np.abs(traj.n_b - mesh_exact) / mesh_exact) <= 10 * ODE_TOL


def test_periodic_start_converges_at_once():
    s = constant_schedule(100.0, 1e-4, 0.01, 1e5)
    traj = run_to_limit_cycle(s)
    assert traj.converged and traj.cycles_run == 1


def test_max_cycles_zero():
    s = constant_schedule(100.0, 1e-4, 0.01, 1e5)
    traj = run_to_limit_cycle(s, max_cycles=0, n_b0=3.0)
    assert not traj.converged and traj.cycles_run == 0
    assert traj.n_b.tolist() == [3.0]


def test_degenerate_schedule():
    s = constant_schedule(0.0, 1e-4, 0.01, 1e5)
    traj = integrate_schedule(s, 7.0)
    assert traj.n_b.tolist() == [7.0] and traj.Q_cum.tolist() == [0.0]


def test_negative_start_rejected():
    with pytest.raises(ValueError):
        integrate_schedule(constant_schedule(1.0, 1e-4, 0.01, 1.0), -1.0)


def test_equilibrium_has_no_heat():
    s = constant_schedule(100.0, 1e-4, 0.01, 1e5, Delta_m=0.03)
    traj = integrate_schedule(s, 1e5)
    assert abs(heat(traj, s, 0.0, 100.0)) <= 1e-12 * 1e5


def test_relaxation_heat_equals_energy_change():
    shift, n_m, n0 = 1.05, 1e5, 2e4
    s = constant_schedule(5000.0, 1e-4, 0.01, n_m, Delta_m=shift - 1, n_samples=200)
    traj = integrate_schedule(s, n0)
    Q = heat(traj, s, 0.0, 5000.0)
    assert Q == pytest.approx(shift * (n_m - n0), rel=1e-3)
    assert abs(work(traj, s, 0.0, 5000.0)) <= 1e-3 * abs(Q)


def test_n_b_nonnegative():
    s = constant_schedule(100.0, 1e-4, 0.01, 0.0)
    assert np.all(integrate_schedule(s, 5.0).n_b >= 0)


def test_stiffening_spring_is_not_an_engine():
    s = constant_schedule(100.0, 1e-4, 0.01, 1e5)
    s = replace(s, Delta_m=np.linspace(0.0, 0.1, len(s.t)))
    with pytest.raises(NotAnEngine):
        report(run_to_limit_cycle(s), s)


def test_fig3_limit_cycle(fig3_run):
    traj, rep = fig3_run.trajectory, fig3_run.report
    assert traj.converged and traj.cycles_run <= 10
    assert abs(traj.n_b[-1] - traj.n_b[0]) / traj.n_b[0] <= 1e-6
    assert rep.W_tot < 0
    assert rep.per_stroke[3].Q > 0
    assert rep.eta_C == pytest.approx(0.56)
    assert rep.eta_CA == pytest.approx(0.3367, abs=1e-4)
    assert rep.P == pytest.approx(-rep.W_tot / rep.t_tot)
    assert rep.eta == pytest.approx(-rep.W_tot / rep.Q_abs)


def test_fig3_tolerance_insensitive(fig3_run):
    s = fig3_run.schedule
    loose = report(run_to_limit_cycle(s, ode_tol=2e-9), s)
    assert abs(loose.eta - fig3_run.report.eta) <= 1e-3 * fig3_run.report.eta


def test_trajectory_csv(tmp_path, fig3_run):
    path = fig3_run.trajectory.to_csv(tmp_path / "t.csv", {"preset": "fig3"})
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# preset")
    assert "t,n_b,U,Q_cum,W_cum" in lines
