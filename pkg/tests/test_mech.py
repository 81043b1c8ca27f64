import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from optostirling.cavity import chi, effective_cavity, spectrum_x0
from optostirling.errors import HeatingRunaway, NegativeFrequency
from optostirling.mech import (
    bath_occupation, delta_m, effective_temperature, gamma_m, mech_fields,
    mechanical_effective, nb_analytic, nb_rate,
)
from optostirling.params import CODATA, FeedbackParams, PhysicalParams
from optostirling.stability import RegimeClass, regime_classify

P = PhysicalParams()
BARE = effective_cavity(P, FeedbackParams())


def test_closed_form_no_feedback():
    assert gamma_m(BARE, 0.1) == pytest.approx(0.005, rel=1e-12)
    assert delta_m(BARE, 0.1) == pytest.approx(-0.0025, rel=1e-12)


def test_zero_coupling():
    assert gamma_m(BARE, 0.0) == 0
    assert delta_m(BARE, 0.0) == 0
    assert bath_occupation(BARE, 0.0, 1.0, P.gamma, P.n_T) == pytest.approx(P.n_T, rel=1e-14)


def test_resonant_drive_has_no_spring():
    eff = effective_cavity(P.evolve(Delta=0.0), FeedbackParams())
    assert delta_m(eff, 0.1) == pytest.approx(0.0, abs=1e-15)


def test_bath_occupation_hand_value():
    n_m = bath_occupation(BARE, 0.1, 1.0, 1e-4, 6.25e7)
    assert n_m == pytest.approx((0.01 * 0.5 + 6.25e3) / (1e-4 + 0.005), rel=1e-12)
    assert n_m == pytest.approx(1.2265e6, rel=1e-3)


@pytest.mark.parametrize("G", [0.01, 0.1])
def test_backaction_floor(G):
    floor = spectrum_x0(-1.0, BARE) / (2 * 2 * (abs(chi(1.0, BARE)) ** 2 - abs(chi(-1.0, BARE)) ** 2))
    assert bath_occupation(BARE, G, 1.0, 1e-20, P.n_T) == pytest.approx(floor, rel=1e-6)


def test_heating_runaway():
    eff = effective_cavity(P.evolve(Delta=-1.0), FeedbackParams())
    with pytest.raises(HeatingRunaway):
        bath_occupation(eff, 0.1, 1.0, 1e-4, P.n_T)


def test_temperature_conversions():
    assert effective_temperature(0.0, 0.0, P.omega_m) == 0
    T = effective_temperature(0.0, 1e5, P.omega_m)
    assert T == pytest.approx(0.48, rel=2e-3)
    assert effective_temperature(0.08, 1e5, P.omega_m) / T == pytest.approx(1.08, rel=1e-15)
    with pytest.raises(NegativeFrequency):
        effective_temperature(-1.0, 1.0, P.omega_m)


def test_nb_rate_and_solution():
    assert nb_rate(3.0, 1e-4, 0.1, 3.0) == 0
    assert nb_rate(0.0, 1e-4, 0.005 - 1e-4, 1e6) == pytest.approx(5000)
    rate = 0.005
    assert nb_analytic(0.0, 7.0, 1e-4, rate - 1e-4, 1e6) == 7.0
    assert nb_analytic(1e6, 7.0, 1e-4, rate - 1e-4, 1e6) == pytest.approx(1e6)
    assert nb_analytic(math.log(2) / rate, 0.0, 1e-4, rate - 1e-4, 1e6) == pytest.approx(5e5)


def test_mechanical_effective_record():
    me = mechanical_effective(P, BARE)
    assert (me.Gamma_m, me.Delta_m) == pytest.approx((0.005, -0.0025), rel=1e-12)
    assert me.T == pytest.approx(CODATA.hbar * P.omega_m * (1 - 0.0025) * me.n_m / CODATA.k_B)


def test_mech_fields_marks_degenerate_points():
    f = mech_fields(P, np.array([0.0, 3.0]))
    assert np.isfinite(f["T"][0]) and np.isnan(f["T"][1])


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.5), st.floats(0, 2 * np.pi))
def test_gamma_spectral_identity(g, phi):
    fb = FeedbackParams(g_fb=g, phi=phi)
    assume(regime_classify(P, fb) <= RegimeClass.NONADIABATIC)
    eff = effective_cavity(P, fb)
    lhs = gamma_m(eff, P.G)
    rhs = P.G**2 * (spectrum_x0(1.0, eff) - spectrum_x0(-1.0, eff))
    assert abs(lhs - rhs) <= 1e-10 * abs(rhs)
