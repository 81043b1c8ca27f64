import math

import pytest
from hypothesis import given, strategies as st

from optostirling.params import (
    CODATA, FeedbackParams, PhysicalParams, PRESET_NAMES, load_preset, parse_config,
    params_from_config, thermal_occupation, validate_params,
)


def test_fig3_defaults_are_valid():
    assert validate_params(PhysicalParams(kappa1=1, kappa2=1, kappa=2, gamma=1e-4, eta_d=0.9)).ok


def test_kappa_sum_violation():
    res = validate_params(PhysicalParams(kappa1=1, kappa2=1, kappa=3))
    assert res.violations == ("kappa = kappa1+kappa2",)
    assert not res


def test_eta_d_boundary():
    assert "0 < eta_d ≤ 1" in validate_params(PhysicalParams(eta_d=0.0)).violations


def test_occupation_exact_inversion():
    omega = 1e6
    T = CODATA.hbar * omega / (CODATA.k_B * math.log(2))
    assert thermal_occupation(T, omega) == pytest.approx(1.0, rel=1e-14)


def test_occupation_room_temperature():
    n = thermal_occupation(300.0, 2 * math.pi * 1e5)
    classical = CODATA.k_B * 300.0 / (CODATA.hbar * 2 * math.pi * 1e5)
    assert n == pytest.approx(6.25e7, rel=1e-3)
    assert n == pytest.approx(classical - 0.5, rel=1e-12)


def test_occupation_vacuum_limit():
    assert thermal_occupation(1e-9, 2 * math.pi * 1e5) == 0.0


def test_occupation_rejects_nonpositive():
    with pytest.raises(ValueError):
        thermal_occupation(0.0, 1.0)


@given(st.floats(1e-3, 1e3), st.floats(1.01, 10), st.floats(1e3, 1e9))
def test_occupation_monotone(T, factor, omega):
    assert thermal_occupation(T * factor, omega) > thermal_occupation(T, omega)
    assert thermal_occupation(T, omega * factor) < thermal_occupation(T, omega)


@given(st.floats(-10, 10), st.floats(0, 100), st.floats(-5, 5))
def test_homodyne_round_trip(theta, tau, Delta):
    fb = FeedbackParams.from_homodyne(0.5, theta, tau, Delta)
    assert fb.phi == theta - Delta * tau


def test_inconsistent_phase_rejected():
    with pytest.raises(ValueError):
        FeedbackParams(g_fb=1, phi=0.3, theta_fb=1.0, tau_fb=1.0, Delta=1.0)


def test_negative_gain_rejected():
    with pytest.raises(ValueError):
        FeedbackParams(g_fb=-0.1)


def test_evolve_recomputes_derived():
    p = PhysicalParams().evolve(kappa1=0.05, kappa2=0.05, T_bath=150.0)
    assert p.kappa == pytest.approx(0.1)
    assert p.n_T == pytest.approx(thermal_occupation(150.0, p.omega_m))


def test_parse_config():
    cfg = parse_config("# header\nG = 0.2  # coupling\n\nkappa1=0.5\n")
    assert cfg == {"G": "0.2", "kappa1": "0.5"}
    p = params_from_config(cfg)
    assert (p.G, p.kappa1, p.kappa) == (0.2, 0.5, 1.5)


def test_parse_config_rejects_garbage():
    with pytest.raises(ValueError):
        parse_config("just words")


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_presets_validate(name):
    p, cfg = load_preset(name)
    assert validate_params(p).ok
    assert "cycle_window_feedback" in cfg


def test_unknown_preset():
    with pytest.raises(KeyError):
        load_preset("nope")
