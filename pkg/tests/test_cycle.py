import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optostirling.cycle import (
    STROKES, Schedule, StirlingCycle, build_cycle, constant_schedule, make_schedule,
    refine_corner, trace_isoline,
)
from optostirling.errors import EmptyLevel, NoClosedLoop, NoConvergence
from optostirling.landscape import GridSpec, LandscapeMap
from optostirling.params import PhysicalParams

TOL = 1e-6
UNIT = GridSpec("x", "y", 0.0, 1.0, 0.0, 1.0, 21, 21)


def linear_fields(x, y):
    return {"T": x, "Delta_m": y, "Gamma_m": 0.01 + 0 * x, "n_m": 1e3 * (1 + x), "kappa_eff": 1 + 0 * x}


@pytest.fixture(scope="module")
def unit_map():
    return LandscapeMap.from_function(UNIT, linear_fields)


@pytest.fixture(scope="module")
def rectangle(unit_map):
    return build_cycle(unit_map, 0.7, 0.3, 0.6, 0.2, TOL)


def test_constant_field_is_empty():
    m = LandscapeMap.from_function(UNIT, lambda x, y: {"T": 0.5 + 0 * x})
    with pytest.raises(EmptyLevel):
        trace_isoline(m, "Temperature", 0.5)


def test_linear_isoline(unit_map):
    (line,) = trace_isoline(unit_map, "OpticalSpring", 0.5, TOL)
    assert np.all(np.abs(line.points[:, 1] - 0.5) <= TOL * 0.5)
    assert line.points[:, 0].min() == pytest.approx(0.0)
    assert line.points[:, 0].max() == pytest.approx(1.0)
    assert np.all(np.diff(line.points, axis=0).max(axis=1) <= 2 / 20 + 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.95))
def test_isoline_vertices_on_level(level):
    m = LandscapeMap.from_function(UNIT, lambda x, y: {"T": x**2 + y})
    for line in trace_isoline(m, "T", level, TOL):
        f = line.points[:, 0] ** 2 + line.points[:, 1]
        assert np.all(np.abs(f - level) <= TOL * level)


def test_refine_corner_linear(unit_map):
    u = refine_corner(unit_map, (0.32, 0.68), 0.3, 0.7, TOL)
    assert u == pytest.approx([0.3, 0.7], abs=TOL)


def test_refine_corner_far_seed(unit_map):
    with pytest.raises(NoConvergence):
        refine_corner(unit_map, (0.9, 0.1), 0.3, 0.7, TOL)


def test_rectangle_cycle(rectangle):
    expected = [[0.7, 0.6], [0.7, 0.2], [0.3, 0.2], [0.3, 0.6]]
    assert rectangle.corners == pytest.approx(np.array(expected), abs=TOL)
    assert [s.kind for s in rectangle.strokes] == list(STROKES)
    assert rectangle.closure_gap() <= TOL
    for k, s in enumerate(rectangle.strokes):
        assert s.points[0] == pytest.approx(rectangle.corners[k], abs=TOL)
        assert s.points[-1] == pytest.approx(rectangle.corners[(k + 1) % 4], abs=TOL)


def test_unreachable_levels(unit_map):
    with pytest.raises(NoClosedLoop):
        build_cycle(unit_map, 1.5, 1.2, 0.6, 0.2)


def test_level_order_checked(unit_map):
    with pytest.raises(ValueError):
        build_cycle(unit_map, 0.3, 0.7, 0.6, 0.2)


def test_cycle_json_round_trip(tmp_path, rectangle):
    back = StirlingCycle.from_json(rectangle.to_json(tmp_path / "c.json"))
    assert np.array_equal(back.corners, rectangle.corners)
    assert back.levels == rectangle.levels


def test_rectangle_schedule(rectangle):
    s = make_schedule(rectangle, PhysicalParams(), 1000.0, 0.5, 50, TOL)
    assert s.stroke_times() == pytest.approx([(0, 250), (250, 500), (500, 750), (750, 1000)])
    for a, b in zip(s.bounds, s.bounds[1:]):
        speed = np.diff(s.s[a:b + 1]) / np.diff(s.t[a:b + 1])
        assert speed == pytest.approx(np.full(b - a, speed[0]), rel=1e-9)
    assert s.T[s.bounds[0]:s.bounds[1] + 1] == pytest.approx(0.7, rel=TOL)
    assert s.Delta_m[s.bounds[1]:s.bounds[2] + 1] == pytest.approx(0.2, rel=TOL)


def test_isothermal_fraction(rectangle):
    s = make_schedule(rectangle, PhysicalParams(), 1000.0, 0.9, 20)
    (a0, a1), (b0, b1), (c0, c1), (d0, d1) = s.stroke_times()
    assert (a1 - a0) + (c1 - c0) == pytest.approx(900.0)
    assert s.retime(r_T=0.5).stroke_times()[0] == pytest.approx((0, 250))


def test_schedule_reproducible(rectangle):
    a = make_schedule(rectangle, PhysicalParams(), 500.0, 0.4, 30)
    b = make_schedule(rectangle, PhysicalParams(), 500.0, 0.4, 30)
    assert np.array_equal(a.t, b.t) and np.array_equal(a.x, b.x)


def test_schedule_json_round_trip(tmp_path, rectangle):
    s = make_schedule(rectangle, PhysicalParams(), 500.0, 0.4, 10)
    back = Schedule.from_json(s.to_json(tmp_path / "s.json"))
    assert np.array_equal(back.t, s.t) and back.bounds == s.bounds


def test_schedule_arguments(rectangle):
    with pytest.raises(ValueError):
        make_schedule(rectangle, PhysicalParams(), 0.0)
    with pytest.raises(ValueError):
        make_schedule(rectangle, PhysicalParams(), 1.0, r_T=1.0)
    with pytest.raises(ValueError):
        make_schedule(rectangle, PhysicalParams(), 1.0, n_samples=3)


def test_constant_schedule():
    s = constant_schedule(10.0, 1e-3, 0.1, 5.0)
    assert s.n_strokes == 1 and s.t[-1] == 10.0


def test_fig3_isotherm_in_window(fig3_run):
    lines = trace_isoline(fig3_run.landscape, "Temperature", 0.5, TOL)
    assert lines


def test_fig3_hot_plateau(fig3_run):
    s = fig3_run.schedule
    T = s.T[s.bounds[0]:s.bounds[1] + 1]
    assert np.all(np.abs(T - 0.5) <= TOL * 0.5)
    D = s.Delta_m[s.bounds[1]:s.bounds[2] + 1]
    assert np.all(np.abs(D + 0.08) <= TOL * 0.08)


def test_fig3_corner(fig3_run):
    c = fig3_run.cycle
    f = c.evaluate(*c.corners[0], regime=True)
    assert abs(f["T"] - 0.5) <= TOL * 0.5 and abs(f["Delta_m"] - 0.08) <= TOL * 0.08
    assert int(f["regime"]) == 0
    assert c.closure_gap() <= TOL


def test_hairpin_bridged_through_excluded_cells():
    # the cells around the tip touch a non-valid node, but the level set itself is valid
    def fields(x, y):
        return {"T": y + 4 * (x - 0.5) ** 2}

    def regime(x, y):
        near_tip = (np.abs(x - 0.5) < 0.12) & (y + 4 * (x - 0.5) ** 2 > 0.5 + 1e-3)
        return np.where(near_tip, 1, 0)

    m = LandscapeMap.from_function(UNIT, fields, regime)
    assert len(trace_isoline(m, "T", 0.5, TOL, bridge_cells=0)) == 2
    (line,) = trace_isoline(m, "T", 0.5, TOL)
    f = line.points[:, 1] + 4 * (line.points[:, 0] - 0.5) ** 2
    assert np.all(np.abs(f - 0.5) <= TOL * 0.5)
    assert np.max(line.points[:, 1]) == pytest.approx(0.5, abs=1e-3)
