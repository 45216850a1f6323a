import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgeflow.model import (
    EnergyWindow,
    GridSpec,
    ParameterError,
    PhysicalParams,
    gap_window,
    sample_disorder,
    wall_potential,
    zero_disorder,
)


def test_default_params_valid():
    p = PhysicalParams()
    assert p.problems() == []
    assert p.magnetic_length == 1.0


@pytest.mark.parametrize("kw,field", [
    ({"w": 0.6}, "w"),
    ({"B": -1.0}, "B"),
    ({"gamma": 1.5}, "gamma"),
    ({"u": 0.0}, "u"),
    ({"epsilon": 0.5}, "epsilon"),
    ({"delta": 0.45}, "delta"),
    ({"L": 0.0}, "L"),
])
def test_invalid_params_name_field(kw, field):
    with pytest.raises(ParameterError, match=rf"^{field}:|; {field}:"):
        PhysicalParams(**kw)


def test_gap_window_values():
    gap, delta = gap_window(PhysicalParams())
    assert gap.lo == pytest.approx(0.57) and gap.hi == pytest.approx(1.43)
    assert delta.lo == pytest.approx(0.95) and delta.hi == pytest.approx(1.05)
    assert delta.is_inside(gap)


@given(B=st.floats(0.5, 4.0), fw=st.floats(0.0, 0.3), fe=st.floats(0.05, 0.9),
       fd=st.floats(0.05, 0.9))
@settings(max_examples=60, deadline=None)
def test_delta_inside_gap(B, fw, fe, fd):
    w = fw * B / 2
    eps = fe * (B / 2 - w)
    d = fd * (B / 2 - w - eps)
    gap, delta = gap_window(PhysicalParams(B=B, w=w, epsilon=eps, delta=d))
    assert gap.lo < delta.lo < delta.hi < gap.hi
    assert delta.center == pytest.approx(B)


def test_window_contains_is_open():
    win = EnergyWindow(0.0, 1.0)
    assert list(win.contains([0.0, 0.5, 1.0])) == [False, True, False]
    with pytest.raises(ParameterError):
        EnergyWindow(1.0, 1.0)


def test_wall_potential():
    p = PhysicalParams(u=0.5, gamma=2.0)
    assert wall_potential(p, -3.0) == 0.0
    assert wall_potential(p, 2.0) == pytest.approx(2.0)
    np.testing.assert_allclose(wall_potential(p, np.array([-1.0, 0.0, 1.0])), [0, 0, 0.5])


def test_default_grid():
    p = PhysicalParams(L=20.0)
    g = GridSpec.default(p)
    assert g.hx == 0.25 and g.hy(p.L) == 0.25
    assert g.x_min == -12.0
    assert wall_potential(p, g.x_max) >= 3 * p.B
    assert g.check_resolution(p) == []
    assert g.x[0] == pytest.approx(g.x_min + g.hx)
    assert g.x[-1] == pytest.approx(g.x_max - g.hx)
    assert g.y(p.L)[0] == -10.0


def test_coarse_grid_rejected():
    p = PhysicalParams(L=20.0)
    g = GridSpec(-6.0, 3.0, 0.5, 16)
    with pytest.raises(ParameterError, match="hx"):
        g.check_resolution(p)
    assert len(g.check_resolution(p, strict=False)) == 2


def test_disorder_deterministic_and_supported_left():
    g = GridSpec(-3.0, 2.0, 0.25, 8)
    a = sample_disorder(7, g, 0.02)
    b = sample_disorder(7, g, 0.02)
    np.testing.assert_array_equal(a.values, b.values)
    assert np.all(a.values[g.x > 0] == 0)
    assert np.all(np.abs(a.values) <= 0.02)
    assert not np.array_equal(a.values, sample_disorder(8, g, 0.02).values)
    assert not zero_disorder(g).values.any()
    with pytest.raises(ValueError):
        a.values[0, 0] = 1.0
