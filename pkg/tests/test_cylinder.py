import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from contactlab.cylinder import (CylinderField, circle_foliation_approx, closed_orbits, closed_transversal,
                                 euler_endpoint, kneser_interval, return_map)
from contactlab.errors import BandInvalid, InputError

from conftest import PI

SINE = CylinderField.from_expr("-sin(2*pi*x)", PI)


def ivp_endpoint(F, x0):
    sol = solve_ivp(lambda t, y: F(y, np.full_like(y, t)), (0, 1), [x0], rtol=1e-12, atol=1e-13,
                    method="DOP853")
    return float(sol.y[0, -1])


def assert_transversal(F, loop):
    """Independent re-check: closed loop, ``sign (h' - F(h, t)) > 0`` from a spline derivative."""
    assert abs(loop.h[-1] - loop.h[0]) < 1e-9
    dh = CubicSpline(loop.t, loop.h)(loop.t, 1)
    m = loop.sign * (dh - F(loop.h, loop.t))
    assert np.all(m > 0)
    return float(m.min())


# -- return map ----------------------------------------------------------------------------

def test_return_map_trivial():
    xs = np.linspace(-1, 1, 9)
    np.testing.assert_allclose(return_map(CylinderField.constant(0.0), xs).P, xs, atol=1e-14)
    np.testing.assert_allclose(return_map(CylinderField.constant(0.3), xs).P, xs + 0.3, atol=1e-12)


def test_return_map_vs_reference_integrator():
    xs = np.linspace(-0.9, 0.9, 13)
    rm = return_map(SINE, xs)
    ref = np.array([ivp_endpoint(SINE, x) for x in xs])
    np.testing.assert_allclose(rm.P, ref, atol=1e-8)
    assert rm.order_preserved


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 2))
def test_order_preservation(a, b, k):
    F = CylinderField.from_expr(f"({a})*sin(2*pi*x)+({b})*cos(2*pi*t)*x+({k})*sin(x*t)", PI)
    assert return_map(F, np.linspace(-1, 1, 41)).order_preserved


# -- closed tangent loops ------------------------------------------------------------------

def test_closed_orbits_sine():
    loops = closed_orbits(SINE, (-1, 1))
    np.testing.assert_allclose([lp.x0 for lp in loops], [-1, -0.5, 0, 0.5, 1], atol=1e-8)
    for lp in loops:
        assert lp.residual < 1e-10
        np.testing.assert_allclose(lp.h, lp.x0, atol=1e-8)


def test_closed_orbits_brute_force_roots():
    F = CylinderField.from_expr("-sin(2*pi*x)+0.3*cos(2*pi*t)", PI)
    loops = closed_orbits(F, (-0.9, 0.9))
    xs = np.linspace(-0.9, 0.9, 181)
    d = np.array([ivp_endpoint(F, x) - x for x in xs])
    assert len(loops) == int(np.sum(np.sign(d[1:]) != np.sign(d[:-1])))
    for lp in loops:
        assert abs(ivp_endpoint(F, lp.x0) - lp.x0) < 1e-9


def test_closed_orbits_trivial():
    assert closed_orbits(CylinderField.constant(0.4)) == []
    loops = closed_orbits(CylinderField.constant(0.0), n=11)
    np.testing.assert_allclose([lp.x0 for lp in loops], np.linspace(-1, 1, 11))


def test_orbit_ops_need_lipschitz():
    rough = CylinderField(lambda x, t: np.sqrt(np.abs(x)), 1.0)
    with pytest.raises(InputError):
        closed_orbits(rough)
    with pytest.raises(InputError):
        closed_transversal(rough)


# -- Kneser interval -----------------------------------------------------------------------

def test_kneser_lipschitz_collapses():
    k = kneser_interval(SINE, 0.2)
    P = ivp_endpoint(SINE, 0.2)
    bound = 2 * 2.0 ** -24 * np.exp(2 * np.pi)
    assert k.lower <= P + 1e-9 and P - 1e-9 <= k.upper
    assert k.upper - k.lower <= bound
    assert np.all(np.diff(k.history[:, 1]) >= -1e-12) and np.all(np.diff(k.history[:, 2]) <= 1e-12)


def test_kneser_zero_field():
    k = kneser_interval(CylinderField.constant(0.0), 0.7)
    assert k.lower == pytest.approx(0.7, abs=1e-6) and k.upper == pytest.approx(0.7, abs=1e-6)


def test_kneser_non_unique_field():
    # y' = 3|y|^(2/3) through 0: the extremal solutions are 0 and t^3
    F = CylinderField(lambda y, t: np.where(np.abs(y) <= 2, 3 * np.abs(y) ** (2 / 3), 3 * 2 ** (2 / 3)),
                      3 * 2 ** (2 / 3))
    k = kneser_interval(F, 0.0)
    assert k.lower == pytest.approx(0.0, abs=1e-3) and k.upper == pytest.approx(1.0, abs=1e-3)
    # any fixed-step Euler solution lies in the funnel
    for x0 in (0.0, 1e-9):
        e = euler_endpoint(F, x0)
        assert k.lower - 1e-9 <= e <= k.upper + 1e-9


def test_kneser_brackets_euler():
    F = CylinderField.from_expr("-sin(2*pi*x)+cos(2*pi*t)", PI)
    for x0 in (-0.3, 0.45):
        k = kneser_interval(F, x0, n_max=16)
        e = euler_endpoint(F, x0, steps=2000)
        assert abs(e - ivp_endpoint(F, x0)) < 1e-3
        assert k.lower - 1e-3 <= e <= k.upper + 1e-3


# -- closed transversals -------------------------------------------------------------------

@pytest.mark.parametrize("c", [0.3, -0.7])
def test_transversal_constant_field(c):
    F = CylinderField.constant(c)
    loop = closed_transversal(F)
    assert loop.margin == pytest.approx(abs(c), abs=1e-9)
    assert np.ptp(loop.h) == 0.0
    assert assert_transversal(F, loop) == pytest.approx(abs(c), abs=1e-9)


def test_transversal_sine_band():
    loop = closed_transversal(SINE, (0.0, 0.5))
    assert loop.margin > 0 and 0.0 <= min(loop.band) and max(loop.band) <= 0.5
    assert np.all((loop.h > 0) & (loop.h < 0.5))
    assert_transversal(SINE, loop)


@pytest.mark.parametrize("expr,rng", [("0.1+cos(2*pi*t)", (-1.0, 1.0)),
                                      ("-0.2*sin(2*pi*x)+cos(2*pi*t)", (0.05, 0.45))])
def test_transversal_bump_closing(expr, rng):
    F = CylinderField.from_expr(expr, PI)
    loop = closed_transversal(F, rng)
    assert loop.N is not None and loop.closing_error < 1e-9
    m = assert_transversal(F, loop)
    assert m == pytest.approx(loop.margin, rel=1e-2)


def test_transversal_none_for_zero_field():
    assert closed_transversal(CylinderField.constant(0.0)) is None


# -- circle foliation ----------------------------------------------------------------------

def test_circle_foliation_small_sine():
    F = CylinderField.from_expr("-0.05*sin(2*pi*x)", PI)
    cf = circle_foliation_approx(F, (-0.5, 0.5))
    assert cf.residual < 1e-6 and cf.distance <= 0.06 and cf.monotone
    # independent return map of the corrected field
    for x in (-0.3, 0.05, 0.4):
        assert abs(ivp_endpoint(cf.F_tilde, x) - x) < 1e-6


def test_circle_foliation_trivial_band():
    F = CylinderField.from_expr("0.2*sin(2*pi*t)", PI)
    cf = circle_foliation_approx(F, (-0.5, 0.5))
    assert cf.distance == 0.0 and cf.residual < 1e-8 and cf.F_tilde is F.F


def test_circle_foliation_band_invalid():
    with pytest.raises(BandInvalid):
        circle_foliation_approx(SINE, (0.1, 0.5))
