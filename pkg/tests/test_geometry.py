import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import simpson

from contactlab.errors import DimensionError, InputError
from contactlab.geometry import (Box, Form, Grid, MappingTorus, SampledForm, Termination, Torus3,
                                 VectorField, evaluate_on, exterior_derivative, flow_batch,
                                 flow_trajectory, frobenius_residual, gluing_defect,
                                 interior_product, lie_derivative_oneform, linearized_flow,
                                 sampled_exterior_derivative, top_coefficient, wedge)
from contactlab.contact_pair import sample_scalar

from conftest import SLAB, anosov_pair

RNG_PTS = np.random.default_rng(7).uniform(-0.9, 0.9, (40, 3))


def vals(form, pts=RNG_PTS):
    return form.sample(pts)


def one(texts, chart=SLAB, consts=None):
    return Form.from_strings(1, texts, chart, consts)


# -- charts ----------------------------------------------------------------------------

def test_mapping_torus_hyperbolic():
    ch = MappingTorus()
    mu = (3 + math.sqrt(5)) / 2
    assert ch.mu == pytest.approx(mu, rel=1e-14)
    c = ch.constants()
    du, ds = np.array([c["du1"], c["du2"]]), np.array([c["ds1"], c["ds2"]])
    A = np.array([[2, 1], [1, 1]])
    # eigen-covectors: du A = mu du, ds A = ds / mu
    np.testing.assert_allclose(du @ A, mu * du, atol=1e-14)
    np.testing.assert_allclose(ds @ A, ds / mu, atol=1e-14)


@pytest.mark.parametrize("A", [[[1, 1], [0, 1]], [[2, 1], [1, 2]], [[1, 0], [0, 1]]])
def test_mapping_torus_rejects_bad_monodromy(A):
    with pytest.raises(InputError):
        MappingTorus(A)


def test_wrap_idempotent():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-3, 3, (200, 3))
    for ch in (MappingTorus(), Torus3((1.0, 2.0, 0.5))):
        w, _ = ch.wrap(pts)
        w2, k2 = ch.wrap(w)
        np.testing.assert_allclose(w2, w, atol=1e-12)
        assert not np.any(k2)


def test_box_rejects_bad_bounds():
    with pytest.raises(InputError):
        Box(((0, 1), (1, 0), (0, 1)))


def test_grid_order_x_fastest():
    g = Grid(SLAB, 3)
    assert g.points[1, 0] > g.points[0, 0] and g.points[1, 1] == g.points[0, 1]
    cube = g.cube(g.points[:, 0])
    assert np.all(np.diff(cube[0, 0, :]) > 0)


# -- wedge, d, interior ------------------------------------------------------------------

def test_wedge_basis():
    dx, dy = one(["1", "0", "0"]), one(["0", "1", "0"])
    w = wedge(dx, dy)
    assert w.degree == 2
    np.testing.assert_array_equal(vals(w), np.tile([1.0, 0, 0], (len(RNG_PTS), 1)))


def test_wedge_saddle_example():
    am, ap = one(["-y", "0", "-1"]), one(["-y", "0", "1"])
    w = vals(wedge(am, ap))
    y = RNG_PTS[:, 1]
    # 2y dz^dx = -2y dx^dz
    np.testing.assert_allclose(w, np.column_stack([0 * y, -2 * y, 0 * y]), atol=1e-15)


def test_wedge_dimension_error():
    two = wedge(one(["1", "0", "0"]), one(["0", "1", "0"]))
    with pytest.raises(DimensionError):
        wedge(two, two)


def test_d_examples():
    d = vals(exterior_derivative(one(["y", "0", "0"])))
    np.testing.assert_array_equal(d, np.tile([-1.0, 0, 0], (len(RNG_PTS), 1)))
    alpha = one(["x", "y", "1-x^2-y^2"])
    d = vals(exterior_derivative(alpha))
    x, y = RNG_PTS[:, 0], RNG_PTS[:, 1]
    # (-2x dx - 2y dy) ^ dz
    np.testing.assert_allclose(d, np.column_stack([0 * x, -2 * x, -2 * y]), atol=1e-14)


def test_interior_examples():
    vol = Form.from_strings(3, ["1"], SLAB)
    dz = VectorField.from_strings(["0", "0", "1"], SLAB)
    np.testing.assert_array_equal(vals(interior_product(dz, vol))[0], [1.0, 0, 0])
    X = VectorField.from_strings(["0", "2*y", "0"], SLAB)
    got = vals(interior_product(X, vol))
    np.testing.assert_allclose(got[:, 1], -2 * RNG_PTS[:, 1], atol=1e-15)
    np.testing.assert_allclose(got[:, [0, 2]], 0, atol=0)
    v = VectorField.from_strings(["sin(y)", "x*z", "1"], SLAB)
    for a in (vol, wedge(one(["x", "y^2", "z"]), one(["cos(x)", "1", "0"]))):
        assert np.max(np.abs(vals(interior_product(v, interior_product(v, a))))) < 1e-14


def test_lie_derivative_examples():
    X = VectorField.from_strings(["0", "2*y", "0"], SLAB)
    got = vals(lie_derivative_oneform(X, one(["-y", "0", "1"])))
    y = RNG_PTS[:, 1]
    np.testing.assert_allclose(got, np.column_stack([-2 * y, 0 * y, 0 * y]), atol=1e-15)
    ch = MappingTorus()
    Xt = VectorField.from_strings(["0", "0", "1/r"], ch)
    a = Form.from_strings(1, ["exp(r*t)*du1", "exp(r*t)*du2", "0"], ch)
    pts = np.random.default_rng(2).uniform(0, 1, (20, 3))
    np.testing.assert_allclose(lie_derivative_oneform(Xt, a).sample(pts), a.sample(pts), atol=1e-13)


def test_lie_of_exact_is_exact():
    v = VectorField.from_strings(["sin(y)", "x*z", "cosh(x)"], SLAB)
    f = Form.from_strings(0, ["x*y + exp(z)"], SLAB)
    lhs = lie_derivative_oneform(v, exterior_derivative(f))
    rhs = exterior_derivative(Form(0, (v.apply(f.coeffs[0]),), SLAB))
    np.testing.assert_allclose(vals(lhs), vals(rhs), atol=1e-12)


def test_frobenius_examples():
    dz = one(["0", "0", "1"])
    assert is_zero(top_coefficient(frobenius_residual(dz)))
    alpha = one(["x", "y", "1-x^2-y^2"])
    assert np.max(np.abs(sample_scalar(top_coefficient(frobenius_residual(alpha)), SLAB, RNG_PTS))) < 1e-14
    contact = one(["-y", "0", "1"])
    np.testing.assert_allclose(sample_scalar(top_coefficient(frobenius_residual(contact)), SLAB, RNG_PTS), 1.0)


def is_zero(e):
    return np.all(sample_scalar(e, SLAB, RNG_PTS) == 0)


def test_gluing_invariance():
    for form in (anosov_pair(0.3, 0.2).alpha_plus, anosov_pair(0.3, 0.2).alpha_minus):
        assert gluing_defect(form) < 1e-10
    ch = MappingTorus()
    assert gluing_defect(Form.from_strings(1, ["du1", "du2", "0"], ch)) > 0.1


def test_cartan_against_flow_pullback():
    v = VectorField.from_strings(["0.3*sin(y)", "0.2*x*z", "0.5*cosh(x)"], SLAB)
    a = one(["y*z", "sin(x)", "x^2+y"])
    p = np.array([[0.1, -0.2, 0.05], [0.3, 0.2, -0.4]])
    eps = 1e-3
    fwd = linearized_flow(v, p, eps, tol=1e-13)
    bwd = linearized_flow(v, p, -eps, tol=1e-13)
    pull = lambda lf: np.einsum("nji,nj->ni", lf.M, a.sample(lf.end))  # noqa: E731
    fd = (pull(fwd) - pull(bwd)) / (2 * eps)
    np.testing.assert_allclose(fd, lie_derivative_oneform(v, a).sample(p), atol=1e-4)


def test_sampled_d_second_order():
    ch = Torus3((2 * math.pi,) * 3)
    a = Form.from_strings(1, ["sin(y)*cos(z)", "cos(x+z)", "sin(x)*sin(y)"], ch)
    errs = []
    for n in (16, 32):
        g = Grid(ch, n)
        num = sampled_exterior_derivative(SampledForm.from_form(a, g)).values
        errs.append(np.max(np.abs(num - exterior_derivative(a).sample(g.points))))
        dd = sampled_exterior_derivative(sampled_exterior_derivative(SampledForm.from_form(a, g)))
        assert np.max(np.abs(dd.values)) < 1e-10  # centred differences commute
    assert errs[1] < errs[0] / 3.5


# -- flows ---------------------------------------------------------------------------------

def test_zero_field_flow():
    v = VectorField.from_strings(["0", "0", "0"], SLAB)
    tr = flow_trajectory(v, [0.1, 0.2, 0.3], 1.0)
    np.testing.assert_array_equal(tr.end, [0.1, 0.2, 0.3])
    np.testing.assert_array_equal(linearized_flow(v, [0.1, 0.2, 0.3], 1.0).M, np.eye(3))


def test_linear_flow_closed_form():
    big = Box(((-10, 10),) * 3)
    v = VectorField.from_strings(["0", "2*y", "0"], big)
    tr = flow_trajectory(v, [0, 1, 0], 1.0, tol=1e-12)
    assert tr.reason == Termination.HORIZON
    np.testing.assert_allclose(tr.end, [0, math.e ** 2, 0], rtol=1e-9)
    assert np.all(np.diff(tr.times) > 0)
    assert np.all(tr.errors <= tr.tol)
    lf = linearized_flow(v, [0, 1, 0], 1.0)
    np.testing.assert_allclose(lf.M, np.diag([1, math.e ** 2, 1]), rtol=1e-9, atol=1e-12)


def test_suspension_flow_advances_one_period():
    ch = MappingTorus()
    v = VectorField.from_strings(["0", "0", "1/r"], ch)
    p = np.array([0.3, 0.6, 0.0])
    tr = flow_trajectory(v, p, ch.rate, tol=1e-12)
    np.testing.assert_allclose(tr.end, p + [0, 0, 1], atol=1e-10)
    # (v, 1) is identified with (A v mod 1, 0)
    w, k = ch.wrap(p + [0, 0, 1])
    np.testing.assert_allclose(w, [*np.mod(ch.A @ p[:2], 1.0), 0.0], atol=1e-12)
    assert k == 1


def test_liouville_formula():
    ch = Torus3((2 * math.pi,) * 3)
    v = VectorField.from_strings(["1+0.5*sin(y)", "cos(x)*sin(z)", "0.3*sin(x+z)+0.7"], ch)
    p, T = np.array([0.4, 1.1, 2.0]), 3.0
    lf = linearized_flow(v, p, T, tol=1e-12)
    fb = flow_batch(v, p[None], T, 1e-3, tol=1e-12)
    div = sample_scalar(v.divergence(), ch, fb.states[:, 0])
    expected = math.exp(simpson(div, x=fb.times))
    assert np.linalg.det(lf.M_cover) == pytest.approx(expected, rel=1e-6)


def test_termination_reasons():
    v = VectorField.from_strings(["0", "2*y", "0"], SLAB)
    assert flow_trajectory(v, [0, 0.5, 0], 5.0).reason == Termination.ESCAPED
    huge = Box(((-1e12, 1e12),) * 3)
    blow = VectorField.from_strings(["0", "y^2", "0"], huge)
    assert flow_trajectory(blow, [0, 1, 0], 2.0).reason == Termination.BLOWUP
    sink = VectorField.from_strings(["-x", "-y", "-z"], Box(((-2, 2),) * 3))
    assert flow_trajectory(sink, [1, 1, 1], 100.0).reason == Termination.CONVERGED


# -- properties ------------------------------------------------------------------------------

COEF = st.sampled_from(["x", "y", "z", "x*y", "sin(z)", "cos(x+y)", "exp(0.3*z)", "y^2-x",
                        "tanh(x*z)", "sinh(y)", "1", "0", "x*cos(y)", "asinh(z+x)"])
ONE = st.lists(COEF, min_size=3, max_size=3)
SCALE = st.floats(-2, 2)


def form_from(texts, scale=1.0, deg=1):
    return Form.from_strings(deg, [f"({scale})*({t})" for t in texts], SLAB)


@settings(max_examples=60, deadline=None)
@given(ONE, SCALE)
def test_d_squared_zero_one_forms(texts, c):
    dd = exterior_derivative(exterior_derivative(form_from(texts, c)))
    assert np.max(np.abs(vals(dd))) < 1e-12


@settings(max_examples=60, deadline=None)
@given(COEF)
def test_d_squared_zero_functions(text):
    f = Form.from_strings(0, [text], SLAB)
    assert np.max(np.abs(vals(exterior_derivative(exterior_derivative(f))))) < 1e-12


@settings(max_examples=60, deadline=None)
@given(ONE, ONE, ONE)
def test_wedge_graded_commutative(t1, t2, t3):
    a, b = form_from(t1), form_from(t2)
    np.testing.assert_array_equal(vals(wedge(a, b)), -vals(wedge(b, a)))
    assert np.all(vals(wedge(a, a)) == 0)
    c2 = form_from(t3, deg=2)
    np.testing.assert_allclose(vals(wedge(a, c2)), vals(wedge(c2, a)), rtol=0, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(ONE, ONE)
def test_leibniz_rule_for_d(t1, t2):
    a, b = form_from(t1), form_from(t2)
    lhs = exterior_derivative(wedge(a, b))
    rhs = wedge(exterior_derivative(a), b) - wedge(a, exterior_derivative(b))
    np.testing.assert_allclose(vals(lhs), vals(rhs), atol=1e-11)


@settings(max_examples=50, deadline=None)
@given(ONE, ONE)
def test_cartan_formula_identity(tv, ta):
    v = VectorField.from_strings(tv, SLAB)
    a = form_from(ta)
    lie = lie_derivative_oneform(v, a)
    cartan = interior_product(v, exterior_derivative(a)) + exterior_derivative(
        Form(0, (evaluate_on(a, v),), SLAB))
    np.testing.assert_allclose(vals(lie), vals(cartan), atol=1e-11)
