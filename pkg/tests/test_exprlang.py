import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contactlab import exprlang as E
from contactlab.errors import DomainError, ExprSyntaxError, UnknownIdentifier

mpmath = pytest.importorskip("mpmath")

P0 = {"x": 0.0, "y": 0.0, "z": 0.0}


def ev(text, **pt):
    return E.evaluate(E.parse(text), {**P0, **pt})


def test_identity_case():
    assert ev("1 - x^2 - y^2", z=5.0) == 1.0


def test_sinh_against_high_precision():
    mpmath.mp.dps = 30
    assert ev("sinh(2*0.5)") == pytest.approx(float(mpmath.sinh(1)), rel=1e-15)


def test_mapping_torus_eigenvalue():
    mu = (3 + math.sqrt(5)) / 2
    e = E.parse("exp(r*t)", ("a", "b", "t"), {"r": math.log(mu)})
    assert E.evaluate(e, {"a": 0, "b": 0, "t": 1.0}) == pytest.approx(mu, rel=1e-14)
    assert np.isclose(np.linalg.eigvalsh(np.array([[2.0, 1], [1, 1]])).max(), mu)


def test_unit_circle_zero():
    assert ev("1 - (x^2 + y^2)", x=0.6, y=0.8) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("text,expected", [
    ("2^3^2", 64.0),               # same precedence associates left
    ("-2^2", -4.0),               # ^ binds tighter than unary minus
    ("8/4/2", 1.0),               # left associative
    ("1-2-3", -4.0),
    ("2+3*4", 14.0),
    ("(2+3)*4", 20.0),
    ("-(1+2)*3", -9.0),
])
def test_precedence(text, expected):
    assert ev(text) == expected


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifier):
        E.parse("y*dx")
    with pytest.raises(UnknownIdentifier):
        E.parse("a + 1")  # Cartesian chart has no ``a``


@pytest.mark.parametrize("text,offset", [("2x", 1), ("1 +", 3), ("sin(x", 5), ("(1))", 3)])
def test_syntax_error_offsets(text, offset):
    with pytest.raises(ExprSyntaxError) as info:
        E.parse(text)
    assert info.value.offset == offset


@pytest.mark.parametrize("text,pt", [("ln(-1)", {}), ("1/x", {"x": 0.0}), ("sqrt(x)", {"x": -1.0}),
                                     ("ln(x)", {"x": 0.0})])
def test_domain_errors(text, pt):
    with pytest.raises(DomainError):
        ev(text, **pt)


def test_domain_error_in_compiled_path():
    fn = E.compile_exprs([E.parse("ln(x)")], E.CARTESIAN_VARS)
    with pytest.raises(DomainError):
        fn(np.array([1.0, -1.0]), np.zeros(2), np.zeros(2))


def test_differentiate_examples():
    d = E.differentiate(E.parse("1 - x^2 - y^2"), "y")
    for y in (-1.0, 0.3, 2.0):
        assert E.evaluate(d, {**P0, "y": y, "x": 0.7}) == -2 * y
    d = E.differentiate(E.parse("cosh(2*z)"), "z")
    for z in (-0.4, 0.0, 1.1):
        assert E.evaluate(d, {**P0, "z": z}) == pytest.approx(2 * math.sinh(2 * z), rel=1e-15)


def test_constants_substituted():
    e = E.parse("sin(2*pi*x)", constants={"pi": math.pi})
    assert E.evaluate(e, {**P0, "x": 0.25}) == pytest.approx(1.0)
    with pytest.raises(UnknownIdentifier):
        E.parse("pi")


# -- random expressions --------------------------------------------------------------

LEAVES = st.one_of(st.sampled_from(["x", "y", "z"]),
                   st.floats(-3, 3, allow_nan=False).map(lambda v: repr(round(v, 3))))


def _combine(children):
    unary = st.sampled_from(["sin", "cos", "tanh", "asinh"]).flatmap(
        lambda f: children.map(lambda c: f"{f}({c})"))
    bounded = st.sampled_from(["exp", "cosh", "sinh"]).flatmap(
        lambda f: children.map(lambda c: f"{f}(0.3*sin({c}))"))
    safe_div = st.tuples(children, children).map(lambda p: f"({p[0]})/(2+cos({p[1]}))")
    binary = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(
        lambda p: f"({p[0]}){p[1]}({p[2]})")
    power = children.map(lambda c: f"({c})^2")
    logs = children.map(lambda c: f"ln(1+({c})^2)")
    roots = children.map(lambda c: f"sqrt(2+sin({c}))")
    return st.one_of(unary, bounded, safe_div, binary, power, logs, roots)


EXPRS = st.recursive(LEAVES, _combine, max_leaves=8)
POINTS = st.tuples(*[st.floats(-1.5, 1.5) for _ in range(3)])


@settings(max_examples=100, deadline=None)
@given(EXPRS, POINTS)
def test_round_trip_exact(text, p):
    e = E.parse(text)
    e2 = E.parse(E.to_source(e))
    pt = dict(zip("xyz", p))
    a, b = E.evaluate(e, pt), E.evaluate(e2, pt)
    assert a == b or (math.isnan(a) and math.isnan(b))


@settings(max_examples=100, deadline=None)
@given(EXPRS, POINTS, st.sampled_from("xyz"))
def test_derivative_matches_finite_differences(text, p, var):
    e = E.parse(text)
    d = E.differentiate(e, var)
    pt = dict(zip("xyz", p))
    h = 1e-5
    up, dn = dict(pt), dict(pt)
    up[var] += h
    dn[var] -= h
    fd = (E.evaluate(e, up) - E.evaluate(e, dn)) / (2 * h)
    exact = E.evaluate(d, pt)
    assert abs(exact - fd) < 1e-6 * (1 + abs(exact)) + 1e-8 * (1 + abs(E.evaluate(e, pt)))


@settings(max_examples=60, deadline=None)
@given(EXPRS, EXPRS, POINTS)
def test_derivative_linear_and_leibniz(t1, t2, p):
    a, b = E.parse(t1), E.parse(t2)
    pt = dict(zip("xyz", p))
    d = lambda e: E.evaluate(E.differentiate(e, "x"), pt)  # noqa: E731
    v = lambda e: E.evaluate(e, pt)  # noqa: E731
    assert d(a + b) == pytest.approx(d(a) + d(b), rel=1e-12, abs=1e-12)
    assert d(a * b) == pytest.approx(d(a) * v(b) + v(a) * d(b), rel=1e-10, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(EXPRS)
def test_compiled_matches_scalar(text):
    e = E.parse(text)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1.5, 1.5, (3, 20))
    vals = E.compile_exprs([e], E.CARTESIAN_VARS)(*pts)[0]
    ref = [E.evaluate(e, dict(zip("xyz", c))) for c in pts.T]
    np.testing.assert_allclose(vals, ref, rtol=1e-13, atol=1e-13)
