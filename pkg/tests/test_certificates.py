import numpy as np
import pytest

from contactlab.certificates import (CertificateKind, hypertaut_certificate, plane_margin,
                                     strong_tightness_certificate, taut_certificate,
                                     volume_preserving_transversal)
from contactlab.contact_pair import ContactPair
from contactlab.errors import NotClosed, NotDivergenceFree, NotDominating, NotTransverse
from contactlab.geometry import Box, Form, Grid, VectorField, wedge

from conftest import SLAB, saddle_pair

G5 = Grid(SLAB, 5)


def two_form(chart, texts):
    return Form.from_strings(2, texts, chart)


def brute_margin(a: Form, omega: Form, pts):
    """``omega(v1, a x v1)`` for a unit ``v1`` orthogonal to ``a`` (Euclidean chart metric)."""
    av = a.sample(pts)
    w = omega.sample(pts)
    out = []
    for n, (x, y, z) in zip(av, w):
        e = np.eye(3)[np.argmin(np.abs(n))]
        v1 = np.cross(n, e)
        v1 /= np.linalg.norm(v1)
        v2 = np.cross(n, v1) / np.linalg.norm(n)
        W = np.array([[0, x, y], [-x, 0, z], [-y, -z, 0]])
        out.append(v1 @ W @ v2)
    return np.array(out)


# -- taut ----------------------------------------------------------------------------------

def test_taut_trivial():
    dz = Form.from_strings(1, ["0", "0", "1"], SLAB)
    cert = taut_certificate(two_form(SLAB, ["1", "0", "0"]), dz, G5)
    assert cert.kind == CertificateKind.TAUT and cert.verdict and cert.margin == pytest.approx(1.0)


def test_taut_not_closed():
    dz = Form.from_strings(1, ["0", "0", "1"], SLAB)
    with pytest.raises(NotClosed):
        taut_certificate(two_form(SLAB, ["0", "0", "x"]), dz, G5)


def test_taut_anosov_pass_and_negative_control(torus, torus_grid):
    eta_u = Form.from_strings(1, ["exp(-r*t)*ds1", "exp(-r*t)*ds2", "0"], torus)
    # e^{rt} dt^du is closed and positive on ker ds; du^ds vanishes there
    good = two_form(torus, ["0", "-exp(r*t)*du1", "-exp(r*t)*du2"])
    cert = taut_certificate(good, eta_u, torus_grid)
    assert cert.verdict and cert.margin > 0
    c = torus.constants()
    dudx = c["du1"] * c["ds2"] - c["du2"] * c["ds1"]
    bad = two_form(torus, [repr(dudx), "0", "0"])
    with pytest.raises(NotDominating) as info:
        taut_certificate(bad, eta_u, torus_grid)
    assert abs(info.value.value) < 1e-12


def test_plane_margin_matches_brute_force():
    g = Grid(SLAB, 4)
    a = Form.from_strings(1, ["-y+0.3*z", "0.2*x", "1"], SLAB)
    om = two_form(SLAB, ["1+0.1*z", "0.3", "-0.2"])
    np.testing.assert_allclose(plane_margin(a, om, g), brute_margin(a, om, g.points), atol=1e-12)


def test_witness_scaling_monotone():
    dz = Form.from_strings(1, ["0", "0", "1"], SLAB)
    om = two_form(SLAB, ["1", "0.2", "0"])
    base = taut_certificate(om, dz, G5)
    for c in (0.1, 3.0):
        scaled = taut_certificate(om.scale(c), dz, G5)
        assert scaled.verdict and scaled.margin == pytest.approx(c * base.margin)


# -- strong tightness ----------------------------------------------------------------------

def test_strong_tight_anosov(anosov, torus, torus_grid):
    bp, _ = anosov
    om = two_form(torus, ["0", "-exp(r*t)*du1", "-exp(r*t)*du2"])
    cert = strong_tightness_certificate(bp.pair, om, torus_grid)
    assert cert.verdict and cert.details["margin_minus"] > 0 and cert.details["margin_plus"] > 0
    # StrongTight implies Taut for eta_u of the same pair
    eta_u = Form.from_strings(1, ["exp(-r*t)*ds1", "exp(-r*t)*ds2", "0"], torus)
    assert taut_certificate(om, eta_u, torus_grid).verdict


def test_strong_tight_balanced_volume_witness(anosov, torus_grid):
    # alpha_- ^ alpha_+ is closed here; on ker alpha_+ it has the sign of alpha_- restricted there,
    # which is opposite on the two planes once each carries its contact orientation
    bp, _ = anosov
    om = wedge(bp.alpha_minus, bp.alpha_plus)
    contact = strong_tightness_certificate(bp.pair, om, torus_grid, raise_on_failure=False)
    forms = strong_tightness_certificate(bp.pair, om, torus_grid, orientation="forms",
                                         raise_on_failure=False)
    assert not contact.verdict
    assert contact.details["margin_minus"] * contact.details["margin_plus"] <= 0
    assert forms.details["margin_minus"] == pytest.approx(-contact.details["margin_minus"])


def test_strong_tight_saddle_brute_force():
    pair = saddle_pair()
    om = two_form(SLAB, ["1", "0", "0"])
    cert = strong_tightness_certificate(pair, om, G5, raise_on_failure=False)
    m_plus = brute_margin(pair.alpha_plus, om, G5.points)
    m_minus = brute_margin(-pair.alpha_minus, om, G5.points)
    assert cert.verdict == bool(min(m_plus.min(), m_minus.min()) > 0)
    assert cert.margin == pytest.approx(min(m_plus.min(), m_minus.min()), abs=1e-12)


def test_strong_tight_zero_witness():
    with pytest.raises(NotDominating) as info:
        strong_tightness_certificate(saddle_pair(), two_form(SLAB, ["0", "0", "0"]), G5)
    assert info.value.certificate.margin == 0.0


# -- hypertaut -----------------------------------------------------------------------------

def test_hypertaut_mapping_torus(torus, torus_grid):
    eta_u = Form.from_strings(1, ["exp(-r*t)*ds1", "exp(-r*t)*ds2", "0"], torus)
    beta = Form.from_strings(1, ["exp(r*t)*du1/r", "exp(r*t)*du2/r", "0"], torus)
    assert hypertaut_certificate(beta, eta_u, torus_grid).verdict


def test_hypertaut_closed_beta_fails():
    dz = Form.from_strings(1, ["0", "0", "1"], SLAB)
    with pytest.raises(NotDominating):
        hypertaut_certificate(Form.from_strings(1, ["1", "0", "0"], SLAB), dz, G5)


def test_hypertaut_reeb_component_grid_oracle():
    box = Box(((-0.5, 0.5),) * 3)
    g = Grid(box, 7)
    eta = Form.from_strings(1, ["x", "y", "1-x^2-y^2"], box)
    beta = Form.from_strings(1, ["-0.5*y", "0.5*x", "0"], box)
    cert = hypertaut_certificate(beta, eta, g, raise_on_failure=False)
    oracle = brute_margin(eta, two_form(box, ["1", "0", "0"]), g.points)
    assert cert.verdict == bool(oracle.min() > 0)
    assert cert.margin == pytest.approx(oracle.min(), abs=1e-12)


# -- volume preserving transversal ---------------------------------------------------------

def test_transversal_flow_direction_is_tangent(anosov, torus, torus_grid):
    bp, _ = anosov
    with pytest.raises(NotTransverse):
        volume_preserving_transversal(VectorField.from_strings(["0", "0", "1"], torus), bp.pair, torus_grid)


def test_transversal_constant_field(anosov, torus, torus_grid):
    bp, _ = anosov
    c = torus.constants()
    det = c["du1"] * c["ds2"] - c["du2"] * c["ds1"]
    # du(v) = e^{-rt}, ds(v) = 0: both alpha_+- take the value 1
    v = VectorField.from_strings([f"exp(-r*t)*ds2/({det!r})", f"-exp(-r*t)*ds1/({det!r})", "0"], torus)
    cert = volume_preserving_transversal(v, bp.pair, torus_grid)
    assert cert.verdict and cert.margin == pytest.approx(1.0)


def test_transversal_single_form_and_divergence():
    dz = Form.from_strings(1, ["0", "0", "1"], SLAB)
    assert volume_preserving_transversal(VectorField.from_strings(["y", "0", "1"], SLAB), dz, G5).verdict
    with pytest.raises(NotDivergenceFree):
        volume_preserving_transversal(VectorField.from_strings(["0", "y", "0"], SLAB), dz, G5)


def test_transversal_report_without_raising():
    pair = ContactPair(Form.from_strings(1, ["-y", "0", "-1"], SLAB), Form.from_strings(1, ["-y", "0", "1"], SLAB))
    cert = volume_preserving_transversal(VectorField.from_strings(["0", "0", "1"], SLAB), pair, G5,
                                         raise_on_failure=False)
    assert not cert.verdict and cert.details["per_form"] == [-1.0, 1.0]
