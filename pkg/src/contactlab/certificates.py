"""Grid verification of tautness-type witnesses.

Witnesses are supplied by the caller; this module only checks them. Plane
fields are given as kernels of co-oriented 1-forms. A 2-form ``w`` is
positive on ``ker a`` when ``w(v1, v2) > 0`` for a basis with ``(n, v1, v2)``
positively oriented whenever ``a(n) > 0``; equivalently ``a ^ w > 0``. The
reported margin is ``w(v1, v2)`` for a basis orthonormal in the chart metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .contact_pair import ContactPair, sample_scalar
from .errors import (DimensionError, InputError, NotClosed, NotDivergenceFree, NotDominating,
                     NotTransverse)
from .geometry import Form, Grid, VectorField, evaluate_on, exterior_derivative, top_coefficient, wedge

CLOSED_TOL = 1e-9
DIVERGENCE_TOL = 1e-9


class CertificateKind(str, Enum):
    TAUT = "Taut"
    STRONG_TIGHT = "StrongTight"
    HYPERTAUT = "Hypertaut"
    TRANSVERSAL = "VolumePreservingTransversal"


@dataclass
class Certificate:
    kind: CertificateKind
    witness: object
    verdict: bool
    margin: float
    worst_point: list
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "verdict": self.verdict, "margin": self.margin,
                "worst_point": self.worst_point, "details": self.details}


def _flat(e, chart, pts) -> np.ndarray:
    return np.broadcast_to(sample_scalar(e, chart, pts), (len(pts),))


def plane_margin(a: Form, omega: Form, grid: Grid) -> np.ndarray:
    """``omega`` on a metric-orthonormal oriented basis of ``ker a`` at each grid point."""
    if a.degree != 1 or omega.degree != 2:
        raise DimensionError("plane_margin expects a 1-form and a 2-form")
    pts = grid.points
    top = _flat(top_coefficient(wedge(a, omega)), a.chart, pts)
    av = a.sample(pts)
    G = a.chart.metric(pts)
    Ginv = np.linalg.inv(G)
    norm = np.sqrt(np.einsum("ni,nij,nj->n", av, Ginv, av))
    return top / (norm * np.sqrt(np.linalg.det(G)))


def _check_closed(omega: Form, grid: Grid):
    if omega.degree != 2:
        raise DimensionError("witness must be a 2-form")
    d = np.abs(_flat(top_coefficient(exterior_derivative(omega)), omega.chart, grid.points))
    i = int(np.argmax(d))
    if d[i] >= CLOSED_TOL:
        raise NotClosed(f"d omega = {d[i]:.3e} is not zero", grid.points[i], d[i])
    return float(d[i])


def _finish(kind, witness, margin, grid, details, raise_on_failure, msg):
    i = int(np.argmin(margin))
    cert = Certificate(kind, witness, bool(margin[i] > 0), float(margin[i]),
                       [float(c) for c in grid.points[i]], details)
    if raise_on_failure and not cert.verdict:
        err = NotDominating(f"{msg}: margin {margin[i]:.3e}", grid.points[i], margin[i])
        err.certificate = cert
        raise err
    return cert


def taut_certificate(omega: Form, eta: Form, grid: Grid, raise_on_failure: bool = True) -> Certificate:
    """Closed ``omega`` positive on the plane field ``ker eta``.

    Raises
    ------
    NotClosed, NotDominating
    """
    dmax = _check_closed(omega, grid)
    m = plane_margin(eta, omega, grid)
    return _finish(CertificateKind.TAUT, omega, m, grid, {"d_omega": dmax}, raise_on_failure,
                   "omega is not positive on the plane field")


def strong_tightness_certificate(pair: ContactPair, omega: Form, grid: Grid,
                                 orientation: str = "contact",
                                 raise_on_failure: bool = True) -> Certificate:
    """Closed ``omega`` positive on both ``xi_-`` and ``xi_+``.

    With ``orientation="contact"`` each plane carries its contact orientation,
    the one induced by ``d alpha``; for the negative structure this is the
    co-orientation of ``-alpha_-``. ``orientation="forms"`` co-orients both
    planes by the given forms.
    """
    if orientation not in ("contact", "forms"):
        raise InputError("orientation must be 'contact' or 'forms'")
    dmax = _check_closed(omega, grid)
    am = -pair.alpha_minus if orientation == "contact" else pair.alpha_minus
    m_minus = plane_margin(am, omega, grid)
    m_plus = plane_margin(pair.alpha_plus, omega, grid)
    details = {"d_omega": dmax, "margin_minus": float(np.min(m_minus)),
               "margin_plus": float(np.min(m_plus)), "orientation": orientation}
    which = "xi_-" if np.min(m_minus) <= np.min(m_plus) else "xi_+"
    return _finish(CertificateKind.STRONG_TIGHT, omega, np.minimum(m_minus, m_plus), grid, details,
                   raise_on_failure, f"omega is not positive on {which}")


def hypertaut_certificate(beta: Form, eta: Form, grid: Grid, raise_on_failure: bool = True) -> Certificate:
    """``d beta`` positive on ``ker eta``; closedness of ``d beta`` is automatic."""
    if beta.degree != 1:
        raise DimensionError("witness must be a 1-form")
    m = plane_margin(eta, exterior_derivative(beta), grid)
    return _finish(CertificateKind.HYPERTAUT, beta, m, grid, {}, raise_on_failure,
                   "d beta is not positive on the plane field")


def volume_preserving_transversal(v: VectorField, forms, grid: Grid,
                                  raise_on_failure: bool = True) -> Certificate:
    """Divergence-free ``v`` with ``a(v) > 0`` for every co-orienting form.

    ``forms`` is a :class:`ContactPair` (both forms as given), a single
    1-form, or a sequence of 1-forms. Divergence is taken against the
    coordinate volume, which every chart identification preserves.

    Raises
    ------
    NotDivergenceFree, NotTransverse
    """
    if isinstance(forms, ContactPair):
        forms = [forms.alpha_minus, forms.alpha_plus]
    elif isinstance(forms, Form):
        forms = [forms]
    pts = grid.points
    div = np.abs(_flat(v.divergence(), v.chart, pts))
    i = int(np.argmax(div))
    if div[i] >= DIVERGENCE_TOL:
        raise NotDivergenceFree(f"div v = {div[i]:.3e}", pts[i], div[i])
    vals = np.stack([_flat(evaluate_on(a, v), v.chart, pts) for a in forms])
    worst_form = int(np.unravel_index(np.argmin(vals), vals.shape)[0])
    margin = vals.min(axis=0)
    j = int(np.argmin(margin))
    cert = Certificate(CertificateKind.TRANSVERSAL, v, bool(margin[j] > 0), float(margin[j]),
                       [float(c) for c in pts[j]],
                       {"divergence": float(div[i]), "per_form": [float(np.min(r)) for r in vals]})
    if raise_on_failure and not cert.verdict:
        err = NotTransverse(f"form {worst_form} takes value {margin[j]:.3e} on v", pts[j], margin[j])
        err.certificate = cert
        raise err
    return cert
