"""Differential forms and vector fields with symbolic coefficients.

A k-form on a 3-dimensional chart stores one :class:`~contactlab.exprlang.Expr`
per increasing index tuple, e.g. ``(0, 2)`` for ``dx^dz``. Vector fields store
three coefficients. All operations are exact (symbolic); :meth:`Form.sample`
and :meth:`VectorField.sample` evaluate on arrays of cover points, transporting
coefficients through the chart identifications.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from ..errors import DimensionError, InputError
from ..exprlang import (ZERO, CompiledExprs, Expr, add, as_expr, compile_exprs,
                        differentiate, mul, neg, parse, sub)
from .charts import Chart

DIM = 3
BASIS = {k: list(combinations(range(DIM), k)) for k in range(DIM + 1)}


def _perm_sign(seq: Sequence[int]) -> int:
    seq = list(seq)
    if len(set(seq)) < len(seq):
        return 0
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@dataclass(frozen=True)
class Form:
    """A k-form ``sum_I c_I dx^I`` on a chart.

    Parameters
    ----------
    degree : int
        0 to 3.
    coeffs : tuple of Expr
        Coefficients in the order of ``BASIS[degree]``.
    chart : Chart
    """

    degree: int
    coeffs: tuple
    chart: Chart

    def __post_init__(self):
        if not 0 <= self.degree <= DIM:
            raise DimensionError(f"degree {self.degree} outside 0..3")
        if len(self.coeffs) != len(BASIS[self.degree]):
            raise InputError("coefficient count does not match degree")
        object.__setattr__(self, "coeffs", tuple(as_expr(c) for c in self.coeffs))

    # -- construction ------------------------------------------------------
    @classmethod
    def from_strings(cls, degree: int, texts: Sequence[str], chart: Chart,
                     constants: Mapping[str, float] | None = None) -> "Form":
        consts = dict(chart.constants())
        consts.update(constants or {})
        return cls(degree, tuple(parse(str(t), chart.variables, consts) for t in texts), chart)

    @classmethod
    def zero(cls, degree: int, chart: Chart) -> "Form":
        return cls(degree, (ZERO,) * len(BASIS[degree]), chart)

    def component(self, idx: tuple[int, ...]) -> Expr:
        return self.coeffs[BASIS[self.degree].index(tuple(idx))]

    # -- algebra -------------------------------------------------------------
    def __add__(self, other: "Form") -> "Form":
        _same(self, other)
        return Form(self.degree, tuple(add(a, b) for a, b in zip(self.coeffs, other.coeffs)), self.chart)

    def __sub__(self, other: "Form") -> "Form":
        _same(self, other)
        return Form(self.degree, tuple(sub(a, b) for a, b in zip(self.coeffs, other.coeffs)), self.chart)

    def __neg__(self) -> "Form":
        return Form(self.degree, tuple(neg(a) for a in self.coeffs), self.chart)

    def scale(self, f) -> "Form":
        f = as_expr(f)
        return Form(self.degree, tuple(mul(f, a) for a in self.coeffs), self.chart)

    def __rmul__(self, f) -> "Form":
        return self.scale(f)

    # -- numerics --------------------------------------------------------------
    @cached_property
    def _compiled(self) -> CompiledExprs:
        return compile_exprs(self.coeffs, self.chart.variables)

    def sample(self, pts: np.ndarray) -> np.ndarray:
        """Coefficients at cover points, shape ``pts.shape[:-1] + (ncomp,)``.

        On charts with identifications the coefficients are evaluated in the
        fundamental domain and pulled back by the deck differential.
        """
        pts = np.asarray(pts, dtype=float)
        w, k = self.chart.wrap(pts)
        vals = np.moveaxis(self._compiled(*np.moveaxis(w, -1, 0)), 0, -1)
        if self.degree in (0, 3) or not np.any(k):
            return vals  # det of every deck differential is 1
        D = self.chart.deck(k)
        if self.degree == 1:
            return np.einsum("...ji,...j->...i", D, vals)
        M = two_form_matrix(vals)
        M = np.einsum("...ai,...ab,...bj->...ij", D, M, D)
        return np.stack([M[..., 0, 1], M[..., 0, 2], M[..., 1, 2]], axis=-1)

    def __str__(self):
        names = self.chart.variables
        terms = []
        for idx, c in zip(BASIS[self.degree], self.coeffs):
            if c == ZERO:
                continue
            basis = "^".join(f"d{names[i]}" for i in idx)
            terms.append(f"{c}" + (f" {basis}" if basis else ""))
        return " + ".join(terms) or "0"


@dataclass(frozen=True)
class VectorField:
    """Vector field ``sum_i c_i d/dx_i`` with symbolic coefficients."""

    coeffs: tuple
    chart: Chart

    def __post_init__(self):
        if len(self.coeffs) != DIM:
            raise InputError("vector field needs three coefficients")
        object.__setattr__(self, "coeffs", tuple(as_expr(c) for c in self.coeffs))

    @classmethod
    def from_strings(cls, texts: Sequence[str], chart: Chart,
                     constants: Mapping[str, float] | None = None) -> "VectorField":
        consts = dict(chart.constants())
        consts.update(constants or {})
        return cls(tuple(parse(str(t), chart.variables, consts) for t in texts), chart)

    def __neg__(self) -> "VectorField":
        return VectorField(tuple(neg(c) for c in self.coeffs), self.chart)

    def scale(self, f) -> "VectorField":
        f = as_expr(f)
        return VectorField(tuple(mul(f, c) for c in self.coeffs), self.chart)

    def apply(self, f: Expr) -> Expr:
        """Directional derivative ``v . f`` of a scalar expression."""
        out = ZERO
        for c, var in zip(self.coeffs, self.chart.variables):
            out = add(out, mul(c, differentiate(f, var)))
        return out

    @cached_property
    def jacobian_exprs(self) -> tuple:
        return tuple(differentiate(c, v) for c in self.coeffs for v in self.chart.variables)

    def divergence(self) -> Expr:
        """Coordinate divergence ``sum_i d c_i / d x_i``."""
        out = ZERO
        for c, var in zip(self.coeffs, self.chart.variables):
            out = add(out, differentiate(c, var))
        return out

    @cached_property
    def _compiled(self) -> CompiledExprs:
        return compile_exprs(self.coeffs, self.chart.variables)

    @cached_property
    def _compiled_jac(self) -> CompiledExprs:
        return compile_exprs(self.jacobian_exprs, self.chart.variables)

    def sample(self, pts: np.ndarray) -> np.ndarray:
        """Components at cover points, shape ``pts.shape``."""
        pts = np.asarray(pts, dtype=float)
        w, k = self.chart.wrap(pts)
        vals = np.moveaxis(self._compiled(*np.moveaxis(w, -1, 0)), 0, -1)
        if not np.any(k):
            return vals
        Dinv = self.chart.deck(-k)
        return np.einsum("...ij,...j->...i", Dinv, vals)

    def sample_jacobian(self, pts: np.ndarray) -> np.ndarray:
        """Jacobian matrices ``d v^i / d x^j`` at cover points."""
        pts = np.asarray(pts, dtype=float)
        w, k = self.chart.wrap(pts)
        J = np.moveaxis(self._compiled_jac(*np.moveaxis(w, -1, 0)), 0, -1)
        J = J.reshape(pts.shape[:-1] + (3, 3))
        if not np.any(k):
            return J
        D = self.chart.deck(k)
        return np.einsum("...ij,...jk,...kl->...il", self.chart.deck(-k), J, D)

    def __str__(self):
        names = self.chart.variables
        return " + ".join(f"({c}) d/d{n}" for c, n in zip(self.coeffs, names) if c != ZERO) or "0"


def _same(a, b):
    if a.degree != b.degree:
        raise DimensionError("degree mismatch")
    if a.chart != b.chart:
        raise InputError("forms live on different charts")


def scalar(f, chart: Chart) -> Form:
    return Form(0, (as_expr(f),), chart)


def one_form(coeffs, chart: Chart) -> Form:
    return Form(1, tuple(coeffs), chart)


def two_form_matrix(vals: np.ndarray) -> np.ndarray:
    """Antisymmetric 3x3 matrices from sampled 2-form components."""
    M = np.zeros(vals.shape[:-1] + (3, 3))
    for n, (i, j) in enumerate(BASIS[2]):
        M[..., i, j] = vals[..., n]
        M[..., j, i] = -vals[..., n]
    return M


# -- exterior calculus ---------------------------------------------------------

def wedge(a: Form, b: Form) -> Form:
    """Exterior product; raises :class:`DimensionError` if the degree exceeds 3."""
    if a.chart != b.chart:
        raise InputError("forms live on different charts")
    k = a.degree + b.degree
    if k > DIM:
        raise DimensionError(f"wedge of degrees {a.degree} and {b.degree} exceeds {DIM}")
    out = {idx: ZERO for idx in BASIS[k]}
    for I, ca in zip(BASIS[a.degree], a.coeffs):
        if ca == ZERO:
            continue
        for J, cb in zip(BASIS[b.degree], b.coeffs):
            if cb == ZERO:
                continue
            s = _perm_sign(I + J)
            if s == 0:
                continue
            key = tuple(sorted(I + J))
            term = mul(ca, cb)
            out[key] = add(out[key], term) if s > 0 else sub(out[key], term)
    return Form(k, tuple(out[idx] for idx in BASIS[k]), a.chart)


def exterior_derivative(a: Form) -> Form:
    """Exact exterior derivative (zero for 3-forms)."""
    k = a.degree + 1
    if k > DIM:
        return Form.zero(DIM, a.chart) if a.degree == DIM else Form.zero(k, a.chart)
    names = a.chart.variables
    out = {idx: ZERO for idx in BASIS[k]}
    for I, c in zip(BASIS[a.degree], a.coeffs):
        if c == ZERO:
            continue
        for j in range(DIM):
            if j in I:
                continue
            dc = differentiate(c, names[j])
            if dc == ZERO:
                continue
            s = _perm_sign((j,) + I)
            key = tuple(sorted((j,) + I))
            out[key] = add(out[key], dc) if s > 0 else sub(out[key], dc)
    return Form(k, tuple(out[idx] for idx in BASIS[k]), a.chart)


def interior_product(v: VectorField, a: Form) -> Form:
    """Contraction of ``v`` into the first slot of ``a``."""
    if a.degree == 0:
        raise DimensionError("cannot contract a 0-form")
    k = a.degree - 1
    out = {idx: ZERO for idx in BASIS[k]}
    for I, c in zip(BASIS[a.degree], a.coeffs):
        if c == ZERO:
            continue
        for pos, i in enumerate(I):
            if v.coeffs[i] == ZERO:
                continue
            rest = I[:pos] + I[pos + 1:]
            term = mul(v.coeffs[i], c)
            out[rest] = add(out[rest], term) if pos % 2 == 0 else sub(out[rest], term)
    return Form(k, tuple(out[idx] for idx in BASIS[k]), a.chart)


def evaluate_on(a: Form, v: VectorField) -> Expr:
    """``a(v)`` for a 1-form ``a``."""
    return interior_product(v, a).coeffs[0]


def lie_derivative_oneform(v: VectorField, a: Form) -> Form:
    """Cartan formula ``L_v a = i_v da + d(a(v))``."""
    if a.degree != 1:
        raise DimensionError("lie_derivative_oneform expects a 1-form")
    return interior_product(v, exterior_derivative(a)) + exterior_derivative(scalar(evaluate_on(a, v), a.chart))


def top_coefficient(a: Form) -> Expr:
    """Coefficient of a 3-form against ``dx^dy^dz``."""
    if a.degree != DIM:
        raise DimensionError("expected a 3-form")
    return a.coeffs[0]


def frobenius_residual(a: Form) -> Form:
    """``a ^ da``: zero iff ker a is integrable, one-signed iff contact."""
    return wedge(a, exterior_derivative(a))


def gluing_defect(a: Form, n_samples: int = 64, seed: int = 0) -> float:
    """Max discrepancy of ``a`` across the identification ``t = 1 ~ t = 0``.

    Compares the raw coefficients at ``(v, 1)`` with the deck pullback of the
    raw coefficients at ``(A v, 0)``; zero for forms that descend to the
    mapping torus. Returns 0 on charts without a twisted identification.
    """
    chart = a.chart
    if chart.kind != "mapping_torus":
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.uniform(0, 1, size=(n_samples, 2))
    top = np.column_stack([v, np.ones(n_samples)])
    bottom = np.column_stack([v @ chart.A.T, np.zeros(n_samples)])
    raw_top = np.moveaxis(a._compiled(*top.T), 0, -1)
    raw_bottom = np.moveaxis(a._compiled(*bottom.T), 0, -1)
    D = chart.deck(np.ones(n_samples, dtype=int))
    if a.degree == 1:
        pulled = np.einsum("nji,nj->ni", D, raw_bottom)
    elif a.degree == 2:
        M = np.einsum("nai,nab,nbj->nij", D, two_form_matrix(raw_bottom), D)
        pulled = np.stack([M[:, 0, 1], M[:, 0, 2], M[:, 1, 2]], axis=1)
    else:
        pulled = raw_bottom
    return float(np.max(np.abs(raw_top - pulled)))


# -- grid-sampled path ---------------------------------------------------------

@dataclass
class SampledForm:
    """A k-form sampled on a :class:`~contactlab.geometry.charts.Grid`.

    ``values`` has shape ``(grid.size, ncomp)`` in the flattened grid order.
    """

    degree: int
    values: np.ndarray
    grid: object = field(repr=False)

    @classmethod
    def from_form(cls, a: Form, grid) -> "SampledForm":
        return cls(a.degree, a.sample(grid.points), grid)


def _partial(cube: np.ndarray, axis_var: int, grid) -> np.ndarray:
    """Central difference of a [z, y, x] cube along chart axis ``axis_var``."""
    axis = 2 - axis_var
    h = grid.spacing[axis_var]
    if grid.chart.periodic[axis_var]:
        return (np.roll(cube, -1, axis=axis) - np.roll(cube, 1, axis=axis)) / (2 * h)
    return np.gradient(cube, h, axis=axis, edge_order=2)


def sampled_exterior_derivative(a: SampledForm) -> SampledForm:
    """Finite-difference exterior derivative with wrap-aware stencils.

    Periodic axes use centred differences through the identification. On
    mapping tori this is only valid for coefficients periodic in ``t``;
    twisted gluing is not supported on the sampled path.
    """
    grid = a.grid
    k = a.degree + 1
    if k > DIM:
        return SampledForm(DIM, np.zeros((grid.size, 1)), grid)
    out = np.zeros((grid.size, len(BASIS[k])))
    for n, I in enumerate(BASIS[a.degree]):
        cube = grid.cube(a.values[:, n])
        for j in range(DIM):
            if j in I:
                continue
            s = _perm_sign((j,) + I)
            key = BASIS[k].index(tuple(sorted((j,) + I)))
            out[:, key] += s * _partial(cube, j, grid).ravel()
    return SampledForm(k, out, grid)
