"""Contact pairs: balancing, the intersection vector field, pair scalars,
the coincidence locus and its singularities, and connection typology.

Conventions
-----------
A pair ``(alpha_minus, alpha_plus)`` has ``alpha_plus ^ d alpha_plus > 0`` and
``alpha_minus ^ d alpha_minus < 0`` against the chart orientation. After
balancing, both equal ``+-dvol`` and the canonical field ``X`` solves
``alpha_pm(X) = 0``, ``i_X dvol = alpha_minus ^ alpha_plus``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DomainError, InputError, NotContact
from .exprlang import Expr, Num, add, compile_exprs, div, is_const, neg, sqrt
from .geometry import (Form, Grid, VectorField, exterior_derivative, flow_trajectory,
                       lie_derivative_oneform, top_coefficient, wedge)
from .geometry.flows import Termination


def sample_scalar(e: Expr, chart, pts: np.ndarray) -> np.ndarray:
    """Evaluate a scalar expression at cover points (periodic wrap applied)."""
    pts = np.asarray(pts, dtype=float)
    w, _ = chart.wrap(pts)
    fn = _scalar_cache.get(id(e))
    if fn is None or fn[0] is not e:
        fn = (e, compile_exprs([e], chart.variables))
        _scalar_cache[id(e)] = fn
    flat = w.reshape(-1, 3)
    out = np.empty(len(flat))
    for i in range(0, len(flat), _CHUNK):
        out[i:i + _CHUNK] = fn[1](*flat[i:i + _CHUNK].T)[0]
    return out.reshape(w.shape[:-1])


_scalar_cache: dict[int, tuple] = {}
_CHUNK = 65536  # bounds the memory held by compiled temporaries


@dataclass(frozen=True)
class ContactPair:
    """Two co-oriented contact forms on a chart."""

    alpha_minus: Form
    alpha_plus: Form

    def __post_init__(self):
        if self.alpha_minus.degree != 1 or self.alpha_plus.degree != 1:
            raise InputError("a contact pair consists of two 1-forms")
        if self.alpha_minus.chart != self.alpha_plus.chart:
            raise InputError("forms of a pair must live on the same chart")

    @property
    def chart(self):
        return self.alpha_plus.chart

    def contact_volumes(self) -> tuple[Expr, Expr]:
        """Coefficients of ``alpha_minus ^ d alpha_minus`` and ``alpha_plus ^ d alpha_plus``."""
        vm = top_coefficient(wedge(self.alpha_minus, exterior_derivative(self.alpha_minus)))
        vp = top_coefficient(wedge(self.alpha_plus, exterior_derivative(self.alpha_plus)))
        return vm, vp


@dataclass(frozen=True)
class BalancedPair:
    """Balanced representative with volume coefficient ``dvol`` and field ``X``."""

    pair: ContactPair
    dvol: Expr
    X: VectorField
    rescale: Expr

    @property
    def alpha_minus(self) -> Form:
        return self.pair.alpha_minus

    @property
    def alpha_plus(self) -> Form:
        return self.pair.alpha_plus

    @property
    def chart(self):
        return self.pair.chart

    def volume_form(self) -> Form:
        return Form(3, (self.dvol,), self.chart)


def _fold_if_constant(c: Expr, chart, grid: Grid) -> Expr:
    """Replace a numerically constant factor by a literal.

    The factor is probed on the grid and at random points of the domain; a
    spread of at most a few ulps counts as constant.
    """
    rng = np.random.default_rng(12345)
    probe = np.vstack([grid.points, chart.lower() + rng.uniform(size=(64, 3)) * chart.extent()])
    try:
        vals = sample_scalar(c, chart, probe)
    except DomainError:  # off-grid probes may leave the contact region
        return c
    if np.max(np.abs(vals - 1.0)) <= 4e-16:
        return Num(1.0)
    if np.ptp(vals) <= 4e-16 * abs(vals[0]):
        return Num(float(vals[0]))
    return c


def check_contact(pair: ContactPair, grid: Grid) -> dict:
    """Sign check of both contact conditions on a grid; raises :class:`NotContact`."""
    vm, vp = pair.contact_volumes()
    pts = grid.points
    m = sample_scalar(vm, pair.chart, pts)
    p = sample_scalar(vp, pair.chart, pts)
    i_p, i_m = int(np.argmin(p)), int(np.argmax(m))
    if p[i_p] <= 0:
        raise NotContact(f"alpha_plus ^ d alpha_plus = {p[i_p]:.3e} <= 0", pts[i_p], p[i_p])
    if m[i_m] >= 0:
        raise NotContact(f"alpha_minus ^ d alpha_minus = {m[i_m]:.3e} >= 0", pts[i_m], m[i_m])
    return {"min_plus": float(p[i_p]), "max_minus": float(m[i_m])}


def balance(pair: ContactPair, grid: Grid) -> BalancedPair:
    """Rescale ``alpha_minus`` so that ``alpha_plus^d alpha_plus = -alpha_minus^d alpha_minus``.

    The factor is ``c = sqrt(vol_plus / -vol_minus)``; the new ``alpha_minus``
    is ``c * alpha_minus`` and ``X`` is obtained symbolically from
    ``i_X dvol = alpha_minus ^ alpha_plus``.

    Raises
    ------
    NotContact
        If a sign condition fails at some grid point (the worst one is reported).
    """
    check_contact(pair, grid)
    vm, vp = pair.contact_volumes()
    c = sqrt(div(vp, neg(vm)))
    if not isinstance(c, Num):
        c = _fold_if_constant(c, pair.chart, grid)
    am = pair.alpha_minus if is_const(c, 1.0) else pair.alpha_minus.scale(c)
    balanced = ContactPair(am, pair.alpha_plus)
    w = wedge(am, pair.alpha_plus)
    V = vp
    # i_X (V dx^dy^dz) = V (X1 dy^dz - X2 dx^dz + X3 dx^dy)
    w12, w13, w23 = w.coeffs
    X = VectorField((div(w23, V), neg(div(w13, V)), div(w12, V)), pair.chart)
    return BalancedPair(balanced, V, X, c)


@dataclass(frozen=True)
class PairScalars:
    """Symbolic pair scalars ``f0, g0, g_minus, g_plus`` (ratios against dvol)."""

    f0: Expr
    g0: Expr
    g_minus: Expr
    g_plus: Expr

    def sample(self, chart, pts) -> dict[str, np.ndarray]:
        fn = compile_exprs([self.f0, self.g0, self.g_minus, self.g_plus], chart.variables)
        w, _ = chart.wrap(np.asarray(pts, dtype=float))
        vals = fn(*np.moveaxis(w, -1, 0))
        return dict(zip(("f0", "g0", "g_minus", "g_plus"), vals))


def pair_scalars(bp: BalancedPair) -> PairScalars:
    """``d(a- ^ a+) = f0 dvol``, ``<a-, a+> = g0 dvol``, ``a- ^ da+ = g+ dvol``, ``a+ ^ da- = g- dvol``."""
    am, ap = bp.alpha_minus, bp.alpha_plus
    dam, dap = exterior_derivative(am), exterior_derivative(ap)
    gp_num = top_coefficient(wedge(am, dap))
    gm_num = top_coefficient(wedge(ap, dam))
    f0_num = top_coefficient(exterior_derivative(wedge(am, ap)))
    V = bp.dvol
    g_plus = div(gp_num, V)
    g_minus = div(gm_num, V)
    return PairScalars(div(f0_num, V), add(g_minus, g_plus), g_minus, g_plus)


@dataclass
class LieReport:
    residual_minus: float
    residual_plus: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.residual_minus, self.residual_plus) < self.tol


def check_lie_identities(bp: BalancedPair, scalars: PairScalars, grid: Grid,
                         tol: float = 1e-9) -> LieReport:
    """Sup-norms of ``L_X a- - (g- a- + a+)`` and ``L_X a+ - (a- - g+ a+)`` on the grid."""
    rm, rp = lie_residual_forms(bp, scalars)
    pts = grid.points
    return LieReport(float(np.max(np.abs(rm.sample(pts)))), float(np.max(np.abs(rp.sample(pts)))), tol)


def lie_residual_forms(bp: BalancedPair, scalars: PairScalars) -> tuple[Form, Form]:
    am, ap, X = bp.alpha_minus, bp.alpha_plus, bp.X
    rm = lie_derivative_oneform(X, am) - (am.scale(scalars.g_minus) + ap)
    rp = lie_derivative_oneform(X, ap) - (am - ap.scale(scalars.g_plus))
    return rm, rp


# -- coincidence locus -----------------------------------------------------------

@dataclass
class PositivityReport:
    """Grid points where the two forms are proportional.

    ``delta_plus`` / ``delta_minus`` index grid points with ``a+ = -u a-``,
    ``u > 0`` (resp. ``u < 0``); ``u_plus`` holds the witness factors.
    """

    delta_plus: np.ndarray
    delta_minus: np.ndarray
    u_plus: np.ndarray
    u_minus: np.ndarray
    tol_angle: float

    @property
    def verdict(self) -> str:
        return "Positive" if len(self.delta_minus) == 0 else "Negative"


def positivity_test(bp: BalancedPair, grid: Grid, tol_angle: float = 1e-6) -> PositivityReport:
    """Flag points where ``sin angle(a-, a+) < tol_angle`` in the chart metric."""
    pts = grid.points
    am = bp.alpha_minus.sample(pts)
    ap = bp.alpha_plus.sample(pts)
    Ginv = np.linalg.inv(bp.chart.metric(pts))
    nm = np.sqrt(np.einsum("ni,nij,nj->n", am, Ginv, am))
    npl = np.sqrt(np.einsum("ni,nij,nj->n", ap, Ginv, ap))
    dot = np.einsum("ni,nij,nj->n", am, Ginv, ap)
    # sine of the angle through the wedge norm (stable near 0)
    cross = np.cross(am, ap)
    G = bp.chart.metric(pts)
    det = np.linalg.det(G)
    cross_norm = np.sqrt(np.einsum("ni,nij,nj->n", cross, G, cross) / det)
    sin = cross_norm / (nm * npl)
    flagged = sin < tol_angle
    u = -dot / nm**2  # a+ ~ -u a-
    plus = np.where(flagged & (u > 0))[0]
    minus = np.where(flagged & (u < 0))[0]
    return PositivityReport(plus, minus, u[plus], u[minus], tol_angle)


class SingularClass(str, Enum):
    SOURCE = "Source"
    SINK = "Sink"
    SADDLE = "Saddle"
    QUADRATIC = "QuadraticCandidate"
    DEGENERATE = "Degenerate"


@dataclass
class SingularPoint:
    location: np.ndarray
    jacobian: np.ndarray
    restricted: np.ndarray
    cls: SingularClass
    f0_value: float | None
    rank: int
    trace_dX: float
    det_restricted: float
    eigenvalues: np.ndarray = field(repr=False, default=None)
    eigenvectors: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"location": [float(v) for v in self.location], "class": self.cls.value,
                "rank": self.rank, "trace": self.trace_dX, "f0": self.f0_value,
                "det_restricted": self.det_restricted}


def _plane_basis(normal: np.ndarray) -> np.ndarray:
    n = normal / np.linalg.norm(normal)
    ref = np.eye(3)[np.argmin(np.abs(n))]
    e1 = np.cross(n, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return np.column_stack([e1, e2])


def classify_zero(J: np.ndarray, plane_normal: np.ndarray | None = None,
                  rank_rel: float = 1e-7) -> tuple[SingularClass, int, np.ndarray, float]:
    """Classify a zero of a vector field from its Jacobian.

    With a plane co-normal (the common kernel of the pair at a coincidence
    point) the restricted map ``L = dX|plane`` decides: ``det L > 0`` gives a
    source or sink by the sign of the trace, ``det L < 0`` a saddle, and a
    numerically vanishing ``det L`` with rank 2 a quadratic candidate.
    Without a plane, rank-3 zeros are classified by eigenvalue signs.
    """
    sv = np.linalg.svd(J, compute_uv=False)
    scale = max(sv[0], 1e-300)
    rank = int(np.sum(sv > rank_rel * scale))
    if plane_normal is not None:
        B = _plane_basis(plane_normal)
        # L acts on the plane; image of J lies in the plane at coincidence points
        L = np.linalg.lstsq(B, J @ B, rcond=None)[0]
    else:
        L = J
    detL = float(np.linalg.det(L)) if plane_normal is not None else float(np.linalg.det(J))
    if rank < 2:
        return SingularClass.DEGENERATE, rank, L, detL
    tr = float(np.trace(J))
    if plane_normal is None and rank == 3:
        ev = np.linalg.eigvals(J).real
        if np.all(ev > 0):
            return SingularClass.SOURCE, rank, L, detL
        if np.all(ev < 0):
            return SingularClass.SINK, rank, L, detL
        return SingularClass.SADDLE, rank, L, detL
    if abs(detL) <= rank_rel * scale**2:
        return SingularClass.QUADRATIC, rank, L, detL
    if detL > 0:
        return (SingularClass.SOURCE if tr > 0 else SingularClass.SINK), rank, L, detL
    return SingularClass.SADDLE, rank, L, detL


def newton_refine(X: VectorField, p0: np.ndarray, tol: float = 1e-10, max_iter: int = 50):
    """Gauss-Newton iteration to a zero of ``X``; returns ``None`` on divergence."""
    p = np.array(p0, dtype=float)
    for _ in range(max_iter):
        v = X.sample(p)
        if np.linalg.norm(v) < tol:
            return p
        J = X.sample_jacobian(p)
        step = np.linalg.lstsq(J, -v, rcond=1e-12)[0]
        p = p + step
        if not np.all(np.isfinite(p)) or np.linalg.norm(step) > 1e3:
            return None
    return p if np.linalg.norm(X.sample(p)) < tol else None


def _grid_seeds(X: VectorField, grid: Grid) -> np.ndarray:
    speed = np.linalg.norm(X.sample(grid.points), axis=1)
    med = np.median(speed)
    thresh = 1e-2 * med if med > 0 else np.inf
    cube = grid.cube(speed)
    local_min = np.ones_like(cube, dtype=bool)
    for axis, per in zip((2, 1, 0), grid.chart.periodic):
        for shift in (1, -1):
            nb = np.roll(cube, shift, axis=axis)
            if not per:
                idx = [slice(None)] * 3
                idx[axis] = 0 if shift == 1 else -1
                nb[tuple(idx)] = np.inf
            local_min &= cube <= nb
    mask = local_min.ravel() & (speed <= thresh)
    if med == 0:
        mask = speed == 0
    return grid.points[mask]


def singular_set(X: VectorField, grid: Grid | None = None, seeds: np.ndarray | None = None,
                 plane_form: Form | None = None, f0: Expr | None = None,
                 newton_tol: float = 1e-10, dedupe: float = 1e-8) -> tuple[list[SingularPoint], list[str]]:
    """Locate and classify zeros of ``X``.

    Seeds default to grid points where ``|X|`` is a local minimum below
    ``1e-2 * median |X|``. Each seed is refined by Gauss-Newton to
    ``|X| < newton_tol``; seeds that fail are dropped with a note.

    Returns
    -------
    points : list of SingularPoint
    notes : list of str
    """
    if seeds is None:
        if grid is None:
            raise InputError("singular_set needs a grid or explicit seeds")
        seeds = _grid_seeds(X, grid)
    chart = X.chart
    found: list[SingularPoint] = []
    notes: list[str] = []
    for s in np.asarray(seeds, dtype=float).reshape(-1, 3):
        p = newton_refine(X, s, newton_tol)
        if p is None:
            notes.append(f"NewtonDivergence from seed {s.tolist()}")
            continue
        if chart.kind == "box" and not chart.contains(p):
            notes.append(f"seed {s.tolist()} refined outside the box")
            continue
        if any(np.linalg.norm(p - q.location) < dedupe for q in found):
            continue
        J = X.sample_jacobian(p)
        normal = plane_form.sample(p) if plane_form is not None else None
        cls, rank, L, detL = classify_zero(J, normal)
        f0v = float(sample_scalar(f0, chart, p)) if f0 is not None else None
        ev, evec = np.linalg.eig(J)
        found.append(SingularPoint(p, J, L, cls, f0v, rank, float(np.trace(J)), detL, ev, evec))
    return found, notes


def pair_singular_set(bp: BalancedPair, scalars: PairScalars, grid: Grid, **kw):
    """:func:`singular_set` for the canonical field of a balanced pair."""
    return singular_set(bp.X, grid, plane_form=bp.alpha_plus, f0=scalars.f0, **kw)


# -- connections -----------------------------------------------------------------

class ConnectionType(str, Enum):
    A1 = "A1"
    A2 = "A2"
    A3 = "A3"
    A4 = "A4"
    INADMISSIBLE = "Inadmissible"


@dataclass
class ConnectionRecord:
    source: int
    target: int
    kind: ConnectionType
    orbit: object = field(repr=False, default=None)

    def to_dict(self):
        return {"from": self.source, "to": self.target, "type": self.kind.value}


def connection_type(a: SingularClass, b: SingularClass, same_point: bool) -> ConnectionType:
    S, Q, SA = SingularClass.SOURCE, SingularClass.QUADRATIC, SingularClass.SADDLE
    if a == S and b == SA:
        return ConnectionType.A1
    if a == S and b == Q:
        return ConnectionType.A2
    if a == Q and b == SA:
        return ConnectionType.A3
    if a == SA and b == SA and not same_point:
        return ConnectionType.A4
    return ConnectionType.INADMISSIBLE


@dataclass
class ConnectionGraph:
    records: list
    undecided: list
    broken_triples: list

    @property
    def broken_triple(self) -> bool:
        return bool(self.broken_triples)


def connection_graph(X: VectorField, singular: list[SingularPoint], horizon: float = 50.0,
                     offset: float = 1e-5, ball: float = 1e-4, tol: float = 1e-10) -> ConnectionGraph:
    """Trace separatrices between singular points and classify them.

    From every saddle or quadratic candidate, orbits are launched forward
    along unstable eigendirections and backward along stable eigendirections
    (offset ``offset``). An orbit entering the ``ball`` around another
    singular point is recorded as a connection (oriented along the flow).
    """
    records: list[ConnectionRecord] = []
    undecided: list[dict] = []
    locs = np.array([s.location for s in singular]) if singular else np.zeros((0, 3))
    launch = (SingularClass.SADDLE, SingularClass.QUADRATIC)
    seen = set()
    for i, sp in enumerate(singular):
        if sp.cls not in launch or sp.eigenvalues is None:
            continue
        for lam, vec in zip(sp.eigenvalues, sp.eigenvectors.T):
            if abs(lam.imag) > 1e-12 or abs(lam.real) < 1e-9:
                continue
            v = vec.real / np.linalg.norm(vec.real)
            direction = 1.0 if lam.real > 0 else -1.0
            for sgn in (1.0, -1.0):
                start = sp.location + sgn * offset * v

                def stop(pt, i=i):
                    d = np.linalg.norm(locs - pt, axis=1)
                    d[i] = np.inf
                    return bool(np.any(d < ball))

                traj = flow_trajectory(X, start, direction * horizon, tol=tol, stop=stop)
                d = np.linalg.norm(locs - traj.end, axis=1)
                d[i] = np.inf
                j = int(np.argmin(d)) if len(d) else -1
                if j >= 0 and d[j] < ball:
                    a, b = (i, j) if direction > 0 else (j, i)
                    if (a, b) in seen:
                        continue
                    seen.add((a, b))
                    kind = connection_type(singular[a].cls, singular[b].cls, a == b)
                    records.append(ConnectionRecord(a, b, kind, traj))
                elif traj.reason != Termination.ESCAPED:
                    undecided.append({"from": i, "direction": float(direction), "reason": traj.reason.value})
    return ConnectionGraph(records, undecided, broken_triple_chains(records, singular))


def broken_triple_chains(records: list[ConnectionRecord], singular: list[SingularPoint]) -> list:
    """Chains ``(g_0, ..., g_{n+1})`` of distinct connections with saddle-saddle
    ends, consecutive links sharing an endpoint, and inner links leaving a
    source or quadratic point."""
    SA = SingularClass.SADDLE
    inner_ok = (SingularClass.SOURCE, SingularClass.QUADRATIC)
    sasa = [k for k, r in enumerate(records) if singular[r.source].cls == SA and singular[r.target].cls == SA
            and r.source != r.target]
    inner = [k for k, r in enumerate(records) if singular[r.source].cls in inner_ok]

    def ends(k):
        r = records[k]
        return {r.source, r.target}

    chains = []
    for start in sasa:
        stack = [(start, [start])]
        while stack:
            cur, path = stack.pop()
            for nxt in sasa:
                if nxt not in path and ends(cur) & ends(nxt) and (len(path) == 1 or path[-1] in inner):
                    chain = tuple(path + [nxt])
                    if len(path) == 1 or all(k in inner for k in path[1:]):
                        if chain[::-1] not in chains and chain not in chains:
                            chains.append(chain)
            if len(path) <= len(records):
                for nxt in inner:
                    if nxt not in path and ends(cur) & ends(nxt):
                        stack.append((nxt, path + [nxt]))
    return [list(c) for c in chains]
