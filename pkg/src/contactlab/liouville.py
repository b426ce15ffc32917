"""Liouville pairs, the skeleton, Reeb transversality and the seed construction.

A balanced pair defines ``lambda = e^{-s} alpha_- + e^{s} alpha_+`` on
``R_s x M``; it is a Liouville form iff ``f0 > -2``. Reparametrising
``s -> s + sigma`` turns the criterion into ``2 X.sigma + f0 > -2``. The
Liouville field is

    Z(s, p) = ((sinh 2s + g0/2) d_s + X) / (cosh 2s + f0/2),

positively proportional to ``Z~ = (sinh 2s + g0/2) d_s + X``, so its bounded
orbits are those of the bounded-solution problem and the skeleton is the
graph of ``sigma_u``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .bounded_ode import (SAMPLE_DT, BoundedSolutionProblem, observed_C, problems_along_flow, shoot,
                          solve_sigma, x_derivative)
from .contact_pair import (BalancedPair, ContactPair, PairScalars, balance, check_contact,
                           pair_scalars, sample_scalar)
from .errors import (BoundViolated, HypothesisViolated, InputError, NoFeasibleEpsilon, NotContact,
                     SingularSystem)
from .exprlang import Expr, as_expr, div, exp, is_const, neg, parse
from .geometry import (Form, Grid, VectorField, exterior_derivative, flow_batch,
                       frobenius_residual, top_coefficient, wedge)
from .plane_fields import frame_at


def _worst(pts, vals, fn=np.argmin):
    i = int(fn(vals))
    return [float(c) for c in pts[i]], float(vals[i])


@dataclass
class LiouvilleVerdict:
    min_value: float
    worst_point: list
    liouville: bool

    def to_dict(self) -> dict:
        return {"min_value": self.min_value, "worst_point": self.worst_point,
                "liouville": self.liouville}


def liouville_check(bp: BalancedPair, scalars: PairScalars, grid: Grid) -> LiouvilleVerdict:
    """``min f0 > -2`` on the grid."""
    f0 = np.broadcast_to(sample_scalar(scalars.f0, bp.chart, grid.points), (grid.size,))
    pt, v = _worst(grid.points, f0)
    return LiouvilleVerdict(v, pt, v > -2.0)


def anosov_liouville_check(bp: BalancedPair, grid: Grid) -> tuple[LiouvilleVerdict, LiouvilleVerdict]:
    """Run :func:`liouville_check` on the pair and on ``(-alpha_-, alpha_+)``."""
    first = liouville_check(bp, pair_scalars(bp), grid)
    flipped = balance(ContactPair(-bp.alpha_minus, bp.alpha_plus), grid)
    return first, liouville_check(flipped, pair_scalars(flipped), grid)


def _as_scalar_expr(sigma, chart) -> Expr:
    if isinstance(sigma, Expr):
        return sigma
    if isinstance(sigma, str):
        return parse(sigma, chart.variables, chart.constants())
    return as_expr(float(sigma))


def rescale_search(bp: BalancedPair, scalars: PairScalars, sigma, grid: Grid) -> LiouvilleVerdict:
    """Evaluate ``2 X.sigma + f0`` on the grid; feasible iff its minimum exceeds ``-2``.

    ``sigma`` is an expression (``X.sigma`` exact) or a pair
    ``(values, x_derivative)`` of grid samples.
    """
    f0 = np.broadcast_to(sample_scalar(scalars.f0, bp.chart, grid.points), (grid.size,))
    if isinstance(sigma, tuple):
        xs = np.asarray(sigma[1], dtype=float)
    else:
        s = _as_scalar_expr(sigma, bp.chart)
        xs = np.broadcast_to(sample_scalar(bp.X.apply(s), bp.chart, grid.points), (grid.size,))
    vals = 2 * xs + f0
    pt, v = _worst(grid.points, vals)
    return LiouvilleVerdict(v, pt, v > -2.0)


def rescaled_pair(bp: BalancedPair, sigma, grid: Grid) -> BalancedPair:
    """The balanced pair ``(e^sigma alpha_-, e^sigma alpha_+)`` with ``f0' = f0 + 2 X.sigma``."""
    s = exp(_as_scalar_expr(sigma, bp.chart))
    return balance(ContactPair(bp.alpha_minus.scale(s), bp.alpha_plus.scale(s)), grid)


def liouville_vector(bp: BalancedPair, scalars: PairScalars, s, pts) -> np.ndarray:
    """Components ``(Z^s, Z^x, Z^y, Z^z)`` of the Liouville field at ``(s, p)``."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    s = np.broadcast_to(np.asarray(s, dtype=float), (len(pts),))
    sc = scalars.sample(bp.chart, pts)
    f0 = np.broadcast_to(sc["f0"], s.shape)
    g0 = np.broadcast_to(sc["g0"], s.shape)
    denom = np.cosh(2 * s) + f0 / 2
    X = bp.X.sample(pts)
    return np.column_stack([(np.sinh(2 * s) + g0 / 2) / denom, X / denom[:, None]])


# -- skeleton -------------------------------------------------------------------------

@dataclass
class SkeletonGraph:
    """Graph of ``sigma`` with per-point trajectory certificates.

    ``graph_codes`` are shot outcomes from ``(sigma(p), p)`` (0 = stayed within
    ``|s| <= A`` over the horizon); ``plus_codes`` / ``minus_codes`` from
    ``sigma(p) +- delta`` (+1 / -1 = escaped up / down). ``tracking_error``
    compares the ``s``-component of graph orbits with ``sigma_u`` solved
    afresh along the base orbit over ``[0, track_time]``.
    """

    points: np.ndarray
    sigma: np.ndarray
    A: np.ndarray
    graph_codes: np.ndarray
    plus_codes: np.ndarray
    minus_codes: np.ndarray
    tau_plus: np.ndarray
    tau_minus: np.ndarray
    tracking_error: float
    horizon: float
    delta: float

    @property
    def bounded_fraction(self) -> float:
        return float(np.mean(self.graph_codes == 0))

    @property
    def escape_fraction(self) -> float:
        if self.delta == 0:
            return float(np.mean((self.plus_codes == 0) & (self.minus_codes == 0)))
        return float(np.mean((self.plus_codes == 1) & (self.minus_codes == -1)))

    @property
    def passed(self) -> bool:
        return self.bounded_fraction == 1.0 and self.escape_fraction == 1.0

    def to_dict(self) -> dict:
        return {"n_points": int(len(self.points)), "bounded_fraction": self.bounded_fraction,
                "escape_fraction": self.escape_fraction, "tracking_error": self.tracking_error,
                "horizon": self.horizon, "delta": self.delta, "passed": self.passed,
                "max_abs_sigma": float(np.max(np.abs(self.sigma), initial=0.0))}


def skeleton(bp: BalancedPair, scalars: PairScalars, points, delta: float = 1e-2,
             horizon: float = 10.0, tol: float = 1e-10, track_time: float = 1.0,
             track_samples: int = 5, sigma: np.ndarray | None = None) -> SkeletonGraph:
    """Certify that the skeleton is the graph of ``sigma_u`` at ``points``.

    ``sigma`` may pass precomputed ``sigma_u`` values (the same solver is
    used otherwise).
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if sigma is None:
        sigma = solve_sigma(bp, scalars, points, "u", tol).values
    prob = problems_along_flow(bp, scalars, points, "u", tol)
    if prob.g_values.shape[1] * prob.dt < horizon:
        # extend the sampled coefficient to the requested horizon
        prob = _extend(bp, scalars, points, horizon)
    idx = np.arange(len(points))
    graph = shoot(prob, sigma, horizon, idx=idx, margin=0.0, atol=1e-12)
    up = shoot(prob, sigma + delta, horizon, idx=idx, atol=1e-12)
    down = shoot(prob, sigma - delta, horizon, idx=idx, atol=1e-12)

    # tracking along the base flow
    ts = np.linspace(0.0, track_time, track_samples)
    tr = shoot(prob, sigma, track_time, idx=idx, t_eval=ts, atol=1e-13)
    fb = flow_batch(bp.X, points, track_time, track_time / (track_samples - 1))
    along = solve_sigma(bp, scalars, fb.states.reshape(-1, 3), "u", tol).values
    along = along.reshape(track_samples, len(points))
    ok = ~np.isfinite(fb.exit_time)
    err = np.abs(tr.paths - along)[:, ok]
    tracking = float(np.max(err, initial=0.0))
    return SkeletonGraph(points, sigma, prob.A.copy(), graph.codes, up.codes, down.codes,
                         up.tau, down.tau, tracking, horizon, delta)


def _extend(bp, scalars, points, horizon):
    dt = SAMPLE_DT
    fb = flow_batch(bp.X, points, horizon + 1.0, dt)
    m, n = fb.states.shape[:2]
    g = sample_scalar(scalars.g0, bp.chart, fb.states.reshape(-1, 3)).reshape(m, n).T
    return BoundedSolutionProblem(g, dt, observed_C(g), frozen=np.isfinite(fb.exit_time),
                                  base_points=points)


# -- Reeb fields ----------------------------------------------------------------------

def reeb_field(alpha: Form, grid: Grid | None = None, tol: float = 1e-12) -> VectorField:
    """Reeb field ``R`` with ``alpha(R) = 1``, ``i_R d alpha = 0``.

    With ``d alpha = w01 dx^dy + w02 dx^dz + w12 dy^dz`` the kernel of
    ``d alpha`` is spanned by ``v = (w12, -w02, w01)`` and ``alpha(v)`` is the
    coefficient of ``alpha ^ d alpha``.

    Raises
    ------
    SingularSystem
        Where ``alpha ^ d alpha`` vanishes (identically, or at a grid point).
    """
    da = exterior_derivative(alpha)
    w01, w02, w12 = da.coeffs
    vol = top_coefficient(wedge(alpha, da))
    if is_const(vol, 0.0):
        raise SingularSystem("alpha ^ d alpha vanishes identically")
    if grid is not None:
        v = np.broadcast_to(sample_scalar(vol, alpha.chart, grid.points), (grid.size,))
        i = int(np.argmin(np.abs(v)))
        if abs(v[i]) <= tol:
            raise SingularSystem("alpha ^ d alpha vanishes", grid.points[i], v[i])
    return VectorField((div(w12, vol), neg(div(w02, vol)), div(w01, vol)), alpha.chart)


@dataclass
class ReebData:
    """Values of ``alpha_s(R'_+-)`` from the linear solve and the closed formulas.

    ``R'_+`` and ``R'_-`` are the Reeb fields of ``e^{sigma} alpha_+`` and
    ``e^{-sigma} alpha_-`` (the restriction of ``lambda`` to the graph of
    ``sigma``); ``alpha_s`` is not normalised. ``points`` keeps the inputs
    whose difference-quotient segments stay in the chart; ``skipped`` counts
    the others.
    """

    points: np.ndarray
    numeric_plus: np.ndarray
    numeric_minus: np.ndarray
    formula_plus: np.ndarray
    formula_minus: np.ndarray
    identity_residual: np.ndarray
    eps0: float
    hypothesis_sup: float
    skipped: int = 0

    @property
    def signs_ok(self) -> bool:
        return bool(np.all(self.numeric_plus < 0) and np.all(self.numeric_minus > 0)
                    and np.all(self.formula_plus < 0) and np.all(self.formula_minus > 0))

    @property
    def agreement(self) -> float:
        rp = np.abs(self.numeric_plus - self.formula_plus) / np.abs(self.numeric_plus)
        rm = np.abs(self.numeric_minus - self.formula_minus) / np.abs(self.numeric_minus)
        return float(max(np.max(rp, initial=0.0), np.max(rm, initial=0.0)))

    def to_dict(self) -> dict:
        return {"n_points": int(len(self.points)), "skipped": self.skipped, "signs_ok": self.signs_ok,
                "agreement": self.agreement, "eps0": self.eps0,
                "hypothesis_sup": self.hypothesis_sup,
                "identity_residual": float(np.nanmax(np.abs(self.identity_residual), initial=0.0)),
                "max_plus": float(np.max(self.numeric_plus)),
                "min_minus": float(np.min(self.numeric_minus))}


def reeb_transversality(bp: BalancedPair, scalars: PairScalars, points, sigma=0.0,
                        tol: float = 1e-10, h: float = 1e-3) -> ReebData:
    """Check ``alpha_s(R'_+) < 0 < alpha_s(R'_-)`` two ways.

    ``sigma`` is an expression (or constant). ``X``-derivatives of the
    bounded solutions are flow central differences of step ``h``; points
    whose segments leave a box are dropped and counted.

    Raises
    ------
    InputError
        If no point has its segments inside the chart.
    HypothesisViolated
        If ``sup |X.(sigma - sigma_s)| >= eps0 = min (cosh 2 sigma_s + f0/2)``.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    chart = bp.chart
    s_expr = _as_scalar_expr(sigma, chart)
    fwd = flow_batch(bp.X, points, h, h)
    bwd = flow_batch(bp.X, points, -h, h)
    inside = ~(np.isfinite(fwd.exit_time) | np.isfinite(bwd.exit_time))
    if not np.any(inside):
        raise InputError("difference quotients need orbit segments inside the chart")
    skipped = int(np.sum(~inside))
    points = points[inside]
    fr = frame_at(bp, scalars, points, tol)
    su, ss = fr.sigma_u, fr.sigma_s
    xsu, _ = x_derivative(bp, scalars, points, "u", tol, h=h)
    xss, _ = x_derivative(bp, scalars, points, "s", tol, h=h)
    s_val = np.broadcast_to(sample_scalar(s_expr, chart, points), su.shape)
    xs = np.broadcast_to(sample_scalar(bp.X.apply(s_expr), chart, points), su.shape)

    lower = np.cosh(2 * ss) + fr.f0 / 2
    eps0 = float(np.min(lower))
    hyp = np.abs(xs - xss)
    if eps0 <= 0 or np.max(hyp) >= eps0:
        i = int(np.argmax(hyp))
        raise HypothesisViolated(f"sup |X.(sigma - sigma_s)| = {np.max(hyp):.3e} >= eps0 = {eps0:.3e}",
                                 points[i], hyp[i])

    c = np.cosh(su - ss)
    x_lncosh = np.tanh(su - ss) * (xsu - xss)
    k_plus = (xsu - xss) + fr.r_u - fr.r_s
    k_minus = -(xsu - xss) + fr.r_u - fr.r_s
    formula_plus = -2 * c * np.exp(su - s_val) / k_plus * ((xs - xss) - x_lncosh + fr.r_u)
    formula_minus = 2 * c * np.exp(s_val - su) / k_minus * (-(xs - xss) - x_lncosh + fr.r_u)
    identity = -x_lncosh + fr.r_u - lower

    Rp = reeb_field(bp.alpha_plus.scale(exp(s_expr))).sample(points)
    Rm = reeb_field(bp.alpha_minus.scale(exp(neg(s_expr)))).sample(points)
    a_s = np.exp(-ss)[:, None] * fr.alpha_minus - np.exp(ss)[:, None] * fr.alpha_plus
    num_plus = np.einsum("ni,ni->n", a_s, Rp)
    num_minus = np.einsum("ni,ni->n", a_s, Rm)
    return ReebData(points, num_plus, num_minus, formula_plus, formula_minus, identity, eps0,
                    float(np.max(hyp)), skipped)


# -- pairs from foliations ----------------------------------------------------------

@dataclass
class FoliationPair:
    pair: ContactPair
    balanced: BalancedPair
    epsilon: float
    min_f0: float
    contact_ratio: tuple[float, float]
    tried: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "min_f0": self.min_f0,
                "contact_ratio": list(self.contact_ratio),
                "tried": [[float(e), r] for e, r in self.tried]}


def seed_pairing(alpha: Form, beta: Form) -> Expr:
    """Coefficient of ``<alpha, beta> = alpha ^ d beta + beta ^ d alpha``."""
    return top_coefficient(wedge(alpha, exterior_derivative(beta)) + wedge(beta, exterior_derivative(alpha)))


def liouville_pair_from_foliation(alpha: Form, beta: Form, grid: Grid,
                                  eps_grid=(1.0, 0.5, 0.25, 0.1, 0.05, 0.01, 1e-3),
                                  frobenius_tol: float = 1e-9) -> FoliationPair:
    """Largest ``eps`` in ``eps_grid`` with ``alpha_+- = eps beta +- alpha`` a Liouville pair.

    Requirements, in order: ``alpha_+`` positive and ``alpha_-`` negative
    contact on the grid, then ``min f0 > -2`` after balancing.

    Raises
    ------
    InputError
        If ``alpha`` is not integrable on the grid.
    NoFeasibleEpsilon
        If no ``eps`` passes.
    """
    fr = np.broadcast_to(sample_scalar(top_coefficient(frobenius_residual(alpha)), alpha.chart,
                                       grid.points), (grid.size,))
    if np.max(np.abs(fr)) > frobenius_tol:
        i = int(np.argmax(np.abs(fr)))
        raise InputError(f"alpha ^ d alpha = {fr[i]:.3e} at {grid.points[i].tolist()}: not a foliation")
    tried = []
    for eps in sorted(eps_grid, reverse=True):
        am = beta.scale(eps) - alpha
        ap = beta.scale(eps) + alpha
        pair = ContactPair(am, ap)
        try:
            check_contact(pair, grid)
        except NotContact as exc:
            tried.append((eps, f"NotContact: {exc}"))
            continue
        bp = balance(pair, grid)
        f0 = np.broadcast_to(sample_scalar(pair_scalars(bp).f0, bp.chart, grid.points), (grid.size,))
        if np.min(f0) <= -2:
            tried.append((eps, f"min f0 = {np.min(f0):.6g}"))
            continue
        vm, vp = pair.contact_volumes()
        ratio_p = np.broadcast_to(sample_scalar(vp, bp.chart, grid.points), (grid.size,))
        ratio_m = np.broadcast_to(sample_scalar(vm, bp.chart, grid.points), (grid.size,))
        tried.append((eps, "feasible"))
        return FoliationPair(pair, bp, float(eps), float(np.min(f0)),
                             (float(np.min(ratio_p)), float(np.max(ratio_m))), tried)
    raise NoFeasibleEpsilon(f"no feasible epsilon among {sorted(eps_grid, reverse=True)}")


# -- smoothing along the flow --------------------------------------------------------

@dataclass
class SmoothedField:
    """Result of :func:`smooth_along_flow`.

    ``values`` are grid samples (or ``None`` when the input was already an
    expression, returned unchanged in ``expr``); ``width`` is the Gaussian
    width in grid cells.
    """

    values: np.ndarray | None
    expr: Expr | None
    width: float
    c0_deviation: float
    x_deviation: float
    eps: float


def _interpolator(grid: Grid, values: np.ndarray):
    """Periodic-aware interpolant of flat grid samples, evaluated at cover points."""
    chart = grid.chart
    cube = grid.cube(values)  # [z, y, x]
    axes = [np.asarray(grid.axes[2]), np.asarray(grid.axes[1]), np.asarray(grid.axes[0])]
    ext = chart.extent()
    # fiber or box axes first, so that the glued slice can be interpolated
    for ax in (1, 2):
        if chart.periodic[2 - ax]:
            cube = np.concatenate([cube, np.take(cube, [0], axis=ax)], axis=ax)
            axes[ax] = np.append(axes[ax], axes[ax][0] + ext[2 - ax])
    if chart.periodic[2]:
        if chart.kind == "mapping_torus":
            # (v, 1) ~ (A v, 0)
            base = RegularGridInterpolator((axes[1], axes[2]), cube[0])
            Y, X = np.meshgrid(axes[1], axes[2], indexing="ij")
            v = np.stack([X, Y], axis=-1) @ chart.A.T
            v = np.mod(v, np.array(chart.fiber_periods))
            top = base(v[..., ::-1])[None]
        else:
            top = cube[:1]
        cube = np.concatenate([cube, top], axis=0)
        axes[0] = np.append(axes[0], axes[0][0] + ext[2])
    method = "cubic" if grid.n >= 4 else "linear"
    rgi = RegularGridInterpolator(axes, cube, method=method, bounds_error=False, fill_value=None)

    def f(pts):
        w, _ = chart.wrap(np.asarray(pts, dtype=float))
        return rgi(w[..., ::-1])
    return f


def x_derivative_sampled(X: VectorField, grid: Grid, values: np.ndarray, h: float = 1e-3):
    """Flow central difference of interpolated samples; ``nan`` where the segment leaves a box."""
    f = _interpolator(grid, values)
    pts = grid.points
    fwd = flow_batch(X, pts, h, h)
    bwd = flow_batch(X, pts, -h, h)
    d = (f(fwd.states[-1]) - f(bwd.states[-1])) / (2 * h)
    d[np.isfinite(fwd.exit_time) | np.isfinite(bwd.exit_time)] = np.nan
    return d


def smooth_along_flow(f, X: VectorField, eps: float, grid: Grid | None = None,
                      widths=(4.0, 2.0, 1.0, 0.5, 0.25, 0.125), h: float = 1e-3) -> SmoothedField:
    """Mollify ``f`` so that ``|f - f~| <= eps`` and ``|X.(f - f~)| <= eps``.

    An expression is already smooth and is returned unchanged. Grid samples
    are convolved with a Gaussian (periodic axes wrap), trying the widths in
    decreasing order and keeping the first one whose a posteriori bounds hold;
    the ``X``-derivative of the difference is a flow central difference of
    the interpolated samples.

    Raises
    ------
    BoundViolated
        If no width satisfies both bounds (worst point reported).
    """
    if isinstance(f, (Expr, str)):
        e = f if isinstance(f, Expr) else parse(f, X.chart.variables, X.chart.constants())
        return SmoothedField(None, e, 0.0, 0.0, 0.0, eps)
    if grid is None:
        raise InputError("sampled input needs its grid")
    values = np.asarray(f, dtype=float).reshape(grid.size)
    cube = grid.cube(values)
    modes = ["wrap" if p else "nearest" for p in grid.chart.periodic[::-1]]
    worst = None
    for w in widths:
        sm = ndimage.gaussian_filter(cube, sigma=w, mode=modes).ravel()
        diff = values - sm
        c0 = float(np.max(np.abs(diff)))
        xd = x_derivative_sampled(X, grid, diff, h)
        xdev = float(np.nanmax(np.abs(xd), initial=0.0))
        if c0 <= eps and xdev <= eps:
            return SmoothedField(sm, None, float(w), c0, xdev, eps)
        i = int(np.argmax(np.abs(diff)))
        worst = (grid.points[i], max(c0, xdev))
    raise BoundViolated("no smoothing width meets both bounds", worst[0], worst[1])
