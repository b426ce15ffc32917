"""Unique bounded solutions of ``y' = sinh(2y) + g(t)/2`` by escape-bound bisection.

For a coefficient ``g`` sampled along a flow line, the equation has exactly
one solution that stays bounded for all forward time. With ``eps = 2`` (a
lower bound for ``dF/dy = 2 cosh 2y``) and ``C`` a bound for
``|F(y, t) - F(y, 0)|``, solutions leaving ``[-A, A]``,
``A = (1 + C + |F(0, 0)|) / eps``, diverge monotonically, and the gap between
two solutions grows at least like ``e^{eps t}``. Bisection on ``[-A, A]``
driven by escape direction therefore converges to the bounded initial value,
and a shot that stays in ``[-A - margin, A + margin]`` up to time ``T`` is
within ``(A + 1) e^{-eps T}`` of it.

Applied along the flow of ``X`` with ``g = g0`` this yields ``sigma_u``
(``X . sigma_u = sinh(2 sigma_u) + g0/2``); along ``-X`` with ``g = -g0`` it
yields ``sigma_s`` (``X . sigma_s = -sinh(2 sigma_s) + g0/2``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline

from .contact_pair import BalancedPair, PairScalars, sample_scalar
from .errors import BracketFailure, InputError
from .geometry import Form, Grid, flow_batch
from .geometry.integrate import dopri_batch

EPSILON = 2.0
ESCAPE_MARGIN = 0.5
C_HEADROOM = 1.1
SAMPLE_DT = 1 / 128  # spline sampling step for g; interpolation error ~ dt^4
MULTISECTION = 8  # bracket subdivisions per batched shot round


class Shot(str, Enum):
    PLUS = "EscapePlus"
    MINUS = "EscapeMinus"
    UNDECIDED = "Undecided"


@dataclass
class BoundedSolutionProblem:
    """A batch of problems ``y' = sinh(2y) + g_i(t)/2``, one per base point.

    Parameters
    ----------
    g_values : ndarray (n, m)
        Samples of ``g_i`` on the uniform grid ``t_j = j * dt``; values beyond
        the last sample are held constant (the freeze rule).
    dt : float
    C : ndarray (n,)
        Bound for ``|F(y, t) - F(y, 0)| = |g(t) - g(0)| / 2``.
    frozen : ndarray of bool (n,), optional
        Base trajectories that left a box (``g`` frozen at the exit value).
    """

    g_values: np.ndarray
    dt: float
    C: np.ndarray
    epsilon: float = EPSILON
    frozen: np.ndarray | None = None
    base_points: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.g_values = np.atleast_2d(np.asarray(self.g_values, dtype=float))
        n = self.g_values.shape[0]
        self.C = np.broadcast_to(np.asarray(self.C, dtype=float), (n,)).copy()
        if self.frozen is None:
            self.frozen = np.zeros(n, dtype=bool)
        if self.g_values.shape[1] < 4:
            self.g_values = np.repeat(self.g_values[:, :1], 4, axis=1) if self.g_values.shape[1] == 1 \
                else np.pad(self.g_values, ((0, 0), (0, 4 - self.g_values.shape[1])), mode="edge")

    # -- constructors -------------------------------------------------------
    @classmethod
    def constant(cls, g0, epsilon: float = EPSILON) -> "BoundedSolutionProblem":
        g = np.atleast_1d(np.asarray(g0, dtype=float))
        return cls(g[:, None], 1.0, np.zeros(len(g)), epsilon)

    @classmethod
    def from_function(cls, g, T: float, dt: float = SAMPLE_DT,
                      epsilon: float = EPSILON) -> "BoundedSolutionProblem":
        """Sample ``g(t)`` (vectorised, returns ``(n, m)`` or ``(m,)``) on ``[0, T]``."""
        t = np.arange(int(np.ceil(T / dt)) + 4) * dt
        vals = np.atleast_2d(np.asarray(g(t), dtype=float))
        return cls(vals, dt, observed_C(vals), epsilon)

    # -- bounds --------------------------------------------------------------
    @property
    def n(self) -> int:
        return self.g_values.shape[0]

    @property
    def F00(self) -> np.ndarray:
        return np.abs(self.g_values[:, 0]) / 2

    @property
    def A(self) -> np.ndarray:
        """Escape bound ``(1 + C + |F(0, 0)|) / eps`` per problem."""
        return (1.0 + self.C + self.F00) / self.epsilon

    def horizon(self, tol: float) -> np.ndarray:
        """``T = ln((A + 1) / tol) / eps``: an undecided shot certifies ``tol``."""
        return np.log((self.A + 1.0) / tol) / self.epsilon

    @cached_property
    def _spline(self) -> np.ndarray:
        # C2 cubic spline coefficients, shape (4, m - 1, n); a C2 interpolant
        # keeps the adaptive integrator from stalling at sample knots
        m = self.g_values.shape[1]
        t = np.arange(m) * self.dt
        return CubicSpline(t, self.g_values, axis=1, bc_type="not-a-knot").c

    def g(self, t: float, idx: np.ndarray) -> np.ndarray:
        """Cubic spline interpolation of ``g`` at time ``t`` (held after the last sample)."""
        G = self.g_values
        m = G.shape[1]
        u = t / self.dt
        if u >= m - 1:
            return G[idx, -1]
        j = min(max(int(u), 0), m - 2)
        s = t - j * self.dt
        c = self._spline[:, j]
        return ((c[0, idx] * s + c[1, idx]) * s + c[2, idx]) * s + c[3, idx]

    def rhs(self, t: float, y: np.ndarray, idx: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.sinh(2.0 * y) + 0.5 * self.g(t, idx)[:, None]

    def subset(self, idx) -> "BoundedSolutionProblem":
        return BoundedSolutionProblem(self.g_values[idx], self.dt, self.C[idx].copy(), self.epsilon,
                                      self.frozen[idx],
                                      None if self.base_points is None else self.base_points[idx])


def observed_C(g_values: np.ndarray, headroom: float = C_HEADROOM) -> np.ndarray:
    """Observed oscillation ``max_t |g(t) - g(0)| / 2`` with headroom."""
    g_values = np.atleast_2d(g_values)
    return headroom * np.max(np.abs(g_values - g_values[:, :1]), axis=1) / 2


@dataclass
class ShotBatch:
    """Outcome codes (+1 plus, -1 minus, 0 undecided) and escape times."""

    codes: np.ndarray
    tau: np.ndarray
    times: np.ndarray | None = None
    paths: np.ndarray | None = None


def shoot(prob: BoundedSolutionProblem, y0: np.ndarray, horizon: float,
          idx: np.ndarray | None = None, margin: float = ESCAPE_MARGIN,
          t_eval: np.ndarray | None = None, atol: float = 1e-12,
          segment: float = 1.0) -> ShotBatch:
    """Integrate shots for problems ``idx`` and classify them by escape direction.

    Integration proceeds in segments of length ``segment``; the absolute
    tolerance on the segment starting at ``t`` is ``atol * e^{eps t}``. Since
    ``dF/dy >= eps``, a local error committed at time ``t`` shifts the
    effective initial value by at most its size times ``e^{-eps t}``, so the
    loosened tolerance keeps the equivalent initial-value error per segment at
    ``atol``.
    """
    if idx is None:
        idx = np.arange(prob.n)
    idx = np.asarray(idx)
    y = np.broadcast_to(np.asarray(y0, dtype=float), idx.shape).copy()
    bound = prob.A[idx] + margin
    codes = np.zeros(len(idx), dtype=int)
    tau = np.full(len(idx), np.inf)
    codes[y > bound] = 1
    codes[y < -bound] = -1
    tau[codes != 0] = 0.0
    paths = None
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        paths = np.tile(y, (len(t_eval), 1))
    live = np.where(codes == 0)[0]
    t0 = 0.0
    while len(live) and t0 < horizon:
        t1 = min(horizon, t0 + segment)
        tol = min(atol * np.exp(prob.epsilon * t0), 1e-4)
        rows_of = live

        def f(s, yy, r, t0=t0, rows_of=rows_of):
            return prob.rhs(t0 + s, yy, idx[rows_of[r]])

        def on_step(s, yy, r, t0=t0, rows_of=rows_of):
            rr = rows_of[r]
            up = yy[:, 0] > bound[rr]
            down = yy[:, 0] < -bound[rr]
            codes[rr[up]] = 1
            codes[rr[down]] = -1
            tau[rr[up | down]] = t0 + s
            return ~(up | down)

        sel = None
        if t_eval is not None:
            sel = np.where((t_eval > t0) & (t_eval <= t1))[0]
        res = dopri_batch(f, y[live, None], t1 - t0, rtol=tol, atol=tol,
                          t_eval=None if sel is None else t_eval[sel] - t0,
                          on_step=on_step, hmax=0.25)
        y[live] = res.y_final[:, 0]
        if sel is not None and len(sel):
            paths[np.ix_(sel, live)] = res.y_eval[:, :, 0]
        live = live[~res.retired]
        t0 = t1
    times = t_eval
    return ShotBatch(codes, tau, times, paths)


@dataclass
class ShotOutcome:
    kind: Shot
    tau: float
    times: np.ndarray
    values: np.ndarray


def classify_shot(prob: BoundedSolutionProblem, y0: float, horizon: float,
                  index: int = 0, samples: int = 201) -> ShotOutcome:
    """Classify one shot as escaping up, escaping down, or undecided up to ``horizon``."""
    t_eval = np.linspace(0.0, horizon, samples)
    sb = shoot(prob, np.array([y0]), horizon, idx=np.array([index]), t_eval=t_eval)
    kind = {1: Shot.PLUS, -1: Shot.MINUS, 0: Shot.UNDECIDED}[int(sb.codes[0])]
    values = sb.paths[:, 0] if sb.paths is not None else np.full(samples, y0)
    keep = t_eval <= sb.tau[0]
    return ShotOutcome(kind, float(sb.tau[0]), t_eval[keep], values[keep])


@dataclass
class BoundedValue:
    """Bounded initial values for a batch of problems.

    ``width`` is the certified distance to the exact bounded initial value
    (half the final bracket, or ``(A + 1) e^{-eps T}`` when an undecided shot
    ended the search). ``failed`` marks bracket failures after retries.
    """

    y0: np.ndarray
    width: np.ndarray
    A: np.ndarray
    C: np.ndarray
    horizon: np.ndarray
    failed: np.ndarray
    retries: np.ndarray


def bounded_initial_value(prob: BoundedSolutionProblem, tol: float = 1e-10,
                          max_doublings: int = 6, raise_on_failure: bool = False) -> BoundedValue:
    """Bracket search on ``[-A, A]`` with the invariant ``lo`` escapes down, ``hi`` escapes up.

    Raises
    ------
    BracketFailure
        Only with ``raise_on_failure``; otherwise failures are flagged per
        problem after ``max_doublings`` doublings of ``C``.
    """
    n = prob.n
    y0 = np.full(n, np.nan)
    width = np.full(n, np.nan)
    retries = np.zeros(n, dtype=int)
    todo = np.arange(n)
    for attempt in range(max_doublings + 1):
        if not len(todo):
            break
        A = prob.A[todo]
        T = float(np.max(prob.horizon(tol)[todo]))
        k = len(todo)
        sb = shoot(prob, np.concatenate([A, -A]), T, idx=np.concatenate([todo, todo]))
        ok = (sb.codes[:k] == 1) & (sb.codes[k:] == -1)
        bad = todo[~ok]
        good = todo[ok]
        if len(good):
            _bisect(prob, good, tol, T, y0, width)
        if len(bad):
            prob.C[bad] = np.maximum(2 * prob.C[bad], 0.5)
            retries[bad] += 1
        todo = bad
    failed = np.isnan(y0)
    if raise_on_failure and np.any(failed):
        i = int(np.where(failed)[0][0])
        pt = prob.base_points[i] if prob.base_points is not None else None
        raise BracketFailure("escape bound does not bracket the bounded initial value", pt)
    return BoundedValue(y0, width, prob.A.copy(), prob.C.copy(), prob.horizon(tol), failed, retries)


def backward_estimate(prob: BoundedSolutionProblem, rows: np.ndarray, T: float,
                      atol: float = 1e-11) -> np.ndarray:
    """Integrate from ``y(T) = 0`` back to ``t = 0``.

    Backward in time the equation contracts at rate at least ``eps``, so the
    result is within ``A e^{-eps T}`` plus integration error of the bounded
    initial value. It only seeds the bisection bracket, which is verified by
    forward shots before use.
    """
    def f(s, y, r):
        return -prob.rhs(T - s, y, rows[r])

    res = dopri_batch(f, np.zeros((len(rows), 1)), T, rtol=atol, atol=atol, hmax=0.25)
    return res.y_final[:, 0]


def _shot_tol(width: float) -> float:
    # a shot only has to resolve offsets of the size of the current bracket
    return float(np.clip(1e-2 * width, 1e-13, 1e-5))


def _bisect(prob, rows, tol, T, y0, width):
    """Multisection search keeping ``lo`` escaping down and ``hi`` escaping up."""
    A = prob.A[rows]
    lo = -A.copy()
    hi = A.copy()
    # warm start: narrow brackets around the backward-integration estimate,
    # kept only where forward shots confirm the escape signs
    yb = backward_estimate(prob, rows, T, atol=0.1 * tol)
    pending = np.abs(yb) < A
    for scale in (10 * tol, 1e-5):
        idx = np.where(pending)[0]
        if not len(idx):
            break
        w = scale * (A[idx] + 1.0)
        at = _shot_tol(float(np.min(w)))
        k = len(idx)
        sb = shoot(prob, np.concatenate([yb[idx] + w, yb[idx] - w]), T,
                   idx=np.concatenate([rows[idx], rows[idx]]), atol=at)
        ok = (sb.codes[:k] == 1) & (sb.codes[k:] == -1)
        hi[idx[ok]] = yb[idx[ok]] + w[ok]
        lo[idx[ok]] = yb[idx[ok]] - w[ok]
        pending[idx[ok]] = False

    active = np.ones(len(rows), dtype=bool)
    cert = (A + 1.0) * np.exp(-prob.epsilon * T)
    frac = np.arange(1, MULTISECTION) / MULTISECTION
    for _ in range(200):
        if not np.any(active):
            break
        act = np.where(active)[0]
        # interior probes, one batched shot per round; codes are monotone in y
        probes = lo[act, None] + frac[None, :] * (hi - lo)[act, None]
        at = _shot_tol(float(np.min(hi[act] - lo[act])) / MULTISECTION)
        sb = shoot(prob, probes.ravel(), T, idx=np.repeat(rows[act], len(frac)), atol=at)
        codes = sb.codes.reshape(probes.shape)
        und = np.any(codes == 0, axis=1)
        n_down = np.sum(codes == -1, axis=1)
        n_up = np.sum(codes == 1, axis=1)
        m = len(frac)
        new_lo = np.where(n_down > 0, probes[np.arange(len(act)), np.maximum(n_down - 1, 0)], lo[act])
        new_hi = np.where(n_up > 0, probes[np.arange(len(act)), np.minimum(m - n_up, m - 1)], hi[act])
        lo[act], hi[act] = new_lo, new_hi
        done_und = act[und]
        if len(done_und):
            first = np.argmax(codes[und] == 0, axis=1)
            y0[rows[done_und]] = probes[und][np.arange(len(first)), first]
            width[rows[done_und]] = cert[done_und]
        active[done_und] = False
        narrow = active & (hi - lo < tol)
        y0[rows[narrow]] = 0.5 * (lo[narrow] + hi[narrow])
        width[rows[narrow]] = 0.5 * (hi[narrow] - lo[narrow])
        active &= ~narrow


# -- sigma fields ---------------------------------------------------------------

def problems_along_flow(bp: BalancedPair, scalars: PairScalars, points: np.ndarray,
                        kind: str = "u", tol: float = 1e-10, dt: float = SAMPLE_DT,
                        flow_tol: float = 1e-10) -> BoundedSolutionProblem:
    """Sample ``g0`` along the flow of ``X`` (kind ``"u"``) or ``-X`` (kind ``"s"``).

    For ``"s"`` the coefficient is ``-g0``, turning
    ``X . s = -sinh(2 s) + g0/2`` into the same normal form along ``-X``.
    The cached horizon is sized from a pessimistic escape bound so that
    later doublings of ``C`` stay covered.
    """
    if kind not in ("u", "s"):
        raise InputError("kind must be 'u' or 's'")
    chart = bp.chart
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    g_here = sample_scalar(scalars.g0, chart, points)
    sign = 1.0 if kind == "u" else -1.0
    C0 = C_HEADROOM * float(np.max(np.abs(g_here))) if len(points) else 0.0
    A0 = (1.0 + 4 * C0 + 2.0 + np.max(np.abs(g_here), initial=0.0) / 2) / EPSILON
    T = np.log((A0 + 1.0) / tol) / EPSILON + 1.0
    flow = flow_batch(bp.X, points, sign * T, dt, tol=flow_tol)
    m, n = flow.states.shape[:2]
    g = sample_scalar(scalars.g0, chart, flow.states.reshape(-1, 3)).reshape(m, n).T
    g = sign * g
    return BoundedSolutionProblem(g, dt, observed_C(g), EPSILON, np.isfinite(flow.exit_time), points)


@dataclass
class SigmaSolution:
    points: np.ndarray
    values: np.ndarray
    width: np.ndarray
    A: np.ndarray
    failed: np.ndarray
    frozen: np.ndarray
    kind: str


def solve_sigma(bp: BalancedPair, scalars: PairScalars, points: np.ndarray, kind: str = "u",
                tol: float = 1e-10, dt: float = SAMPLE_DT, chunk: int = 4096) -> SigmaSolution:
    """Bounded solution ``sigma_u`` or ``sigma_s`` at arbitrary points."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(points)
    vals = np.full(n, np.nan)
    width = np.full(n, np.nan)
    A = np.full(n, np.nan)
    failed = np.zeros(n, dtype=bool)
    frozen = np.zeros(n, dtype=bool)
    for start in range(0, n, chunk):
        sl = slice(start, min(n, start + chunk))
        prob = problems_along_flow(bp, scalars, points[sl], kind, tol, dt)
        bv = bounded_initial_value(prob, tol)
        vals[sl], width[sl], A[sl], failed[sl] = bv.y0, bv.width, bv.A, bv.failed
        frozen[sl] = prob.frozen
    return SigmaSolution(points, vals, width, A, failed, frozen, kind)


@dataclass
class SigmaFields:
    """Grid samples of ``sigma_u`` and ``sigma_s`` with certificates.

    ``residual_u`` / ``residual_s`` are filled by :func:`sigma_residuals`
    (``nan`` where not computed).
    """

    points: np.ndarray
    sigma_u: np.ndarray
    sigma_s: np.ndarray
    width_u: np.ndarray
    width_s: np.ndarray
    A_u: np.ndarray
    A_s: np.ndarray
    missing: np.ndarray
    frozen: np.ndarray
    residual_u: np.ndarray | None = None
    residual_s: np.ndarray | None = None
    grid: Grid | None = field(default=None, repr=False)


def sigma_fields(bp: BalancedPair, scalars: PairScalars, grid_or_points, tol: float = 1e-10,
                 dt: float = SAMPLE_DT, residuals: bool = False, h: float = 1e-3) -> SigmaFields:
    """Solve ``sigma_u`` and ``sigma_s`` at every grid point (or given points)."""
    grid = grid_or_points if isinstance(grid_or_points, Grid) else None
    pts = grid.points if grid is not None else np.asarray(grid_or_points, dtype=float).reshape(-1, 3)
    su = solve_sigma(bp, scalars, pts, "u", tol, dt)
    ss = solve_sigma(bp, scalars, pts, "s", tol, dt)
    sf = SigmaFields(pts, su.values, ss.values, su.width, ss.width, su.A, ss.A,
                     su.failed | ss.failed, su.frozen | ss.frozen, grid=grid)
    if residuals:
        sf.residual_u, sf.residual_s = sigma_residuals(bp, scalars, sf, tol, dt, h)
    return sf


def x_derivative(bp: BalancedPair, scalars: PairScalars, points: np.ndarray, kind: str,
                 tol: float = 1e-10, dt: float = SAMPLE_DT, h: float = 1e-3):
    """Flow central difference ``(sigma(phi_h p) - sigma(phi_-h p)) / 2h``.

    Returns ``(derivative, valid)`` where ``valid`` is false when the flow
    segment leaves a box.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    fwd = flow_batch(bp.X, points, h, h)
    bwd = flow_batch(bp.X, points, -h, h)
    valid = ~(np.isfinite(fwd.exit_time) | np.isfinite(bwd.exit_time))
    both = np.vstack([fwd.states[-1], bwd.states[-1]])
    sol = solve_sigma(bp, scalars, both, kind, tol, dt)
    n = len(points)
    return (sol.values[:n] - sol.values[n:]) / (2 * h), valid


def sigma_residuals(bp, scalars, sf: SigmaFields, tol=1e-10, dt=SAMPLE_DT, h=1e-3):
    """PDE residuals ``|X.sigma_u - sinh(2 sigma_u) - g0/2|`` and the ``sigma_s`` analogue."""
    g0 = sample_scalar(scalars.g0, bp.chart, sf.points)
    du, valid = x_derivative(bp, scalars, sf.points, "u", tol, dt, h)
    ds, _ = x_derivative(bp, scalars, sf.points, "s", tol, dt, h)
    ru = np.abs(du - np.sinh(2 * sf.sigma_u) - g0 / 2)
    rs = np.abs(ds + np.sinh(2 * sf.sigma_s) - g0 / 2)
    ru[~valid] = np.nan
    rs[~valid] = np.nan
    return ru, rs


# -- continuity under perturbation -------------------------------------------

@dataclass
class ContinuityTable:
    amplitudes: np.ndarray
    deviations: np.ndarray

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.deviations) < 0))


def continuity_probe(bp: BalancedPair, perturbation: tuple[Form, Form], amplitudes, grid: Grid,
                     tol: float = 1e-10, dt: float = SAMPLE_DT) -> ContinuityTable:
    """Sup-deviation of ``sigma_u`` under ``alpha_pm -> alpha_pm + a * beta_pm``.

    ``perturbation`` holds two symbolic 1-forms; non-symbolic or non-smooth
    perturbations (non-finite values or first derivatives on the grid) are
    rejected.
    """
    from .contact_pair import ContactPair, balance, pair_scalars
    from .geometry import exterior_derivative

    for beta in perturbation:
        if not isinstance(beta, Form) or beta.degree != 1:
            raise InputError("perturbation must be a pair of symbolic 1-forms")
        try:
            beta.sample(grid.points)
            exterior_derivative(beta).sample(grid.points)
        except Exception as exc:  # DomainError or overflow
            raise InputError(f"perturbation is not smooth on the grid: {exc}") from None
    base = solve_sigma(bp, pair_scalars(bp), grid.points, "u", tol, dt).values
    devs = []
    for a in amplitudes:
        if a == 0:
            devs.append(0.0)
            continue
        pert = ContactPair(bp.alpha_minus + perturbation[0].scale(a), bp.alpha_plus + perturbation[1].scale(a))
        bpa = balance(pert, grid)
        vals = solve_sigma(bpa, pair_scalars(bpa), grid.points, "u", tol, dt).values
        devs.append(float(np.max(np.abs(vals - base))))
    return ContinuityTable(np.asarray(amplitudes, dtype=float), np.asarray(devs))
