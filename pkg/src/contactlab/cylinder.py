"""Scalar ODEs on the cylinder ``R x R/Z``.

A field ``F(x, t)``, 1-periodic in ``t``, gives ``X = F d_x + d_t``. Its
integral curves are graphs of solutions of ``x' = F(x, t)``; the time-1 map
``P`` is the return map to ``t = 0``, fixed points of ``P`` are closed
tangent loops and a loop ``t -> h(t)`` with ``h' - F(h, t)`` one-signed is a
closed transversal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.optimize import brentq

from .errors import BandInvalid, ConstructionFailed, InputError, NonConvergence
from .exprlang import compile_exprs, parse
from .geometry import dopri_batch

CYLINDER_VARS = ("x", "t")
ROOT_TOL = 1e-10


@dataclass
class CylinderField:
    """Bounded field ``F(x, t)``, vectorised over numpy arrays.

    ``bound`` is a sup bound and ``lipschitz`` a Lipschitz estimate in ``x``
    (``inf`` for merely continuous fields).
    """

    F: Callable[[np.ndarray, np.ndarray], np.ndarray]
    bound: float = np.inf
    lipschitz: float = np.inf
    source: str | None = None

    @classmethod
    def from_expr(cls, text: str, constants: dict | None = None, bound: float = np.inf,
                  lipschitz: float | None = None, x_range=(-2.0, 2.0)) -> "CylinderField":
        """Parse ``text`` in the variables ``x, t``; bounds are estimated on ``x_range`` when absent."""
        e = parse(text, CYLINDER_VARS, constants or {})
        fn = compile_exprs([e], CYLINDER_VARS)

        def F(x, t):
            x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
            return np.broadcast_to(fn(x, t)[0], x.shape)

        if lipschitz is None or not np.isfinite(bound):
            xs = np.linspace(*x_range, 801)
            ts = np.linspace(0.0, 1.0, 101)
            X, T = np.meshgrid(xs, ts, indexing="ij")
            V = F(X, T)
            if not np.isfinite(bound):
                bound = float(np.max(np.abs(V)))
            if lipschitz is None:
                lipschitz = float(np.max(np.abs(np.diff(V, axis=0))) / (xs[1] - xs[0]))
        return cls(F, bound, lipschitz, text)

    @classmethod
    def constant(cls, c: float) -> "CylinderField":
        return cls(lambda x, t: np.full(np.broadcast(x, t).shape, float(c)), abs(c), 0.0, repr(c))

    def __call__(self, x, t):
        return self.F(x, t)

    def _require_lipschitz(self, op: str):
        if not np.isfinite(self.lipschitz):
            raise InputError(f"{op} needs a field with a finite Lipschitz estimate")


def _as_field(F) -> CylinderField:
    if isinstance(F, CylinderField):
        return F
    if isinstance(F, str):
        return CylinderField.from_expr(F)
    if callable(F):
        return CylinderField(F)
    return CylinderField.constant(float(F))


def _solve(F: CylinderField, x0, t_eval=None, tol=1e-12, shift: float = 0.0):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))

    def rhs(t, y, idx):
        return F(y[:, 0], t)[:, None] + shift

    res = dopri_batch(rhs, x0[:, None], 1.0, rtol=max(tol, 1e-13), atol=tol, t_eval=t_eval, hmax=0.05)
    return res


@dataclass
class ReturnMap:
    x: np.ndarray
    P: np.ndarray

    @property
    def displacement(self) -> np.ndarray:
        return self.P - self.x

    @property
    def order_preserved(self) -> bool:
        order = np.argsort(self.x)
        return bool(np.all(np.diff(self.P[order]) > 0))


def return_map(F, x_grid, tol: float = 1e-12) -> ReturnMap:
    """Time-1 map of ``x' = F(x, t)`` on the sample grid."""
    F = _as_field(F)
    x = np.asarray(x_grid, dtype=float).ravel()
    return ReturnMap(x, _solve(F, x, tol=tol).y_final[:, 0])


# -- closed tangent loops ---------------------------------------------------------

@dataclass
class TangentLoop:
    """Closed integral curve through ``(x0, 0)``; ``residual`` is ``|P(x0) - x0|``."""

    x0: float
    t: np.ndarray
    h: np.ndarray
    residual: float


def _loop(F, x0, samples=101, tol=1e-12) -> TangentLoop:
    ts = np.linspace(0.0, 1.0, samples)
    res = _solve(F, [x0], t_eval=ts, tol=tol)
    h = res.y_eval[:, 0, 0]
    return TangentLoop(float(x0), ts, h, float(abs(h[-1] - x0)))


def closed_orbits(F, x_range=(-1.0, 1.0), n: int = 401, tol: float = 1e-10) -> list[TangentLoop]:
    """Closed tangent loops with base point in ``x_range``.

    Roots of ``d = P - id`` are grid points with ``|d| < tol`` and sign
    changes refined by Brent's method to ``|d| < tol``.
    """
    F = _as_field(F)
    F._require_lipschitz("closed_orbits")
    xs = np.linspace(*x_range, n)
    d = return_map(F, xs).displacement

    def disp(x):
        return float(_solve(F, [x]).y_final[0, 0] - x)

    roots = list(xs[np.abs(d) < tol])
    for i in range(n - 1):
        if abs(d[i]) < tol or abs(d[i + 1]) < tol or np.sign(d[i]) == np.sign(d[i + 1]):
            continue
        roots.append(brentq(disp, xs[i], xs[i + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps))
    loops = [_loop(F, r) for r in sorted(roots)]
    return [lp for lp in loops if lp.residual < tol]


# -- Kneser interval ------------------------------------------------------------------

@dataclass
class KneserInterval:
    lower: float
    upper: float
    gap_lower: float
    gap_upper: float
    n_max: int
    history: np.ndarray = field(repr=False, default=None)


def kneser_interval(F, x0: float, n_max: int = 24, tol: float = 1e-3,
                    ode_tol: float = 1e-12) -> KneserInterval:
    """Time-1 values of the extremal solutions through ``x0``.

    ``m_-`` and ``m_+`` are limits of the time-1 values of ``x' = F -+ 2^-n``
    (monotone in ``n`` by comparison), sampled for ``n = 0..n_max``.

    Raises
    ------
    NonConvergence
        If either sequence moves by more than ``tol`` at the last step.
    """
    F = _as_field(F)
    ns = np.arange(n_max + 1)
    # near a non-Lipschitz point the shifted field has equilibria of size
    # ~2^(-3n/2), so the absolute tolerance follows the shift
    tols = [min(ode_tol, 1e-3 * 2.0 ** (-1.5 * k)) for k in ns]
    lo = np.array([_solve(F, [x0], tol=tl, shift=-2.0 ** -k).y_final[0, 0] for k, tl in zip(ns, tols)])
    hi = np.array([_solve(F, [x0], tol=tl, shift=2.0 ** -k).y_final[0, 0] for k, tl in zip(ns, tols)])
    gl, gu = abs(lo[-1] - lo[-2]), abs(hi[-1] - hi[-2])
    if max(gl, gu) > tol:
        raise NonConvergence(f"extremal sequences still move by {max(gl, gu):.3e} at n = {n_max}",
                             [x0, 1.0], max(gl, gu))
    return KneserInterval(float(lo[-1]), float(hi[-1]), float(gl), float(gu), n_max,
                          np.column_stack([ns, lo, hi]))


def euler_endpoint(F, x0: float, steps: int = 1000) -> float:
    """Fixed-step Euler time-1 value (one member of the solution funnel for Lipschitz ``F``)."""
    F = _as_field(F)
    x, h = float(x0), 1.0 / steps
    for k in range(steps):
        x += h * float(F(np.array(x), np.array(k * h)))
    return x


# -- closed transversals --------------------------------------------------------------

@dataclass
class TransversalLoop:
    """Loop ``t -> h(t)`` with ``sign * (h' - F(h, t)) >= margin > 0`` on the check grid."""

    t: np.ndarray
    h: np.ndarray
    dh: np.ndarray
    margin: float
    sign: int
    band: tuple
    x0: float
    N: int | None

    @property
    def closing_error(self) -> float:
        return float(abs(self.h[-1] - self.h[0]))


def _bump(s):
    """Smooth step on ``[0, 1]`` with all derivatives vanishing at both ends."""
    s = np.clip(s, 0.0, 1.0)
    a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1 - s, 1.0)), 0.0)
    return a / (a + b)


def _dbump(s, eps=1e-6):
    return (_bump(s + eps) - _bump(s - eps)) / (2 * eps)


def one_signed_bands(xs: np.ndarray, d: np.ndarray, tol: float = ROOT_TOL) -> list[tuple[int, int, int]]:
    """Maximal runs ``(i, j, sign)`` of grid indices on which ``d`` has one strict sign."""
    s = np.where(np.abs(d) < tol, 0, np.sign(d)).astype(int)
    bands, i = [], 0
    while i < len(s):
        if s[i] == 0:
            i += 1
            continue
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        bands.append((i, j, int(s[i])))
        i = j + 1
    return bands


def closed_transversal(F, search_range=(-1.0, 1.0), n: int = 401, width: float = 0.1,
                       n_levels: int = 30, check: int = 2001) -> TransversalLoop | None:
    """Closed transversal inside a band where ``d = P - id`` is one-signed.

    The band with the largest ``max |d|`` is used. If some grid point ``x0``
    of the band has ``F(x0, .)`` one-signed against ``d``, the constant loop
    at the best such point is returned. Otherwise, from the maximiser ``x0``
    of ``|d|`` and for ``N = 0, 1, ...``, the loop solves

        h' = F(h, t) + kappa + c b'(t),   kappa = -sign(d) 2^-N,

    with ``b`` a smooth monotone step on ``[1 - width, 1]`` and ``c`` fixed
    by ``h(1) = x0``. The first ``N`` whose uncorrected displacement keeps
    the sign of ``d`` is used, so ``c`` has the sign of ``kappa`` and
    ``h' - F`` stays one-signed. The margin is re-checked with finite
    differences of the sampled loop.

    Returns ``None`` when ``d`` vanishes on the whole range.

    Raises
    ------
    ConstructionFailed
        When a band exists but no candidate keeps a one-signed margin.
    """
    F = _as_field(F)
    F._require_lipschitz("closed_transversal")
    xs = np.linspace(*search_range, n)
    d = return_map(F, xs).displacement
    bands = one_signed_bands(xs, d)
    if not bands:
        return None
    i, j, sgn = max(bands, key=lambda b: np.max(np.abs(d[b[0]:b[1] + 1])))
    band = (float(xs[max(i - 1, 0)]), float(xs[min(j + 1, n - 1)]))
    tsign = -sgn  # sign of h' - F
    ts = np.linspace(0.0, 1.0, check)

    inner = xs[i:j + 1]
    X, T = np.meshgrid(inner, ts, indexing="ij")
    const = np.min(tsign * (-F(X, T)), axis=1)
    best = int(np.argmax(const))
    if const[best] > 0:
        x0 = float(inner[best])
        return TransversalLoop(ts, np.full_like(ts, x0), np.zeros_like(ts), float(const[best]),
                               tsign, band, x0, None)

    k = i + int(np.argmax(np.abs(d[i:j + 1])))
    x0 = float(xs[k])
    s = (ts - (1 - width)) / width
    for N in range(n_levels + 1):
        kappa = tsign * 2.0 ** -N
        if np.sign(_solve(F, [x0], shift=kappa).y_final[0, 0] - x0) != sgn:
            continue

        def end(c, full=False):
            def rhs(t, y, idx):
                return F(y[:, 0], t)[:, None] + kappa + c * _dbump((t - (1 - width)) / width) / width
            res = dopri_batch(rhs, np.array([[x0]]), 1.0, rtol=1e-12, atol=1e-12,
                              t_eval=ts if full else None, hmax=width / 20)
            return res if full else res.y_final[0, 0] - x0

        hi = 2.0 * abs(d[k]) + 1.0
        while np.sign(end(tsign * hi)) == sgn:
            hi *= 2
            if hi > 1e6:
                break
        try:
            c = brentq(end, 0.0, tsign * hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        except ValueError:
            continue
        h = end(c, full=True).y_eval[:, 0, 0]
        dh = F(h, ts) + kappa + c * _dbump(s) / width
        fd = np.gradient(h, ts, edge_order=2)
        m_exact = tsign * (dh - F(h, ts))
        m_check = tsign * (fd - F(h, ts))
        if np.all(m_check > 0) and abs(h[-1] - h[0]) < 1e-9:
            return TransversalLoop(ts, h, dh, float(np.min(m_exact)), tsign, band, x0, N)
    raise ConstructionFailed(f"no one-signed closing on band {band}", [x0, 1.0], float(d[k]))


# -- circle foliation approximation ----------------------------------------------------

@dataclass
class CircleFoliation:
    """Field ``F~`` on a band whose integral curves through ``t = 0`` all close up.

    ``distance`` is ``sup |F~ - F|`` over the check grid and ``residual`` the
    verified ``sup |P~(x) - x|``.
    """

    band: tuple
    F_tilde: Callable
    distance: float
    residual: float
    monotone: bool


def circle_foliation_approx(F, band, n_x: int = 201, n_t: int = 129, fixed_tol: float = 1e-8,
                            n_check: int = 41) -> CircleFoliation:
    """Straighten the return map on a band between fixed points.

    With ``u(x, t)`` the solution map and ``d = P - id`` the curves
    ``x_c(t) = u(x, t) - t d(x)`` close up; ``F~`` is their tangent field,
    ``F~(x_c(t), t) = d_t u(x, t) - d(x)``, built from a bicubic spline of
    ``u`` and located by Newton iteration on the label ``x``.

    When ``|d| <= fixed_tol`` on the whole band, ``F`` itself is returned.

    Raises
    ------
    BandInvalid
        If a band endpoint is not a fixed point of ``P``.
    """
    F = _as_field(F)
    a, b = map(float, band)
    if not a < b:
        raise BandInvalid("band must satisfy a < b")
    ends = return_map(F, [a, b]).displacement
    if np.max(np.abs(ends)) > fixed_tol:
        raise BandInvalid(f"band endpoints move by {ends.tolist()} under the return map")
    xs = np.linspace(a, b, n_x)
    ts = np.linspace(0.0, 1.0, n_t)
    U = _solve(F, xs, t_eval=ts).y_eval[:, :, 0].T  # (n_x, n_t)
    dS = U[:, -1] - xs
    if np.max(np.abs(dS)) <= fixed_tol:
        # every curve already closes up: F~ = F
        return CircleFoliation((a, b), F.F, 0.0, float(np.max(np.abs(dS))), True)
    S = RectBivariateSpline(xs, ts, U, kx=3, ky=3, s=0)
    Sd = RectBivariateSpline(xs, [0.0, 0.5, 1.0], np.repeat(dS[:, None], 3, axis=1), kx=3, ky=1, s=0)

    def d_of(x):
        return Sd.ev(x, np.zeros_like(x))

    def dd_of(x):
        return Sd.ev(x, np.zeros_like(x), dx=1)

    def label(y, t):
        x = np.clip(y, a, b)
        for _ in range(30):
            r = S.ev(x, t) - t * d_of(x) - y
            J = S.ev(x, t, dx=1) - t * dd_of(x)
            step = r / J
            x = np.clip(x - step, a, b)
            if np.max(np.abs(step), initial=0.0) < 1e-15:
                break
        return x

    def F_tilde(y, t):
        y, t = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(t, dtype=float))
        x = label(y.ravel(), t.ravel())
        return (S.ev(x, t.ravel(), dy=1) - d_of(x)).reshape(y.shape)

    Xg, Tg = np.meshgrid(xs, ts, indexing="ij")
    Jx = S.ev(Xg, Tg, dx=1) - Tg * dd_of(Xg)
    monotone = bool(np.all(Jx > 0))

    yc, tc = np.meshgrid(np.linspace(a, b, n_check), np.linspace(0, 1, n_check), indexing="ij")
    distance = float(np.max(np.abs(F_tilde(yc, tc) - F(yc, tc))))
    y0 = np.linspace(a, b, n_check)[1:-1]
    res = dopri_batch(lambda t, y, idx: F_tilde(y[:, 0], np.full(len(y), t))[:, None], y0[:, None],
                      1.0, rtol=1e-11, atol=1e-12, hmax=0.05)
    residual = float(np.max(np.abs(res.y_final[:, 0] - y0)))
    return CircleFoliation((a, b), F_tilde, distance, residual, monotone)
