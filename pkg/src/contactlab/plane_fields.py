"""Invariant plane fields built from the bounded solutions.

With ``sigma_u``, ``sigma_s`` the bounded solutions,

    alpha_u = e^{-sigma_u} alpha_- + e^{sigma_u} alpha_+,
    alpha_s = e^{-sigma_s} alpha_- - e^{sigma_s} alpha_+,

``eta_u = ker alpha_s`` and ``eta_s = ker alpha_u`` are invariant under the
flow of ``X`` with ``L_X alpha_u = r_u alpha_u``, ``L_X alpha_s = r_s alpha_s``
where ``r_u = cosh(2 sigma_u) + f0/2`` and ``r_s = -cosh(2 sigma_s) + f0/2``.
This module samples the frame, checks its identities, and measures how the
pushed-forward contact planes converge to ``eta_u``.

Covectors are arrays of components in the chart basis ``(dx, dy, dz)`` at
cover points; lengths and angles use the chart metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bounded_ode import SigmaFields, solve_sigma, x_derivative
from .contact_pair import BalancedPair, PairScalars, PositivityReport, sample_scalar
from .errors import InputError, MissingSigma
from .geometry import flow_batch, linearized_flow


def covector_norm(a: np.ndarray, G: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("...i,...ij,...j->...", a, np.linalg.inv(G), a))


def vector_norm(v: np.ndarray, G: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("...i,...ij,...j->...", v, G, v))


def covector_sine(a: np.ndarray, b: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Sine of the angle between two covectors (0 when proportional)."""
    Gi = np.linalg.inv(G)
    aa = np.einsum("...i,...ij,...j->...", a, Gi, a)
    bb = np.einsum("...i,...ij,...j->...", b, Gi, b)
    ab = np.einsum("...i,...ij,...j->...", a, Gi, b)
    return np.sqrt(np.clip(1.0 - ab**2 / (aa * bb), 0.0, 1.0))


@dataclass
class InvariantFrame:
    """Sampled ``alpha_u``, ``alpha_s`` and rates at a set of points."""

    points: np.ndarray
    sigma_u: np.ndarray
    sigma_s: np.ndarray
    alpha_minus: np.ndarray
    alpha_plus: np.ndarray
    alpha_u: np.ndarray
    alpha_s: np.ndarray
    r_u: np.ndarray
    r_s: np.ndarray
    f0: np.ndarray
    normalized: bool
    sigma: SigmaFields | None = field(default=None, repr=False)

    def invariants(self) -> dict[str, float]:
        """Residuals of the defining identities (all should be ~0 or >= 0)."""
        su, ss = self.sigma_u[:, None], self.sigma_s[:, None]
        scale = np.sqrt(2 * np.cosh(self.sigma_u - self.sigma_s))[:, None] if self.normalized else 1.0
        au = (np.exp(-su) * self.alpha_minus + np.exp(su) * self.alpha_plus) / scale
        as_ = (np.exp(-ss) * self.alpha_minus - np.exp(ss) * self.alpha_plus) / scale
        out = {
            "alpha_u": float(np.max(np.abs(au - self.alpha_u), initial=0.0)),
            "alpha_s": float(np.max(np.abs(as_ - self.alpha_s), initial=0.0)),
            "r_u": float(np.max(np.abs(self.r_u - np.cosh(2 * self.sigma_u) - self.f0 / 2), initial=0.0)),
            "r_s": float(np.max(np.abs(self.r_s + np.cosh(2 * self.sigma_s) - self.f0 / 2), initial=0.0)),
            "rate_gap_min": float(np.min(self.r_u - self.r_s, initial=np.inf)),
        }
        if self.normalized:
            lhs = np.cross(self.alpha_s, self.alpha_u)
            rhs = np.cross(self.alpha_minus, self.alpha_plus)
            out["normalization"] = float(np.max(np.abs(lhs - rhs), initial=0.0))
        return out


def frame_from_values(bp: BalancedPair, scalars: PairScalars, points, sigma_u, sigma_s,
                      normalize: bool = False, sigma: SigmaFields | None = None) -> InvariantFrame:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    su = np.asarray(sigma_u, dtype=float)
    ss = np.asarray(sigma_s, dtype=float)
    am = bp.alpha_minus.sample(points)
    ap = bp.alpha_plus.sample(points)
    au = np.exp(-su)[:, None] * am + np.exp(su)[:, None] * ap
    as_ = np.exp(-ss)[:, None] * am - np.exp(ss)[:, None] * ap
    if normalize:
        c = np.sqrt(2 * np.cosh(su - ss))[:, None]
        au, as_ = au / c, as_ / c
    f0 = sample_scalar(scalars.f0, bp.chart, points)
    f0 = np.broadcast_to(f0, su.shape).astype(float)
    return InvariantFrame(points, su, ss, am, ap, au, as_, np.cosh(2 * su) + f0 / 2,
                          -np.cosh(2 * ss) + f0 / 2, f0, normalize, sigma)


def assemble_frame(bp: BalancedPair, scalars: PairScalars, sigma: SigmaFields,
                   normalize: bool = False) -> InvariantFrame:
    """Frame on the points of ``sigma``.

    Raises
    ------
    MissingSigma
        If a bounded solution is missing at some point.
    """
    if np.any(sigma.missing):
        i = int(np.where(sigma.missing)[0][0])
        raise MissingSigma("bounded solution missing", sigma.points[i])
    return frame_from_values(bp, scalars, sigma.points, sigma.sigma_u, sigma.sigma_s,
                             normalize, sigma)


def frame_at(bp: BalancedPair, scalars: PairScalars, points, tol: float = 1e-10,
             normalize: bool = False) -> InvariantFrame:
    """Solve both bounded solutions at ``points`` and assemble the frame."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    su = solve_sigma(bp, scalars, points, "u", tol)
    ss = solve_sigma(bp, scalars, points, "s", tol)
    if np.any(su.failed | ss.failed):
        i = int(np.where(su.failed | ss.failed)[0][0])
        raise MissingSigma("bounded solution missing", points[i])
    return frame_from_values(bp, scalars, points, su.values, ss.values, normalize)


# -- invariance ---------------------------------------------------------------------

@dataclass
class InvarianceReport:
    residuals: np.ndarray
    dt: float
    kind: str

    @property
    def sup(self) -> float:
        return float(np.max(self.residuals, initial=0.0))


def invariance_residual(bp: BalancedPair, scalars: PairScalars, points, dt: float,
                        kind: str = "s", tol: float = 1e-10,
                        nodes: int | None = None) -> InvarianceReport:
    """Relative deviation of ``phi_dt^* alpha`` from ``exp(int_0^dt r) alpha``.

    ``kind`` selects ``alpha_s`` (``"s"``) or ``alpha_u`` (``"u"``). The
    rate integral uses Simpson's rule on ``nodes`` (odd) points of the orbit,
    with the bounded solution solved afresh at every node. By default the
    node spacing is at most ``0.02``, which keeps the quadrature error near
    ``1e-6`` for rates of unit size.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(points)
    if dt == 0:
        return InvarianceReport(np.zeros(n), dt, kind)
    if nodes is None:
        nodes = max(9, int(np.ceil(abs(dt) / 0.02)) + 1)
    if nodes % 2 == 0:
        nodes += 1
    fb = flow_batch(bp.X, points, dt, abs(dt) / (nodes - 1))
    orbit = fb.states  # (nodes, n, 3)
    if np.any(np.isfinite(fb.exit_time)):
        raise InputError("orbit segment leaves the box")
    flat = orbit.reshape(-1, 3)
    sig = solve_sigma(bp, scalars, flat, kind, tol).values.reshape(nodes, n)
    f0 = sample_scalar(scalars.f0, bp.chart, flat).reshape(nodes, n)
    rate = np.cosh(2 * sig) + f0 / 2 if kind == "u" else -np.cosh(2 * sig) + f0 / 2
    w = np.ones(nodes)
    w[1:-1:2], w[2:-1:2] = 4, 2
    integral = np.sign(dt) * abs(dt) / (nodes - 1) / 3 * (w @ rate)

    lf = linearized_flow(bp.X, points, dt, tol=1e-12)

    def alpha(pts, s):
        am = bp.alpha_minus.sample(pts)
        ap = bp.alpha_plus.sample(pts)
        sgn = 1.0 if kind == "u" else -1.0
        return np.exp(-s)[:, None] * am + sgn * np.exp(s)[:, None] * ap

    a_p = alpha(points, sig[0])
    a_q = alpha(lf.end_cover, sig[-1])
    pulled = np.einsum("nji,nj->ni", lf.M_cover, a_q)
    expected = np.exp(integral)[:, None] * a_p
    G = bp.chart.metric(points)
    res = covector_norm(pulled - expected, G) / covector_norm(expected, G)
    return InvarianceReport(res, dt, kind)


# -- cones and vanishing --------------------------------------------------------

@dataclass
class ConeReport:
    """Cone membership of ``eta_u`` away from the coincidence locus and the
    behaviour of the frame on it.

    ``vanishing_plus`` is ``max |alpha_u| / |alpha_-|`` over detected
    ``Delta_+`` points, ``angle_plus`` the largest sine between ``eta_u`` and
    ``xi_+`` there, ``sigma_error_plus`` the largest deviation of ``sigma_u``
    from ``-asinh(g0/2)/2``. The ``minus`` entries are the analogues for
    ``alpha_s`` on ``Delta_-``.
    """

    cone_fraction: float
    cone_checked: int
    vanishing_plus: float
    angle_plus: float
    sigma_error_plus: float
    vanishing_minus: float
    angle_minus: float
    worst_point: list | None
    tol: float

    @property
    def passed(self) -> bool:
        return (self.cone_fraction == 1.0 and self.vanishing_plus < self.tol
                and self.angle_plus < self.tol and self.vanishing_minus < self.tol)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("cone_fraction", "cone_checked", "vanishing_plus",
                                           "angle_plus", "sigma_error_plus", "vanishing_minus",
                                           "angle_minus", "worst_point", "tol")}
        d["passed"] = self.passed
        return d


def eta_u_vector(frame: InvariantFrame, X: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Spanning vector of ``eta_u`` orthogonal to ``X``: the kernel of ``alpha_s`` and ``g(X, .)``."""
    return np.cross(frame.alpha_s, np.einsum("nij,nj->ni", G, X))


def cone_and_vanishing_checks(frame: InvariantFrame, bp: BalancedPair,
                              delta: PositivityReport | None = None, scalars: PairScalars | None = None,
                              tol: float = 1e-6) -> ConeReport:
    """Check ``eta_u \\ 0`` lies in the cone ``{alpha_- alpha_+ > 0}`` and the Delta behaviour.

    ``delta`` indexes ``frame.points`` (as returned by
    :func:`~contactlab.contact_pair.positivity_test` on the same grid).
    """
    pts = frame.points
    G = bp.chart.metric(pts)
    X = bp.X.sample(pts)
    xn = vector_norm(X, G)
    v = eta_u_vector(frame, X, G)
    vn = vector_norm(v, G)
    ok_pts = (xn > 1e-8 * max(1.0, float(np.max(xn, initial=0.0)))) & (vn > 1e-12)
    am_v = np.einsum("ni,ni->n", frame.alpha_minus, v)
    ap_v = np.einsum("ni,ni->n", frame.alpha_plus, v)
    inside = am_v * ap_v > 0
    checked = int(ok_pts.sum())
    fraction = float(np.mean(inside[ok_pts])) if checked else 1.0
    worst = None
    bad = np.where(ok_pts & ~inside)[0]
    if len(bad):
        worst = [float(c) for c in pts[bad[0]]]

    vp = ap = sp = vm = angm = 0.0
    if delta is not None:
        nrm = covector_norm(frame.alpha_minus, G)
        if len(delta.delta_plus):
            i = delta.delta_plus
            ratio = covector_norm(frame.alpha_u[i], G[i]) / nrm[i]
            vp = float(np.max(ratio))
            ap = float(np.max(covector_sine(frame.alpha_s[i], frame.alpha_plus[i], G[i])))
            if scalars is not None:
                g0 = sample_scalar(scalars.g0, bp.chart, pts[i])
                sp = float(np.max(np.abs(frame.sigma_u[i] + 0.5 * np.arcsinh(g0 / 2))))
            j = int(np.argmax(ratio))
            if ratio[j] >= tol and worst is None:
                worst = [float(c) for c in pts[i][j]]
        if len(delta.delta_minus):
            i = delta.delta_minus
            ratio = covector_norm(frame.alpha_s[i], G[i]) / nrm[i]
            vm = float(np.max(ratio))
            angm = float(np.max(covector_sine(frame.alpha_u[i], frame.alpha_plus[i], G[i])))
    return ConeReport(fraction, checked, vp, ap, sp, vm, angm, worst, tol)


# -- transport of the contact planes ----------------------------------------------

@dataclass
class SampleConvergence:
    point: np.ndarray
    status: str  # "Transported" or "FixedPlane" (sample on the coincidence locus)
    times: np.ndarray
    theta_plus: np.ndarray
    theta_minus: np.ndarray
    decay_plus: float = float("nan")
    decay_minus: float = float("nan")
    monotone_plus: bool = False
    monotone_minus: bool = False

    def to_dict(self) -> dict:
        return {"point": [float(c) for c in self.point], "status": self.status,
                "decay_plus": self.decay_plus, "decay_minus": self.decay_minus,
                "monotone_plus": self.monotone_plus, "monotone_minus": self.monotone_minus,
                "theta_plus_final": float(self.theta_plus[-1]) if len(self.theta_plus) else None,
                "theta_minus_final": float(self.theta_minus[-1]) if len(self.theta_minus) else None}


@dataclass
class ConvergenceReport:
    samples: list
    T_max: float
    tol: float

    @property
    def passed(self) -> bool:
        moving = [s for s in self.samples if s.status == "Transported"]
        return all(s.monotone_plus and s.monotone_minus
                   and abs(s.theta_plus[-1]) < self.tol and abs(s.theta_minus[-1]) < self.tol
                   for s in moving)


def _line_angle(a: np.ndarray, b: np.ndarray, n: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Signed angle rotating line ``a`` onto line ``b`` in the plane g-orthogonal to ``n``,
    oriented by ``(n, a, b)`` and the metric volume; result in ``(-pi/2, pi/2]``."""
    vol = np.sqrt(np.linalg.det(G))
    sin = vol * np.linalg.det(np.stack([n, a, b], axis=-1)) / (vector_norm(n, G) * vector_norm(a, G)
                                                               * vector_norm(b, G))
    cos = np.einsum("...i,...ij,...j->...", a, G, b) / (vector_norm(a, G) * vector_norm(b, G))
    th = np.arctan2(sin, cos)
    th = np.where(th > np.pi / 2, th - np.pi, th)
    return np.where(th <= -np.pi / 2, th + np.pi, th)


def plane_transport_convergence(bp: BalancedPair, scalars: PairScalars, samples, T_max: float,
                                n_steps: int = 50, tol: float = 1e-3,
                                sigma_tol: float = 1e-10) -> ConvergenceReport:
    """Angles ``theta_pm^t`` between ``d phi_t [xi_pm(x)]`` and ``eta_u`` at ``phi_t(x)``.

    Both lines are taken inside the plane g-orthogonal to ``X``; ``theta_+``
    starts positive and decreases to 0, ``theta_-`` starts negative and
    increases to 0. The decay exponent is the least-squares slope of
    ``-ln |tan theta|`` against ``t``. Samples where ``X`` vanishes keep their
    plane for all time and are reported as ``FixedPlane``; samples whose orbit
    leaves a box before ``T_max`` are reported as ``LeftChart`` and carry no
    angles.
    """
    samples = np.asarray(samples, dtype=float).reshape(-1, 3)
    chart = bp.chart
    Xs = bp.X.sample(samples)
    moving = vector_norm(Xs, chart.metric(samples)) > 1e-10
    out = []
    times = np.linspace(0.0, T_max, n_steps + 1)
    left = np.zeros(len(samples), dtype=bool)
    if np.any(moving) and not all(chart.periodic):
        left[moving] = np.isfinite(flow_batch(bp.X, samples[moving], T_max, T_max).exit_time)
    idx = np.where(moving & ~left)[0]
    if len(idx):
        # orbit and accumulated differential, step by step
        cur = chart.wrap(samples[idx])[0]
        M = np.tile(np.eye(3), (len(idx), 1, 1))
        base = [cur]
        mats = [M]
        dt = T_max / n_steps
        for _ in range(n_steps):
            lf = linearized_flow(bp.X, cur, dt, tol=1e-12)
            if np.any(lf.reason != "HorizonReached"):
                raise InputError("orbit terminated before T_max")
            M = np.einsum("nij,njk->nik", lf.M, M)
            cur = lf.end
            base.append(cur)
            mats.append(M)
        base = np.array(base)  # (steps+1, m, 3)
        mats = np.array(mats)
        flat = base.reshape(-1, 3)
        ss = solve_sigma(bp, scalars, flat, "s", sigma_tol).values
        am = bp.alpha_minus.sample(flat)
        ap = bp.alpha_plus.sample(flat)
        a_s = np.exp(-ss)[:, None] * am - np.exp(ss)[:, None] * ap
        G = chart.metric(flat)
        X = bp.X.sample(flat)
        GX = np.einsum("nij,nj->ni", G, X)
        eta = np.cross(a_s, GX)
        thetas = {}
        for sign, a0 in (("plus", bp.alpha_plus.sample(samples[idx])),
                         ("minus", bp.alpha_minus.sample(samples[idx]))):
            # transported plane has conormal a0 o M^{-1}
            beta = np.einsum("tnji,nj->tni", np.linalg.inv(mats), a0).reshape(-1, 3)
            line = np.cross(beta, GX)
            thetas[sign] = _line_angle(line, eta, X, G).reshape(len(times), len(idx))
    k = 0
    for i, p in enumerate(samples):
        if not moving[i]:
            out.append(SampleConvergence(p, "FixedPlane", np.array([0.0]), np.array([0.0]), np.array([0.0])))
            continue
        if left[i]:
            out.append(SampleConvergence(p, "LeftChart", np.array([]), np.array([]), np.array([])))
            continue
        tp, tm = thetas["plus"][:, k], thetas["minus"][:, k]
        k += 1
        sc = SampleConvergence(p, "Transported", times, tp, tm)
        sc.monotone_plus = bool(np.all(np.diff(tp) < 0))
        sc.monotone_minus = bool(np.all(np.diff(tm) > 0))
        for name, th in (("plus", tp), ("minus", tm)):
            y = -np.log(np.abs(np.tan(th)))
            good = np.isfinite(y)
            if good.sum() >= 2:
                setattr(sc, f"decay_{name}", float(np.polyfit(times[good], y[good], 1)[0]))
        out.append(sc)
    return ConvergenceReport(out, T_max, tol)


# -- strong unstable direction ------------------------------------------------------

@dataclass
class StrongUnstableResult:
    point: np.ndarray
    horizon: float
    direction: np.ndarray
    history: list  # (T_k, sine of the angle to the previous estimate)

    def to_dict(self) -> dict:
        return {"point": [float(c) for c in self.point], "horizon": self.horizon,
                "direction": [float(c) for c in self.direction],
                "history": [[float(a), float(b)] for a, b in self.history]}


def strong_unstable_line(bp: BalancedPair, scalars: PairScalars, p, T: float, seed: int = 0,
                         stages: int = 5, sigma_tol: float = 1e-10) -> StrongUnstableResult:
    """Finite-time strong unstable direction inside ``eta_u`` at ``p``.

    A random direction of ``eta_u`` at ``q = phi_{-T}(p)`` is pushed forward
    by ``d phi_T`` and normalised in the chart metric. ``history`` repeats
    this for ``T_k = k T / stages``.
    """
    p = np.asarray(p, dtype=float).reshape(3)
    chart = bp.chart
    rng = np.random.default_rng(seed)
    phi = rng.uniform(-np.pi / 2, np.pi / 2)

    def seed_vector(q):
        fr = frame_at(bp, scalars, q[None], sigma_tol)
        G = chart.metric(q[None])
        X = bp.X.sample(q[None])
        e = eta_u_vector(fr, X, G)[0]
        e = e / vector_norm(e, G[0])
        x = X[0] / vector_norm(X[0], G[0])
        return np.cos(phi) * e + np.sin(phi) * x

    def estimate(Tk):
        if Tk == 0:
            return seed_vector(chart.wrap(p)[0])
        back = linearized_flow(bp.X, p, -Tk, tol=1e-12)
        if back.reason[0] != "HorizonReached":
            raise InputError("backward orbit left the domain")
        q = back.end
        w = seed_vector(q)
        fwd = linearized_flow(bp.X, q, Tk, tol=1e-12)
        v = fwd.M @ w
        # express at the wrapped representative of p
        return v / vector_norm(v, chart.metric(fwd.end[None])[0])

    history = []
    prev = None
    d = None
    ks = [T] if T == 0 else [T * (k + 1) / stages for k in range(stages)]
    for Tk in ks:
        d = estimate(Tk)
        if prev is not None:
            history.append((Tk, float(np.linalg.norm(np.cross(prev, d)))))
        prev = d
    return StrongUnstableResult(p, T, d, history)


# -- X-derivative identities ------------------------------------------------------

def x_identities(bp: BalancedPair, scalars: PairScalars, points, tol: float = 1e-10,
                 h: float = 1e-3) -> dict[str, np.ndarray]:
    """Residuals of the identities linking ``X . sigma`` and the rates.

    ``plus`` / ``minus``: ``+-X.(s_u - s_s) + r_u - r_s - e^{+-2 s_u} - e^{+-2 s_s}``;
    ``logcosh``: ``X.ln cosh(s_u - s_s) - cosh 2s_u + cosh 2s_s``;
    ``reeb``: ``-X.ln cosh(s_u - s_s) + r_u - cosh 2s_s - f0/2``.
    X-derivatives are flow central differences of step ``h``.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    fr = frame_at(bp, scalars, points, tol)
    du, valid = x_derivative(bp, scalars, points, "u", tol, h=h)
    ds, _ = x_derivative(bp, scalars, points, "s", tol, h=h)
    su, ss = fr.sigma_u, fr.sigma_s
    diff = du - ds
    gap = fr.r_u - fr.r_s
    xlc = np.tanh(su - ss) * diff
    out = {
        "plus": diff + gap - np.exp(2 * su) - np.exp(2 * ss),
        "minus": -diff + gap - np.exp(-2 * su) - np.exp(-2 * ss),
        "logcosh": xlc - np.cosh(2 * su) + np.cosh(2 * ss),
        "reeb": -xlc + fr.r_u - np.cosh(2 * ss) - fr.f0 / 2,
    }
    for v in out.values():
        v[~valid] = np.nan
    return out
