"""Flows of symbolic vector fields and their linearisations."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .charts import Chart
from .forms import VectorField
from .integrate import dopri_batch

SPEED_CAP = 1e8
STAGNATION_SPEED = 1e-12
STAGNATION_WINDOW = 1.0


class Termination(str, Enum):
    HORIZON = "HorizonReached"
    ESCAPED = "EscapedDomain"
    BLOWUP = "BlowUp"
    CONVERGED = "ConvergedToPoint"


@dataclass
class Trajectory:
    """Integral curve ``s -> phi_{direction * s}(p)`` sampled at accepted steps.

    ``times`` holds elapsed time (strictly increasing, starting at 0) and
    ``points`` the cover coordinates. ``errors[i]`` is the local error
    estimate of the step ending at ``times[i + 1]``, relative to
    ``|y| + 1e-2`` componentwise, hence at most ``tol``.
    """

    times: np.ndarray
    points: np.ndarray
    errors: np.ndarray
    reason: Termination
    direction: int = 1
    tol: float = 1e-10
    chart: Chart | None = field(default=None, repr=False)

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    def wrapped(self) -> np.ndarray:
        return self.chart.wrap(self.points)[0] if self.chart is not None else self.points


def _rhs(field_: VectorField, direction: float):
    def f(t, y, idx):
        return direction * field_.sample(y)
    return f


def flow_trajectory(field_: VectorField, p, T: float, tol: float = 1e-10,
                    speed_cap: float = SPEED_CAP,
                    stagnation: float = STAGNATION_SPEED,
                    window: float = STAGNATION_WINDOW,
                    stop=None) -> Trajectory:
    """Adaptive Dormand-Prince integration of ``field_`` from ``p`` over signed time ``T``.

    Parameters
    ----------
    stop : callable, optional
        Extra predicate ``stop(point) -> bool`` checked after each step; a
        true value ends the trajectory with ``ConvergedToPoint``.

    Notes
    -----
    Termination reasons are data: leaving a box gives ``EscapedDomain`` (the
    last point is the linear estimate of the exit point), speeds above
    ``speed_cap`` give ``BlowUp`` and speeds below ``stagnation`` for a full
    ``window`` of time give ``ConvergedToPoint``.
    """
    chart = field_.chart
    direction = 1 if T >= 0 else -1
    p = np.asarray(p, dtype=float).reshape(1, 3)
    state = {"reason": Termination.HORIZON, "slow_since": None, "prev": p[0].copy()}

    def on_step(t, y, idx):
        pt = y[0]
        if not chart.contains(pt):
            state["reason"] = Termination.ESCAPED
            return np.array([False])
        speed = float(np.linalg.norm(field_.sample(pt)))
        if not np.isfinite(speed) or speed > speed_cap:
            state["reason"] = Termination.BLOWUP
            return np.array([False])
        if speed < stagnation:
            if state["slow_since"] is None:
                state["slow_since"] = t
            elif t - state["slow_since"] >= window:
                state["reason"] = Termination.CONVERGED
                return np.array([False])
        else:
            state["slow_since"] = None
        if stop is not None and stop(pt):
            state["reason"] = Termination.CONVERGED
            return np.array([False])
        return np.array([True])

    res = dopri_batch(_rhs(field_, direction), p, abs(T), rtol=tol, atol=tol * 1e-2,
                      on_step=on_step, record=True)
    times = np.array([s[0] for s in res.steps])
    points = np.array([s[1][0] for s in res.steps]).reshape(-1, 3)
    errors = np.array([s[2] for s in res.steps[1:]])
    if state["reason"] == Termination.ESCAPED and len(points) >= 2:
        points, times = _clip_exit(chart, points, times)
    return Trajectory(times, points, errors, state["reason"], direction, tol, chart)


def _clip_exit(chart, points, times):
    a, b = points[-2], points[-1]
    lo, hi = chart.lower(), chart.upper()
    s = 1.0
    for i in range(3):
        if b[i] > hi[i] and b[i] != a[i]:
            s = min(s, (hi[i] - a[i]) / (b[i] - a[i]))
        if b[i] < lo[i] and b[i] != a[i]:
            s = min(s, (lo[i] - a[i]) / (b[i] - a[i]))
    s = max(s, 0.0)
    points = points.copy()
    times = times.copy()
    points[-1] = a + s * (b - a)
    times[-1] = times[-2] + s * (times[-1] - times[-2])
    if times[-1] <= times[-2]:
        points, times = points[:-1], times[:-1]
    return points, times


@dataclass
class BatchFlow:
    """Flow of many points sampled on a common time grid.

    ``states[j, i]`` is the cover position of point ``i`` at elapsed time
    ``times[j]``. Points leaving a box are frozen at their exit point;
    ``exit_time`` records when (``inf`` if never).
    """

    times: np.ndarray
    states: np.ndarray
    exit_time: np.ndarray
    direction: int


def flow_batch(field_: VectorField, pts: np.ndarray, T: float, dt: float,
               tol: float = 1e-10) -> BatchFlow:
    """Flow all ``pts`` over signed time ``T`` with dense output every ``dt``."""
    chart = field_.chart
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    direction = 1 if T >= 0 else -1
    m = int(np.ceil(abs(T) / dt - 1e-9))
    times = np.arange(m + 1) * dt
    exit_time = np.full(len(pts), np.inf)
    is_box = chart.kind == "box"

    def on_step(t, y, idx):
        if not is_box:
            return np.ones(len(idx), dtype=bool)
        inside = chart.contains(y)
        exit_time[idx[~inside]] = t
        return inside

    res = dopri_batch(_rhs(field_, direction), pts, times[-1], rtol=tol, atol=tol * 1e-2,
                      t_eval=times, on_step=on_step, hmax=max(dt * 8, 1e-3))
    states = res.y_eval
    if is_box:
        states = np.clip(states, chart.lower(), chart.upper())
    return BatchFlow(times, states, exit_time, direction)


@dataclass
class LinearizedFlow:
    """Result of :func:`linearized_flow` for one or many base points.

    ``M_cover`` is the differential of the time-T map in cover coordinates;
    ``M`` composes it with the identification differential at the endpoint,
    i.e. expresses it at the wrapped endpoint ``end``.
    """

    end_cover: np.ndarray
    end: np.ndarray
    M_cover: np.ndarray
    M: np.ndarray
    reason: np.ndarray


def linearized_flow(field_: VectorField, p, T: float, tol: float = 1e-11) -> LinearizedFlow:
    """Solve the variational equation ``M' = J(phi_t p) M``, ``M(0) = I``.

    ``p`` may be one point or an ``(n, 3)`` array; ``T`` is a signed time.
    """
    chart = field_.chart
    pts = np.asarray(p, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    n = len(pts)
    direction = 1.0 if T >= 0 else -1.0
    y0 = np.concatenate([pts, np.tile(np.eye(3).ravel(), (n, 1))], axis=1)
    reason = np.array([Termination.HORIZON.value] * n, dtype=object)
    is_box = chart.kind == "box"

    def f(t, y, idx):
        x = y[:, :3]
        M = y[:, 3:].reshape(-1, 3, 3)
        dx = direction * field_.sample(x)
        J = direction * field_.sample_jacobian(x)
        dM = np.einsum("nij,njk->nik", J, M)
        return np.concatenate([dx, dM.reshape(-1, 9)], axis=1)

    def on_step(t, y, idx):
        keep = np.ones(len(idx), dtype=bool)
        if is_box:
            keep = chart.contains(y[:, :3])
            reason[idx[~keep]] = Termination.ESCAPED.value
        speed = np.linalg.norm(field_.sample(y[:, :3]), axis=1)
        blow = ~np.isfinite(speed) | (speed > SPEED_CAP)
        reason[idx[blow]] = Termination.BLOWUP.value
        return keep & ~blow

    res = dopri_batch(f, y0, abs(T), rtol=tol, atol=tol * 1e-2, on_step=on_step)
    end_cover = res.y_final[:, :3]
    M_cover = res.y_final[:, 3:].reshape(-1, 3, 3)
    end, k = chart.wrap(end_cover)
    M = np.einsum("nij,njk->nik", chart.deck(k), M_cover)
    if single:
        return LinearizedFlow(end_cover[0], end[0], M_cover[0], M[0], reason[:1])
    return LinearizedFlow(end_cover, end, M_cover, M, reason)
