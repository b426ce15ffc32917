"""Batched adaptive Dormand-Prince 5(4) integration.

All rows of a batch share one step size (controlled by the worst row), which
keeps the stepping fully vectorised. Rows can be retired after any accepted
step by the ``on_step`` callback; their state is frozen from then on.

scipy's ``solve_ivp`` is not used here because callers need the per-step
local error estimates, row retirement, and fourth-order dense output on a fixed
output grid for thousands of simultaneous initial conditions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4
# continuous extension of order 4: y(t + s h) = y + h sum_i k_i (P[i] . (s, s^2, s^3, s^4))
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


@dataclass
class BatchResult:
    """Outcome of :func:`dopri_batch`.

    Attributes
    ----------
    t_final : ndarray (n,)
        Time at which each row stopped (retired or reached the end).
    y_final : ndarray (n, d)
    retired : ndarray of bool (n,)
        Rows stopped early by ``on_step``.
    t_eval, y_eval : ndarray
        Dense output at requested times, shape ``(m,)`` and ``(m, n, d)``;
        retired rows hold their frozen state.
    steps : list of tuple
        When ``record`` is set: ``(t, y, err)`` per accepted step, where
        ``err`` is the local error estimate in the controlled norm,
        ``max_i |e_i| rtol / (atol + rtol |y_i|)``; accepted steps have
        ``err <= rtol``.
    """

    t_final: np.ndarray
    y_final: np.ndarray
    retired: np.ndarray
    t_eval: np.ndarray | None = None
    y_eval: np.ndarray | None = None
    steps: list = field(default_factory=list)
    n_accepted: int = 0
    n_rejected: int = 0


def dopri_batch(
    f: Callable[[float, np.ndarray, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t_end: float,
    *,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    h0: float | None = None,
    hmax: float = np.inf,
    t_eval: np.ndarray | None = None,
    on_step: Callable[[float, np.ndarray, np.ndarray], np.ndarray] | None = None,
    record: bool = False,
    max_steps: int = 1_000_000,
) -> BatchResult:
    """Integrate ``y' = f(t, y, idx)`` from ``t = 0`` to ``t_end > 0``.

    Parameters
    ----------
    f : callable
        ``f(t, y, idx)`` with ``y`` of shape ``(m, d)`` for the active rows
        ``idx`` (indices into the original batch).
    y0 : ndarray (n, d)
    t_end : float
        Positive end time.
    on_step : callable, optional
        ``on_step(t, y, idx) -> keep`` after each accepted step; rows with
        ``keep == False`` are retired with their current state.
    t_eval : ndarray, optional
        Increasing output times in ``[0, t_end]`` (cubic Hermite dense output).
    """
    y0 = np.array(y0, dtype=float)
    if y0.ndim == 1:
        y0 = y0[:, None]
    n, d = y0.shape
    y_final = y0.copy()
    t_final = np.full(n, 0.0)
    retired = np.zeros(n, dtype=bool)
    idx = np.arange(n)
    y = y0.copy()
    t = 0.0
    res = BatchResult(t_final, y_final, retired)

    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        y_eval = np.empty((len(t_eval), n, d))
        next_out = 0
        while next_out < len(t_eval) and t_eval[next_out] <= 0.0:
            y_eval[next_out] = y0
            next_out += 1
    if t_end <= 0 or n == 0:
        if t_eval is not None:
            y_eval[next_out:] = y0
            res.t_eval, res.y_eval = t_eval, y_eval
        return res

    k1 = f(t, y, idx)
    if h0 is None:
        scale = atol + rtol * np.abs(y)
        d0 = np.max(np.abs(y) / scale)
        d1 = np.max(np.abs(k1) / scale)
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h0 = min(h0, t_end)
    h = min(h0, hmax)
    if record:
        res.steps.append((t, y.copy(), 0.0))

    steps = 0
    while idx.size and t < t_end:
        if steps > max_steps:
            raise RuntimeError("dopri_batch exceeded max_steps")
        steps += 1
        h = min(h, t_end - t, hmax)
        if t + h >= t_end * (1 - 1e-14) and t + h != t_end:
            h = t_end - t
        ks = [k1]
        with np.errstate(invalid="ignore", over="ignore"):
            for s in range(1, 7):
                ys = y + h * sum(a * k for a, k in zip(_A[s], ks) if a != 0.0)
                ks.append(f(t + _C[s] * h, ys, idx))
            y_new = y + h * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
            err_vec = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            ratio = np.abs(err_vec) / scale
        err = float(np.max(ratio)) if ratio.size else 0.0
        if not np.isfinite(err):
            err = np.inf
        if err <= 1.0:
            t_new = t + h
            k_new = ks[6]  # FSAL
            if t_eval is not None and next_out < len(t_eval) and t_eval[next_out] <= t_new + 1e-15:
                Q = None
                while next_out < len(t_eval) and t_eval[next_out] <= t_new + 1e-15:
                    if Q is None:
                        Q = np.tensordot(_P.T, np.stack(ks), axes=1)  # (4, rows, dim)
                    s = (t_eval[next_out] - t) / h
                    w = np.array([s, s * s, s**3, s**4])
                    y_eval[next_out][:] = y_final
                    y_eval[next_out][idx] = y + h * np.tensordot(w, Q, axes=1)
                    next_out += 1
            t, y, k1 = t_new, y_new, k_new
            y_final[idx] = y
            t_final[idx] = t
            res.n_accepted += 1
            if record:
                res.steps.append((t, y.copy(), err * rtol))
            if on_step is not None:
                keep = np.asarray(on_step(t, y, idx), dtype=bool)
                if not np.all(keep):
                    retired[idx[~keep]] = True
                    idx, y, k1 = idx[keep], y[keep], k1[keep]
            fac = 0.9 * (1.0 / err) ** 0.2 if err > 0 else 5.0
            h *= min(5.0, max(0.2, fac))
        else:
            res.n_rejected += 1
            h *= max(0.1, 0.9 * (1.0 / err) ** 0.2) if np.isfinite(err) else 0.1
            if h < 1e-14 * max(1.0, abs(t)):
                raise RuntimeError(f"step size underflow at t={t}")

    if t_eval is not None:
        while next_out < len(t_eval):
            y_eval[next_out] = y_final
            next_out += 1
        res.t_eval, res.y_eval = t_eval, y_eval
    return res
