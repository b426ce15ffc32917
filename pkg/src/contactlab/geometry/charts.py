"""Coordinate charts: boxes, flat 3-tori and mapping tori of hyperbolic maps.

Points are handled in *cover coordinates*: a trajectory may leave the
fundamental domain and keep going. :meth:`wrap` maps cover points back to
the fundamental domain and reports the deck index ``k`` so that tensors can
be transported with :meth:`deck`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from ..errors import InputError
from ..exprlang import CARTESIAN_VARS, TORUS_VARS


class Chart:
    kind: str = ""
    variables: tuple[str, str, str] = CARTESIAN_VARS
    periodic: tuple[bool, bool, bool] = (False, False, False)

    # -- domain ----------------------------------------------------------------
    def lower(self) -> np.ndarray:
        raise NotImplementedError

    def upper(self) -> np.ndarray:
        raise NotImplementedError

    def extent(self) -> np.ndarray:
        return self.upper() - self.lower()

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """True for cover points that are inside the domain (always true off boxes)."""
        pts = np.asarray(pts, dtype=float)
        return np.ones(pts.shape[:-1], dtype=bool)

    def wrap(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map cover points to the fundamental domain.

        Returns
        -------
        wrapped : ndarray, same shape as ``pts``
        k : ndarray of int
            Deck index; ``deck(k)`` is the differential of the identification.
        """
        pts = np.asarray(pts, dtype=float)
        return pts.copy(), np.zeros(pts.shape[:-1], dtype=int)

    def deck(self, k: np.ndarray) -> np.ndarray:
        """Differentials of the identifications, shape ``k.shape + (3, 3)``."""
        k = np.asarray(k)
        return np.broadcast_to(np.eye(3), k.shape + (3, 3)).copy()

    def metric(self, pts: np.ndarray) -> np.ndarray:
        """Gram matrices of the chart metric at cover points."""
        pts = np.asarray(pts, dtype=float)
        return np.broadcast_to(np.eye(3), pts.shape[:-1] + (3, 3)).copy()

    def constants(self) -> dict[str, float]:
        """Named constants available to expression strings on this chart."""
        return {}

    def grid_axes(self, n: int) -> list[np.ndarray]:
        lo, hi = self.lower(), self.upper()
        axes = []
        for i in range(3):
            if self.periodic[i]:
                axes.append(lo[i] + (hi[i] - lo[i]) * np.arange(n) / n)
            else:
                axes.append(np.linspace(lo[i], hi[i], n))
        return axes

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Box(Chart):
    """Closed box ``prod [lo_i, hi_i]`` in R^3 with coordinates (x, y, z)."""

    bounds: tuple[tuple[float, float], ...] = ((-1.0, 1.0),) * 3
    kind = "box"

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(b) != 3 or any(hi <= lo for lo, hi in b):
            raise InputError(f"box bounds must be three increasing intervals, got {self.bounds}")
        object.__setattr__(self, "bounds", b)

    def lower(self):
        return np.array([lo for lo, _ in self.bounds])

    def upper(self):
        return np.array([hi for _, hi in self.bounds])

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        slack = 1e-12 * self.extent()
        return np.all((pts >= self.lower() - slack) & (pts <= self.upper() + slack), axis=-1)

    def describe(self):
        return {"kind": "box", "bounds": [list(b) for b in self.bounds]}


@dataclass(frozen=True)
class Torus3(Chart):
    """Flat torus R^3 / (P1 Z x P2 Z x P3 Z)."""

    periods: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kind = "torus3"
    periodic = (True, True, True)

    def __post_init__(self):
        p = tuple(float(v) for v in self.periods)
        if len(p) != 3 or any(v <= 0 for v in p):
            raise InputError(f"torus periods must be three positive reals, got {self.periods}")
        object.__setattr__(self, "periods", p)

    def lower(self):
        return np.zeros(3)

    def upper(self):
        return np.array(self.periods)

    def wrap(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.mod(pts, self.upper()), np.zeros(pts.shape[:-1], dtype=int)

    def describe(self):
        return {"kind": "torus3", "periods": list(self.periods)}


@lru_cache(maxsize=256)
def _monodromy_power(A: tuple, k: int) -> np.ndarray:
    P = np.linalg.matrix_power(np.array(A, dtype=np.int64), abs(k))
    if k < 0:
        P = np.round(np.linalg.inv(P)).astype(np.int64)
    P.setflags(write=False)
    return P


@dataclass(frozen=True)
class MappingTorus(Chart):
    """Mapping torus of a hyperbolic integer matrix ``A`` with ``det A = 1``.

    Coordinates are ``(a, b, t)``: ``(a, b)`` on the fiber torus and ``t`` the
    suspension coordinate. The identification is ``(v, t) ~ (A v, t - 1)``
    together with integer translations of ``v``.

    The chart metric is the gluing-invariant metric
    ``e^{2rt} du^2 + e^{-2rt} ds^2 + dt^2`` built from unit left
    eigen-covectors ``du`` (eigenvalue ``mu > 1``) and ``ds`` (eigenvalue
    ``1/mu``), with ``r = ln mu``. The coordinate Euclidean metric is not
    continuous across the identification.
    """

    monodromy: tuple[tuple[int, int], tuple[int, int]] = ((2, 1), (1, 1))
    fiber_periods: tuple[float, float] = (1.0, 1.0)
    kind = "mapping_torus"
    variables = TORUS_VARS
    periodic = (True, True, True)

    def __post_init__(self):
        A = np.array(self.monodromy, dtype=float)
        if A.shape != (2, 2) or not np.all(A == np.round(A)):
            raise InputError("monodromy must be an integer 2x2 matrix")
        if round(np.linalg.det(A)) != 1:
            raise InputError("monodromy must have determinant 1")
        if np.trace(A) <= 2:
            raise InputError("monodromy must be hyperbolic with positive eigenvalues (trace > 2)")
        object.__setattr__(self, "monodromy", tuple(tuple(int(v) for v in row) for row in self.monodromy))
        object.__setattr__(self, "fiber_periods", tuple(float(v) for v in self.fiber_periods))

    @cached_property
    def A(self) -> np.ndarray:
        return np.array(self.monodromy, dtype=float)

    @cached_property
    def mu(self) -> float:
        tr = float(np.trace(self.A))
        return 0.5 * (tr + math.sqrt(tr * tr - 4.0))

    @cached_property
    def rate(self) -> float:
        return math.log(self.mu)

    def _left_eigen(self, lam: float) -> np.ndarray:
        (a11, a12), (a21, a22) = self.A
        # row vector w with w A = lam w
        if abs(a21) > abs(a12) or a12 == 0:
            w = np.array([a21, lam - a11])
        else:
            w = np.array([lam - a22, a12])
        return w / np.linalg.norm(w)

    @cached_property
    def covectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit eigen-covectors ``(du, ds)`` with ``det[du; ds] > 0``."""
        du = self._left_eigen(self.mu)
        ds = self._left_eigen(1.0 / self.mu)
        if du[0] * ds[1] - du[1] * ds[0] < 0:
            ds = -ds
        return du, ds

    def constants(self):
        du, ds = self.covectors
        return {"mu": self.mu, "r": self.rate,
                "du1": float(du[0]), "du2": float(du[1]),
                "ds1": float(ds[0]), "ds2": float(ds[1])}

    def lower(self):
        return np.zeros(3)

    def upper(self):
        return np.array([self.fiber_periods[0], self.fiber_periods[1], 1.0])

    def _powers(self, k: np.ndarray) -> np.ndarray:
        out = np.empty(k.shape + (2, 2))
        for kk in np.unique(k):
            out[k == kk] = _monodromy_power(self.monodromy, int(kk))
        return out

    def wrap(self, pts):
        pts = np.asarray(pts, dtype=float)
        k = np.floor(pts[..., 2]).astype(int)
        out = pts.copy()
        out[..., 2] = pts[..., 2] - k
        if np.any(k != 0):
            P = self._powers(k)
            out[..., :2] = np.einsum("...ij,...j->...i", P, pts[..., :2])
        out[..., :2] = np.mod(out[..., :2], np.array(self.fiber_periods))
        return out, k

    def deck(self, k):
        k = np.asarray(k, dtype=int)
        D = np.zeros(k.shape + (3, 3))
        D[..., :2, :2] = self._powers(k)
        D[..., 2, 2] = 1.0
        return D

    def metric(self, pts):
        pts = np.asarray(pts, dtype=float)
        du, ds = self.covectors
        t = pts[..., 2]
        eu = np.array([du[0], du[1], 0.0])
        es = np.array([ds[0], ds[1], 0.0])
        G = (np.exp(2 * self.rate * t)[..., None, None] * np.outer(eu, eu)
             + np.exp(-2 * self.rate * t)[..., None, None] * np.outer(es, es))
        G[..., 2, 2] += 1.0
        return G

    def describe(self):
        return {"kind": "mapping_torus", "monodromy": [list(r) for r in self.monodromy],
                "fiber_periods": list(self.fiber_periods)}


def chart_from_dict(d: dict) -> Chart:
    kind = d.get("kind")
    if kind == "box":
        return Box(tuple(tuple(b) for b in d.get("bounds", [[-1, 1]] * 3)))
    if kind == "torus3":
        return Torus3(tuple(d.get("periods", [1.0, 1.0, 1.0])))
    if kind == "mapping_torus":
        return MappingTorus(tuple(tuple(r) for r in d.get("monodromy", [[2, 1], [1, 1]])),
                            tuple(d.get("fiber_periods", [1.0, 1.0])))
    raise InputError(f"unknown chart kind {kind!r}")


@dataclass(frozen=True)
class Grid:
    """Tensor grid of ``n`` samples per axis on a chart.

    Flattened arrays are row-major with ``x`` (first coordinate) fastest; the
    3-D view is indexed ``[k, j, i]`` for axes ``(z, y, x)``.
    """

    chart: Chart
    n: int
    axes: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 2:
            raise InputError("grid needs at least 2 samples per axis")
        object.__setattr__(self, "axes", tuple(self.chart.grid_axes(self.n)))

    @property
    def size(self) -> int:
        return self.n ** 3

    @cached_property
    def points(self) -> np.ndarray:
        Z, Y, X = np.meshgrid(self.axes[2], self.axes[1], self.axes[0], indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([ax[1] - ax[0] for ax in self.axes])

    def cube(self, values: np.ndarray) -> np.ndarray:
        """Reshape flat samples (leading axis) to ``(n, n, n, ...)`` indexed [z, y, x]."""
        values = np.asarray(values)
        return values.reshape((self.n, self.n, self.n) + values.shape[1:])

    def interior_mask(self) -> np.ndarray:
        """Points whose central-difference stencil stays inside the grid."""
        mask = np.ones((self.n,) * 3, dtype=bool)
        for axis, per in zip((2, 1, 0), self.chart.periodic):
            if not per:
                idx = [slice(None)] * 3
                idx[axis] = 0
                mask[tuple(idx)] = False
                idx[axis] = -1
                mask[tuple(idx)] = False
        return mask.ravel()
