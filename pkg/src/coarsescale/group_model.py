"""Coordinates, group law and root data for G = R^{2n} x| R^{2n-1}.

Sol is the case n = 1.  A point is stored as its translation part ``x``
(length 2n) and its Cartan part ``t`` (length 2n-1).  Conjugation by ``t``
scales ``x_i`` by ``exp(h_i(t))`` where ``h`` are the root heights.

The official metric of this package is the factor-wise maximum of the 2n
upper half-plane distances between ``(x_i, exp(h_i(t)))``.  It is
left-invariant and is quasi-isometric to the Riemannian metric; it is not
that metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_TOL = 1e-9


class DimensionError(ValueError):
    """Raised when points of different groups are combined."""


@dataclass(frozen=True)
class GroupSpec:
    n: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ValueError(f"rank parameter must be a positive integer, got {self.n!r}")

    @property
    def dim_x(self) -> int:
        return 2 * self.n

    @property
    def dim_t(self) -> int:
        return 2 * self.n - 1

    def heights(self, t) -> np.ndarray:
        """Root heights h(t).  Accepts a vector or an array with last axis dim_t."""
        t = np.asarray(t, dtype=float)
        if t.shape[-1] != self.dim_t:
            raise DimensionError(f"expected t of length {self.dim_t}, got shape {t.shape}")
        h = np.empty(t.shape[:-1] + (self.dim_x,), dtype=float)
        h[..., 0] = t[..., 0]
        h[..., 1:-1] = t[..., 1:] - t[..., :-1]
        h[..., -1] = -t[..., -1]
        return h

    def heights_int(self, k: Sequence[int]) -> tuple[int, ...]:
        """Exact integer root heights of an integer height vector."""
        k = tuple(int(v) for v in k)
        if len(k) != self.dim_t:
            raise DimensionError(f"expected {self.dim_t} height indices, got {len(k)}")
        return (k[0],) + tuple(k[j] - k[j - 1] for j in range(1, len(k))) + (-k[-1],)

    def t_from_heights(self, h) -> np.ndarray:
        """Inverse of :meth:`heights` on the sum-zero hyperplane (t_j = h_1 + ... + h_j)."""
        h = np.asarray(h, dtype=float)
        return np.cumsum(h[..., :-1], axis=-1)

    def t_extent(self, r: float) -> np.ndarray:
        """Largest |dt_j| over height offsets with max_i |h_i(dt)| <= r."""
        return np.array([r * min(j, 2 * self.n - j) for j in range(1, 2 * self.n)], dtype=float)


@dataclass(frozen=True)
class GroupPoint:
    spec: GroupSpec
    x: tuple
    t: tuple

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        t = tuple(float(v) for v in self.t)
        if len(x) != self.spec.dim_x or len(t) != self.spec.dim_t:
            raise DimensionError(
                f"rank {self.spec.n} needs x of length {self.spec.dim_x} and t of length {self.spec.dim_t}"
            )
        if not all(math.isfinite(v) for v in x + t):
            raise ValueError("group point coordinates must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)

    @classmethod
    def from_coords(cls, spec: GroupSpec, coords: Sequence[float]) -> "GroupPoint":
        """Build from a flat (x_1..x_2n, t_1..t_{2n-1}) sequence, e.g. (a, b, c) for Sol."""
        coords = list(coords)
        return cls(spec, coords[: spec.dim_x], coords[spec.dim_x :])

    @property
    def coords(self) -> tuple:
        return self.x + self.t

    def __iter__(self):
        return iter(self.coords)


def _check_same(p: GroupPoint, q: GroupPoint):
    if p.spec != q.spec:
        raise DimensionError(f"points live in different groups: n={p.spec.n} vs n={q.spec.n}")


def identity(spec: GroupSpec) -> GroupPoint:
    return GroupPoint(spec, (0.0,) * spec.dim_x, (0.0,) * spec.dim_t)


def heights(p: GroupPoint) -> np.ndarray:
    return p.spec.heights(p.t)


def multiply(p: GroupPoint, q: GroupPoint) -> GroupPoint:
    """Group law: t adds, x_i = p.x_i + exp(h_i(p.t)) * q.x_i."""
    _check_same(p, q)
    scale = np.exp(heights(p))
    x = np.asarray(p.x) + scale * np.asarray(q.x)
    t = np.asarray(p.t) + np.asarray(q.t)
    return GroupPoint(p.spec, x, t)


def inverse(p: GroupPoint) -> GroupPoint:
    scale = np.exp(-heights(p))
    return GroupPoint(p.spec, -scale * np.asarray(p.x), -np.asarray(p.t))


def t_power(spec: GroupSpec, t) -> GroupPoint:
    """The pure Cartan element with t-coordinates ``t``."""
    return GroupPoint(spec, (0.0,) * spec.dim_x, np.broadcast_to(np.asarray(t, float), (spec.dim_t,)))


def hyperbolic_distance(x1, s1, x2, s2):
    """Upper half-plane distance between (x1, s1) and (x2, s2).

    Uses 2 asinh(|dz| / (2 sqrt(s1 s2))), which equals
    arccosh(1 + |dz|^2 / (2 s1 s2)) but does not lose precision near 0.
    Works elementwise on arrays.
    """
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if np.any(s1 <= 0) or np.any(s2 <= 0):
        raise ValueError("upper half-plane heights must be positive")
    dz = np.hypot(np.subtract(x1, x2, dtype=float), s1 - s2)
    d = 2.0 * np.arcsinh(dz / (2.0 * np.sqrt(s1 * s2)))
    return float(d) if np.ndim(d) == 0 else d


def factor_distances(x1, h1, x2, h2):
    """Per-factor hyperbolic distances given log-heights instead of heights.

    Working in log-heights keeps points at |h| ~ 700 finite.
    """
    x1, h1, x2, h2 = (np.asarray(v, dtype=float) for v in (x1, h1, x2, h2))
    u = np.asarray(np.subtract(x1, x2), dtype=float) * np.exp(-(h1 + h2) / 2.0)
    v = 2.0 * np.sinh((h1 - h2) / 2.0)
    return 2.0 * np.arcsinh(np.hypot(u, v) / 2.0)


def quasi_distance(p: GroupPoint, q: GroupPoint) -> float:
    """Max over the 2n hyperbolic factors."""
    _check_same(p, q)
    d = factor_distances(p.x, heights(p), q.x, heights(q))
    return float(np.max(d))


def quasi_distance_arrays(spec: GroupSpec, x1, t1, x2, t2) -> np.ndarray:
    """Vectorised quasi_distance over arrays of shape (..., dim_x) and (..., dim_t)."""
    d = factor_distances(x1, spec.heights(t1), x2, spec.heights(t2))
    return d.max(axis=-1)


def window_halfwidth(h1, h2, r: float):
    """Largest |dx| with factor distance <= r between log-heights h1 and h2.

    Returns -1 where the heights alone are already more than r apart.
    """
    h1 = np.asarray(h1, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    slack = math.sinh(r / 2.0) ** 2 - np.sinh((h1 - h2) / 2.0) ** 2
    w = 2.0 * np.exp((h1 + h2) / 2.0) * np.sqrt(np.maximum(slack, 0.0))
    return np.where(slack >= 0, w, -1.0)
