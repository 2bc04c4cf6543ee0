"""Balls, boundaries, Følner boxes and growth on the net N.

Every ball in the model metric is, height by height, an integer rectangle
of indices: the max over factors splits into one window per x-coordinate.
Boundaries are computed with summed-area tables over each height slab, so
a set of 10^6 points costs a handful of array passes per neighbouring
height instead of one ball per point.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np
from scipy import integrate

from .group_model import DEFAULT_TOL, GroupSpec, quasi_distance_arrays, window_halfwidth
from .net import (
    DEFAULT_BUDGET,
    Box,
    BudgetExceeded,
    NetIndex,
    NetSet,
    enumerate_net,
    int_bounds,
    unit_box_diameter,
)

DEFAULT_MAX_RADIUS = 12.0


class InvalidShape(ValueError):
    pass


@dataclass(frozen=True)
class NetSpace:
    """The net N of G with the model quasi-metric on corner points."""

    spec: GroupSpec
    tol: float = DEFAULT_TOL
    budget: int = DEFAULT_BUDGET
    max_radius: float = DEFAULT_MAX_RADIUS
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def height_offsets(self, r: float) -> list:
        """Integer height offsets dk with max_i |h_i(dk)| <= r (closed, with tolerance)."""
        key = ("offsets", r)
        if key not in self._cache:
            ext = np.floor(self.spec.t_extent(r + self.tol)).astype(int)
            out = []
            for dk in itertools.product(*(range(-e, e + 1) for e in ext)):
                if max(abs(v) for v in self.spec.heights_int(dk)) <= r + self.tol:
                    out.append(dk)
            self._cache[key] = out
        return self._cache[key]

    def distance(self, p: NetIndex, q: NetIndex) -> float:
        xp, tp = _corner(self.spec, p)
        xq, tq = _corner(self.spec, q)
        return float(quasi_distance_arrays(self.spec, xp, tp, xq, tq))

    def _check_radius(self, r):
        if r < 0 or r > self.max_radius:
            raise BudgetExceeded(f"radius {r} outside [0, {self.max_radius}]")

    def ball_rectangles(self, center: NetIndex, r: float):
        self._check_radius(r)
        spec = self.spec
        hc = np.asarray(spec.heights_int(center.k), dtype=float)
        xc = np.exp(hc) * np.asarray(center.m, dtype=float)
        for dk in self.height_offsets(r):
            k = tuple(a + b for a, b in zip(center.k, dk))
            h = np.asarray(spec.heights_int(k), dtype=float)
            s = np.exp(h)
            w = window_halfwidth(hc, h, r + self.tol)
            a, b = int_bounds((xc - w) / s, (xc + w) / s, True, True, self.tol)
            if np.all(a <= b):
                yield k, [(int(u), int(v)) for u, v in zip(a, b)]

    def ball(self, center: NetIndex, r: float) -> NetSet:
        return NetSet.from_rectangles(self.spec, dict(self.ball_rectangles(center, r)))

    def ball_size(self, center: NetIndex, r: float) -> int:
        return sum(math.prod(b - a + 1 for a, b in rr) for _, rr in self.ball_rectangles(center, r))

    def boundary(self, S: NetSet, r: float) -> NetSet:
        """Points within r of S and within r of N minus S."""
        self._check_radius(r)
        spec = self.spec
        r_eff = r + self.tol
        offsets = self.height_offsets(r)
        tables = {k: _prefix_sums(mask) for k, (_, mask) in S.slabs.items()}
        candidates = {tuple(a - b for a, b in zip(k, dk)) for k in S.slabs for dk in offsets}
        out = NetSet(spec)
        cells = 0
        for kp in sorted(candidates):
            hp = np.asarray(spec.heights_int(kp), dtype=float)
            sp = np.exp(hp)
            sources = []
            for dk in offsets:
                k = tuple(a + b for a, b in zip(kp, dk))
                h = np.asarray(spec.heights_int(k), dtype=float)
                sources.append((k, np.exp(h), window_halfwidth(hp, h, r_eff)))
            g_lo, g_hi = None, None
            for k, s, w in sources:
                if k not in S.slabs:
                    continue
                lo, mask = S.slabs[k]
                a, b = int_bounds((s * lo - w) / sp, (s * (lo + np.array(mask.shape) - 1) + w) / sp, True, True, self.tol)
                g_lo = a if g_lo is None else np.minimum(g_lo, a)
                g_hi = b if g_hi is None else np.maximum(g_hi, b)
            if g_lo is None or np.any(g_lo > g_hi):
                continue
            g_lo = g_lo.astype(np.int64)
            shape = tuple(int(v) for v in g_hi - g_lo + 1)
            cells += math.prod(shape)
            if cells > self.budget:
                raise BudgetExceeded(f"boundary scan exceeds {self.budget} cells")
            xp = [sp[i] * np.arange(g_lo[i], g_lo[i] + shape[i], dtype=float) for i in range(spec.dim_x)]
            near_s = np.zeros(shape, dtype=bool)
            near_c = np.zeros(shape, dtype=bool)
            for k, s, w in sources:
                wa, wb = [], []
                for i in range(spec.dim_x):
                    a, b = int_bounds((xp[i] - w[i]) / s[i], (xp[i] + w[i]) / s[i], True, True, self.tol)
                    wa.append(a.astype(np.int64))
                    wb.append(b.astype(np.int64))
                nonempty = _outer_and([a <= b for a, b in zip(wa, wb)])
                if k not in S.slabs:
                    near_c |= nonempty
                    continue
                lo, mask = S.slabs[k]
                cnt = _box_sums(tables[k], mask.shape, [a - l for a, l in zip(wa, lo)], [b - l for b, l in zip(wb, lo)])
                vol = _outer_prod([np.maximum(b - a + 1, 0) for a, b in zip(wa, wb)])
                near_s |= cnt > 0
                near_c |= nonempty & (cnt < vol)
            out._put(kp, g_lo, near_s & near_c)
        return out

    def unit_box_diameter(self) -> float:
        if "D_B" not in self._cache:
            self._cache["D_B"] = unit_box_diameter(self.spec)
        return self._cache["D_B"]


def _corner(spec, idx: NetIndex):
    k = np.asarray(idx.k, dtype=float)
    x = np.exp(spec.heights(k)) * np.asarray(idx.m, dtype=float)
    return x, k


def _prefix_sums(mask: np.ndarray) -> np.ndarray:
    p = np.zeros(tuple(n + 1 for n in mask.shape), dtype=np.int64)
    acc = mask.astype(np.int64)
    for ax in range(mask.ndim):
        acc = acc.cumsum(axis=ax)
    p[tuple(slice(1, None) for _ in mask.shape)] = acc
    return p


def _box_sums(table, shape, lows, highs):
    """Sum of the mask over [lows_i, highs_i] (slab-local, inclusive) on an open mesh."""
    a_c, b_c = [], []
    for lo, hi, n in zip(lows, highs, shape):
        a = np.clip(lo, 0, n)
        b = np.clip(hi + 1, 0, n)
        a_c.append(a)
        b_c.append(np.maximum(a, b))
    d = len(shape)
    total = 0
    for bits in itertools.product((0, 1), repeat=d):
        idx = [b_c[i] if bit else a_c[i] for i, bit in enumerate(bits)]
        sign = -1 if (d - sum(bits)) % 2 else 1
        total = total + sign * table[np.ix_(*idx)]
    return total


def _mesh(vectors):
    # np.ix_ would read boolean vectors as masks
    d = len(vectors)
    return [np.asarray(v).reshape((1,) * i + (-1,) + (1,) * (d - i - 1)) for i, v in enumerate(vectors)]


def _outer_and(vectors):
    return reduce(np.logical_and, _mesh(vectors))


def _outer_prod(vectors):
    return reduce(np.multiply, _mesh(vectors))


# ---------------------------------------------------------------------------
# module-level operations


def ball(space, center, r: float):
    return space.ball(center, r)


def boundary(space, S, r: float):
    if not S:
        return type(S)(space.spec) if isinstance(S, NetSet) else set()
    return space.boundary(S, r)


def folner_ratio(space, S, r: float) -> float:
    if not S:
        raise ValueError("Følner ratio of an empty set")
    return len(space.boundary(S, r)) / len(S)


def growth(space, center, r_max: int) -> list:
    """Ball cardinalities for r = 0, 1, ..., r_max."""
    return [space.ball_size(center, r) for r in range(0, int(r_max) + 1)]


def taxicab_ball_size(d: int, r: int) -> int:
    """|{v in Z^d : |v|_1 <= r}|."""
    return sum(2**i * math.comb(d, i) * math.comb(int(r), i) for i in range(0, min(d, int(r)) + 1))


def folner_box(spec: GroupSpec, shape: Sequence[float], margin: float = 0.0, offset=None) -> Box:
    """Følner box with side parameters a_1..a_2n.

    Height interval j is [-log a_{j+1}, log a_j); the x-lengths are the
    smallest that keep every x-row at least one unit wide at every height
    of the box (a_1, a_i^2 in the middle, a_2n).  For Sol this is
    [0,a_1) x [0,a_2) x [-log a_2, log a_1).

    ``margin`` shrinks the height intervals: a number trims every end by
    that amount, a sequence gives one (low, high) trim per height
    coordinate.  Trimming removes the rows where some x-interval holds only
    a few net points.  ``offset`` translates the x-intervals.
    """
    a = [float(v) for v in shape]
    if len(a) != spec.dim_x:
        raise InvalidShape(f"need {spec.dim_x} side parameters, got {len(a)}")
    if any(v <= 0 for v in a):
        raise InvalidShape("side parameters must be positive")
    for i in range(len(a) - 1):
        if not a[i] * a[i + 1] > 1.0:
            raise InvalidShape(f"a_{i + 1} * a_{i + 2} = {a[i] * a[i + 1]} must exceed 1")
    trims = _margins(spec, margin)
    t = []
    for j in range(spec.dim_t):
        lo, hi = -math.log(a[j + 1]) + trims[j][0], math.log(a[j]) - trims[j][1]
        if not lo < hi:
            raise InvalidShape(f"margin {margin} empties height interval {j + 1}")
        t.append((lo, hi))
    lengths = [a[0]] + [v * v for v in a[1:-1]] + [a[-1]]
    off = [0.0] * spec.dim_x if offset is None else [float(v) for v in offset]
    x = [(o, o + length) for o, length in zip(off, lengths)]
    return Box(tuple(x), tuple(t))


def _margins(spec, margin):
    if isinstance(margin, (int, float)):
        return [(float(margin), float(margin))] * spec.dim_t
    trims = [tuple(float(v) for v in m) for m in margin]
    if len(trims) != spec.dim_t or any(len(m) != 2 for m in trims):
        raise InvalidShape(f"margin needs {spec.dim_t} (low, high) pairs")
    return trims


def folner_family(spec: GroupSpec, js, base: float = 2.0, margin: float = 0.0, offset=None, budget=DEFAULT_BUDGET):
    """Net sets folner_box(base^j, ..., base^j) ∩ N for j in ``js``."""
    return [
        enumerate_net(spec, folner_box(spec, [base**j] * spec.dim_x, margin=margin, offset=offset), budget)
        for j in js
    ]


def min_separation(space: NetSpace, points: NetSet) -> float:
    """Smallest distance between two distinct points of a (small) window."""
    pts = list(points)
    if len(pts) < 2:
        raise ValueError("need at least two points")
    x = np.array([_corner(space.spec, p)[0] for p in pts])
    t = np.array([p.k for p in pts], dtype=float)
    best = math.inf
    for i in range(len(pts) - 1):
        d = quasi_distance_arrays(space.spec, x[i], t[i], x[i + 1 :], t[i + 1 :])
        best = min(best, float(d.min()))
    return best


def shell_measure(space: NetSpace, box: Box, r: float, samples: int = 129) -> float:
    """Haar measure of the continuous r-boundary of a parameter box (Sol only).

    Inner part: the box minus its r-interior, where the interior at height t
    requires [t - r, t + r] inside the box and each x-margin to exceed the
    widest window exp(h_i(t)) sinh(r).  Outer part: at each height the union,
    over admissible source heights t', of the box's x-rectangle widened by
    the window between t and t'; the union of these nested rectangles is a
    staircase whose area is taken from ``samples`` source heights.
    """
    if space.spec.n != 1:
        raise NotImplementedError("continuous shells are implemented for Sol only")
    (x0, x1), (y0, y1) = box.x
    (c, d) = box.t[0]
    lx, ly = x1 - x0, y1 - y0
    sr = math.sinh(r)
    crit = math.log(math.cosh(r))

    def interior(t):
        if t < c + r or t > d - r:
            return 0.0
        return max(0.0, lx - 2 * math.exp(t) * sr) * max(0.0, ly - 2 * math.exp(-t) * sr)

    def inflated(t):
        lo, hi = max(c, t - r), min(d, t + r)
        if lo > hi:
            return 0.0
        tp = np.linspace(lo, hi, samples)
        extra = [v for v in (t + crit, t - crit) if lo < v < hi]
        tp = np.concatenate([tp, extra])
        wx = window_halfwidth(t, tp, r)
        wy = window_halfwidth(-t, -tp, r)
        ok = (wx >= 0) & (wy >= 0)
        X = lx + 2 * wx[ok]
        Y = ly + 2 * wy[ok]
        if X.size == 0:
            return 0.0
        order = np.argsort(-X)
        X, Y = X[order], np.maximum.accumulate(Y[order])
        widths = X - np.append(X[1:], 0.0)
        return float(np.sum(widths * Y))

    brk = sorted({c - r, c, c + r, d - r, d, d + r})
    inner, _ = integrate.quad(lambda t: lx * ly - interior(t), c, d, points=[p for p in brk if c < p < d], limit=400)
    outer_pts = [p for p in brk if c - r < p < d + r]
    outer, _ = integrate.quad(
        lambda t: inflated(t) - (lx * ly if c <= t < d else 0.0), c - r, d + r, points=outer_pts, limit=400
    )
    return inner + outer
