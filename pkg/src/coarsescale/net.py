"""Special boxes, the separated net N and the rounding map onto it.

The net point with index (k, m) is t^k x^m, i.e. x_i = exp(h_i(k)) m_i and
t = k.  Its special box is the left translate of the unit parameter box,
so every box has Haar measure 1 and the boxes tile G.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .group_model import DEFAULT_TOL, GroupPoint, GroupSpec, quasi_distance_arrays

DEFAULT_BUDGET = 10**7


class BudgetExceeded(RuntimeError):
    """An enumeration would touch more candidates than the configured budget."""


@dataclass(frozen=True, order=True)
class NetIndex:
    k: tuple
    m: tuple

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))
        object.__setattr__(self, "m", tuple(int(v) for v in self.m))

    def __repr__(self):
        k = self.k[0] if len(self.k) == 1 else self.k
        return f"NetIndex({k}, {self.m})"


def net_index(k, m) -> NetIndex:
    """Convenience constructor accepting a bare int for the Sol height."""
    if isinstance(k, (int, np.integer)):
        k = (k,)
    return NetIndex(tuple(k), tuple(m))


@dataclass(frozen=True)
class Box:
    """Half-open parameter box prod [lo, hi) over the x and t coordinates."""

    x: tuple
    t: tuple

    def __post_init__(self):
        x = tuple((float(lo), float(hi)) for lo, hi in self.x)
        t = tuple((float(lo), float(hi)) for lo, hi in self.t)
        for lo, hi in x + t:
            if not lo < hi:
                raise ValueError(f"empty interval [{lo}, {hi})")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)

    @classmethod
    def from_intervals(cls, spec: GroupSpec, intervals: Sequence) -> "Box":
        intervals = list(intervals)
        return cls(tuple(intervals[: spec.dim_x]), tuple(intervals[spec.dim_x :]))

    @property
    def intervals(self) -> tuple:
        return self.x + self.t

    def contains(self, p: GroupPoint) -> bool:
        return all(lo <= v < hi for (lo, hi), v in zip(self.intervals, p.coords))

    def translate_x(self, offset: Sequence[float]) -> "Box":
        return Box(tuple((lo + o, hi + o) for (lo, hi), o in zip(self.x, offset)), self.t)


def snap(v, tol: float = DEFAULT_TOL):
    """Snap values within a relative tolerance of an integer onto that integer."""
    v = np.asarray(v, dtype=float)
    r = np.round(v)
    close = np.abs(v - r) <= tol * np.maximum(1.0, np.abs(r))
    out = np.where(close, r, v)
    return float(out) if out.ndim == 0 else out


def int_bounds(lo, hi, lo_closed=True, hi_closed=False, tol: float = DEFAULT_TOL):
    """First and last integer in the interval between lo and hi (vectorised).

    Half-open [lo, hi) by default; values within ``tol`` of an integer are
    snapped first so that exactly constructed endpoints behave.
    """
    lo = snap(lo, tol)
    hi = snap(hi, tol)
    first = np.where(lo_closed, np.ceil(lo), np.floor(lo) + 1)
    last = np.where(hi_closed, np.floor(hi), np.ceil(hi) - 1)
    return first, last


def _scales(spec: GroupSpec, k) -> np.ndarray:
    return np.exp(np.asarray(spec.heights_int(k), dtype=float))


def net_point(spec: GroupSpec, idx: NetIndex) -> GroupPoint:
    _check_index(spec, idx)
    x = _scales(spec, idx.k) * np.asarray(idx.m, dtype=float)
    return GroupPoint(spec, x, idx.k)


def box_of(spec: GroupSpec, idx: NetIndex) -> Box:
    _check_index(spec, idx)
    s = _scales(spec, idx.k)
    x = tuple((si * mi, si * (mi + 1)) for si, mi in zip(s, idx.m))
    t = tuple((kj, kj + 1) for kj in idx.k)
    return Box(x, t)


def round_to_net(p: GroupPoint, tol: float = DEFAULT_TOL) -> NetIndex:
    """rho_N: the index of the special box containing p."""
    spec = p.spec
    k = tuple(int(v) for v in np.floor(snap(np.asarray(p.t), tol)))
    m = np.floor(snap(np.asarray(p.x) / _scales(spec, k), tol))
    return NetIndex(k, tuple(int(v) for v in m))


def round_arrays(spec: GroupSpec, x: np.ndarray, t: np.ndarray, tol: float = DEFAULT_TOL):
    """Vectorised rho_N returning integer arrays (k, m)."""
    k = np.floor(snap(t, tol)).astype(np.int64)
    m = np.floor(snap(x / np.exp(spec.heights(k.astype(float))), tol)).astype(np.int64)
    return k, m


def haar_measure(box: Box) -> float:
    return float(np.prod([hi - lo for lo, hi in box.intervals]))


def _check_index(spec: GroupSpec, idx: NetIndex):
    if len(idx.k) != spec.dim_t or len(idx.m) != spec.dim_x:
        raise ValueError(f"index {idx} does not belong to rank {spec.n}")


def integer_heights(t_intervals, lo_closed=True, hi_closed=False, tol: float = DEFAULT_TOL):
    """All integer height vectors inside a product of t-intervals."""
    ranges = []
    for lo, hi in t_intervals:
        a, b = int_bounds(lo, hi, lo_closed, hi_closed, tol)
        ranges.append(range(int(a), int(b) + 1))
    return itertools.product(*ranges)


def row_ranges(spec: GroupSpec, k, x_intervals, flags=None, tol: float = DEFAULT_TOL):
    """Per-coordinate integer ranges of m with exp(h_i(k)) m_i inside x-interval i.

    ``flags`` optionally gives (lo_closed, hi_closed) per coordinate.
    Returns a list of (first, last) pairs (possibly empty, first > last).
    """
    s = _scales(spec, k)
    out = []
    for i, (lo, hi) in enumerate(x_intervals):
        lc, hc = flags[i] if flags is not None else (True, False)
        a, b = int_bounds(lo / s[i], hi / s[i], lc, hc, tol)
        out.append((int(a), int(b)))
    return out


def count_net(spec: GroupSpec, box: Box, tol: float = DEFAULT_TOL) -> int:
    """|box ∩ N| without materialising the points."""
    total = 0
    for k in integer_heights(box.t, tol=tol):
        total += math.prod(max(0, b - a + 1) for a, b in row_ranges(spec, k, box.x, tol=tol))
    return total


def enumerate_net(spec: GroupSpec, box: Box, budget: int = DEFAULT_BUDGET, tol: float = DEFAULT_TOL) -> "NetSet":
    """All net points whose corner lies in ``box``, as a :class:`NetSet`."""
    rects = {}
    total = 0
    for k in integer_heights(box.t, tol=tol):
        rr = row_ranges(spec, k, box.x, tol=tol)
        size = math.prod(max(0, b - a + 1) for a, b in rr)
        if size == 0:
            continue
        total += size
        if total > budget:
            raise BudgetExceeded(f"box {box} holds more than {budget} net points")
        rects[k] = rr
    return NetSet.from_rectangles(spec, rects)


def index_arrays(S: "NetSet"):
    """All indices of S as integer arrays (k, m) of shapes (N, dim_t), (N, dim_x)."""
    ks, ms = [], []
    for k, (lo, mask) in sorted(S.slabs.items()):
        j = np.argwhere(mask)
        ms.append(lo + j)
        ks.append(np.broadcast_to(np.asarray(k, dtype=np.int64), (len(j), len(k))))
    if not ks:
        return np.zeros((0, S.spec.dim_t), np.int64), np.zeros((0, S.spec.dim_x), np.int64)
    return np.concatenate(ks), np.concatenate(ms)


def unit_box_diameter(spec: GroupSpec, samples: int = 3) -> float:
    """D_B: max quasi_distance between sample points of the closed unit box.

    ``samples`` points per axis including both endpoints (2 = corners only).
    """
    axis = np.linspace(0.0, 1.0, samples)
    grid = np.array(list(itertools.product(axis, repeat=spec.dim_x + spec.dim_t)))
    x, t = grid[:, : spec.dim_x], grid[:, spec.dim_x :]
    best = 0.0
    for i in range(len(grid)):
        d = quasi_distance_arrays(spec, x[i], t[i], x, t)
        best = max(best, float(d.max()))
    return best


class NetSet:
    """A finite set of net indices, stored per height as a boolean mask.

    ``slabs[k] = (lo, mask)`` means index (k, lo + j) is present iff
    ``mask[j]``.  Slabs are trimmed to their bounding box and never empty.
    """

    def __init__(self, spec: GroupSpec, slabs=None):
        self.spec = spec
        self.slabs = {}
        for k, (lo, mask) in (slabs or {}).items():
            self._put(tuple(int(v) for v in k), np.asarray(lo, dtype=np.int64), np.asarray(mask, dtype=bool))

    def _put(self, k, lo, mask):
        if not mask.any():
            self.slabs.pop(k, None)
            return
        sl = []
        for ax in range(mask.ndim):
            other = tuple(a for a in range(mask.ndim) if a != ax)
            nz = np.flatnonzero(mask.any(axis=other) if other else mask)
            sl.append(slice(nz[0], nz[-1] + 1))
        starts = np.array([s.start for s in sl], dtype=np.int64)
        self.slabs[k] = (lo + starts, np.ascontiguousarray(mask[tuple(sl)]))

    @classmethod
    def from_rectangles(cls, spec: GroupSpec, rects) -> "NetSet":
        """``rects[k] = [(first_i, last_i), ...]`` full integer rectangles."""
        out = cls(spec)
        for k, rr in rects.items():
            shape = tuple(b - a + 1 for a, b in rr)
            if min(shape) <= 0:
                continue
            out.slabs[tuple(k)] = (np.array([a for a, _ in rr], dtype=np.int64), np.ones(shape, dtype=bool))
        return out

    @classmethod
    def from_indices(cls, spec: GroupSpec, indices: Iterable[NetIndex]) -> "NetSet":
        by_k: dict = {}
        for idx in indices:
            by_k.setdefault(idx.k, []).append(idx.m)
        out = cls(spec)
        for k, ms in by_k.items():
            arr = np.array(ms, dtype=np.int64).reshape(len(ms), spec.dim_x)
            lo = arr.min(axis=0)
            mask = np.zeros(tuple(arr.max(axis=0) - lo + 1), dtype=bool)
            mask[tuple((arr - lo).T)] = True
            out.slabs[k] = (lo, mask)
        return out

    @classmethod
    def from_box(cls, spec: GroupSpec, box: Box, budget: int = DEFAULT_BUDGET) -> "NetSet":
        return enumerate_net(spec, box, budget)

    def __len__(self):
        return int(sum(int(mask.sum()) for _, mask in self.slabs.values()))

    def __bool__(self):
        return bool(self.slabs)

    def __contains__(self, idx: NetIndex) -> bool:
        slab = self.slabs.get(idx.k)
        if slab is None:
            return False
        lo, mask = slab
        if any(abs(v) >= 2**62 for v in idx.m):
            return False
        j = np.asarray(idx.m, dtype=np.int64) - lo
        if np.any(j < 0) or np.any(j >= mask.shape):
            return False
        return bool(mask[tuple(j)])

    def contains_arrays(self, k, m) -> np.ndarray:
        """Vectorised membership for integer arrays k (N, dim_t) and m (N, dim_x)."""
        k = np.asarray(k, dtype=np.int64).reshape(-1, self.spec.dim_t)
        m = np.asarray(m, dtype=np.int64).reshape(-1, self.spec.dim_x)
        out = np.zeros(len(k), dtype=bool)
        if not len(k):
            return out
        keys, inverse = np.unique(k, axis=0, return_inverse=True)
        for row, key in enumerate(keys):
            slab = self.slabs.get(tuple(int(v) for v in key))
            if slab is None:
                continue
            lo, mask = slab
            sel = np.flatnonzero(inverse.ravel() == row)
            j = m[sel] - lo
            ok = np.all((j >= 0) & (j < mask.shape), axis=1)
            out[sel[ok]] = mask[tuple(j[ok].T)]
        return out

    def __iter__(self) -> Iterator[NetIndex]:
        for k in sorted(self.slabs):
            lo, mask = self.slabs[k]
            for j in np.argwhere(mask):
                yield NetIndex(k, tuple(int(v) for v in lo + j))

    def __eq__(self, other):
        if not isinstance(other, NetSet):
            return NotImplemented
        if self.spec != other.spec or self.slabs.keys() != other.slabs.keys():
            return False
        for k, (lo, mask) in self.slabs.items():
            olo, omask = other.slabs[k]
            if mask.shape != omask.shape or not np.array_equal(lo, olo) or not np.array_equal(mask, omask):
                return False
        return True

    def __repr__(self):
        return f"NetSet(n={self.spec.n}, size={len(self)}, heights={len(self.slabs)})"

    def heights(self):
        return sorted(self.slabs)

    def to_set(self) -> set:
        return set(self)

    def copy(self) -> "NetSet":
        out = NetSet(self.spec)
        out.slabs = {k: (lo.copy(), m.copy()) for k, (lo, m) in self.slabs.items()}
        return out

    def _combine(self, other: "NetSet", op) -> "NetSet":
        out = NetSet(self.spec)
        for k in set(self.slabs) | set(other.slabs):
            parts = [s.slabs[k] for s in (self, other) if k in s.slabs]
            lo = np.min([p[0] for p in parts], axis=0)
            hi = np.max([p[0] + p[1].shape for p in parts], axis=0)
            masks = []
            for s in (self, other):
                m = np.zeros(tuple(hi - lo), dtype=bool)
                if k in s.slabs:
                    plo, pm = s.slabs[k]
                    off = plo - lo
                    m[tuple(slice(o, o + n) for o, n in zip(off, pm.shape))] = pm
                masks.append(m)
            out._put(k, lo, op(masks[0], masks[1]))
        return out

    def union(self, other: "NetSet") -> "NetSet":
        return self._combine(other, np.logical_or)

    def intersection(self, other: "NetSet") -> "NetSet":
        return self._combine(other, np.logical_and)

    def difference(self, other: "NetSet") -> "NetSet":
        return self._combine(other, lambda a, b: a & ~b)

    __or__ = union
    __and__ = intersection
    __sub__ = difference

    def translate_heights(self, dk: Sequence[int]) -> "NetSet":
        """Image under left translation by t^dk, which sends (k, m) to (k + dk, m)."""
        dk = tuple(int(v) for v in dk)
        out = NetSet(self.spec)
        out.slabs = {tuple(a + b for a, b in zip(k, dk)): v for k, v in self.slabs.items()}
        return out

    def shift_indices(self, dm: Sequence[int]) -> "NetSet":
        """(k, m) -> (k, m + dm) at every height; moves each point a bounded distance."""
        dm = np.asarray(dm, dtype=np.int64)
        out = NetSet(self.spec)
        out.slabs = {k: (lo + dm, mask) for k, (lo, mask) in self.slabs.items()}
        return out

    def rectangles(self):
        """Decompose into (k, [(first_i, last_i)]) rectangles: whole slabs when full, else runs."""
        for k in sorted(self.slabs):
            lo, mask = self.slabs[k]
            if mask.all():
                yield k, [(int(a), int(a + n - 1)) for a, n in zip(lo, mask.shape)]
                continue
            flat = mask.reshape(-1, mask.shape[-1])
            lead_shape = mask.shape[:-1]
            for row_no, row in enumerate(flat):
                if not row.any():
                    continue
                lead = np.unravel_index(row_no, lead_shape) if lead_shape else ()
                padded = np.concatenate(([False], row, [False]))
                edges = np.flatnonzero(padded[1:] != padded[:-1])
                for start, stop in zip(edges[::2], edges[1::2]):
                    rr = [(int(lo[a] + lead[a]),) * 2 for a in range(len(lead))]
                    rr.append((int(lo[-1] + start), int(lo[-1] + stop - 1)))
                    yield k, rr
