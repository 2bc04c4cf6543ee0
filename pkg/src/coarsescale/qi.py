"""Quasi-isometries in companion form and their exact preimages on N.

A map is an ordered list of stages applied left to right:

* ``CoordinateWise``: a bi-Lipschitz map of R on each x-coordinate, t fixed;
* ``LeftTranslation``: p -> g p;
* ``Permutation``: x'_i = x_{sigma(i)} with the unique linear t-action that
  keeps the group law (for Sol this is (x, y, t) -> (y, x, -t));
* ``RoundToNet``: rho_N, allowed only as the final stage.

Each continuous stage sends an x-box times a t-parallelepiped to a set of
the same kind, so the preimage of a union of special boxes can be pulled
back exactly and its net points counted without scanning.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .group_model import DEFAULT_TOL, GroupPoint, GroupSpec, multiply, quasi_distance_arrays
from .net import NetIndex, NetSet, index_arrays, int_bounds, net_point, round_arrays, round_to_net, snap


class StageOrderError(ValueError):
    """RoundToNet appears anywhere but last, or a stage is not invertible."""


class UnsupportedStage(ValueError):
    pass


# ---------------------------------------------------------------------------
# coordinate maps


@dataclass(frozen=True)
class Affine:
    slope: float
    offset: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.slope) or self.slope == 0:
            raise ValueError("affine slope must be finite and nonzero")

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.offset

    def inverse(self) -> "Affine":
        return Affine(1.0 / self.slope, -self.offset / self.slope)

    def invert_values(self, y):
        return (np.asarray(y, dtype=float) - self.offset) / self.slope

    @property
    def increasing(self) -> bool:
        return self.slope > 0

    def lipschitz(self) -> float:
        s = abs(self.slope)
        return max(s, 1.0 / s)

    def text(self) -> str:
        return f"affine {_fmt(self.slope)} {_fmt(self.offset)}"


@dataclass(frozen=True)
class PiecewiseLinear:
    """Continuous increasing map with the given breakpoints and slopes.

    ``slopes`` has one more entry than ``breaks``; the map sends 0 to
    ``value_at_zero``.
    """

    breaks: tuple
    slopes: tuple
    value_at_zero: float = 0.0
    _knots: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        b = tuple(float(v) for v in self.breaks)
        s = tuple(float(v) for v in self.slopes)
        if len(s) != len(b) + 1:
            raise ValueError("need exactly one more slope than breakpoints")
        if any(y <= x for x, y in zip(b, b[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if any(not (v > 0 and math.isfinite(v)) for v in s):
            raise ValueError("piecewise slopes must be positive and finite")
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "slopes", s)
        # values at breakpoints, integrating from 0
        vals = []
        for x in b:
            vals.append(self.value_at_zero + _integral(b, s, 0.0, x))
        object.__setattr__(self, "_knots", tuple(vals))

    def _anchors(self):
        if not self.breaks:
            return np.zeros(1), np.full(1, self.value_at_zero)
        return np.asarray(self.breaks), np.asarray(self._knots)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        bx, by = self._anchors()
        piece = np.searchsorted(np.asarray(self.breaks), x, side="right")
        a = np.maximum(piece - 1, 0)
        return by[a] + np.asarray(self.slopes)[piece] * (x - bx[a])

    def invert_values(self, y):
        y = np.asarray(y, dtype=float)
        bx, by = self._anchors()
        piece = np.searchsorted(np.asarray(self._knots), y, side="right")
        a = np.maximum(piece - 1, 0)
        return bx[a] + (y - by[a]) / np.asarray(self.slopes)[piece]

    def inverse(self) -> "PiecewiseLinear":
        return PiecewiseLinear(self._knots, tuple(1.0 / v for v in self.slopes), float(self.invert_values(0.0)))

    @property
    def increasing(self) -> bool:
        return True

    def lipschitz(self) -> float:
        return max(max(self.slopes), 1.0 / min(self.slopes))

    def text(self) -> str:
        brk = ",".join(_fmt(v) for v in self.breaks)
        sl = ",".join(_fmt(v) for v in self.slopes)
        return f"pwl {brk} {sl}" + ("" if self.value_at_zero == 0 else f" {_fmt(self.value_at_zero)}")


def _integral(breaks, slopes, a, b):
    """Integral of the step function of slopes from a to b."""
    if b < a:
        return -_integral(breaks, slopes, b, a)
    pts = [a] + [x for x in breaks if a < x < b] + [b]
    total = 0.0
    for u, v in zip(pts, pts[1:]):
        total += slopes[bisect.bisect_right(breaks, (u + v) / 2)] * (v - u)
    return total


def _fmt(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# stages


@dataclass(frozen=True)
class CoordinateWise:
    """One coordinate map (or None for the identity) per x-coordinate."""

    maps: tuple

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))

    def check(self, spec):
        if len(self.maps) != spec.dim_x:
            raise ValueError(f"coordinate-wise stage needs {spec.dim_x} maps, got {len(self.maps)}")

    def apply(self, spec, x, t):
        x = np.array(x, dtype=float)
        for i, f in enumerate(self.maps):
            if f is not None:
                x[..., i] = f(x[..., i])
        return x, t

    def inverse(self, spec):
        return CoordinateWise(tuple(None if f is None else f.inverse() for f in self.maps))

    def lipschitz(self) -> float:
        return max([1.0] + [f.lipschitz() for f in self.maps if f is not None])


@dataclass(frozen=True)
class LeftTranslation:
    g: GroupPoint

    def check(self, spec):
        if self.g.spec != spec:
            raise ValueError("translation element lives in another group")

    def apply(self, spec, x, t):
        s = np.exp(spec.heights(np.asarray(self.g.t)))
        return np.asarray(self.g.x) + s * np.asarray(x, dtype=float), np.asarray(t, dtype=float) + np.asarray(self.g.t)

    def inverse(self, spec):
        s = np.exp(-spec.heights(np.asarray(self.g.t)))
        return LeftTranslation(GroupPoint(spec, -s * np.asarray(self.g.x), -np.asarray(self.g.t)))

    def lipschitz(self) -> float:
        return 1.0


def height_matrix(spec: GroupSpec) -> np.ndarray:
    """Integer matrix H with h(t) = H t."""
    return np.rint(spec.heights(np.eye(spec.dim_t))).T.astype(np.int64)


def induced_t_action(spec: GroupSpec, sigma: Sequence[int]) -> np.ndarray:
    """Integer matrix tau with h_i(tau t) = h_{sigma(i)}(t).

    tau = H^+ P H where P permutes height vectors; H has the integer left
    inverse t_j = h_1 + ... + h_j, so tau is integral and unimodular.
    """
    H = height_matrix(spec)
    P = np.eye(spec.dim_x, dtype=np.int64)[list(sigma)]
    left_inv = np.tril(np.ones((spec.dim_t, spec.dim_x), dtype=np.int64))
    return left_inv @ P @ H


@dataclass(frozen=True)
class Permutation:
    """x'_i = x_{sigma[i]} (0-based) together with the induced t-action."""

    sigma: tuple

    def __post_init__(self):
        sigma = tuple(int(v) for v in self.sigma)
        if sorted(sigma) != list(range(len(sigma))):
            raise ValueError(f"{self.sigma} is not a permutation of 0..{len(sigma) - 1}")
        object.__setattr__(self, "sigma", sigma)

    def check(self, spec):
        if len(self.sigma) != spec.dim_x:
            raise ValueError(f"permutation of {len(self.sigma)} coordinates in rank {spec.n}")

    def tau(self, spec) -> np.ndarray:
        return induced_t_action(spec, self.sigma)

    def apply(self, spec, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        return x[..., list(self.sigma)], t @ self.tau(spec).T.astype(float)

    def inverse(self, spec):
        inv = [0] * len(self.sigma)
        for i, s in enumerate(self.sigma):
            inv[s] = i
        return Permutation(tuple(inv))

    def lipschitz(self) -> float:
        return 1.0


@dataclass(frozen=True)
class RoundToNet:
    def check(self, spec):
        pass


# ---------------------------------------------------------------------------
# maps


@dataclass(frozen=True)
class QiMap:
    spec: GroupSpec
    stages: tuple = ()

    def __post_init__(self):
        stages = tuple(self.stages)
        for i, st in enumerate(stages):
            st.check(self.spec)
            if isinstance(st, RoundToNet) and i != len(stages) - 1:
                raise StageOrderError("RoundToNet must be the final stage")
        object.__setattr__(self, "stages", stages)

    @property
    def continuous(self) -> tuple:
        return tuple(s for s in self.stages if not isinstance(s, RoundToNet))

    @property
    def rounds(self) -> bool:
        return bool(self.stages) and isinstance(self.stages[-1], RoundToNet)

    def apply_arrays(self, x, t):
        """Continuous part on arrays of shape (..., dim_x) and (..., dim_t)."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        for st in self.continuous:
            x, t = st.apply(self.spec, x, t)
        return x, t

    def apply_continuous(self, p: GroupPoint) -> GroupPoint:
        x, t = self.apply_arrays(p.x, p.t)
        return GroupPoint(self.spec, x, t)

    def apply_net(self, idx: NetIndex, tol: float = DEFAULT_TOL) -> NetIndex:
        return round_to_net(self.apply_continuous(net_point(self.spec, idx)), tol)

    def apply_net_arrays(self, k, m, tol: float = DEFAULT_TOL):
        """Vectorised apply_net on integer arrays k (..., dim_t) and m (..., dim_x)."""
        k = np.asarray(k, dtype=float)
        x = np.exp(self.spec.heights(k)) * np.asarray(m, dtype=float)
        x, t = self.apply_arrays(x, k)
        return round_arrays(self.spec, x, t, tol)

    def inverse(self) -> "QiMap":
        """Exact inverse of the continuous part (a trailing RoundToNet is kept)."""
        inv = tuple(st.inverse(self.spec) for st in reversed(self.continuous))
        return QiMap(self.spec, inv + ((RoundToNet(),) if self.rounds else ()))

    def lipschitz(self) -> float:
        """Largest bi-Lipschitz constant among the coordinate maps."""
        return max([1.0] + [st.lipschitz() for st in self.continuous])

    def normalize(self) -> "QiMap":
        """Rewrite fractional t-translations as an integer one plus coordinate scaling.

        L_g with g = (x0, k + s), 0 <= s < 1, becomes scaling x_i by
        exp(h_i(s)) followed by L_(x0, k).  The result differs from the
        original by the t-shift s, hence by at most max |h_i(s)| <= 2.
        """
        out = []
        for st in self.stages:
            if isinstance(st, LeftTranslation):
                t = np.asarray(st.g.t)
                k = np.floor(snap(t))
                s = t - k
                if np.any(s != 0):
                    scale = np.exp(self.spec.heights(s))
                    out.append(CoordinateWise(tuple(Affine(float(v)) for v in scale)))
                    st = LeftTranslation(GroupPoint(self.spec, st.g.x, k))
            out.append(st)
        return QiMap(self.spec, tuple(out))

    def image_box(self, box):
        """Coordinate-wise image of a box; only monotone coordinate maps are allowed."""
        from .net import Box

        x = list(box.x)
        for st in self.continuous:
            if not isinstance(st, CoordinateWise):
                raise UnsupportedStage(f"image_box supports coordinate-wise stages only, got {type(st).__name__}")
            for i, f in enumerate(st.maps):
                if f is None:
                    continue
                a, b = float(f(x[i][0])), float(f(x[i][1]))
                x[i] = (min(a, b), max(a, b))
        return Box(tuple(x), box.t)

    # -- exact preimages -------------------------------------------------

    def _pullback_region(self, x_iv, flags, t_base, t_mat):
        """Pull an x-box and t-set {t_base + t_mat u : u in [0,1)^d} back through the stages."""
        spec = self.spec
        x_iv = [list(v) for v in x_iv]
        flags = [list(f) for f in flags]
        for st in reversed(self.continuous):
            if isinstance(st, CoordinateWise):
                for i, f in enumerate(st.maps):
                    if f is None:
                        continue
                    lo, hi = float(f.invert_values(x_iv[i][0])), float(f.invert_values(x_iv[i][1]))
                    if f.increasing:
                        x_iv[i] = [lo, hi]
                    else:
                        x_iv[i] = [hi, lo]
                        flags[i] = flags[i][::-1]
            elif isinstance(st, LeftTranslation):
                s = np.exp(-spec.heights(np.asarray(st.g.t)))
                for i in range(spec.dim_x):
                    x_iv[i] = [(x_iv[i][0] - st.g.x[i]) * s[i], (x_iv[i][1] - st.g.x[i]) * s[i]]
                t_base = t_base - np.asarray(st.g.t)
            elif isinstance(st, Permutation):
                inv = st.inverse(spec)
                x_iv = [x_iv[j] for j in inv.sigma]
                flags = [flags[j] for j in inv.sigma]
                tau_inv = inv.tau(spec)
                t_base = tau_inv @ t_base
                t_mat = tau_inv @ t_mat
        return x_iv, flags, t_base, t_mat

    def _preimage_rectangles(self, A: NetSet, tol: float):
        """Yield (k, [(first_i, last_i)]) rectangles whose union is the preimage of A."""
        if not self.rounds:
            raise StageOrderError("preimages on N need a final RoundToNet stage")
        spec = self.spec
        d = spec.dim_t
        for k, rr in A.rectangles():
            s = np.exp(np.asarray(spec.heights_int(k), dtype=float))
            x_iv = [(s[i] * a, s[i] * (b + 1)) for i, (a, b) in enumerate(rr)]
            flags = [(True, False)] * spec.dim_x
            x_iv, flags, base, mat = self._pullback_region(
                x_iv, flags, np.asarray(k, dtype=float), np.eye(d, dtype=np.int64)
            )
            # the only integer t in base + mat [0,1)^d
            mat_inv = np.rint(np.linalg.inv(mat)).astype(np.int64)
            u = np.ceil(snap(mat_inv @ base, tol))
            kin = tuple(int(v) for v in np.rint(mat @ u))
            si = np.exp(np.asarray(spec.heights_int(kin), dtype=float))
            ranges = []
            for i in range(spec.dim_x):
                a, b = int_bounds(x_iv[i][0] / si[i], x_iv[i][1] / si[i], flags[i][0], flags[i][1], tol)
                ranges.append((int(a), int(b)))
            if all(a <= b for a, b in ranges):
                yield kin, ranges

    def preimage_count(self, A: NetSet, tol: float = DEFAULT_TOL) -> int:
        return sum(math.prod(b - a + 1 for a, b in rr) for _, rr in self._preimage_rectangles(A, tol))

    def preimage(self, A: NetSet, tol: float = DEFAULT_TOL) -> NetSet:
        out = NetSet(self.spec)
        pending: dict = {}
        for k, rr in self._preimage_rectangles(A, tol):
            pending.setdefault(k, []).append(rr)
        for k, rects in pending.items():
            for rr in rects:
                out = out | NetSet.from_rectangles(self.spec, {k: rr})
        return out


def identity_map(spec: GroupSpec, rounded: bool = True) -> QiMap:
    return QiMap(spec, (RoundToNet(),) if rounded else ())


def coordinate_map(spec: GroupSpec, maps: Sequence, rounded: bool = True) -> QiMap:
    """Shorthand for CoordinateWise(maps) followed by RoundToNet.

    Entries may be CoordinateMaps, None, or bare numbers (linear slopes).
    """
    cm = tuple(Affine(float(f)) if isinstance(f, (int, float)) else f for f in maps)
    return QiMap(spec, (CoordinateWise(cm),) + ((RoundToNet(),) if rounded else ()))


def compose(first: QiMap, second: QiMap) -> QiMap:
    """Apply ``first`` then ``second``; rounding happens once at the end."""
    if first.spec != second.spec:
        raise ValueError("maps act on different groups")
    rounds = first.rounds or second.rounds
    return QiMap(first.spec, first.continuous + second.continuous + ((RoundToNet(),) if rounds else ()))


def nominal_scaling(q: QiMap) -> float:
    """1 / (product of affine slopes); None if some stage is not affine."""
    prod = 1.0
    for st in q.continuous:
        if isinstance(st, CoordinateWise):
            for f in st.maps:
                if f is None:
                    continue
                if not isinstance(f, Affine):
                    return None
                prod *= abs(f.slope)
    return 1.0 / prod


def distortion_bound(q: QiMap, unit_box_diameter: float) -> float:
    """K with d/K - K <= d(q p, q p') <= K d + K on net points.

    Each factor distance moves by at most 2 log L under an L-bi-Lipschitz
    coordinate map, translations and permutations are isometries, and
    rounding moves each image by at most the unit box diameter.
    """
    return max(1.0, 2.0 * math.log(q.lipschitz()) + 2.0 * unit_box_diameter)


def brute_force_preimage(q: QiMap, A: NetSet, window: NetSet, tol: float = DEFAULT_TOL) -> NetSet:
    """Points of ``window`` whose image lies in A, by direct evaluation."""
    k, m = index_arrays(window)
    kk, mm = q.apply_net_arrays(k, m, tol)
    hit = A.contains_arrays(kk, mm)
    return NetSet.from_indices(q.spec, [NetIndex(tuple(a), tuple(b)) for a, b in zip(k[hit], m[hit])])


def qi_violations(q: QiMap, k_pairs, m_pairs, K: float, tol: float = DEFAULT_TOL) -> int:
    """Number of sampled pairs breaking the K-quasi-isometry inequality."""
    spec = q.spec
    (k1, k2), (m1, m2) = k_pairs, m_pairs

    def corners(k, m):
        k = np.asarray(k, dtype=float)
        return np.exp(spec.heights(k)) * np.asarray(m, dtype=float), k

    d = quasi_distance_arrays(spec, *corners(k1, m1), *corners(k2, m2))
    i1 = q.apply_net_arrays(k1, m1, tol)
    i2 = q.apply_net_arrays(k2, m2, tol)
    di = quasi_distance_arrays(spec, *corners(*i1), *corners(*i2))
    bad = (di > K * d + K + 1e-9) | (di < d / K - K - 1e-9)
    return int(bad.sum())


# ---------------------------------------------------------------------------
# text format


def parse_stages(spec: GroupSpec, lines: Iterable[str] | str) -> QiMap:
    """Build a map from lines ``affine i m b``, ``pwl i <breaks> <slopes>``,
    ``ltrans <coords>``, ``perm <sigma> [t-sign]`` and ``round``.

    Coordinates and permutation entries are 1-based; lists are
    comma-separated.  Consecutive coordinate stages are merged.
    """
    if isinstance(lines, str):
        lines = lines.replace(";", "\n").splitlines()
    stages: list = []
    for raw in lines:
        words = raw.split("#", 1)[0].split()
        if not words:
            continue
        op, args = words[0].lower(), words[1:]
        try:
            if op == "affine":
                i, m = int(args[0]), float(args[1])
                b = float(args[2]) if len(args) > 2 else 0.0
                _merge_coordinate(stages, spec, i, Affine(m, b))
            elif op == "pwl":
                i = int(args[0])
                breaks = _floats(args[1]) if args[1] not in ("-", "") else []
                slopes = _floats(args[2])
                v0 = float(args[3]) if len(args) > 3 else 0.0
                _merge_coordinate(stages, spec, i, PiecewiseLinear(tuple(breaks), tuple(slopes), v0))
            elif op == "ltrans":
                coords = _floats(",".join(args))
                stages.append(LeftTranslation(GroupPoint.from_coords(spec, coords)))
            elif op == "perm":
                sigma = tuple(int(v) - 1 for v in args[0].split(","))
                st = Permutation(sigma)
                st.check(spec)
                if len(args) > 1:
                    _check_t_sign(spec, st, args[1])
                stages.append(st)
            elif op == "round":
                stages.append(RoundToNet())
            else:
                raise ValueError(f"unknown stage {op!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"bad stage line {raw.strip()!r}: {exc}") from exc
    return QiMap(spec, tuple(stages))


def format_stages(q: QiMap) -> list:
    out = []
    for st in q.stages:
        if isinstance(st, CoordinateWise):
            for i, f in enumerate(st.maps):
                if f is not None:
                    word, rest = f.text().split(" ", 1)
                    out.append(f"{word} {i + 1} {rest}")
        elif isinstance(st, LeftTranslation):
            out.append("ltrans " + ",".join(_fmt(v) for v in st.g.coords))
        elif isinstance(st, Permutation):
            out.append("perm " + ",".join(str(v + 1) for v in st.sigma))
        else:
            out.append("round")
    return out


def _floats(s: str) -> list:
    return [float(v) for v in s.split(",") if v.strip()]


def _merge_coordinate(stages, spec, i, f):
    if not 1 <= i <= spec.dim_x:
        raise ValueError(f"coordinate {i} outside 1..{spec.dim_x}")
    last = stages[-1] if stages else None
    if isinstance(last, CoordinateWise) and last.maps[i - 1] is None:
        maps = list(last.maps)
        maps[i - 1] = f
        stages[-1] = CoordinateWise(tuple(maps))
    else:
        maps = [None] * spec.dim_x
        maps[i - 1] = f
        stages.append(CoordinateWise(tuple(maps)))


def _check_t_sign(spec, st: Permutation, word: str):
    """For Sol the swap negates t; an explicit sign must agree with that."""
    sign = {"+": 1, "+1": 1, "1": 1, "-": -1, "-1": -1}.get(word)
    if sign is None:
        raise ValueError(f"t-sign must be + or -, got {word!r}")
    tau = st.tau(spec)
    if not np.array_equal(tau, sign * np.eye(spec.dim_t, dtype=np.int64)):
        raise ValueError(f"permutation {st.sigma} induces t-action {tau.tolist()}, not sign {word}")
