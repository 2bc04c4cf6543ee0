"""The glued spaces N_Gamma: integer flats attached to the net along geometric loci.

Locus i (1-based) consists of the net points a_{i,j} = rho_N of the point
with x_{2i-1} = gamma_i^{2j}, x_{2i} = gamma_i^{-j} and every other
coordinate 0.  A copy of Z^d with the taxicab metric is glued at each
a_{i,j}, with d = 2n - 1 + i.  A path between different flats, or from a
flat to the net, must pass through the attachment points.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .coarse_space import NetSpace, min_separation, taxicab_ball_size
from .group_model import GroupPoint, GroupSpec, quasi_distance, quasi_distance_arrays
from .net import NetIndex, NetSet, net_point, round_to_net
from .qi import Affine, CoordinateWise, QiMap, RoundToNet

DEFAULT_RANGE = 40
# keep gamma^(2J) comfortably inside double precision
MAX_COORDINATE = 1e150


class RangeError(ValueError):
    """An attachment index outside the configured range."""


@dataclass(frozen=True)
class GluedSpaceSpec:
    base: GroupSpec
    gammas: tuple
    J: int = DEFAULT_RANGE
    flat_dims_override: tuple | None = None

    def __post_init__(self):
        gammas = tuple(float(g) for g in self.gammas)
        if len(gammas) != self.base.n:
            raise ValueError(f"rank {self.base.n} needs {self.base.n} gammas, got {len(gammas)}")
        if any(not (g > 1 and math.isfinite(g)) for g in gammas):
            raise ValueError("every gamma must be a finite number > 1")
        if self.J < 0:
            raise ValueError("index range must be nonnegative")
        object.__setattr__(self, "gammas", gammas)
        if self.flat_dims_override is not None:
            dims = tuple(int(d) for d in self.flat_dims_override)
            if len(dims) != self.base.n or min(dims) < 1:
                raise ValueError("one positive flat dimension per locus expected")
            object.__setattr__(self, "flat_dims_override", dims)

    @property
    def n(self) -> int:
        return self.base.n

    def flat_dim(self, i: int) -> int:
        self._check_locus(i)
        if self.flat_dims_override is not None:
            return self.flat_dims_override[i - 1]
        return 2 * self.n - 1 + i

    def max_index(self, i: int) -> int:
        """Largest |j| allowed at locus i: the configured J, capped by the float range."""
        self._check_locus(i)
        cap = int(math.floor(math.log(MAX_COORDINATE) / (2.0 * math.log(self.gammas[i - 1]))))
        return min(self.J, cap)

    def index_cap(self, i: int) -> int:
        """Largest |j| whose attachment point is still representable."""
        return int(math.floor(math.log(MAX_COORDINATE) / (2.0 * math.log(self.gammas[i - 1]))))

    def _check_locus(self, i: int):
        if not 1 <= i <= self.n:
            raise ValueError(f"locus {i} outside 1..{self.n}")


# ---------------------------------------------------------------------------
# points


@dataclass(frozen=True, order=True)
class NetPoint:
    idx: NetIndex


@dataclass(frozen=True, order=True)
class FlatPoint:
    locus: int
    j: int
    v: tuple

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(int(a) for a in self.v))


def attachment_point(spec: GluedSpaceSpec, i: int, j: int, check_range: bool = True) -> NetIndex:
    limit = spec.max_index(i) if check_range else spec.index_cap(i)
    if abs(j) > limit:
        raise RangeError(f"attachment index {j} outside [-{limit}, {limit}] at locus {i}")
    g = spec.gammas[i - 1]
    x = [0.0] * spec.base.dim_x
    x[2 * i - 2] = g ** (2 * j)
    x[2 * i - 1] = g ** (-j)
    return round_to_net(GroupPoint(spec.base, x, (0.0,) * spec.base.dim_t))


def attachment_table(spec: GluedSpaceSpec) -> dict:
    """Map from attachment index to the (locus, j) pairs attached there."""
    table: dict = {}
    for i in range(1, spec.n + 1):
        J = spec.max_index(i)
        for j in range(-J, J + 1):
            table.setdefault(attachment_point(spec, i, j), []).append((i, j))
    return table


def attachment_multiplicity(spec: GluedSpaceSpec, idx: NetIndex, table: dict | None = None) -> int:
    table = attachment_table(spec) if table is None else table
    return len(table.get(idx, ()))


def multiplicity_bound(gamma: float) -> int:
    """ceil(log_gamma 2) + 1: how many of the y-values gamma^-j can share a unit interval."""
    return math.ceil(math.log(2.0) / math.log(gamma) - 1e-12) + 1


def attachment_set(spec: GluedSpaceSpec, table: dict | None = None) -> NetSet:
    """Attachment points as a NetSet (those with indices beyond 2^62 are left out)."""
    table = attachment_table(spec) if table is None else table
    return NetSet.from_indices(spec.base, [a for a in table if all(abs(v) < 2**62 for v in a.m)])


def attachment_count(spec: GluedSpaceSpec, S: NetSet, table: dict | None = None) -> int:
    """|S ∩ A|: distinct attachment points lying in S."""
    table = attachment_table(spec) if table is None else table
    return sum(1 for idx in table if idx in S)


def canonical(spec: GluedSpaceSpec, p):
    """Replace a flat origin by the net point it is glued to; validate the rest."""
    if isinstance(p, NetIndex):
        return NetPoint(p)
    if isinstance(p, NetPoint):
        return p
    if isinstance(p, FlatPoint):
        if len(p.v) != spec.flat_dim(p.locus):
            raise ValueError(f"flat at locus {p.locus} has dimension {spec.flat_dim(p.locus)}, got {len(p.v)}")
        if not any(p.v):
            return NetPoint(attachment_point(spec, p.locus, p.j))
        if abs(p.j) > spec.max_index(p.locus):
            raise RangeError(f"flat index {p.j} outside the configured range")
        return p
    raise TypeError(f"not a glued point: {p!r}")


# ---------------------------------------------------------------------------
# metric


def _net_distance(spec: GluedSpaceSpec, a: NetIndex, b: NetIndex) -> float:
    if a == b:
        return 0.0
    return quasi_distance(net_point(spec.base, a), net_point(spec.base, b))


def _taxicab(v, w=None) -> int:
    if w is None:
        return sum(abs(a) for a in v)
    return sum(abs(a - b) for a, b in zip(v, w))


def _anchor(spec, p):
    """(net index the point reaches N through, distance to it)."""
    if isinstance(p, NetPoint):
        return p.idx, 0
    return attachment_point(spec, p.locus, p.j), _taxicab(p.v)


def glued_distance(spec: GluedSpaceSpec, p, q) -> float:
    p, q = canonical(spec, p), canonical(spec, q)
    if isinstance(p, FlatPoint) and isinstance(q, FlatPoint) and (p.locus, p.j) == (q.locus, q.j):
        return float(_taxicab(p.v, q.v))
    a, da = _anchor(spec, p)
    b, db = _anchor(spec, q)
    return da + _net_distance(spec, a, b) + db


def _taxicab_vectors(d: int, rho: int):
    """Nonzero integer vectors of length d with taxicab norm <= rho."""
    if rho < 1:
        return
    for v in itertools.product(range(-rho, rho + 1), repeat=d):
        if 0 < _taxicab(v) <= rho:
            yield v


@dataclass(frozen=True)
class GluedSpace:
    spec: GluedSpaceSpec
    net: NetSpace = None
    _table: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.net is None:
            object.__setattr__(self, "net", NetSpace(self.spec.base))
        if self._table is None:
            object.__setattr__(self, "_table", attachment_table(self.spec))

    @property
    def table(self) -> dict:
        return self._table

    def distance(self, p, q) -> float:
        return glued_distance(self.spec, p, q)

    def ball(self, center, r: float) -> set:
        """Closed r-ball as a set of canonical glued points."""
        center = canonical(self.spec, center)
        out = set()
        if isinstance(center, FlatPoint):
            d = self.spec.flat_dim(center.locus)
            out.add(center)
            for w in _taxicab_vectors(d, int(math.floor(r + 1e-9))):
                v = tuple(a + b for a, b in zip(center.v, w))
                if any(v):
                    out.add(FlatPoint(center.locus, center.j, v))
            a, da = _anchor(self.spec, center)
            if da <= r + 1e-9:
                out |= self.ball(NetPoint(a), r - da)
            return out
        for idx in self.net.ball(center.idx, max(r, 0.0)):
            out.add(NetPoint(idx))
            for i, j in self.table.get(idx, ()):
                rho = r - _net_distance(self.spec, center.idx, idx)
                for v in _taxicab_vectors(self.spec.flat_dim(i), int(math.floor(rho + 1e-9))):
                    out.add(FlatPoint(i, j, v))
        return out

    def boundary(self, S, r: float) -> set:
        """Brute-force r-boundary of a small finite set of glued points."""
        S = {canonical(self.spec, p) for p in S}
        near_s = set()
        for p in S:
            near_s |= self.ball(p, r)
        return {p for p in near_s if self.ball(p, r) - S}

    def window(self, net_window: NetSet, flat_radius: int = 2) -> list:
        """Net points of ``net_window`` plus the flat points near attachments inside it."""
        pts = [NetPoint(idx) for idx in net_window]
        for idx in net_window:
            for i, j in self.table.get(idx, ()):
                pts.extend(FlatPoint(i, j, v) for v in _taxicab_vectors(self.spec.flat_dim(i), flat_radius))
        return pts

    def min_separation(self, points: Sequence) -> float:
        """Smallest distance between two distinct points of a (small) sample."""
        pts = set(canonical(self.spec, p) for p in points)
        if len(pts) < 2:
            raise ValueError("need at least two distinct points")
        net = [p.idx for p in pts if isinstance(p, NetPoint)]
        flat = [p for p in pts if isinstance(p, FlatPoint)]
        best = min_separation(self.net, NetSet.from_indices(self.spec.base, net)) if len(net) > 1 else math.inf
        base = self.spec.base
        if net:
            k = np.array([idx.k for idx in net], dtype=float)
            x = np.exp(base.heights(k)) * np.array([idx.m for idx in net], dtype=float)
        anchors: dict = {}
        for p in flat:
            anchors.setdefault((p.locus, p.j), []).append(p)
        for key, group in anchors.items():
            a = attachment_point(self.spec, *key)
            norm = min(_taxicab(p.v) for p in group)
            if net:
                ca = net_point(base, a)
                d = quasi_distance_arrays(base, np.asarray(ca.x), np.asarray(ca.t), x, k)
                best = min(best, norm + float(d.min()))
            v = np.array([p.v for p in group])
            for r in range(len(v) - 1):
                best = min(best, float(np.abs(v[r + 1 :] - v[r]).sum(axis=1).min()))
        if len(anchors) > 1:
            # different flats are at least |v| + |w| apart
            norms = sorted(min(_taxicab(p.v) for p in g) for g in anchors.values())
            best = min(best, norms[0] + norms[1])
        return best


# ---------------------------------------------------------------------------
# maps


QUOTED = "quoted"
CONSISTENT = "consistent"


@dataclass(frozen=True)
class GluedScalingMap:
    """Scale locus i up by one attachment step.

    On N: x_{2i-1} -> gamma^2 x_{2i-1}, x_{2i} -> x_{2i} / gamma, then
    round.  On flats of locus i: j -> j + 1 and the first lattice
    coordinate a -> floor(a / gamma) (``quoted``) or floor(gamma a)
    (``consistent``, which has the same preimage density 1/gamma as the
    net part).  Other flats are fixed.  Flat origins are net points and
    follow the net rule.
    """

    spec: GluedSpaceSpec
    locus: int
    flat_rule: str = QUOTED

    def __post_init__(self):
        self.spec._check_locus(self.locus)
        if self.flat_rule not in (QUOTED, CONSISTENT):
            raise ValueError(f"flat rule must be {QUOTED!r} or {CONSISTENT!r}")

    @property
    def gamma(self) -> float:
        return self.spec.gammas[self.locus - 1]

    @property
    def net_map(self) -> QiMap:
        maps = [None] * self.spec.base.dim_x
        maps[2 * self.locus - 2] = Affine(self.gamma**2)
        maps[2 * self.locus - 1] = Affine(1.0 / self.gamma)
        return QiMap(self.spec.base, (CoordinateWise(tuple(maps)), RoundToNet()))

    def _flat_coordinate(self, a: int) -> int:
        if self.flat_rule == QUOTED:
            return math.floor(a / self.gamma)
        return math.floor(a * self.gamma)

    def __call__(self, p):
        p = canonical(self.spec, p)
        if isinstance(p, NetPoint):
            return NetPoint(self.net_map.apply_net(p.idx))
        if p.locus != self.locus:
            return p
        v = (self._flat_coordinate(p.v[0]),) + p.v[1:]
        return canonical(self.spec, FlatPoint(p.locus, p.j + 1, v))

    def _flat_zero_preimages(self) -> int:
        """Nonzero lattice vectors sent to the origin by the flat rule."""
        if self.flat_rule == QUOTED:
            return math.ceil(self.gamma) - 1
        return 0

    def preimage_count(self, S: NetSet) -> int:
        """|q^-1(S)| for S inside N, counting flat points that land on attachment points."""
        total = self.net_map.preimage_count(S)
        extra = self._flat_zero_preimages()
        if extra:
            for idx, pairs in self.spec_table.items():
                if idx in S:
                    for i, j in pairs:
                        if i == self.locus and j - 1 >= -self.spec.max_index(i):
                            total += extra
        return total

    @cached_property
    def spec_table(self) -> dict:
        return attachment_table(self.spec)

    def attachment_shift_error(self, j: int) -> float:
        """Distance from the image of a_{i,j} to a_{i,j+1}."""
        a = attachment_point(self.spec, self.locus, j)
        b = attachment_point(self.spec, self.locus, j + 1)
        return _net_distance(self.spec, self.net_map.apply_net(a), b)


def attachment_drift(spec: GluedSpaceSpec, m: float, i: int, J: int) -> list:
    """Distance from the image of a_{i,j} under (m x, y / sqrt m) to the locus, j = 1..J.

    The nearest attachment point is searched among indices whose
    x-coordinate is within a factor gamma^4 of the image's.
    """
    if not m > 0:
        raise ValueError("slope must be positive")
    g = spec.gammas[i - 1]
    maps = [None] * spec.base.dim_x
    maps[2 * i - 2] = Affine(float(m))
    maps[2 * i - 1] = Affine(1.0 / math.sqrt(m))
    q = QiMap(spec.base, (CoordinateWise(tuple(maps)), RoundToNet()))
    cap = spec.index_cap(i)
    out = []
    for j in range(1, J + 1):
        img = q.apply_net(attachment_point(spec, i, j, check_range=False))
        x = net_point(spec.base, img).x[2 * i - 2]
        centre = math.log(max(x, 1.0)) / (2.0 * math.log(g))
        lo, hi = math.floor(centre) - 2, math.ceil(centre) + 2
        if max(abs(lo), abs(hi)) > cap:
            raise RangeError(f"drift search at j={j} leaves the representable range")
        out.append(min(_net_distance(spec, img, attachment_point(spec, i, jj, check_range=False))
                       for jj in range(lo, hi + 1)))
    return out


def flat_growth(d: int, r_max: int) -> list:
    """Taxicab ball sizes in Z^d for r = 0..r_max."""
    return [taxicab_ball_size(d, r) for r in range(r_max + 1)]


def growth_degree(counts: Sequence[int], radii: Sequence[int]) -> float:
    """Least-squares slope of log |B_r| against log r: the polynomial growth degree."""
    x = np.log(np.asarray(radii, dtype=float))
    y = np.log(np.asarray(counts, dtype=float))
    return float(np.polyfit(x, y, 1)[0])
