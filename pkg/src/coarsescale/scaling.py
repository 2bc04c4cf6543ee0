"""Coarse k-to-1 checks and scaling-value estimates along Følner families.

For a map q and a finite set S the counted quantity is |q^-1(S)|.  Along a
Følner family the ratio |q^-1(S)| / |S| settles to the scaling value k,
and ||q^-1(S)| - k |S|| / |boundary_r S| stays bounded when q is coarsely
k-to-1.  Preimages are exact, so every deviation is a boundary effect.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .coarse_space import NetSpace
from .net import NetSet

DEFAULT_TOL = 1e-2
DEFAULT_NON_SCALING_TOL = 0.1
DEFAULT_GROWTH_TOL = 0.25
DEFAULT_RESIDUAL_FLOOR = 0.25

CONVERGED = "CONVERGED"
NOT_CONVERGED = "NOT_CONVERGED"
PASS = "PASS"
FAIL = "FAIL"
NOT_SCALING = "NOT_SCALING"
CONSISTENT = "CONSISTENT"
INCONCLUSIVE = "INCONCLUSIVE"

CSV_COLUMNS = ("set_index", "set_size", "preimage_size", "boundary_size", "ratio", "residual")


@dataclass
class Row:
    set_index: int
    set_size: int
    preimage_size: int
    boundary_size: int
    ratio: float
    residual: float


@dataclass
class ScalingReport:
    rows: list
    radius: float
    tol: float
    limit: float | None
    k: float | None
    max_residual: float | None
    verdict: str
    warnings: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def ratios(self) -> list:
        return [r.ratio for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.set_index, r.set_size, r.preimage_size, r.boundary_size, repr(r.ratio), repr(r.residual)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "radius": self.radius,
            "tol": self.tol,
            "limit": self.limit,
            "k": self.k,
            "max_residual": self.max_residual,
            "verdict": self.verdict,
            "warnings": list(self.warnings),
            "sets": len(self.rows),
            "params": dict(self.params),
        }

    def to_json(self) -> str:
        return json.dumps({"summary": self.summary(), "rows": [asdict(r) for r in self.rows]}, indent=2, sort_keys=True)


def preimage_count(q, S: NetSet) -> int:
    return q.preimage_count(S)


def _residual(pre: int, k: float, size: int, bnd: int) -> float:
    diff = abs(pre - k * size)
    if bnd == 0:
        return 0.0 if diff == 0 else math.inf
    return diff / bnd


def converged_limit(ratios: Sequence[float], tol: float = DEFAULT_TOL, window: int = 3):
    """Last ratio if consecutive relative changes over the last ``window`` sets are below tol."""
    if len(ratios) < window:
        return None
    tail = ratios[-window:]
    for a, b in zip(tail, tail[1:]):
        if abs(b - a) > tol * max(abs(a), abs(b)):
            return None
    return tail[-1]


def boundary_sizes(space: NetSpace, family: Sequence[NetSet], r: float) -> list:
    """|boundary_r S| for each member; pass the result on to avoid recomputation."""
    return [len(space.boundary(S, r)) for S in family]


def _rows(q, family, space: NetSpace, r: float, bsizes=None):
    rows, folner = [], []
    if bsizes is not None and len(bsizes) != len(family):
        raise ValueError("one boundary size per family member expected")
    for i, S in enumerate(family):
        size = len(S)
        if size == 0:
            raise ValueError(f"family member {i} is empty")
        pre = q.preimage_count(S)
        bnd = bsizes[i] if bsizes is not None else len(space.boundary(S, r))
        rows.append(Row(i, size, pre, bnd, pre / size, math.nan))
        folner.append(bnd / size)
    return rows, folner


def estimate_scaling(q, family: Sequence[NetSet], r: float = 1.0, space: NetSpace | None = None,
                     tol: float = DEFAULT_TOL, bsizes=None) -> ScalingReport:
    """Ratios |q^-1(S)|/|S| along ``family`` and the limit they settle to.

    The limit is the last ratio when the relative changes between the last
    three ratios are all below ``tol``; otherwise the verdict is
    NOT_CONVERGED and residuals are taken against the last ratio.
    """
    if not family:
        raise ValueError("empty family")
    space = space or NetSpace(family[0].spec)
    rows, folner = _rows(q, family, space, r, bsizes)
    warnings = []
    if any(b >= a for a, b in zip(folner, folner[1:])):
        warnings.append("boundary ratios are not strictly decreasing: " + ", ".join(f"{v:.4g}" for v in folner))
    limit = converged_limit([row.ratio for row in rows], tol)
    ref = limit if limit is not None else rows[-1].ratio
    for row in rows:
        row.residual = _residual(row.preimage_size, ref, row.set_size, row.boundary_size)
    return ScalingReport(
        rows=rows,
        radius=r,
        tol=tol,
        limit=limit,
        k=ref,
        max_residual=max(row.residual for row in rows),
        verdict=CONVERGED if limit is not None else NOT_CONVERGED,
        warnings=warnings,
        params={"window": 3},
    )


def check_k_to_1(q, k: float, sets: Sequence[NetSet], r: float = 1.0, space: NetSpace | None = None,
                 growth_tol: float = DEFAULT_GROWTH_TOL, floor: float = DEFAULT_RESIDUAL_FLOOR,
                 bsizes=None) -> ScalingReport:
    """Residual constants ||q^-1(S)| - k|S|| / |boundary S| and a trend verdict.

    PASS when the largest constant over the second half of ``sets`` is at
    most (1 + growth_tol) times the largest over the first half plus
    ``floor``.  The floor absorbs rounding noise when the first half happens
    to fit almost exactly; a wrong k makes the constants grow like
    |S| / |boundary S|, far beyond it.
    """
    if len(sets) < 2:
        raise ValueError("need at least two sets to judge a trend")
    space = space or NetSpace(sets[0].spec)
    rows, _ = _rows(q, sets, space, r, bsizes)
    for row in rows:
        row.residual = _residual(row.preimage_size, k, row.set_size, row.boundary_size)
    res = [row.residual for row in rows]
    half = len(res) // 2
    first, second = max(res[:half]), max(res[half:])
    ok = second <= first * (1.0 + growth_tol) + floor
    return ScalingReport(rows=rows, radius=r, tol=growth_tol, limit=None, k=k, max_residual=max(res),
                         verdict=PASS if ok else FAIL,
                         params={"first_half_max": first, "second_half_max": second, "floor": floor})


@dataclass
class NonScalingResult:
    verdict: str
    limits: tuple
    reports: tuple
    tol: float

    def summary(self) -> dict:
        return {
            "verdict": self.verdict,
            "limits": list(self.limits),
            "tol": self.tol,
            "families": [r.summary() for r in self.reports],
        }


def non_scaling_test(q, family_a, family_b, r: float = 1.0, tol: float = DEFAULT_NON_SCALING_TOL,
                     conv_tol: float = DEFAULT_TOL, space: NetSpace | None = None) -> NonScalingResult:
    """Two converged limits further apart than ``tol`` show q is not scaling for any k."""
    ra = estimate_scaling(q, family_a, r, space, conv_tol)
    rb = estimate_scaling(q, family_b, r, space, conv_tol)
    if ra.limit is None or rb.limit is None:
        verdict = INCONCLUSIVE
    elif abs(ra.limit - rb.limit) > tol * max(ra.limit, rb.limit):
        verdict = NOT_SCALING
    else:
        verdict = CONSISTENT
    return NonScalingResult(verdict, (ra.limit, rb.limit), (ra, rb), tol)


@dataclass(frozen=True)
class ShiftedMap:
    """q followed by the index shift (k, m) -> (k, m + dm), a bounded perturbation of q."""

    base: object
    dm: tuple

    def preimage_count(self, S: NetSet) -> int:
        return self.base.preimage_count(S.shift_indices([-v for v in self.dm]))

    def preimage(self, S: NetSet) -> NetSet:
        return self.base.preimage(S.shift_indices([-v for v in self.dm]))
