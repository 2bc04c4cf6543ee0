import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coarsescale.coarse_space import folner_family
from coarsescale.glued import (
    CONSISTENT,
    FlatPoint,
    GluedScalingMap,
    GluedSpace,
    GluedSpaceSpec,
    NetPoint,
    RangeError,
    attachment_count,
    attachment_drift,
    attachment_multiplicity,
    attachment_point,
    attachment_table,
    canonical,
    flat_growth,
    glued_distance,
    growth_degree,
    multiplicity_bound,
)
from coarsescale.group_model import GroupSpec, quasi_distance
from coarsescale.net import Box, enumerate_net, net_index, net_point
from coarsescale.qi import coordinate_map

SOL = GroupSpec(1)
G2 = GluedSpaceSpec(SOL, (2.0,))
X2 = GluedSpace(G2)


def d_net(a, b):
    return quasi_distance(net_point(SOL, a), net_point(SOL, b))


def test_attachment_examples():
    assert attachment_point(G2, 1, 0) == net_index(0, (1, 1))
    assert attachment_point(G2, 1, 1) == net_index(0, (4, 0))
    assert attachment_point(G2, 1, -1) == net_index(0, (0, 2))
    with pytest.raises(RangeError):
        attachment_point(G2, 1, 41)


def test_range_cap():
    tight = GluedSpaceSpec(SOL, (1.3,), J=10**6)
    assert tight.max_index(1) == tight.index_cap(1) < 10**6
    attachment_point(tight, 1, tight.max_index(1))


@pytest.mark.parametrize("gamma,expected", [(2.0, 1), (1.5, 1), (3.0, 1), (1.3, 2)])
def test_multiplicities(gamma, expected):
    spec = GluedSpaceSpec(SOL, (gamma,))
    table = attachment_table(spec)
    worst = max(len(v) for v in table.values())
    assert worst == expected <= multiplicity_bound(gamma)
    J = spec.max_index(1)
    assert sum(attachment_multiplicity(spec, idx, table) for idx in table) == 2 * J + 1


def test_identity_box_corner_is_shared():
    spec = GluedSpaceSpec(SOL, (1.3,))
    assert attachment_multiplicity(spec, net_index(0, (0, 1))) >= 2
    assert multiplicity_bound(1.3) == 4 and multiplicity_bound(2.0) == 2


def test_distance_examples():
    a = attachment_point(G2, 1, 2)
    assert glued_distance(G2, FlatPoint(1, 2, (3, 4)), NetPoint(a)) == 7
    assert glued_distance(G2, FlatPoint(1, 2, (3, 4)), FlatPoint(1, 2, (-1, 1))) == 7
    b = attachment_point(G2, 1, -3)
    d = glued_distance(G2, FlatPoint(1, 2, (1, 0)), FlatPoint(1, -3, (0, 1)))
    assert d == pytest.approx(1 + d_net(a, b) + 1)
    assert glued_distance(G2, FlatPoint(1, 2, (0, 0)), NetPoint(a)) == 0


def test_flat_dimension_checked():
    with pytest.raises(ValueError):
        canonical(G2, FlatPoint(1, 0, (1, 2, 3)))
    override = GluedSpaceSpec(SOL, (2.0,), flat_dims_override=(3,))
    assert canonical(override, FlatPoint(1, 0, (1, 2, 3))) == FlatPoint(1, 0, (1, 2, 3))


def _glued_points(draw_j, draw_v, draw_m):
    net = st.builds(lambda k, m: NetPoint(net_index(k, m)), st.integers(-2, 2), st.tuples(draw_m, draw_m))
    flat = st.builds(lambda j, v: FlatPoint(1, j, v), draw_j, st.tuples(draw_v, draw_v))
    return st.one_of(net, flat)


POINTS = _glued_points(st.integers(-6, 6), st.integers(-4, 4), st.integers(-30, 30))


@settings(max_examples=300, deadline=None)
@given(POINTS, POINTS, POINTS)
def test_triangle_inequality(p, q, r):
    d = lambda a, b: glued_distance(G2, a, b)
    assert d(p, q) == pytest.approx(d(q, p))
    assert d(p, r) <= d(p, q) + d(q, r) + 1e-9


def test_ball_matches_distance():
    rng = random.Random(0)
    centres = [NetPoint(attachment_point(G2, 1, 1)), FlatPoint(1, 1, (1, 0)), FlatPoint(1, -1, (0, -2))]
    for c in centres:
        for r in (1.0, 2.0):
            B = X2.ball(c, r)
            assert canonical(G2, c) in B
            assert all(X2.distance(c, p) <= r + 1e-9 for p in B)
            # points just outside the ball really are farther than r
            for p in list(B)[:20]:
                if isinstance(p, FlatPoint):
                    far = FlatPoint(p.locus, p.j, (p.v[0] + rng.choice([3, -3]), p.v[1]))
                    assert (far in B) == (X2.distance(c, far) <= r + 1e-9)


def test_separation_on_windows():
    for gamma in (1.3, 1.5, 2.0, 3.0):
        X = GluedSpace(GluedSpaceSpec(SOL, (gamma,)))
        W = enumerate_net(SOL, Box(((-2, 12), (-2, 6)), ((-1, 2),)))
        pts = X.window(W, flat_radius=1)
        assert X.min_separation(pts) > 0.5
        sample = random.Random(1).sample(pts, 120)
        brute = min(X.distance(a, b) for i, a in enumerate(sample) for b in sample[i + 1:] if a != b)
        assert X.min_separation(sample) == pytest.approx(brute)


def test_attachments_bounded_by_boundary():
    rng = np.random.default_rng(2)
    table = attachment_table(G2)
    hits = 0
    for _ in range(30):
        lo = rng.uniform(-5, 10, size=2)
        side = rng.uniform(1, 20, size=2)
        c = rng.uniform(-1.5, 0.5)
        S = enumerate_net(SOL, Box(tuple(zip(lo, lo + side)), ((c, c + rng.uniform(0.5, 3)),)))
        if not S:
            continue
        na = attachment_count(G2, S, table)
        hits += na > 0
        assert na <= len(X2.net.boundary(S, 1.0))
    assert hits > 0


def test_glued_boundary_small_set():
    a = attachment_point(G2, 1, 1)
    S = {NetPoint(a)}
    bnd = X2.boundary(S, 1.0)
    assert NetPoint(a) in bnd
    assert FlatPoint(1, 1, (1, 0)) in bnd


def test_scaling_map_examples():
    q = GluedScalingMap(G2, 1)
    for j in range(-5, 5):
        assert q(FlatPoint(1, j, (0, 0))) == q(NetPoint(attachment_point(G2, 1, j)))
    assert q(FlatPoint(1, 3, (5, 2))) == FlatPoint(1, 4, (2, 2))
    assert GluedScalingMap(G2, 1, CONSISTENT)(FlatPoint(1, 3, (5, 2))) == FlatPoint(1, 4, (10, 2))
    errors = [q.attachment_shift_error(j) for j in range(-10, 10)]
    assert max(errors) <= 2 * math.asinh(0.5) + 1e-9
    assert q.attachment_shift_error(3) == 0


def test_scaling_map_preimage_on_net():
    q = GluedScalingMap(G2, 1)
    affine = coordinate_map(SOL, [4, 0.5])
    far = folner_family(SOL, [5, 6], offset=(-1e5, -1e5))
    for S in far:
        assert q.preimage_count(S) == affine.preimage_count(S)
    near = enumerate_net(SOL, Box(((0, 40), (0, 4)), ((0, 1),)))
    extra = sum(1 for j in range(-39, 41) if attachment_point(G2, 1, j) in near)
    assert extra > 0
    assert q.preimage_count(near) == affine.preimage_count(near) + extra
    assert GluedScalingMap(G2, 1, CONSISTENT).preimage_count(near) == affine.preimage_count(near)


def test_drift_examples():
    assert attachment_drift(G2, 1.0, 1, 20) == [0.0] * 20
    assert max(attachment_drift(G2, 4.0, 1, 30)) <= 2 * math.asinh(2.5)
    curve = attachment_drift(G2, 2.0, 1, 30)
    tail = curve[-10:]
    assert all(b > a for a, b in zip(tail, tail[1:]))
    assert tail[-1] > 3 * 2 * math.asinh(2.5)
    with pytest.raises(ValueError):
        attachment_drift(G2, -1.0, 1, 5)


def test_flat_growth():
    assert flat_growth(2, 4) == [1, 5, 13, 25, 41]
    radii = [16, 32, 64]
    deg = {d: growth_degree([flat_growth(d, 64)[r] for r in radii], radii) for d in (2, 3, 4, 5)}
    assert deg[2] <= 2 + 1e-9
    assert deg[2] < deg[3] < deg[4] < deg[5]
    assert deg[5] - deg[4] > 0.5
