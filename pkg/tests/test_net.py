import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from coarsescale.group_model import GroupPoint, GroupSpec
from coarsescale.net import (
    Box,
    BudgetExceeded,
    NetIndex,
    NetSet,
    box_of,
    count_net,
    enumerate_net,
    haar_measure,
    index_arrays,
    net_index,
    net_point,
    round_arrays,
    round_to_net,
)

SOL = GroupSpec(1)
RANK2 = GroupSpec(2)
E = math.e


def indices(spec, kb=6, mb=1000):
    return st.builds(
        NetIndex,
        st.lists(st.integers(-kb, kb), min_size=spec.dim_t, max_size=spec.dim_t),
        st.lists(st.integers(-mb, mb), min_size=spec.dim_x, max_size=spec.dim_x),
    )


def test_box_examples():
    assert box_of(SOL, net_index(0, (0, 0))) == Box(((0, 1), (0, 1)), ((0, 1),))
    b = box_of(SOL, net_index(1, (1, 1)))
    assert np.allclose(b.intervals, [(E, 2 * E), (1 / E, 2 / E), (1, 2)])


def test_round_examples():
    assert round_to_net(GroupPoint.from_coords(SOL, (0.5, 0.5, 0.5))) == net_index(0, (0, 0))
    assert round_to_net(GroupPoint.from_coords(SOL, (2.3, 0.4, 1.2))) == net_index(1, (0, 1))


def test_net_point_examples():
    assert net_point(SOL, net_index(0, (0, 0))).coords == (0.0, 0.0, 0.0)
    assert np.allclose(net_point(SOL, net_index(1, (1, 0))).coords, (E, 0, 1))
    assert np.allclose(net_point(SOL, net_index(-1, (0, 2))).coords, (0, 2 * E, -1))


def test_haar_examples():
    assert haar_measure(box_of(SOL, net_index(0, (0, 0)))) == 1.0
    assert haar_measure(Box(((0, 2), (0, 3)), ((0, 1),))) == 6.0


def test_enumerate_examples():
    unit = Box(((0, 1), (0, 1)), ((0, 1),))
    assert enumerate_net(SOL, unit).to_set() == {net_index(0, (0, 0))}
    assert count_net(SOL, Box(((0, 4), (0, 1)), ((0, 1),))) == 4
    tall = Box(((0, 1), (0, 1)), ((0, 2),))
    S = enumerate_net(SOL, tall)
    assert len(S) == count_net(SOL, tall) == 4
    assert {p.k[0] for p in S} == {0, 1}


def test_budget():
    with pytest.raises(BudgetExceeded):
        enumerate_net(SOL, Box(((0, 1000), (0, 1000)), ((0, 1),)), budget=1000)


@settings(max_examples=300, deadline=None)
@given(indices(SOL))
def test_round_trip(idx):
    assert round_to_net(net_point(SOL, idx)) == idx


@settings(max_examples=200, deadline=None)
@given(indices(RANK2))
def test_round_trip_rank2(idx):
    assert round_to_net(net_point(RANK2, idx)) == idx


@settings(max_examples=200, deadline=None)
@given(indices(RANK2, mb=100))
def test_unit_measure(idx):
    assert haar_measure(box_of(RANK2, idx)) == pytest.approx(1.0)


def test_round_trip_bulk():
    rng = np.random.default_rng(1)
    for spec in (SOL, RANK2):
        k = rng.integers(-20, 21, size=(20000, spec.dim_t))
        m = rng.integers(-10**6, 10**6 + 1, size=(20000, spec.dim_x))
        x = np.exp(spec.heights(k.astype(float))) * m
        kk, mm = round_arrays(spec, x, k.astype(float))
        assert np.array_equal(kk, k) and np.array_equal(mm, m)


@settings(max_examples=300, deadline=None)
@given(st.floats(-30, 30), st.floats(-30, 30), st.floats(-3, 3))
def test_point_lies_in_its_box(x, y, t):
    p = GroupPoint.from_coords(SOL, (x, y, t))
    b = box_of(SOL, round_to_net(p))
    # points within the snapping tolerance of a face may land on either side
    slack = 1e-8
    assert all(lo - slack * max(1, abs(lo)) <= v < hi + slack * max(1, abs(hi)) for (lo, hi), v in zip(b.intervals, p.coords))


def _near_grid(spec, box):
    # endpoints within the snapping tolerance of a grid line are resolved by snapping, not exactly
    for k in itertools.product(*[range(math.floor(lo) - 1, math.ceil(hi) + 2) for lo, hi in box.t]):
        s = np.exp(np.asarray(spec.heights_int(k), dtype=float))
        for (lo, hi), si in zip(box.x, s):
            for v in (lo / si, hi / si):
                if abs(v - round(v)) < 1e-7 * max(1, abs(v)):
                    return True
    return any(abs(v - round(v)) < 1e-7 for iv in box.t for v in iv)


def _brute_count(spec, box):
    # scan a generous index window and test corners directly
    lo_x = np.array([lo for lo, _ in box.x])
    hi_x = np.array([hi for _, hi in box.x])
    total = 0
    for k in itertools.product(*[range(math.floor(lo) - 1, math.ceil(hi) + 1) for lo, hi in box.t]):
        if not all(lo <= kj < hi for kj, (lo, hi) in zip(k, box.t)):
            continue
        s = np.exp(np.asarray(spec.heights_int(k), dtype=float))
        axes = [np.arange(math.floor(lo / si) - 2, math.ceil(hi / si) + 2) for (lo, hi), si in zip(box.x, s)]
        m = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dim_x)
        x = m * s
        total += int(np.all((x >= lo_x) & (x < hi_x), axis=1).sum())
    return total


@settings(max_examples=60, deadline=None)
@given(st.floats(-6, 6), st.floats(0.2, 6), st.floats(-6, 6), st.floats(0.2, 6), st.floats(-2, 2), st.floats(0.1, 2))
def test_count_matches_brute_force(x0, lx, y0, ly, t0, lt):
    box = Box(((x0, x0 + lx), (y0, y0 + ly)), ((t0, t0 + lt),))
    assume(not _near_grid(SOL, box))
    n = count_net(SOL, box)
    assert n == _brute_count(SOL, box) == len(enumerate_net(SOL, box))


def test_count_matches_brute_force_rank2():
    rng = np.random.default_rng(3)
    for _ in range(10):
        lo = rng.uniform(-3, 3, size=7)
        side = rng.uniform(0.3, 3, size=7)
        box = Box.from_intervals(RANK2, zip(lo, lo + side))
        assert count_net(RANK2, box) == _brute_count(RANK2, box)


def test_tiling():
    # boxes of neighbouring indices are disjoint and their union covers a slab
    rng = np.random.default_rng(7)
    pts = [GroupPoint.from_coords(SOL, (x, y, t)) for x, y, t in rng.uniform(-5, 5, size=(500, 3))]
    for p in pts:
        hits = 0
        idx = round_to_net(p)
        for dk in (-1, 0, 1):
            for dm in itertools.product((-1, 0, 1), repeat=2):
                other = net_index(idx.k[0] + dk, (idx.m[0] + dm[0], idx.m[1] + dm[1]))
                hits += box_of(SOL, other).contains(p)
        assert hits == 1


def test_netset_algebra():
    a = NetSet.from_indices(SOL, [net_index(0, (0, 0)), net_index(0, (1, 0)), net_index(1, (5, -3))])
    b = NetSet.from_indices(SOL, [net_index(0, (1, 0)), net_index(2, (0, 0))])
    assert (a | b).to_set() == a.to_set() | b.to_set()
    assert (a & b).to_set() == {net_index(0, (1, 0))}
    assert (a - b).to_set() == a.to_set() - b.to_set()
    assert net_index(1, (5, -3)) in a and net_index(1, (5, -2)) not in a
    assert net_index(0, (2**63 - 1, 0)) not in a
    k, m = index_arrays(a)
    assert a.contains_arrays(k, m).all()
    assert len(a.shift_indices((1, 2))) == 3
    assert net_index(0, (1, 2)) in a.shift_indices((1, 2))
