import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coarsescale.coarse_space import NetSpace
from coarsescale.group_model import GroupPoint, GroupSpec, multiply, quasi_distance
from coarsescale.net import Box, NetSet, box_of, enumerate_net, haar_measure, integer_heights, net_index
from coarsescale.qi import (
    Affine,
    CoordinateWise,
    LeftTranslation,
    Permutation,
    PiecewiseLinear,
    QiMap,
    RoundToNet,
    StageOrderError,
    UnsupportedStage,
    brute_force_preimage,
    compose,
    coordinate_map,
    distortion_bound,
    format_stages,
    identity_map,
    induced_t_action,
    nominal_scaling,
    parse_stages,
    qi_violations,
)

SOL = GroupSpec(1)
RANK2 = GroupSpec(2)
E = math.e


def P(*c, spec=SOL):
    return GroupPoint.from_coords(spec, c)


def test_continuous_examples():
    q = coordinate_map(SOL, [4, 0.5], rounded=False)
    assert np.allclose(q.apply_continuous(P(1, 1, 0)).coords, (4, 0.5, 0))
    swap = parse_stages(SOL, "perm 2,1 -")
    assert np.allclose(swap.apply_continuous(P(E * 2, 3 / E, 1)).coords, (3 / E, 2 * E, -1))
    lt = QiMap(SOL, (LeftTranslation(P(0, 0, 1)),))
    assert np.allclose(lt.apply_continuous(P(1, 0, 0)).coords, (E, 0, 1))


def test_net_examples():
    idx = net_index(0, (1, 1))
    assert identity_map(SOL).apply_net(idx) == idx
    assert coordinate_map(SOL, [4, 0.5]).apply_net(idx) == net_index(0, (4, 0))
    assert parse_stages(SOL, "perm 2,1; round").apply_net(idx) == idx


def test_image_box_examples():
    unit = Box(((0, 1), (0, 1)), ((0, 1),))
    assert coordinate_map(SOL, [4, None]).image_box(unit).x == ((0, 4), (0, 1))
    f = PiecewiseLinear((0.0,), (1.0, 2.0))
    assert coordinate_map(SOL, [f, None]).image_box(Box(((-1, 1), (0, 1)), ((0, 1),))).x == ((-1, 2), (0, 1))
    assert identity_map(SOL).image_box(unit) == unit
    with pytest.raises(UnsupportedStage):
        parse_stages(SOL, "perm 2,1; round").image_box(unit)


def test_preimage_examples():
    A = enumerate_net(SOL, Box(((-3, 5), (-2, 4)), ((-1, 2),)))
    assert identity_map(SOL).preimage(A) == A
    assert identity_map(SOL).preimage_count(A) == len(A)


def test_compose_examples():
    m = coordinate_map(SOL, [4, 0.5])
    c = compose(identity_map(SOL), m)
    idx = net_index(1, (3, -7))
    assert c.apply_net(idx) == m.apply_net(idx)
    pair = compose(coordinate_map(SOL, [4, 0.5]), coordinate_map(SOL, [0.25, 2]))
    rng = np.random.default_rng(0)
    x = rng.uniform(-20, 20, size=(50, 2))
    t = rng.uniform(-3, 3, size=(50, 1))
    y, s = pair.apply_arrays(x, t)
    assert np.allclose(y, x) and np.allclose(s, t)


def test_round_must_be_last():
    with pytest.raises(StageOrderError):
        QiMap(SOL, (RoundToNet(), CoordinateWise((Affine(2.0), None))))
    with pytest.raises(StageOrderError):
        coordinate_map(SOL, [2, 1], rounded=False).preimage_count(NetSet(SOL))


def test_piecewise_inverse():
    g = PiecewiseLinear((-1.0, 2.0), (0.5, 3.0, 1.0), 1.0)
    xs = np.linspace(-5, 5, 41)
    assert np.allclose(g.inverse()(g(xs)), xs)
    assert np.allclose(g.invert_values(g(xs)), xs)
    f = PiecewiseLinear((0.0,), (1.0, 2.0))
    assert np.allclose(f(np.array([-1.0, 0.0, 1.0, 2.5])), [-1, 0, 2, 5])
    with pytest.raises(ValueError):
        PiecewiseLinear((0.0,), (1.0, -1.0))


def test_affine():
    f = Affine(-2.0, 3.0)
    assert f(1.0) == 1.0 and f.inverse()(1.0) == 1.0
    assert not f.increasing and f.lipschitz() == 2.0
    with pytest.raises(ValueError):
        Affine(0.0)


def test_nominal_scaling():
    assert nominal_scaling(coordinate_map(SOL, [4, 0.5])) == pytest.approx(0.5)
    assert nominal_scaling(coordinate_map(SOL, [-2, 0.25])) == pytest.approx(2.0)
    assert nominal_scaling(coordinate_map(SOL, [PiecewiseLinear((0.0,), (1.0, 2.0)), None])) is None


@pytest.mark.parametrize("spec", [SOL, RANK2])
def test_induced_t_action(spec):
    H = np.rint(spec.heights(np.eye(spec.dim_t))).T
    for sigma in itertools.permutations(range(spec.dim_x)):
        tau = induced_t_action(spec, sigma)
        assert round(abs(np.linalg.det(tau))) == 1
        assert np.array_equal(H @ tau, H[list(sigma)])
    assert np.array_equal(induced_t_action(SOL, (1, 0)), [[-1]])


@settings(max_examples=100, deadline=None)
@given(st.permutations(range(4)), st.lists(st.floats(-3, 3), min_size=7, max_size=7),
       st.lists(st.floats(-3, 3), min_size=7, max_size=7))
def test_permutation_is_automorphism(sigma, a, b):
    q = QiMap(RANK2, (Permutation(tuple(sigma)),))
    p, r = P(*a, spec=RANK2), P(*b, spec=RANK2)
    lhs = q.apply_continuous(multiply(p, r))
    rhs = multiply(q.apply_continuous(p), q.apply_continuous(r))
    assert np.allclose(lhs.coords, rhs.coords, rtol=1e-6, atol=1e-6)


def test_parser_roundtrip():
    text = ["affine 1 4 0.5", "pwl 2 -1,2 0.5,3,1 1", "ltrans 1,2,0.5", "perm 2,1 -", "round"]
    q = parse_stages(SOL, text)
    again = parse_stages(SOL, format_stages(q))
    rng = np.random.default_rng(1)
    x = rng.uniform(-10, 10, size=(20, 2))
    t = rng.uniform(-2, 2, size=(20, 1))
    a, b = q.apply_arrays(x, t), again.apply_arrays(x, t)
    assert np.allclose(a[0], b[0]) and np.allclose(a[1], b[1])


@pytest.mark.parametrize("bad", ["affine 3 2", "perm 1,1", "perm 2,1 +", "shear 1", "affine 1", "round; affine 1 2"])
def test_parser_errors(bad):
    with pytest.raises(ValueError):
        parse_stages(SOL, bad)


def test_normalize_stays_close():
    q = parse_stages(SOL, "affine 1 3 0.2; ltrans 0.5,-1,0.7; round")
    nq = q.normalize()
    assert all(not isinstance(s, LeftTranslation) or float(s.g.t[0]).is_integer() for s in nq.stages)
    rng = np.random.default_rng(4)
    for _ in range(50):
        p = P(*rng.uniform(-5, 5, size=2), rng.uniform(-2, 2))
        a, b = q.apply_continuous(p), nq.apply_continuous(p)
        assert quasi_distance(a, b) <= 2.0 + 1e-9


def test_preimage_measure_halves():
    # the continuous preimage of a box under (4x, y/2) has half its measure
    box = Box(((0, 8), (0, 6)), ((0, 1),))
    q = coordinate_map(SOL, [4, 0.5])
    pre = q.inverse().image_box(box)
    assert haar_measure(pre) == pytest.approx(haar_measure(box) / 2)


def _random_map(spec, rng):
    lines = []
    for _ in range(rng.randint(1, 4)):
        kind = rng.choice(["affine", "pwl", "ltrans", "perm"])
        i = rng.randint(1, spec.dim_x)
        if kind == "affine":
            lines.append(f"affine {i} {rng.choice([-1, 1]) * rng.uniform(0.3, 3)} {rng.uniform(-2, 2)}")
        elif kind == "pwl":
            slopes = ",".join(str(rng.uniform(0.3, 3)) for _ in range(3))
            lines.append(f"pwl {i} {rng.uniform(-2, 0)},{rng.uniform(0, 2)} {slopes} {rng.uniform(-1, 1)}")
        elif kind == "ltrans":
            lines.append("ltrans " + ",".join(str(rng.uniform(-2, 2)) for _ in range(spec.dim_x + spec.dim_t)))
        else:
            perm = list(range(1, spec.dim_x + 1))
            rng.shuffle(perm)
            lines.append("perm " + ",".join(map(str, perm)))
    lines.append("round")
    return parse_stages(spec, lines)


def _search_window(q, A):
    # net points whose image can possibly land in A: pull box corners back and pad
    spec, d = q.spec, q.spec.dim_x
    inv = q.inverse()
    W = NetSet(spec)
    for a in A:
        pts = np.array(list(itertools.product(*box_of(spec, a).intervals)))
        x, t = inv.apply_arrays(pts[:, :d], pts[:, d:])
        lo = np.concatenate([x.min(0), t.min(0)])
        hi = np.concatenate([x.max(0), t.max(0)])
        rects = {}
        for k in integer_heights(list(zip(lo[d:] - 1, hi[d:] + 1))):
            sc = np.exp(np.array(spec.heights_int(k), dtype=float))
            rects[k] = [(int(np.floor(lo[i] / sc[i])) - 1, int(np.ceil(hi[i] / sc[i])) + 1) for i in range(d)]
        W = W | NetSet.from_rectangles(spec, rects)
    return W


@pytest.mark.parametrize("spec,trials", [(SOL, 60), (RANK2, 25)])
def test_preimage_matches_brute_force(spec, trials):
    rng = random.Random(spec.n)
    for _ in range(trials):
        q = _random_map(spec, rng)
        pts = [net_index(tuple(rng.randint(-1, 1) for _ in range(spec.dim_t)),
                         tuple(rng.randint(-2, 2) for _ in range(spec.dim_x))) for _ in range(4)]
        A = NetSet.from_indices(spec, pts)
        expected = brute_force_preimage(q, A, _search_window(q, A))
        assert q.preimage(A) == expected, format_stages(q)
        assert q.preimage_count(A) == len(expected)


def test_preimage_of_large_box():
    q = parse_stages(SOL, "affine 1 3 0.7; affine 2 0.5 -1.3; ltrans 2,1,0.4; round")
    A = enumerate_net(SOL, Box(((-30, 40), (-20, 25)), ((-1.5, 2),)))
    assert q.preimage(A) == brute_force_preimage(q, A, _search_window(q, A))


def test_quasi_isometry_inequality():
    rng = np.random.default_rng(11)
    n = 5000
    k1, k2 = rng.integers(-4, 5, size=(n, 1)), rng.integers(-4, 5, size=(n, 1))
    m1, m2 = rng.integers(-200, 201, size=(n, 2)), rng.integers(-200, 201, size=(n, 2))
    D = NetSpace(SOL).unit_box_diameter()
    for text in ("affine 1 4; affine 2 0.5; round", "pwl 1 0 1,2; round", "perm 2,1; ltrans 1.5,-2,0.3; round"):
        q = parse_stages(SOL, text)
        K = distortion_bound(q, D)
        assert qi_violations(q, (k1, k2), (m1, m2), K) == 0
