import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from swarmsync import geom
from swarmsync.geom import (
    MIN_SUM,
    EmptyMap,
    EmptySet,
    SizeMismatch,
    convex_hull,
    leader,
    matching_cost,
    min_weighted_matching,
    number_of_members,
    polygon_area,
    smallest_enclosing_circle,
)
from swarmsync.sync import COOPERATIVE
from swarmsync.vm import LDEntry, LDMap

from support import brute_bottleneck, brute_hull, brute_sec_radius, cross, random_points


def ldmap(ids):
    return LDMap(tuple(LDEntry(i, float(i), 0.0, 0.0, 0.0, 0.0, bytes(9), 0) for i in sorted(ids)),
                 COOPERATIVE, 0)


# queries

def test_members_and_leader():
    assert number_of_members(ldmap([4])) == 1
    assert number_of_members(ldmap(range(5))) == 5
    assert leader(ldmap([3, 1, 7])) == 1
    assert leader(ldmap([42])) == 42
    with pytest.raises(EmptyMap):
        leader(LDMap((), COOPERATIVE, 0))


def test_sec_examples():
    c = smallest_enclosing_circle([(0, 2.0, 3.0)])
    assert (c.x, c.y, c.radius) == (2.0, 3.0, 0.0)
    c = smallest_enclosing_circle([(0, 0, 0), (1, 2, 0), (2, 0, 2)])
    assert c.center == pytest.approx((1, 1)) and c.radius == pytest.approx(math.sqrt(2))
    c = smallest_enclosing_circle([(0, 0, 0), (1, 1, 0), (2, 2, 0)])
    assert c.center == pytest.approx((1, 0)) and c.radius == pytest.approx(1)
    with pytest.raises(EmptySet):
        smallest_enclosing_circle([])


def test_hull_examples():
    sq = [(0, 0, 0), (1, 1, 0), (2, 1, 1), (3, 0, 1), (4, 0.5, 0.5)]
    assert convex_hull(sq) == [0, 1, 2, 3]
    assert sorted(convex_hull([(0, 0, 0), (1, 3, 0), (2, 1, 2)])) == [0, 1, 2]
    assert convex_hull([(5, 0, 0), (6, 1, 0), (7, 2, 0)]) == [5, 7]
    with pytest.raises(EmptySet):
        convex_hull([])


def test_matching_examples():
    R = [(0, 0, 0), (1, 1, 0)]
    assert min_weighted_matching(R, [(0, 0, 1), (1, 1, 1)]) == {0: 0, 1: 1}
    T = [(0, 1, 1), (1, 0, 1)]
    a = min_weighted_matching(R, T)
    assert a == {0: 1, 1: 0}
    assert matching_cost(R, T, a)[0] == pytest.approx(1.0)
    with pytest.raises(SizeMismatch):
        min_weighted_matching(R, T[:1])


def test_min_sum_differs_from_bottleneck():
    # bottleneck accepts a larger total to shorten the longest edge
    R = [(0, 0, 0), (1, 2, 0)]
    T = [(0, 1, 0), (1, 3, 0)]
    b = min_weighted_matching(R, T)
    s = min_weighted_matching(R, T, mode=MIN_SUM)
    assert matching_cost(R, T, b)[0] <= matching_cost(R, T, s)[0]
    assert matching_cost(R, T, s)[1] <= matching_cost(R, T, b)[1] + 1e-12


def test_sec_and_hull_against_brute_force():
    rng = random.Random(5)
    for k in range(200):
        pts = random_points(rng, rng.randint(1, 8), grid=4 if k % 3 == 0 else None)
        c = smallest_enclosing_circle(pts)
        assert c.radius == pytest.approx(brute_sec_radius(pts), abs=1e-9)
        assert all(c.contains(p[1:]) for p in pts)
        hull = convex_hull(pts)
        assert set(hull) == brute_hull(pts)
        if len(hull) >= 3:
            assert polygon_area(pts, hull) > 0


def test_matching_against_permutations():
    rng = random.Random(9)
    for _ in range(150):
        n = rng.randint(1, 6)
        R, T = random_points(rng, n), random_points(rng, n)
        a = min_weighted_matching(R, T)
        assert sorted(a.values()) == list(range(n))
        got = matching_cost(R, T, a)
        want = brute_bottleneck(R, T)
        assert got[0] == pytest.approx(want[0], abs=1e-9)
        assert got[1] == pytest.approx(want[1], abs=1e-9)


pts_strategy = st.lists(st.tuples(st.integers(-6, 6), st.integers(-6, 6)), min_size=1, max_size=9)


@settings(max_examples=150, deadline=None)
@given(pts_strategy, st.randoms(use_true_random=False))
def test_order_invariance(coords, rnd):
    pts = [(i, float(x), float(y)) for i, (x, y) in enumerate(coords)]
    shuffled = pts[:]
    rnd.shuffle(shuffled)
    assert smallest_enclosing_circle(pts) == smallest_enclosing_circle(shuffled)
    assert convex_hull(pts) == convex_hull(shuffled)
    targets = [(i, float(y), float(x)) for i, (x, y) in enumerate(coords)]
    t2 = targets[:]
    rnd.shuffle(t2)
    assert min_weighted_matching(pts, targets) == min_weighted_matching(shuffled, t2)


@settings(max_examples=150, deadline=None)
@given(pts_strategy)
def test_hull_is_ccw_from_lowest(coords):
    pts = [(i, float(x), float(y)) for i, (x, y) in enumerate(coords)]
    hull = convex_hull(pts)
    pos = {p[0]: p for p in pts}
    low = min(pts, key=lambda p: (p[2], p[1]))
    assert (pos[hull[0]][1], pos[hull[0]][2]) == (low[1], low[2])
    if len(hull) >= 3:
        for i in range(len(hull)):
            a, b, c = (pos[hull[(i + k) % len(hull)]] for k in range(3))
            assert cross(a, b, c) > 0


def test_point_set_rejects_duplicates():
    with pytest.raises(geom.GeomError):
        geom.point_set([(1, 0, 0), (1, 1, 1)])
