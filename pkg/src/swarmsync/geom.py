"""Swarm queries evaluated over an LDMap or a set of labelled points.

Every function is deterministic in its input *set*: permuting the input order
never changes the answer, so robots holding the same map agree on it.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

EPS = 1e-9
BOTTLENECK = "bottleneck"
MIN_SUM = "min-sum"


class GeomError(ValueError):
    pass


class EmptyMap(GeomError):
    pass


class EmptySet(GeomError):
    pass


class SizeMismatch(GeomError):
    pass


@dataclass(frozen=True)
class Circle:
    x: float
    y: float
    radius: float

    @property
    def center(self) -> tuple[float, float]:
        return (self.x, self.y)

    def contains(self, p, tol: float = EPS) -> bool:
        return math.hypot(p[0] - self.x, p[1] - self.y) <= self.radius + tol


def point_set(points: Iterable) -> list[tuple[int, float, float]]:
    """Normalize (id, x, y) triples, LDMap entries or an LDMap into a sorted list."""
    if hasattr(points, "entries"):
        points = points.entries
    out = []
    for p in points:
        if hasattr(p, "id"):
            out.append((int(p.id), float(p.x), float(p.y)))
        else:
            i, x, y = p
            out.append((int(i), float(x), float(y)))
    ids = [p[0] for p in out]
    if len(set(ids)) != len(ids):
        raise GeomError("duplicate ids in point set")
    if not all(math.isfinite(p[1]) and math.isfinite(p[2]) for p in out):
        raise GeomError("non-finite coordinate")
    return sorted(out)


def number_of_members(ldmap) -> int:
    return len(ldmap.entries)


def leader(ldmap) -> int:
    if not ldmap.entries:
        raise EmptyMap("no members")
    return min(e.id for e in ldmap.entries)


# smallest enclosing circle

def _circle2(a, b) -> Circle:
    cx, cy = (a[0] + b[0]) / 2, (a[1] + b[1]) / 2
    return Circle(cx, cy, max(math.hypot(a[0] - cx, a[1] - cy), math.hypot(b[0] - cx, b[1] - cy)))


def _circle3(a, b, c):
    ax, ay = a
    bx, by = b[0] - ax, b[1] - ay
    cx, cy = c[0] - ax, c[1] - ay
    d = 2 * (bx * cy - by * cx)
    if d == 0:
        return None
    b2, c2 = bx * bx + by * by, cx * cx + cy * cy
    ux = (cy * b2 - by * c2) / d
    uy = (bx * c2 - cx * b2) / d
    x, y = ux + ax, uy + ay
    r = max(math.hypot(x - p[0], y - p[1]) for p in (a, b, c))
    return Circle(x, y, r)


def _welzl(pts: list) -> Circle:
    # iterative move-to-front variant, expected linear time
    c = None
    for i, p in enumerate(pts):
        if c is not None and c.contains(p):
            continue
        c = Circle(p[0], p[1], 0.0)
        for j in range(i):
            q = pts[j]
            if c.contains(q):
                continue
            c = _circle2(p, q)
            for k in range(j):
                s = pts[k]
                if c.contains(s):
                    continue
                c3 = _circle3(p, q, s)
                # collinear triple: the widest pair spans it
                c = c3 if c3 is not None else max(
                    (_circle2(p, q), _circle2(p, s), _circle2(q, s)), key=lambda cc: cc.radius)
    return c


def smallest_enclosing_circle(points) -> Circle:
    pts = point_set(points)
    if not pts:
        raise EmptySet("no points")
    xy = sorted({(p[1], p[2]) for p in pts})
    # fixed shuffle keeps the expected running time without losing determinism
    random.Random(len(xy)).shuffle(xy)
    return _welzl(xy)


# convex hull

def _cross(o, a, b) -> float:
    return (a[1] - o[1]) * (b[2] - o[2]) - (a[2] - o[2]) * (b[1] - o[1])


def convex_hull(points) -> list[int]:
    """Hull vertex ids, counter-clockwise from the lowest (then leftmost) point.

    Collinear boundary points are dropped; of several robots sharing a vertex
    position the smallest id represents it.
    """
    pts = point_set(points)
    if not pts:
        raise EmptySet("no points")
    uniq: dict[tuple, tuple] = {}
    for p in pts:  # sorted by id, so the first one wins
        uniq.setdefault((p[1], p[2]), p)
    P = sorted(uniq.values(), key=lambda p: (p[1], p[2]))
    if len(P) <= 2:
        return [p[0] for p in sorted(P, key=lambda p: (p[2], p[1]))]
    lower: list = []
    for p in P:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(P):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        # all collinear: just the two extremes
        return [p[0] for p in sorted((P[0], P[-1]), key=lambda p: (p[2], p[1]))]
    first = min(range(len(hull)), key=lambda i: (hull[i][2], hull[i][1]))
    return [p[0] for p in hull[first:] + hull[:first]]


def polygon_area(points, ids: Sequence[int]) -> float:
    pos = {p[0]: (p[1], p[2]) for p in point_set(points)}
    a = 0.0
    for i in range(len(ids)):
        x1, y1 = pos[ids[i]]
        x2, y2 = pos[ids[(i + 1) % len(ids)]]
        a += x1 * y2 - x2 * y1
    return a / 2


# matching

def _perfect(allowed: np.ndarray) -> bool:
    n = allowed.shape[0]
    match_t = [-1] * n

    def augment(r, seen):
        for t in np.flatnonzero(allowed[r]):
            if seen[t]:
                continue
            seen[t] = True
            if match_t[t] < 0 or augment(match_t[t], seen):
                match_t[t] = r
                return True
        return False

    return all(augment(r, [False] * n) for r in range(n))


def _lexi_fix(cost: np.ndarray, allowed: np.ndarray) -> list[int]:
    """Minimum-total assignment over allowed edges, ties broken lexicographically."""
    n = cost.shape[0]
    big = 1e9 + 1e6 * float(cost.max(initial=0.0))
    c = np.where(allowed, cost, big)
    r, t = linear_sum_assignment(c)
    best = float(c[r, t].sum())
    tol = 1e-9 * max(1.0, best)
    assign = [-1] * n
    fixed = allowed.copy()
    for i in range(n):
        for j in np.flatnonzero(fixed[i]):
            trial = fixed.copy()
            trial[i, :] = False
            trial[:, j] = False
            trial[i, j] = True
            cc = np.where(trial, cost, big)
            rr, tt = linear_sum_assignment(cc)
            if cc[rr, tt].sum() <= best + tol:
                fixed = trial
                assign[i] = int(j)
                break
    return assign


def min_weighted_matching(robots, targets, mode: str = BOTTLENECK) -> dict[int, int]:
    """Assign each robot id to a target id.

    ``bottleneck`` minimizes the longest robot-target distance, then the total
    distance, then prefers lexicographically smaller target ids for smaller
    robot ids.  ``min-sum`` minimizes the total distance with the same final
    tie-break.
    """
    R, T = point_set(robots), point_set(targets)
    if len(R) != len(T):
        raise SizeMismatch(f"{len(R)} robots vs {len(T)} targets")
    if not R:
        return {}
    a = np.array([[p[1], p[2]] for p in R])
    b = np.array([[p[1], p[2]] for p in T])
    cost = np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])
    if mode == MIN_SUM:
        allowed = np.ones_like(cost, dtype=bool)
    elif mode == BOTTLENECK:
        levels = np.unique(cost)
        lo, hi = 0, len(levels) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if _perfect(cost <= levels[mid]):
                hi = mid
            else:
                lo = mid + 1
        allowed = cost <= levels[lo]
    else:
        raise ValueError(f"unknown matching mode {mode!r}")
    assign = _lexi_fix(cost, allowed)
    return {R[i][0]: T[j][0] for i, j in enumerate(assign)}


def matching_cost(robots, targets, assignment: dict[int, int]) -> tuple[float, float]:
    """(longest edge, total length) of an assignment."""
    rp = {p[0]: (p[1], p[2]) for p in point_set(robots)}
    tp = {p[0]: (p[1], p[2]) for p in point_set(targets)}
    d = [math.dist(rp[r], tp[t]) for r, t in assignment.items()]
    return (max(d, default=0.0), sum(d))
