"""Built-in applications.

Each factory takes the robot id and the synchronizer config and returns the
hooks for that robot.  All of them only act on a COOPERATIVE map; with an
AUTONOMOUS map they hold position for one minimal maneuver, since peer
entries may be stale.
"""
from __future__ import annotations

import math

from . import geom
from .sync import COOPERATIVE, SyncConfig
from .vm import AppHooks, noop_app

ARENA_CENTER = (5.0, 5.0)


def _hold(cmd, K: int) -> int:
    cmd.vx = cmd.vy = 0.0
    cmd.duration = K
    return 0


def _duration(dist: float, speed: float, period: float, K: int) -> int:
    return max(K, math.ceil(dist / (speed * period) - 1e-9))


def gather_app(robot_id: int, cfg: SyncConfig, speed: float = 0.5, spacing: float = 0.6) -> AppHooks:
    """Converge on the swarm centroid, stopping on a ring of ``spacing`` radius."""
    K = cfg.K_vote

    def new_round(cmd, ldmap, gs, clock):
        me = ldmap.get(robot_id)
        if ldmap.op_mode != COOPERATIVE or me is None:
            return _hold(cmd, K)
        n = geom.number_of_members(ldmap)
        cx = sum(e.x for e in ldmap.entries) / n
        cy = sum(e.y for e in ldmap.entries) / n
        # each robot aims for its own slot on a ring so they do not collide
        k = ldmap.ids.index(robot_id)
        ang = 2 * math.pi * k / n
        r = spacing if n > 1 else 0.0
        dx, dy = cx + r * math.cos(ang) - me.x, cy + r * math.sin(ang) - me.y
        dist = math.hypot(dx, dy)
        step = min(dist, speed * cfg.round_period * 4 * K)
        if step < 1e-3:
            return _hold(cmd, K)
        cmd.dx, cmd.dy = dx * step / dist, dy * step / dist
        cmd.duration = _duration(step, speed, cfg.round_period, K)
        return 0

    return AppHooks(new_round=new_round, name="gather-at-centroid")


def formation(n: int, turn: int, radius: float = 3.0, center=ARENA_CENTER) -> list[tuple]:
    """n targets on a circle, rotated by half a slot per ``turn``."""
    off = math.pi * turn / max(n, 1)
    return [(i, center[0] + radius * math.cos(off + 2 * math.pi * i / n),
             center[1] + radius * math.sin(off + 2 * math.pi * i / n)) for i in range(n)]


def match_app(robot_id: int, cfg: SyncConfig, speed: float = 0.8, radius: float = 3.0) -> AppHooks:
    """Repeatedly match the swarm onto a rotating ring formation and drive there.

    The formation index lives in the application's global-state byte.
    """
    K = cfg.K_vote

    def new_round(cmd, ldmap, gs, clock):
        me = ldmap.get(robot_id)
        if ldmap.op_mode != COOPERATIVE or me is None:
            return _hold(cmd, K)
        targets = formation(len(ldmap.entries), gs[0], radius)
        gs[0] = (gs[0] + 1) % 256
        assign = geom.min_weighted_matching(ldmap, targets)
        longest, _ = geom.matching_cost(ldmap, targets, assign)
        _, tx, ty = targets[assign[robot_id]]
        cmd.dx, cmd.dy = tx - me.x, ty - me.y
        # everyone derives the same duration from the shared bottleneck value
        cmd.duration = _duration(longest, speed, cfg.round_period, K)
        return 0

    return AppHooks(new_round=new_round, name="match-and-go")


APPS = {
    "noop": lambda rid, cfg: noop_app(cfg.K_vote),
    "gather-at-centroid": gather_app,
    "match-and-go": match_app,
}
