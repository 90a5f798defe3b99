"""Exhaustive exploration of every drop schedule with bounded loss bursts.

The adversary picks, each round, any subset of the n(n-1) directed links to
drop, subject to "at most ``burst_limit`` consecutive rounds with a loss".
Worlds reached by different schedules are merged when every robot's
behaviorally relevant state coincides, which keeps horizon-20 searches for
three robots tractable even though the number of schedules is astronomic.

Along every explored transition the checker verifies:

* all robots that start a maneuver in a round are all the robots (zero skew),
* robots that start in COOPERATIVE mode hold byte-identical LDMaps,

and at the horizon it reports the fewest maneuver starts any schedule allows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional

from .simworld import DropSchedule, PlantState, World, WorldParams, ordered_pairs
from .sync import SyncConfig
from .vm import AppHooks, Robot


@dataclass
class CheckResult:
    n: int
    K_vote: int
    horizon: int
    burst_limit: int
    schedules: int = 0             # distinct drop schedules covered
    states: int = 0                # merged states summed over layers
    skew_violations: list = field(default_factory=list)
    ck_violations: list = field(default_factory=list)
    min_starts: int = 0
    coop_starts_checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.skew_violations and not self.ck_violations

    def witness(self, which: str = "skew") -> Optional[DropSchedule]:
        v = self.skew_violations if which == "skew" else self.ck_violations
        if not v:
            return None
        return DropSchedule(v[0]["losses"])


def _subsets(links: list) -> list[frozenset]:
    out = []
    for k in range(len(links) + 1):
        out.extend(frozenset(c) for c in combinations(links, k))
    return out


def make_world(n: int, cfg: SyncConfig, app: Optional[Callable[[int], AppHooks]] = None) -> World:
    robots = [Robot(i, cfg, range(n)) for i in range(n)]
    if app is not None:
        for r in robots:
            r.register_app(app(r.id))
    plants = [PlantState(1.0 + i, 1.0 + 0.5 * i) for i in range(n)]
    return World(robots, plants, DropSchedule(), WorldParams())


def check_all_schedules(
    n: int,
    K_vote: int,
    horizon: int,
    burst_limit: Optional[int] = None,
    cfg: Optional[SyncConfig] = None,
    app: Optional[Callable[[int], AppHooks]] = None,
    max_violations: int = 5,
) -> CheckResult:
    """Breadth-first search over all schedules whose loss bursts are <= ``burst_limit``.

    ``burst_limit`` defaults to ``K_vote - 1``.
    """
    if burst_limit is None:
        burst_limit = K_vote - 1
    cfg = cfg or SyncConfig(K_vote=K_vote)
    res = CheckResult(n, K_vote, horizon, burst_limit)
    world = make_world(n, cfg, app)
    links = ordered_pairs(range(n))
    choices = _subsets(links)
    lossless = [frozenset()]
    # key -> [world, lossy_run, starts, path count, witness losses]
    layer = {None: [world, 0, 0, 1, ()]}
    for r in range(horizon):
        nxt: dict = {}
        for w, run, starts, count, path in layer.values():
            opts = choices if run < burst_limit else lossless
            for lost in opts:
                w2 = w.clone()
                rep = w2.run_round(lost)
                losses = path + tuple((r, s, t) for s, t in sorted(lost))
                st = [e for e in rep.events if e["type"] == "start"]
                if st:
                    who = {e["robot"] for e in st}
                    if len(who) != n and len(res.skew_violations) < max_violations:
                        res.skew_violations.append({"round": r, "starters": sorted(who),
                                                    "losses": losses})
                    coop = {e["ldmap"] for e in st if e["mode"] == "COOPERATIVE"}
                    res.coop_starts_checked += sum(e["mode"] == "COOPERATIVE" for e in st)
                    if len(coop) > 1 and len(res.ck_violations) < max_violations:
                        res.ck_violations.append({"round": r, "losses": losses})
                run2 = run + 1 if lost else 0
                s2 = starts + (1 if len(st) == n else 0)
                base = min(rb.sync.epoch for rb in w2.robots)
                key = (run2, tuple(rb.key() + (rb.sync.epoch - base,) for rb in w2.robots))
                cur = nxt.get(key)
                if cur is None:
                    nxt[key] = [w2, run2, s2, count, losses]
                else:
                    cur[3] += count
                    if s2 < cur[2]:
                        cur[2], cur[4] = s2, losses
        layer = nxt
        res.states += len(layer)
    res.schedules = sum(v[3] for v in layer.values())
    res.min_starts = min(v[2] for v in layer.values())
    return res
