"""Invariant checks recomputed from a trace (a sequence of round dicts).

Everything here reads only the serialized round reports, so a summary can be
re-derived from an NDJSON trace file without re-running the world.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional


@dataclass
class TraceSummary:
    rounds: int = 0
    robots: list = field(default_factory=list)
    starts: dict = field(default_factory=dict)         # epoch -> {robot: round}
    skews: dict = field(default_factory=dict)          # epoch -> skew or None (missing starter)
    max_skew: Optional[int] = 0
    streaks: list = field(default_factory=list)        # maximal op-mode disagreement runs
    max_streak: int = 0
    ck_violations: list = field(default_factory=list)  # epochs whose cooperative maps differ
    coop_starts: int = 0
    min_starts: int = 0
    delivered: int = 0
    dropped: int = 0
    rmse: Optional[float] = None
    rmse_dead_reckoning: Optional[float] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["starts"] = {str(k): {str(r): v for r, v in m.items()} for k, m in self.starts.items()}
        d["skews"] = {str(k): v for k, v in self.skews.items()}
        return d


def load_trace(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def summarize_trace(rows: Iterable[dict], settle: int = 3) -> TraceSummary:
    """Skews, disagreement streaks, common-knowledge check and filter error.

    A maneuver whose first start lies within ``settle`` rounds of the end of
    the trace is not judged for skew (its stragglers may start after the end).
    """
    sm = TraceSummary()
    starts: dict[int, dict[int, int]] = {}
    maps: dict[int, dict[str, list]] = {}
    run = 0
    se = se_dr = 0.0
    n_pos = 0
    robots: set = set()
    last = -1
    for row in rows:
        last = row["round"]
        sm.rounds += 1
        sm.delivered += row["delivered"]
        sm.dropped += row["dropped"]
        modes = set()
        for rb in row["robots"]:
            robots.add(rb["id"])
            if rb["state"] != "PROGRESS":
                modes.add(rb["mode"])
            if "est" in rb:
                tx, ty = rb["true"]
                ex, ey = rb["est"]
                dx, dy = rb["dr"]
                se += (ex - tx) ** 2 + (ey - ty) ** 2
                se_dr += (dx - tx) ** 2 + (dy - ty) ** 2
                n_pos += 1
        if len(modes) > 1:
            run += 1
        elif run:
            sm.streaks.append(run)
            run = 0
        for ev in row["events"]:
            if ev["type"] != "start":
                continue
            starts.setdefault(ev["epoch"], {})[ev["robot"]] = ev["round"]
            if ev["mode"] == "COOPERATIVE":
                sm.coop_starts += 1
                maps.setdefault(ev["epoch"], {}).setdefault(ev["ldmap"], []).append(ev["robot"])
    if run:
        sm.streaks.append(run)
    sm.robots = sorted(robots)
    sm.starts = starts
    for epoch in sorted(starts):
        got = starts[epoch]
        first = min(got.values())
        if len(got) == len(robots):
            sm.skews[epoch] = max(got.values()) - first
        elif first + settle <= last:
            sm.skews[epoch] = None
    vals = list(sm.skews.values())
    sm.max_skew = None if None in vals else max(vals, default=0)
    sm.max_streak = max(sm.streaks, default=0)
    sm.ck_violations = sorted(e for e, groups in maps.items() if len(groups) > 1)
    counts = {r: 0 for r in robots}
    for got in starts.values():
        for r in got:
            counts[r] += 1
    sm.min_starts = min(counts.values(), default=0)
    if n_pos:
        sm.rmse = (se / n_pos) ** 0.5
        sm.rmse_dead_reckoning = (se_dr / n_pos) ** 0.5
    return sm
