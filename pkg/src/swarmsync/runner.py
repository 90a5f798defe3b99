"""Scenario runs and schedule sweeps with invariant checking."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .analysis import TraceSummary, summarize_trace
from .config import ScenarioConfig, build_world
from .modelcheck import check_all_schedules
from .simworld import BudgetExceeded, DropSchedule, enumerate_schedules, lossy_bursts
from .sync import SyncConfig

STREAK_BOUND = 2
LOOSE_SKEW_BOUND = 2


@dataclass
class RunResult:
    rows: list
    summary: TraceSummary
    flags: dict
    schedule: DropSchedule
    n: int
    K_vote: int

    @property
    def ok(self) -> bool:
        return all(self.flags.values())

    def counterexample(self) -> dict:
        ids = list(range(self.n))
        losses = [[r, s, t] for r in range(self.summary.rounds)
                  for s, t in sorted(self.schedule.dropped(r, ids))]
        return {"n": self.n, "K_vote": self.K_vote, "schedule": self.schedule.spec(),
                "losses": losses, "failed": sorted(k for k, v in self.flags.items() if not v)}


def check_flags(sm: TraceSummary, schedule: DropSchedule, n: int, K: int, horizon: int,
                app: str) -> dict:
    """Which invariants hold for this run.

    When every loss burst is shorter than K_vote the strict regime applies
    (zero skew, liveness for the no-op app); otherwise skew may reach two
    rounds.  Disagreement streaks and the common-knowledge check always apply.
    """
    bursts = lossy_bursts(schedule, horizon, range(n))
    strict = max(bursts, default=0) < K
    bound = 0 if strict else LOOSE_SKEW_BOUND
    flags = {
        "skew": sm.max_skew is not None and sm.max_skew <= bound,
        "streak": sm.max_streak <= STREAK_BOUND,
        "common_knowledge": not sm.ck_violations,
    }
    if strict and app == "noop":
        flags["liveness"] = sm.min_starts >= horizon // (K + K + 2)
    return flags


def run_scenario(cfg: ScenarioConfig, schedule: Optional[DropSchedule] = None,
                 sync: Optional[SyncConfig] = None, n: Optional[int] = None,
                 sink: Optional[Callable[[str], None]] = None) -> RunResult:
    """Run one scenario; ``sink`` receives each round as a JSON line."""
    sync = sync or cfg.sync
    n = n or cfg.n
    schedule = schedule or cfg.schedule()
    world = build_world(cfg, schedule, sync, n)
    rows = []
    for _ in range(cfg.horizon):
        rep = world.run_round()
        if sink is not None:
            sink(rep.to_json())
        rows.append(rep.to_dict())
    sm = summarize_trace(rows)
    return RunResult(rows, sm, check_flags(sm, schedule, n, sync.K_vote, cfg.horizon, cfg.app),
                     schedule, n, sync.K_vote)


@dataclass
class SweepReport:
    mode: str
    runs: int = 0
    worst_skew: Optional[int] = 0
    worst_streak: int = 0
    violations: list = field(default_factory=list)
    per_cell: dict = field(default_factory=dict)
    coop_starts: int = 0
    schedules_covered: float = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"mode": self.mode, "runs": self.runs, "worst_skew": self.worst_skew,
                "worst_streak": self.worst_streak, "violations": self.violations,
                "per_cell": self.per_cell, "coop_starts": self.coop_starts,
                "schedules_covered": self.schedules_covered, "ok": self.ok}


def _absorb(rep: SweepReport, res: RunResult, cell: str, tag: dict, keep: int = 20) -> None:
    rep.runs += 1
    sm = res.summary
    if rep.worst_skew is not None:
        rep.worst_skew = None if sm.max_skew is None else max(rep.worst_skew, sm.max_skew)
    rep.worst_streak = max(rep.worst_streak, sm.max_streak)
    rep.coop_starts += sm.coop_starts
    c = rep.per_cell.setdefault(cell, {"runs": 0, "violations": 0, "worst_skew": 0,
                                       "worst_streak": 0})
    c["runs"] += 1
    c["worst_streak"] = max(c["worst_streak"], sm.max_streak)
    if c["worst_skew"] is not None:
        c["worst_skew"] = None if sm.max_skew is None else max(c["worst_skew"], sm.max_skew)
    if not res.ok:
        c["violations"] += 1
        if len(rep.violations) < keep:
            rep.violations.append({**tag, **res.counterexample()})


def sweep_cells(cfg: ScenarioConfig) -> list[tuple[int, float, int]]:
    sw = cfg.sweep
    ns = sw.get("robots", [cfg.n])
    ps = sw.get("p", [cfg.drops.get("p", 0.0)])
    ks = sw.get("K_vote", [cfg.sync.K_vote])
    return list(itertools.product(ns, ps, ks))


def random_sweep(cfg: ScenarioConfig, count: int, progress: Optional[Callable] = None) -> SweepReport:
    """``count`` seeded random schedules spread round-robin over the sweep grid."""
    if count <= 0:
        raise BudgetExceeded("a sweep needs a positive schedule budget")
    cells = sweep_cells(cfg)
    rep = SweepReport("random")
    d = cfg.drops
    for i in range(count):
        n, p, K = cells[i % len(cells)]
        seed = cfg.seed + i
        sched = DropSchedule(seed=seed, p=p, burst_max=d.get("burst_max", 0),
                             burst_rate=d.get("burst_rate", 0.0))
        sync = SyncConfig(**{**cfg.sync.__dict__, "K_vote": K,
                             "member_timeout": max(cfg.sync.member_timeout, 10 * K)})
        res = run_scenario(cfg, sched, sync, n)
        _absorb(rep, res, f"n={n} p={p} K={K}", {"index": i, "seed": seed})
        if progress is not None:
            progress(i + 1, count)
    rep.schedules_covered = rep.runs
    return rep


def exhaustive_sweep(cfg: ScenarioConfig, max_losses: int, cap: int = 2_000_000,
                     schedules: Optional[Iterable[DropSchedule]] = None) -> SweepReport:
    """Every loss set of at most ``max_losses`` cells over the horizon."""
    rep = SweepReport("exhaustive")
    it = schedules if schedules is not None else enumerate_schedules(cfg.n, cfg.horizon,
                                                                      max_losses, cap)
    for i, sched in enumerate(it):
        res = run_scenario(cfg, sched)
        _absorb(rep, res, f"n={cfg.n} K={cfg.sync.K_vote}", {"index": i})
    rep.schedules_covered = rep.runs
    return rep


def model_check_sweep(cfg: ScenarioConfig) -> SweepReport:
    """All schedules whose loss bursts are shorter than K_vote, via state merging."""
    K = cfg.sync.K_vote
    res = check_all_schedules(cfg.n, K, cfg.horizon, cfg=cfg.sync)
    rep = SweepReport("model-check", runs=res.states, schedules_covered=float(res.schedules))
    rep.coop_starts = res.coop_starts_checked
    rep.worst_skew = 0 if not res.skew_violations else None
    need = cfg.horizon // (K + K + 2)
    rep.per_cell[f"n={cfg.n} K={K}"] = {"states": res.states, "min_starts": res.min_starts,
                                        "liveness_bound": need}
    for v in res.skew_violations:
        rep.violations.append({"failed": ["skew"], "losses": [list(x) for x in v["losses"]]})
    for v in res.ck_violations:
        rep.violations.append({"failed": ["common_knowledge"], "losses": [list(x) for x in v["losses"]]})
    if res.min_starts < need:
        rep.violations.append({"failed": ["liveness"], "min_starts": res.min_starts, "need": need})
    return rep
