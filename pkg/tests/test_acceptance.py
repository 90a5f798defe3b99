"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
import math
import random
import time

import numpy as np

from swarmsync.config import parse_config
from swarmsync.ekf import CORRECTED, LITERAL, forecast, jacobian_f
from swarmsync.geom import (
    convex_hull,
    matching_cost,
    min_weighted_matching,
    smallest_enclosing_circle,
)
from swarmsync.modelcheck import check_all_schedules
from swarmsync.runner import random_sweep, run_scenario
from swarmsync.sensors import UwbRanges, anchor_distances, flow_to_velocity, uwb_solve_position
from swarmsync.simworld import FlowMount, NoiseSpec, PlantState, sample_sensors

from support import (
    brute_bottleneck,
    brute_hull,
    brute_sec_radius,
    central_jacobian,
    psd_run,
    pubsub_stress,
    random_points,
    random_states,
    record,
    rel_err,
)

GRID = [(n, K) for n in (2, 3) for K in (2, 3)]
HORIZON = 20
_checked: dict = {}


def bounded_burst_results():
    # shared by the safety, liveness and common-knowledge checks
    if not _checked:
        t0 = time.time()
        for n, K in GRID:
            _checked[(n, K)] = check_all_schedules(n, K, HORIZON)
        _checked["seconds"] = time.time() - t0
    return _checked


_sweep: dict = {}


def random_sweep_report():
    if not _sweep:
        cfg = parse_config({"schema_version": 1, "seed": 0, "horizon": 200, "app": "noop",
                            "sweep": {"robots": [3, 5], "p": [0.05, 0.2], "K_vote": [2, 3]}})
        t0 = time.time()
        _sweep["report"] = random_sweep(cfg, 10_000)
        _sweep["seconds"] = time.time() - t0
    return _sweep["report"], _sweep["seconds"]


def test_criterion_01_zero_skew_under_short_bursts():
    res = bounded_burst_results()
    bad = sum(len(res[c].skew_violations) for c in GRID)
    covered = sum(res[c].schedules for c in GRID)
    ok = bad == 0 and res["seconds"] < 120
    record(1, ok, f"skew violations {bad} over {covered:.3g} schedules, "
                  f"n in {{2,3}} x K in {{2,3}}, {res['seconds']:.0f}s")
    assert ok


def test_criterion_02_liveness_under_short_bursts():
    res = bounded_burst_results()
    parts, ok = [], True
    for n, K in GRID:
        need = HORIZON // (K + K + 2)
        got = res[(n, K)].min_starts
        ok &= got >= need
        parts.append(f"n={n} K={K}: {got}>={need}")
    record(2, ok, "min starts " + ", ".join(parts))
    assert ok


def test_criterion_03_skew_at_most_two_under_random_loss():
    rep, secs = random_sweep_report()
    skew_bad = sum(1 for v in rep.violations if "skew" in v["failed"])
    ok = rep.runs == 10_000 and rep.worst_skew is not None and rep.worst_skew <= 2 \
        and skew_bad == 0 and secs < 300
    record(3, ok, f"{rep.runs} runs, worst skew {rep.worst_skew}, violations {skew_bad}, "
                  f"{secs:.0f}s")
    assert ok


def test_criterion_04_disagreement_streaks():
    rep, _ = random_sweep_report()
    bad = sum(1 for v in rep.violations if "streak" in v["failed"])
    ok = rep.worst_streak <= 2 and bad == 0
    record(4, ok, f"worst op_mode disagreement streak {rep.worst_streak} over {rep.runs} runs")
    assert ok


def test_criterion_05_common_knowledge():
    res = bounded_burst_results()
    rep, _ = random_sweep_report()
    bad = sum(len(res[c].ck_violations) for c in GRID)
    bad += sum(1 for v in rep.violations if "common_knowledge" in v["failed"])
    checked = sum(res[c].coop_starts_checked for c in GRID) + rep.coop_starts
    ok = bad == 0 and checked > 0
    record(5, ok, f"{checked} cooperative starts checked, {bad} with differing maps")
    assert ok


def test_criterion_06_uwb_inversion():
    rng = np.random.default_rng(2024)
    worst_err = worst_res = 0.0
    for p in rng.random((1000, 3)):
        pos, res = uwb_solve_position(UwbRanges(tuple(anchor_distances(p))))
        worst_err = max(worst_err, float(np.max(np.abs(pos - p))))
        worst_res = max(worst_res, res)
    ok = worst_err < 1e-9 and worst_res < 1e-12
    record(6, ok, f"1000 points, max error {worst_err:.1e}, max residual {worst_res:.1e}")
    assert ok


def test_criterion_07_filter_numerics():
    worst = 0.0
    for mode in (CORRECTED, LITERAL):
        for X, u in random_states(1000, 77):
            J = central_jacobian(lambda v: forecast(v, u, mode), X)
            worst = max(worst, rel_err(jacobian_f(X, u, mode), J))
    low, asym = psd_run(5000, 8)
    cfg = parse_config({"schema_version": 1, "seed": 5, "horizon": 600, "app": "match-and-go",
                        "world": {"physics": "full"}})
    sm = run_scenario(cfg).summary
    ok = worst < 1e-5 and asym == 0.0 and low >= 0.0 and sm.rmse <= 0.5 * sm.rmse_dead_reckoning
    record(7, ok, f"jacobian rel err {worst:.1e}; P min eig {low:.1e}, asym {asym:.0e} "
                  f"over 5000 steps; RMSE {sm.rmse:.3f} vs dead reckoning "
                  f"{sm.rmse_dead_reckoning:.3f}")
    assert ok


def test_criterion_08_flow_closure():
    rng = random.Random(31)
    worst = 0.0
    for _ in range(100):
        h = rng.uniform(0.05, 3.0)
        alpha = math.radians(rng.uniform(-10, 10))
        vx, vy = rng.uniform(-3, 3), rng.uniform(-3, 3)
        _, flow, _ = sample_sensors(PlantState(vx=vx, vy=vy), NoiseSpec.noiseless(),
                                    mount=FlowMount(height=h, alpha=alpha))
        got = flow_to_velocity(flow)
        worst = max(worst, abs(got[0] - vx), abs(got[1] - vy))
    ok = worst < 1e-9
    record(8, ok, f"100 cases, max velocity error {worst:.1e}")
    assert ok


def test_criterion_09_geometry_against_brute_force():
    rng = random.Random(99)
    bad_sec = bad_hull = bad_match = 0
    for k in range(500):
        pts = random_points(rng, rng.randint(1, 8), grid=5 if k % 4 == 0 else None)
        c = smallest_enclosing_circle(pts)
        bad_sec += abs(c.radius - brute_sec_radius(pts)) > 1e-9
        bad_hull += set(convex_hull(pts)) != brute_hull(pts)
    for _ in range(500):
        n = rng.randint(1, 6)
        R, T = random_points(rng, n), random_points(rng, n)
        got = matching_cost(R, T, min_weighted_matching(R, T))
        want = brute_bottleneck(R, T)
        bad_match += abs(got[0] - want[0]) > 1e-9 or abs(got[1] - want[1]) > 1e-9
    ok = bad_sec == bad_hull == bad_match == 0
    record(9, ok, f"mismatches: circle {bad_sec}/500, hull {bad_hull}/500, "
                  f"matching {bad_match}/500")
    assert ok


def test_criterion_10_pubsub_stress():
    got = pubsub_stress(100_000, 12)
    ok = not any(got.values())
    record(10, ok, "10^5 events, violations " + ", ".join(f"{k} {v}" for k, v in got.items()))
    assert ok


def test_criterion_11_determinism():
    trees = [
        {"schema_version": 1, "seed": 3, "horizon": 150, "robots": {"count": 5},
         "drops": {"p": 0.2, "burst_max": 4, "burst_rate": 0.05}},
        {"schema_version": 1, "seed": 4, "horizon": 100, "app": "gather-at-centroid",
         "world": {"physics": "kinematic"}, "drops": {"p": 0.1}},
        {"schema_version": 1, "seed": 6, "horizon": 150, "app": "match-and-go",
         "world": {"physics": "full"}, "drops": {"p": 0.1}},
    ]
    same = 0
    for tree in trees:
        runs = []
        for _ in range(2):
            lines: list = []
            run_scenario(parse_config(tree), sink=lines.append)
            runs.append("\n".join(lines).encode())
        same += runs[0] == runs[1]
    ok = same == len(trees)
    record(11, ok, f"{same}/{len(trees)} scenarios replayed byte-identically")
    assert ok
