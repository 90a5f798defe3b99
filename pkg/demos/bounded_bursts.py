"""Exhaustively check every schedule whose loss bursts are shorter than K_vote.

The start-count bound is a steady-state rate; below about 12 rounds the
start-up phase alone can leave it unmet.  Horizon 20 takes about half a minute.
"""
import sys
import time

from swarmsync.modelcheck import check_all_schedules

horizon = int(sys.argv[1]) if len(sys.argv) > 1 else 20
for n in (2, 3):
    for K in (2, 3):
        t0 = time.time()
        res = check_all_schedules(n, K, horizon)
        print(f"n={n} K={K}: {res.schedules:.3g} schedules, {res.states} merged states, "
              f"skew violations {len(res.skew_violations)}, map mismatches {len(res.ck_violations)}, "
              f"fewest starts {res.min_starts} (bound {horizon // (2 * K + 2)}), "
              f"{time.time() - t0:.1f}s")
