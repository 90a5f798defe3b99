"""Command line: ``swarmsync run <config>`` and ``swarmsync sweep <config>``.

Exit status: 0 when every enabled invariant holds, 1 when one is violated
(a counterexample is written next to the other artifacts), 2 when the
configuration is invalid or a sweep exceeds its budget.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigInvalid, load_config
from .runner import exhaustive_sweep, model_check_sweep, random_sweep, run_scenario
from .simworld import BudgetExceeded

OUT_ENV = "SWARMSYNC_OUT"
EXIT_OK, EXIT_VIOLATION, EXIT_INVALID = 0, 1, 2

log = logging.getLogger("swarmsync")


def _out_dir(arg) -> Path:
    path = Path(arg or os.environ.get(OUT_ENV) or "out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.world.seed = args.seed
    out = _out_dir(args.out)
    with open(out / "trace.ndjson", "w") as fh:
        res = run_scenario(cfg, sink=lambda line: fh.write(line + "\n"))
    summary = res.summary.to_dict()
    summary["checks"] = res.flags
    _dump(out / "summary.json", summary)
    if cfg.world.physics != "static":
        with open(out / "positions.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "id", "true_x", "true_y", "est_x", "est_y"])
            for row in res.rows:
                for rb in row["robots"]:
                    est = rb.get("est", ["", ""])
                    w.writerow([row["round"], rb["id"], *rb["true"], *est])
    print(f"rounds={res.summary.rounds} max_skew={res.summary.max_skew} "
          f"max_streak={res.summary.max_streak} coop_starts={res.summary.coop_starts}"
          + (f" rmse={res.summary.rmse:.4f}" if res.summary.rmse is not None else ""))
    for name, ok in sorted(res.flags.items()):
        print(f"  {name}: {'pass' if ok else 'FAIL'}")
    if not res.ok:
        _dump(out / "counterexample.json", res.counterexample())
        print(f"invariant violated; counterexample in {out / 'counterexample.json'}")
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = _out_dir(args.out)
    if args.model_check:
        rep = model_check_sweep(cfg)
    elif args.exhaustive:
        rep = exhaustive_sweep(cfg, args.max_losses, args.budget)
    else:
        rep = random_sweep(cfg, args.random)
    _dump(out / "sweep.json", rep.to_dict())
    print(f"{rep.mode}: runs={rep.runs} worst_skew={rep.worst_skew} "
          f"worst_streak={rep.worst_streak} violations={len(rep.violations)}")
    for cell, stats in sorted(rep.per_cell.items()):
        print(f"  {cell}: {stats}")
    if rep.violations:
        print("first violating schedule:")
        print(json.dumps(rep.violations[0], sort_keys=True))
        return EXIT_VIOLATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swarmsync", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="scenario YAML file")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
        p.add_argument("--seed", type=int, help="override the scenario seed")

    p = sub.add_parser("run", help="run one scenario and check its invariants")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run many drop schedules")
    common(p)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--exhaustive", action="store_true",
                      help="every loss set of at most --max-losses cells")
    mode.add_argument("--random", type=int, metavar="N", default=100,
                      help="N seeded random schedules over the sweep grid (default 100)")
    mode.add_argument("--model-check", action="store_true",
                      help="every schedule whose loss bursts are shorter than K_vote")
    p.add_argument("--max-losses", type=int, default=1, metavar="M")
    p.add_argument("--budget", type=int, default=2_000_000, help="cap on enumerated schedules")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
