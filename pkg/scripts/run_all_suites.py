"""Run every bundled scenario and print one summary row per scenario.

    python3 scripts/run_all_suites.py [--workers N] [--out DIR] [--only NAME ...]
"""
import argparse
import sys
import time
from pathlib import Path

from robustmech.cli import STATUSES, aggregate, render_machine, render_text, run_scenario
from robustmech.scenario import bundled_names, load_scenario


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", help="write report and aggregate files here")
    ap.add_argument("--only", nargs="*", help="scenario names to run (default all)")
    args = ap.parse_args(argv)
    names = args.only or [n for names in bundled_names().values() for n in names]
    print(f"{'scenario':24s} {'trials':>6s} {'secs':>7s} " + " ".join(f"{s:>7s}" for s in STATUSES)
          + f" {'min slack':>11s}")
    worst_exit = 0
    for name in names:
        sc = load_scenario(name)
        t0 = time.perf_counter()
        reps = run_scenario(sc, args.workers)
        dt = time.perf_counter() - t0
        agg = aggregate(sc, reps)
        worst_exit = max(worst_exit, agg["exit_status"])
        ms = agg["min_slack"]
        print(f"{name:24s} {sc.trials:6d} {dt:7.2f} " + " ".join(f"{agg['counts'][s]:7d}" for s in STATUSES)
              + f" {'-' if ms is None else format(ms, '11.3g'):>11s}", flush=True)
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{name}.report.txt").write_text(render_text(reps))
            (out / f"{name}.aggregate.json").write_text(render_machine(agg))
    return worst_exit


if __name__ == "__main__":
    sys.exit(main())
