"""Command-line runner: ``robustmech list | validate <scenario> | run <scenario>``."""
from __future__ import annotations

import argparse
import json
import math
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .experiments import REGISTRY, list_experiments, run_trial
from .robustness import FAIL, FLAG, PASS, VACUOUS, RobustnessReport
from .scenario import Scenario, ScenarioError, bundled_names, load_scenario

STATUSES = (PASS, FAIL, VACUOUS, FLAG)
HEADER = "tag seed delta alpha lhs rhs slack status"


def _num(x) -> str:
    if x is None:
        return "nan"
    return format(float(x), ".17g")


def report_line(r: RobustnessReport) -> str:
    m = r.meta
    return " ".join([r.tag, str(m.get("seed", "nan")), _num(m.get("delta")), _num(m.get("alpha")),
                     _num(r.measured), _num(r.bound), _num(r.slack), r.status])


def _jsonable(x):
    if isinstance(x, float):
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "item"):
        return _jsonable(x.item())
    return x


def aggregate(scenario: Scenario, reports: Sequence[RobustnessReport]) -> dict:
    counts = Counter(r.status for r in reports)
    by_tag: dict[str, dict] = {}
    for r in reports:
        e = by_tag.setdefault(r.tag, {"count": 0, "min_slack": None, **{s: 0 for s in STATUSES}})
        e["count"] += 1
        e[r.status] += 1
        if r.status != VACUOUS and not math.isnan(r.slack):
            e["min_slack"] = r.slack if e["min_slack"] is None else min(e["min_slack"], r.slack)
    checked = [r for r in reports if r.status != VACUOUS and not math.isnan(r.slack)]
    worst = min(checked, key=lambda r: r.slack, default=None)
    agg = {
        "scenario": scenario.name,
        "experiment": scenario.experiment,
        "seed": scenario.seed,
        "trials": scenario.trials,
        "reports": len(reports),
        "counts": {s: counts.get(s, 0) for s in STATUSES},
        "min_slack": worst.slack if worst else None,
        "worst": {"tag": worst.tag, "seed": worst.meta.get("seed")} if worst else None,
        "by_tag": dict(sorted(by_tag.items())),
    }
    agg["exit_status"] = exit_status(agg)
    return _jsonable(agg)


def exit_status(agg: dict) -> int:
    """0 exactly when no non-vacuous check failed."""
    return 0 if agg["counts"][FAIL] == 0 else 1


def _run_one(args) -> list[RobustnessReport]:
    name, params, seed = args
    return run_trial(name, params, seed)


def run_scenario(scenario: Scenario, workers: int = 1) -> list[RobustnessReport]:
    """All trials, seeds ``seed .. seed + trials - 1``, merged in seed order."""
    seeds = [scenario.seed + j for j in range(scenario.trials)]
    jobs = [(scenario.experiment, scenario.params, s) for s in seeds]
    if workers <= 1 or len(jobs) <= 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    out = []
    for s, reps in sorted(zip(seeds, results), key=lambda p: p[0]):
        out.extend(reps)
    return out


def render_text(reports: Sequence[RobustnessReport]) -> str:
    return "".join(line + "\n" for line in [HEADER] + [report_line(r) for r in reports])


def render_machine(agg: dict) -> str:
    return json.dumps(agg, sort_keys=True, indent=2) + "\n"


def _cmd_list(args) -> int:
    width = max(len(n) for n in REGISTRY)
    for name, doc in list_experiments():
        print(f"{name:<{width}}  {doc}")
    for sub, names in bundled_names().items():
        print(f"\nbundled {sub} scenarios: {', '.join(names) if names else '(none)'}")
    return 0


def _cmd_validate(args) -> int:
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2
    print(f"ok: {sc.name} runs {sc.experiment} for {sc.trials} trial(s) from seed {sc.seed}")
    return 0


def _cmd_run(args) -> int:
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    if args.trials is not None:
        sc = replace(sc, trials=args.trials)
    reports = run_scenario(sc, args.workers)
    agg = aggregate(sc, reports)
    text = render_text(reports)
    machine = render_machine(agg)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{sc.name}.report.txt").write_text(text)
        (out / f"{sc.name}.aggregate.json").write_text(machine)
    if args.format == "machine":
        sys.stdout.write(machine)
    else:
        sys.stdout.write(text)
        c = agg["counts"]
        sys.stdout.write(f"# {sc.name}: " + " ".join(f"{s}={c[s]}" for s in STATUSES)
                         + f" exit={agg['exit_status']}\n")
    return agg["exit_status"]


def _nonneg_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError("must be a nonnegative integer")
    return v


def _pos_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robustmech", description="Exact robustness certification runner.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list experiments and bundled scenarios").set_defaults(func=_cmd_list)
    v = sub.add_parser("validate", help="parse and validate a scenario without running it")
    v.add_argument("scenario", help="scenario file or bundled scenario name")
    v.set_defaults(func=_cmd_validate)
    r = sub.add_parser("run", help="run a scenario and emit reports")
    r.add_argument("scenario", help="scenario file or bundled scenario name")
    r.add_argument("--seed", type=_nonneg_int, help="override the base seed")
    r.add_argument("--trials", type=_nonneg_int, help="override the trial count")
    r.add_argument("--workers", type=_pos_int, default=1, help="worker processes (default 1)")
    r.add_argument("--out", help="directory for the report and aggregate files")
    r.add_argument("--format", choices=("text", "machine"), default="text", help="stdout format")
    r.set_defaults(func=_cmd_run)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
