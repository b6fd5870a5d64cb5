"""Command-line entry point: run one scenario, a suite directory, or query
a finished suite's aggregate report.

Exit codes: 0 on success, 1 when a scenario aborted mid-run, 2 for
configuration problems (missing files, malformed JSON, bad arguments).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace

from .harness import (
    AblationFlags,
    ConfigError,
    load_report,
    load_scenario,
    run_scenario,
    run_suite,
)

_ABLATION_NAMES = {
    "single": "single_shot",
    "single_shot": "single_shot",
    "discrete": "discrete",
    "continuous": "continuous",
}


def _parse_ablations(text: str) -> AblationFlags:
    chosen = set()
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if token not in _ABLATION_NAMES:
            raise ConfigError(f"unknown ablation '{token}' "
                              f"(choose from single, discrete, continuous)")
        chosen.add(_ABLATION_NAMES[token])
    if not chosen:
        raise ConfigError("ablation list is empty")
    return AblationFlags(single_shot="single_shot" in chosen,
                         discrete="discrete" in chosen,
                         continuous="continuous" in chosen)


def _cmd_run(args) -> int:
    cfg = load_scenario(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.ablations is not None:
        cfg = replace(cfg, ablations=_parse_ablations(args.ablations))
    cache = None if args.out is None else str(args.out) + "/cache"
    log = run_scenario(cfg, out_dir=args.out, cache_dir=cache)
    s = log.summary()
    eps = ", ".join(f"{k}={v:.4f}" for k, v in s["mean_eps"].items())
    print(f"{s['name']}: steps={s['steps_run']} achieved={s['achieved']} "
          f"mean_eps[{eps}]")
    if log.failure:
        print(f"aborted: {log.failure}", file=sys.stderr)
        return 1
    return 0


def _cmd_suite(args) -> int:
    report = run_suite(args.dir, args.out, jobs=args.jobs)
    print(f"{report['achieved']}/{report['n_scenarios']} achieved "
          f"(rate {report['achieved_rate']:.2f})")
    if report["failures"]:
        print("failed runs: " + ", ".join(report["failures"]),
              file=sys.stderr)
        return 1
    return 0


_REPORT_COLUMNS = [
    "name", "object", "category", "seed", "steps_run", "achieved",
    "terminated_early", "failure",
    "mean_eps_single_shot", "mean_eps_discrete", "mean_eps_continuous",
    "final_eps_single_shot", "final_eps_discrete", "final_eps_continuous",
    "goal_rel_rot", "goal_rel_trn", "goal_contact_trn", "goal_heading",
    "final_est_rot", "final_est_trn",
]


def _report_row(s: dict) -> list:
    ge = s["final_goal_errors_truth"]
    fr = s["final_rel_estimate_error"]
    return [
        s["name"], s["object"], s["category"], s["seed"], s["steps_run"],
        int(s["achieved"]), int(s["terminated_early"]), s["failure"] or "",
        s["mean_eps"].get("single_shot", ""),
        s["mean_eps"].get("discrete", ""),
        s["mean_eps"].get("continuous", ""),
        s["final_eps"].get("single_shot", ""),
        s["final_eps"].get("discrete", ""),
        s["final_eps"].get("continuous", ""),
        ge["rel_rot"], ge["rel_trn"], ge["contact_trn"],
        ge.get("heading", ""),
        fr.get("rot_rad", ""), fr.get("trn_m", ""),
    ]


def _cmd_report(args) -> int:
    report = load_report(args.in_dir)
    if args.format == "json":
        print(json.dumps(report, indent=1, sort_keys=True))
    else:
        w = csv.writer(sys.stdout)
        w.writerow(_REPORT_COLUMNS)
        for s in report["scenarios"]:
            w.writerow(_report_row(s))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="inhand",
        description="Closed-loop planar in-hand manipulation experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a single scenario config")
    run.add_argument("--config", required=True, help="scenario JSON file")
    run.add_argument("--seed", type=int, default=None,
                     help="override the config's seed")
    run.add_argument("--ablations", default=None,
                     help="comma list of error traces to record "
                          "(single, discrete, continuous)")
    run.add_argument("--out", default=None,
                     help="directory for runlog.csv / summary.json")
    run.set_defaults(fn=_cmd_run)

    suite = sub.add_parser("suite", help="run every config in a directory")
    suite.add_argument("--dir", required=True, help="directory of configs")
    suite.add_argument("--jobs", type=int, default=1,
                       help="parallel scenario workers")
    suite.add_argument("--out", required=True, help="results directory")
    suite.set_defaults(fn=_cmd_suite)

    rep = sub.add_parser("report", help="print a finished suite's aggregate")
    rep.add_argument("--in", dest="in_dir", required=True,
                     help="suite results directory")
    rep.add_argument("--format", choices=("csv", "json"), default="json")
    rep.set_defaults(fn=_cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
