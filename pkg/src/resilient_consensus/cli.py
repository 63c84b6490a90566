"""Command-line front end: ``python -m resilient_consensus <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .design import format_design_report
from .experiment import (
    ConfigError,
    Scenario,
    bundled_scenarios,
    execute,
    format_run,
    format_sweep,
    scenario_design_report,
    sweep_beta,
    load_config,
)
from .simulator import SimulationError


def _betas(scen: Scenario, override) -> list:
    if override:
        return list(override)
    return scen.sweep or [scen.beta]


def cmd_validate(args) -> int:
    scen = Scenario.load(args.config)
    ok = True
    for b in _betas(scen, args.betas):
        rep = scenario_design_report(scen, b)
        print(format_design_report(rep))
        try:
            scen.resolve(b)
        except ConfigError as exc:
            print(f"FAIL  {exc}")
            ok = False
        ok = ok and rep["ok"]
        print()
    print("validation:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_design_report(args) -> int:
    scen = Scenario.load(args.config)
    rep = scenario_design_report(scen, args.beta)
    print(json.dumps(rep, indent=2) if args.json else format_design_report(rep))
    return 0 if rep["ok"] else 1


def cmd_run(args) -> int:
    scen = Scenario.load(args.config)
    out = None if args.no_files else Path(args.out) / (
        scen.name if args.beta is None else f"{scen.name}_beta{args.beta:g}")
    t0 = time.perf_counter()
    try:
        doc, _ = execute(scen, args.beta, out)
    except SimulationError as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 1
    print(format_run(doc))
    print(f"  wall time {time.perf_counter() - t0:.2f} s" + ("" if out is None else f", files in {out}"))
    return 0 if doc["metrics"]["invariants_ok"] else 1


def cmd_sweep(args) -> int:
    cfg, base = load_config(args.config)
    scen = Scenario.from_dict(cfg, base)
    betas = _betas(scen, args.betas)
    rep = sweep_beta(scen, betas, None if args.no_files else Path(args.out), args.workers, base)
    print(format_sweep(rep))
    return 0 if rep["invariants_ok"] and not rep["skipped"] else 1


def cmd_replay(args) -> int:
    path = Path(args.summary)
    doc = json.loads(path.read_text())
    scen = Scenario.from_dict(doc["config"], path.resolve().parent)
    fresh, _ = execute(scen)
    old = json.dumps(doc, sort_keys=True)
    new = json.dumps(json.loads(json.dumps(fresh)), sort_keys=True)
    same = old == new
    print(format_run(fresh))
    print("replay:", "identical summary" if same else "summary differs from recorded run")
    return 0 if same and fresh["metrics"]["invariants_ok"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resilient-consensus", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_arg(sp):
        sp.add_argument("config", help="scenario JSON path, or a bundled name: " + ", ".join(bundled_scenarios()))

    sp = sub.add_parser("validate", help="check design and trigger inequalities")
    scenario_arg(sp)
    sp.add_argument("--betas", type=float, nargs="+")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("design-report", help="matrices, norms and validation details")
    scenario_arg(sp)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_design_report)

    sp = sub.add_parser("run", help="simulate one scenario and write its artifact files")
    scenario_arg(sp)
    sp.add_argument("--beta", type=float, help="override the scenario gain")
    sp.add_argument("--out", default="runs")
    sp.add_argument("--no-files", action="store_true")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run a scenario across several gains")
    scenario_arg(sp)
    sp.add_argument("--betas", type=float, nargs="+")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", default="runs")
    sp.add_argument("--no-files", action="store_true")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("replay", help="re-run from a summary.json and compare")
    sp.add_argument("summary")
    sp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
