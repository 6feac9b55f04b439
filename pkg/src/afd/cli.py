"""Command line entry point ``afd``.

Exit codes: 0 success, 1 failed verification or bad input, 2 infeasible
design, 3 robust sufficient condition violated (only with ``--strict``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .design import DesignResult, InputError, design_input
from .diagnose import build_fd_bank, run_diagnosis
from .model import ModelFileError, UnstableModelError, model_set_from_dict, \
    model_set_to_dict, parse_model_file, table1_path

EXIT_OK, EXIT_FAIL, EXIT_INFEASIBLE, EXIT_VIOLATED = 0, 1, 2, 3


def _models(args):
    return parse_model_file(args.models or table1_path())


def _load_design(path):
    doc = json.loads(Path(path).read_text())
    ms = model_set_from_dict(doc["models"]) if "models" in doc else None
    return DesignResult.from_dict(doc), ms


def _design_and_models(args):
    dr, ms = _load_design(args.design)
    if args.models or ms is None:
        ms = _models(args)
    return dr, ms


def cmd_design(args):
    ms = _models(args)
    scope = "full" if args.scope == "full" else int(args.scope)
    dr = design_input(ms, scope=scope, starts=args.starts, seed=args.seed)
    doc = dr.to_dict()
    doc["models"] = model_set_to_dict(ms)
    text = harness.dumps(doc)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.u_csv:
        harness.write_signal_csv(args.u_csv, dr.u_star, k0=-ms.T_minus)
    print(f"gamma_norm={dr.gamma_norm:.6g} gamma_energy={dr.gamma_energy:.6g} "
          f"feasible={dr.feasible} robust_condition="
          f"{dr.margin_report['condition_met']}", file=sys.stderr)
    if not dr.feasible:
        return EXIT_INFEASIBLE
    if args.strict and not dr.margin_report["condition_met"]:
        return EXIT_VIOLATED
    return EXIT_OK


def _print_table(norms, j_star, labels):
    print("candidate | label            | ||v_j||", file=sys.stderr)
    for j, (v, label) in enumerate(zip(norms, labels)):
        mark = "  <- j*" if j == j_star else ""
        print(f"{j:>9} | {label:<16} | {v:.6f}{mark}", file=sys.stderr)


def cmd_diagnose(args):
    ms = _models(args)
    _, u = harness.read_signal_csv(args.input)
    _, y = harness.read_signal_csv(args.measurement)
    gamma = _load_design(args.design)[0].gamma_norm if args.design else None
    res = run_diagnosis(ms, u, y, init_scheme=args.init, gamma_ref=gamma)
    text = harness.dumps(res.to_dict(include_residuals=True))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    _print_table(res.residual_norms, res.j_star, ms.labels)
    return EXIT_OK


def cmd_simulate(args):
    dr, ms = _design_and_models(args)
    rec = harness.run_experiment(ms, dr, (args.truth, args.mode), seed=args.seed,
                                 code=args.vertex, init_scheme=args.init)
    if args.out:
        harness.write_signal_csv(args.out, rec.y)
    sys.stdout.write(harness.dumps(rec.to_dict()))
    _print_table(rec.diagnosis.residual_norms, rec.diagnosis.j_star, ms.labels)
    return EXIT_OK


def cmd_verify(args):
    ms = _models(args)
    dr = _load_design(args.design)[0] if args.design else None
    checks = harness.verify_all(ms, dr)
    for name, ok, detail in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_FAIL


def cmd_report(args):
    dr, ms = _design_and_models(args)
    fd_bank = build_fd_bank(ms)
    records = harness.default_experiments(ms, dr, fd_bank=fd_bank)
    paths = harness.report(ms, dr, records, args.out_dir)
    sys.stdout.write(Path(paths["table"]).read_text())
    code = EXIT_OK
    if args.mc_trials:
        summary = harness.monte_carlo(ms, dr, args.mc_trials, seed=args.seed)
        wall = summary.pop("wall_time_s")
        (Path(args.out_dir) / "monte_carlo.json").write_text(harness.dumps(summary))
        print(f"monte carlo: {summary['misdiagnoses']} misdiagnoses in "
              f"{summary['total_trials']} trials ({wall:.1f} s), sufficient "
              f"condition met: {summary['sufficient_condition_met']}", file=sys.stderr)
        if args.strict and not summary["sufficient_condition_met"]:
            code = EXIT_VIOLATED
    if args.strict and dr.margin_report and not dr.margin_report["condition_met"]:
        code = EXIT_VIOLATED
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="afd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def models_arg(sp):
        sp.add_argument("--models", help="model JSON file (default: bundled four-model example set)")

    sp = sub.add_parser("design", help="design the discriminating input")
    models_arg(sp)
    sp.add_argument("--starts", type=int, default=64)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--scope", default="full", help="'full' or a model index")
    sp.add_argument("--out", help="design JSON path (default: stdout)")
    sp.add_argument("--u-csv", help="also write the input as k,value CSV")
    sp.add_argument("--strict", action="store_true",
                    help="exit 3 when the robust sufficient condition fails")
    sp.set_defaults(func=cmd_design)

    sp = sub.add_parser("diagnose", help="diagnose a measured transient")
    models_arg(sp)
    sp.add_argument("--input", required=True, help="past input CSV (k,value)")
    sp.add_argument("--measurement", required=True, help="measurement CSV on [0,T+]")
    sp.add_argument("--init", choices=["past", "ls"], default="past")
    sp.add_argument("--design", help="design JSON, for the reference gamma")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("simulate", help="simulate one experiment and diagnose it")
    models_arg(sp)
    sp.add_argument("--design", required=True)
    sp.add_argument("--truth", type=int, required=True)
    sp.add_argument("--mode", choices=["nominal", "random", "vertex", "worst"],
                    default="worst")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--vertex", type=int)
    sp.add_argument("--init", choices=["past", "ls"], default="past")
    sp.add_argument("--out", help="write the measurement as k,value CSV")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("verify", help="run the oracle cross-checks")
    models_arg(sp)
    sp.add_argument("--design")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("report", help="worst-case experiments, CSV and JSON output")
    models_arg(sp)
    sp.add_argument("--design", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--mc-trials", type=int, default=0, help="Monte Carlo trials per model")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--strict", action="store_true")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ModelFileError, UnstableModelError, InputError, ValueError, OSError) as exc:
        print(f"afd: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
