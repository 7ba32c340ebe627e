"""Command line entry point: ``svrgpdfp {run,validate,reference} CONFIG``."""

from __future__ import annotations

import argparse
import sys
import warnings

from .experiment import (
    EXIT_DIVERGED,
    EXIT_INVALID,
    EXIT_OK,
    ConfigError,
    build_problem,
    load_config,
    load_or_compute_reference,
    reference_path,
    run_experiment,
    validate_config,
)


def _fmt(x):
    return "n/a" if x is None else f"{x:.6g}"


def _cmd_validate(cfg) -> int:
    reports = validate_config(cfg)
    code = EXIT_OK
    for name, rep in reports.items():
        status = "ok" if rep["ok"] else ("overridden" if rep["override"] else "INVALID")
        print(f"{name}: {status} kappa={_fmt(rep.get('kappa'))} M={_fmt(rep.get('M'))}")
        for reason in rep["reasons"]:
            print(f"  error: {reason}")
        for note in rep["warnings"]:
            print(f"  warning: {note}")
        if not rep["ok"] and not rep["override"]:
            code = EXIT_INVALID
    return code


def _cmd_reference(cfg) -> int:
    if cfg.reference_iters == 0:
        print("reference_iters is 0; nothing to compute")
        return EXIT_OK
    built = build_problem(cfg)
    ref = load_or_compute_reference(cfg, built.spec)
    print(f"objective={ref.objective:.17g} residual={ref.residual:.3g} "
          f"converged={ref.converged} cache={reference_path(cfg)}")
    return EXIT_OK


def _cmd_run(cfg) -> int:
    result = run_experiment(cfg)
    for name, info in result.summary["solvers"].items():
        line = f"{name}: {info['status']}"
        hit = info.get("epochs_to_threshold")
        if hit is not None:
            line += f" epochs_to_threshold={_fmt(hit['mean'])} ({hit['reached']} reached)"
        print(line)
        for err in info.get("errors", []):
            print(f"  {err}")
        for reason in info["validation"]["reasons"]:
            print(f"  error: {reason}")
    print(f"wrote {cfg.output_dir}")
    return result.exit_code


COMMANDS = {"run": _cmd_run, "validate": _cmd_validate, "reference": _cmd_reference}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="svrgpdfp", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("config", help="experiment config (JSON)")
    parser.add_argument("-q", "--quiet", action="store_true", help="silence solver warnings")
    args = parser.parse_args(argv)
    if args.quiet:
        warnings.simplefilter("ignore")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
