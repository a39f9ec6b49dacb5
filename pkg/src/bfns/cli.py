"""Command line entry point: ``bfns {run,audit,step-check,plot,show-config}``.

Exit codes: 0 success, 1 invalid input, 2 solver divergence, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import audit as _audit
from .experiment import (
    DEFAULT_CONFIG,
    ConfigError,
    DegenerateFit,
    ExperimentAborted,
    load_config,
    parse_config,
    plot_script,
    run_experiment,
    step_check,
)
from .scheme import SolverDiverged
from .torus import CheckpointError, TorusGrid

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3


def _err(msg: str) -> None:
    print(f"bfns: {msg}", file=sys.stderr)


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.outputs.get("directory", "results")
    report = run_experiment(cfg, out_dir=out, workers=args.workers)
    for lv in report.levels:
        print(f"N={lv.N:5d} h={lv.h:.6g} err2_max={lv.err2_max_mean:.6e} "
              f"+/- {lv.err2_max_se:.2e} err2_grad={lv.err2_grad_mean:.6e}")
    if report.rate is not None:
        lo, hi = report.rate_ci
        print(f"lambda_hat = {report.rate:.4f}  (95% CI [{lo:.4f}, {hi:.4f}])")
    else:
        print("lambda_hat not fitted (fewer than 3 levels)")
    print(f"summary: {Path(out) / 'summary.csv'}")
    return EXIT_OK


def _cmd_audit(args) -> int:
    cfg = load_config(args.config) if args.config else parse_config({})
    a = cfg.raw["audit"]
    grid = TorusGrid(a["n"], cfg.params.grid.L)
    reports = list(_audit.audit_gagliardo_nirenberg(a["samples"], a["seed"], grid))
    reports += _audit.audit_fractional_bilinear(a["samples"], a["seed"], grid, deltas=a["deltas"])
    for alpha in a["alphas"]:
        reports += _audit.audit_fractional_bf(a["samples"], a["seed"], grid, alpha=alpha,
                                              deltas=a["deltas"])
        reports += _audit.audit_pointwise(alpha, a["pointwise_samples"], a["seed"])
    text = _audit.write_audit_csv(reports, args.out)
    if args.out is None:
        sys.stdout.write(text)
    else:
        print(f"wrote {len(reports)} rows to {args.out}")
    return EXIT_OK


def _cmd_step_check(args) -> int:
    cfg = load_config(args.config) if args.config else parse_config({})
    results = step_check(cfg)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: worst={r.worst:.3e} bound={r.bound:.3e}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_INVALID


def _cmd_plot(args) -> int:
    try:
        text = plot_script(args.summary)
    except (ValueError, KeyError) as exc:
        _err(str(exc))
        return EXIT_INVALID
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_show_config(args) -> int:
    if args.config:
        cfg = load_config(args.config).raw
    else:
        cfg = DEFAULT_CONFIG
    print(json.dumps(cfg, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bfns", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a strong-error experiment")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides outputs.directory)")
    r.add_argument("--workers", type=int, default=None)
    r.set_defaults(fn=_cmd_run)
    a = sub.add_parser("audit", help="empirical inequality constants as CSV")
    a.add_argument("config", nargs="?")
    a.add_argument("--out")
    a.set_defaults(fn=_cmd_audit)
    s = sub.add_parser("step-check", help="scheme invariant suite")
    s.add_argument("config", nargs="?")
    s.set_defaults(fn=_cmd_step_check)
    g = sub.add_parser("plot", help="gnuplot script for a summary CSV")
    g.add_argument("summary")
    g.add_argument("--out")
    g.set_defaults(fn=_cmd_plot)
    c = sub.add_parser("show-config", help="print the resolved configuration")
    c.add_argument("config", nargs="?")
    c.set_defaults(fn=_cmd_show_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return args.fn(args)
    except ConfigError as exc:
        _err(f"invalid config: {exc}")
        return EXIT_INVALID
    except (OSError, CheckpointError) as exc:
        _err(f"I/O error: {exc}")
        return EXIT_IO
    except (DegenerateFit, ValueError) as exc:
        _err(str(exc))
        return EXIT_INVALID
    except SolverDiverged as exc:
        _err(f"solver diverged: {exc}")
        return EXIT_DIVERGED
    except ExperimentAborted as exc:
        _err(f"aborted: {exc}; partial results in {exc.partial_path}")
        for idx, msg in sorted(exc.census.items()):
            _err(f"  sample {idx}: {msg}")
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
