"""Command-line surface: monitor, mask, verify, train, compare.

Exit codes: 0 success/pass, 1 semantic failure (violated spec, failed
verification check, non-finite training loss), 2 usage or input-parse error.
All randomness flows from --seed; CREFLOW_LOG sets the logging level.
"""

import argparse
import json
import logging
import os
import sys

from . import fileio, oracle, simworld
from .errors import CreflowError, NonFiniteLoss, SchemaError
from .mask import LatentLayout, build_group_mask
from .monitor import run_monitor

log = logging.getLogger("creflow")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _setup_logging():
    level = os.environ.get("CREFLOW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _emit(payload, out_path):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out_path:
        fileio.write_json(out_path, payload)
    print(text)


def cmd_monitor(args) -> int:
    try:
        spec = fileio.load_task_spec(args.spec)
        trace = fileio.load_trace(args.trace)
    except (SchemaError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        verdict = run_monitor(spec, trace)
    except CreflowError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    _emit(fileio.verdict_report(verdict), args.out)
    return EXIT_OK if verdict.reward == 1 else EXIT_FAIL


def cmd_mask(args) -> int:
    try:
        spec = fileio.load_task_spec(args.spec)
        traces = [fileio.load_trace(p) for p in args.trace]
    except (SchemaError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        verdicts = [run_monitor(spec, t) for t in traces]
        horizon = traces[0].horizon
        if args.layout == "pixel":
            layout = LatentLayout.pixel(horizon, traces[0].grid)
        else:
            layout = LatentLayout.entity(horizon, spec.entity_ids(), channels=2)
        mask = build_group_mask(verdicts, layout, spec.clause_entities())
    except CreflowError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    _emit(fileio.mask_report(mask, layout), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.suite != "all" and args.suite not in oracle.SUITES:
        print(
            f"error: unknown suite {args.suite!r}; "
            f"choose from all, {', '.join(oracle.SUITES)}",
            file=sys.stderr,
        )
        return EXIT_USAGE
    report = oracle.run_suite(args.suite, args.seed)
    report.seed = args.seed
    _emit(report.to_dict(), args.out)
    for check in report.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status} {check.name}: value={check.value:.6g} tol={check.tolerance:.6g}",
              file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_train(args) -> int:
    try:
        cfg = fileio.load_experiment_config(args.config)
        if args.seed is not None:
            cfg.world.seed = args.seed
        if args.out_dir:
            cfg.out_dir = args.out_dir
        if cfg.spec_path:
            spec = fileio.load_task_spec(cfg.spec_path)
        else:
            spec = simworld.build_task_spec(cfg.world)
    except (SchemaError, CreflowError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    if args.dry_run:
        log.info("config and spec validated")
        return EXIT_OK
    os.makedirs(cfg.out_dir, exist_ok=True)
    bundle = simworld.pretrain_reference(cfg.world)
    try:
        series = simworld.run_online_loop(cfg.world, spec, bundle, cfg.effective_loss_config())
    except NonFiniteLoss as err:
        dump_path = os.path.join(cfg.out_dir, "diagnostic_dump.json")
        fileio.write_json(
            dump_path,
            {"error": str(err), "world": {k: (list(v) if isinstance(v, tuple) else v)
                                          for k, v in vars(cfg.world).items()}},
        )
        print(f"error: {err} (diagnostics: {dump_path})", file=sys.stderr)
        return EXIT_FAIL
    csv_path = os.path.join(cfg.out_dir, "metrics.csv")
    summary_path = os.path.join(cfg.out_dir, "summary.json")
    fileio.write_metrics_csv(csv_path, series)
    fileio.write_json(summary_path, fileio.train_summary(series, cfg))
    if args.dump_traces:
        trace_dir = os.path.join(cfg.out_dir, "traces")
        os.makedirs(trace_dir, exist_ok=True)
        for i, (trace, reward) in enumerate(
            simworld.sample_decoded_rollouts(cfg.world, bundle, args.dump_traces)
        ):
            fileio.save_trace(os.path.join(trace_dir, f"rollout_{i:03d}_r{reward}.yaml"), trace)
        log.info("wrote %d rollout traces to %s", args.dump_traces, trace_dir)
    print(json.dumps(series.summary, indent=2, sort_keys=True))
    log.info("metrics: %s summary: %s", csv_path, summary_path)
    return EXIT_OK


def cmd_compare(args) -> int:
    rows = []
    for path in args.summaries:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            print(f"error: {path}: {err}", file=sys.stderr)
            return EXIT_USAGE
        s = doc.get("summary", {})
        mode = doc.get("mode", {})
        rows.append(
            (
                path,
                mode.get("mask_enabled"),
                mode.get("corrective_enabled"),
                s.get("first_window_success"),
                s.get("last_window_success"),
                s.get("final_offmask_drift"),
            )
        )
    header = f"{'summary':40s} {'mask':>5s} {'corr':>5s} {'first':>7s} {'last':>7s} {'drift':>9s}"
    print(header)
    for path, m, c, first, last, drift in rows:
        def fmt(v, width, prec):
            return f"{v:{width}.{prec}f}" if isinstance(v, (int, float)) else " " * (width - 1) + "-"
        print(f"{path:40s} {str(m):>5s} {str(c):>5s} "
              f"{fmt(first, 7, 3)} {fmt(last, 7, 3)} {fmt(drift, 9, 5)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="creflow")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("monitor", help="evaluate a trace against a task spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("mask", help="build the group credit mask from traces")
    p.add_argument("--spec", required=True)
    p.add_argument("--trace", action="append", required=True)
    p.add_argument("--layout", choices=("entity", "pixel"), default="entity")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("verify", help="run the analytic verification suites")
    p.add_argument("--suite", default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="run one online-RL experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--dump-traces", type=int, default=0, metavar="N",
                   help="save N decoded rollouts of the final policy for the monitor")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="tabulate training summaries side by side")
    p.add_argument("summaries", nargs="+")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
