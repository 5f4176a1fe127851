"""Command-line entry point: ``batchts run|compare|diagnose|validate-schedule``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .argmaxprob import QuadratureError
from .batching import FIXED_KINDS, ScheduleError, generate_endpoints, growth_diagnostic
from .harness import (
    ConfigError,
    ExperimentConfig,
    compare_runs,
    diagnose,
    format_diagnosis,
    load_config,
    load_result,
    run_experiment,
)

logger = logging.getLogger("batchts")

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="JSON experiment config (or a metadata.json)")
    p.add_argument("--horizon", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int, dest="master_seed")
    p.add_argument("--schedule", help="per-step | constant:K | polynomial:P | geometric:R | explicit:a,b,.. | ipase")
    p.add_argument("--arms", help="comma list, e.g. bern:0.9,bern:0.1 or gauss:1:1,gauss:0:1")
    p.add_argument("--prob-method", dest="prob_method",
                   help="auto | closed-form | quadrature[:tol] | monte-carlo[:n]")
    p.add_argument("--name")
    p.add_argument("--engine", choices=["auto", "kernel", "python"])
    p.add_argument("--workers", type=int)
    p.add_argument("--out")


def _config_from_args(args) -> ExperimentConfig:
    overrides = {k: getattr(args, k) for k in
                 ("horizon", "replicates", "master_seed", "schedule", "arms", "prob_method",
                  "name", "engine", "workers", "out")}
    if args.config:
        return load_config(args.config).with_overrides(**overrides)
    if not (args.arms and args.schedule and args.horizon):
        raise ConfigError("without a config file, --arms, --schedule and --horizon are required")
    base = {"arms": [], "schedule": "per-step", "horizon": args.horizon}
    d = {k: v for k, v in overrides.items() if v is not None}
    from .env import ArmModel
    from .batching import parse_schedule

    base["arms"] = [ArmModel.parse(s, k + 1).to_dict() for k, s in enumerate(d.pop("arms").split(","))]
    base["schedule"] = parse_schedule(d.pop("schedule")).to_dict()
    base.update(d)
    return ExperimentConfig.from_dict(base)


def cmd_run(args) -> int:
    config = _config_from_args(args)
    if not config.out:
        raise ConfigError("an output directory is required (--out or 'out' in the config)")
    result = run_experiment(config)
    print(f"wrote {config.out} (config {result.metadata['config_hash']}, "
          f"engine {result.metadata['engine']})")
    print(f"final mean random regret {result.mean_random_regret[-1]:.4f}, "
          f"mean batches {result.mean_batches[-1]:.2f}")
    return 0


def cmd_compare(args) -> int:
    results = [load_result(p) for p in args.results]
    report = compare_runs(results)
    print(report.summary())
    if args.out:
        Path(args.out).write_text(report.to_csv(), encoding="utf-8")
        print(f"wrote {args.out}")
    return 0


def cmd_diagnose(args) -> int:
    d = diagnose(load_result(args.result))
    print(json.dumps(d, indent=2) if args.json else format_diagnosis(d))
    return 0


def cmd_validate(args) -> int:
    config = _config_from_args(args)
    schedule = config.batch_schedule()
    if isinstance(schedule, FIXED_KINDS):
        diag = growth_diagnostic(generate_endpoints(schedule, config.horizon), config.horizon)
        report = diag.to_dict()
    else:
        result = run_experiment(config, write=False)
        verdicts = [r.growth["verdict"] for r in result.replicates]
        report = {"verdicts": {v: verdicts.count(v) for v in sorted(set(verdicts))},
                  "note": "sample-path check per replicate"}
    print(json.dumps(report, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batchts", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a replicated experiment and write outputs")
    _add_overrides(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare result directories (first is the baseline)")
    p.add_argument("results", nargs="+")
    p.add_argument("--out", help="write the comparison CSV here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("diagnose", help="print regret, batch-count and probability-decay ratio tables")
    p.add_argument("result")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("validate-schedule", help="check the subexponential growth condition")
    _add_overrides(p)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ScheduleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QuadratureError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
