"""Command-line driver.

    ehfl run CONFIG [--out DIR] [--seed N] [--format csv|json]
    ehfl sweep CONFIG [--out DIR] [--jobs N]
    ehfl validate CONFIG

Output directory precedence: ``--out``, then ``$EHFL_OUT_DIR``, then the
config's ``out_dir``, then ``./results``.

Exit codes: 0 success, 2 usage error, 3 invalid config, 4 training diverged,
5 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from ehfl.engine import MetricsLog, run_simulation
from ehfl.experiment import (
    ExperimentSpec,
    check_seed,
    emit_comparison_table,
    emit_config,
    emit_metrics,
    format_table,
    load_config,
    run_name,
)
from ehfl.learning import DivergenceError
from ehfl.types import ConfigError, SimConfig

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_DIVERGED = 4
EXIT_IO = 5

OUT_ENV = "EHFL_OUT_DIR"

log = logging.getLogger("ehfl")


def _out_dir(args: argparse.Namespace, spec: ExperimentSpec) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or spec.out_dir or "results")


def _run_one(config: SimConfig) -> tuple[SimConfig, MetricsLog]:
    return config, run_simulation(config).log


def cmd_validate(args: argparse.Namespace) -> int:
    spec = load_config(args.config)
    configs = spec.configs()
    print(f"{args.config}: ok, {len(configs)} run(s)")
    if args.verbose:
        print(emit_config(spec), end="")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    spec = load_config(args.config)
    if args.seed is not None:
        spec.base["seed"] = check_seed(args.seed)
        spec.axes.pop("seed", None)
    configs = spec.configs()
    if len(configs) != 1:
        raise ConfigError(f"{args.config} describes {len(configs)} runs; use 'ehfl sweep' for multi-cell configs")
    config = configs[0]
    result = run_simulation(config)
    path = emit_metrics(result.log, config, _out_dir(args, spec), args.format)
    final = result.log.final
    print(f"{run_name(config)}: accuracy={final.accuracy:.4f} energy_total={final.energy_total} -> {path}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    spec = load_config(args.config)
    configs = spec.configs()
    out = _out_dir(args, spec)
    log.info("sweep of %d run(s) -> %s", len(configs), out)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, configs))
    else:
        results = [_run_one(c) for c in configs]
    for config, run_log in results:
        emit_metrics(run_log, config, out / "runs", "csv")
        emit_metrics(run_log, config, out / "runs", "json")
    rows = emit_comparison_table(results, out / "energy_table.csv")
    (out / "experiment.yaml").write_text(emit_config(spec))
    print(format_table(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ehfl",
        description="Energy-harvesting federated learning simulator (FedBacys, FedAvg, FedSeq).",
        epilog="exit codes: 0 ok, 2 usage, 3 invalid config, 4 training diverged, 5 I/O error",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a single configuration")
    p_run.add_argument("config")
    p_run.add_argument("--out", help=f"output directory (default: ${OUT_ENV}, config out_dir, ./results)")
    p_run.add_argument("--seed", type=int, help="override the config seed")
    p_run.add_argument("--format", choices=("csv", "json"), default="csv")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run every cell of a sweep and write the energy table")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--out")
    p_sweep.add_argument("--jobs", type=int, default=1, help="worker processes")
    p_sweep.set_defaults(func=cmd_sweep)

    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
