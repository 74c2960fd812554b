"""Command line entry point.

    lazylab <experiment> [--config FILE] [--seed S] [--out DIR] [--workers W] [--reproducible]

``--out`` falls back to ``LAZYLAB_OUT``, then to ``out_dir`` in the config
file or preset; ``--workers`` falls back to ``LAZYLAB_WORKERS``, then to 1.
Without ``--config`` the preset runs unchanged.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 step budget exhausted (artifacts are still written for 3 and 4).
"""
import argparse
import json
import logging
import os
import sys

from .experiments import (EXPERIMENTS, ConfigError, emit_plot_data, env_workers, load_config,
                          run_experiment)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_BUDGET = 0, 2, 3, 4


def build_parser():
    p = argparse.ArgumentParser(prog="lazylab", description=__doc__.split("\n\n")[0])
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON file overriding preset fields")
    p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    p.add_argument("--out", help="output root (default: $LAZYLAB_OUT or the config value)")
    p.add_argument("--workers", type=int, help="parallel runs (default: $LAZYLAB_WORKERS or 1)")
    p.add_argument("--reproducible", action="store_true",
                   help="pin BLAS to one thread so reruns are byte-identical")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        out = args.out or os.environ.get("LAZYLAB_OUT") or None
        workers = args.workers if args.workers is not None else env_workers(1)
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = load_config(args.experiment, args.config, out_dir=out,
                          seeds=[args.seed] if args.seed is not None else None)
        root = run_experiment(cfg, workers=workers, reproducible=args.reproducible)
    except ConfigError as exc:
        print(f"lazylab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    emit_plot_data(root)

    status = json.loads((root / "summary.json").read_text())["status"]
    print(root)
    if status == "diverged":
        print("lazylab: at least one run diverged", file=sys.stderr)
        return EXIT_DIVERGED
    if status == "budget-exhausted":
        print("lazylab: step budget exhausted before the stopping rule", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
