"""Command-line entry point.

    salbc run --config cfg.json --out results/
    salbc verify --config cfg.json --artifacts results/

``run`` exits with status 1 when any safety violation was recorded and 0
otherwise. ``verify`` exits with status 1 when a certified node fails its
re-check. Both exit with status 2 on configuration or artifact errors. The
log level is read from the ``SALBC_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, load_config
from .experiment import ArtifactError, run_experiment, verify_artifacts

LOG_ENV = "SALBC_LOG_LEVEL"


def _parser():
    p = argparse.ArgumentParser(prog="salbc", description="Safe-set learning with GP-certified controllers.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment and write its artifacts")
    run.add_argument("--config", required=True, help="JSON experiment config")
    run.add_argument("--out", required=True, help="output directory")
    ver = sub.add_parser("verify", help="re-check the certificates recorded in a run's artifacts")
    ver.add_argument("--config", required=True, help="JSON experiment config used for the run")
    ver.add_argument("--artifacts", required=True, help="directory written by 'run'")
    return p


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    args = _parser().parse_args(argv)
    _setup_logging()
    try:
        cfg = load_config(args.config)
        if args.command == "run":
            status = run_experiment(cfg, args.out)
            print(f"wrote artifacts to {args.out}" + ("; safety violations recorded" if status else ""))
            return status
        problems = verify_artifacts(cfg, args.artifacts)
    except (ConfigError, ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 2
    for msg in problems:
        print(f"FAIL {msg}", file=sys.stderr)
    if problems:
        return 1
    print("all certified nodes verified")
    return 0


if __name__ == "__main__":
    sys.exit(main())
