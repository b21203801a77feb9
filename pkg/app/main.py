"""
Command-line entry point
Verbs: run <config>, validate <config>, report <out_dir>, cache <checkpoint>
Reference: https://docs.python.org/3/library/argparse.html
"""
import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from app.core.config import settings
from app.core.exceptions import ConfigError, ConfigurationError, PFedGRPError
from app.services.data_stream import build_streams
from app.services.checkpoint import load_cache
from app.services.orchestrator import ExperimentService
from app.services.reporting import emit_results, report
from app.services.run_config import parse_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def setup_logging(level: Optional[str] = None) -> None:
    """Configure the root logger once from settings.LOG_LEVEL."""
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _run(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config)
    if args.output_dir is not None:
        cfg = cfg.model_copy(update={"output_dir": Path(args.output_dir)})
    records = asyncio.run(ExperimentService(cfg).run_all())
    emit_results(records, cfg.output_dir, cfg)
    print(f"Wrote results for {len(records)} run(s) to {cfg.output_dir}")
    return EXIT_OK


def _validate(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config)
    streams = build_streams(cfg.scenario)
    print(
        f"{args.config}: ok ({len(cfg.methods)} method(s), {len(cfg.seeds)} seed(s), "
        f"{len(streams)} clients x {len(streams[0])} rounds)"
    )
    return EXIT_OK


def _report(args: argparse.Namespace) -> int:
    written = report(args.out_dir)
    print(f"Regenerated {len(written)} file(s) in {args.out_dir}")
    return EXIT_OK


def _cache(args: argparse.Namespace) -> int:
    cache = load_cache(args.checkpoint)
    print(f"{args.checkpoint}: round {cache.round_index}, {len(cache.class_cache)} cached class(es)")
    for class_id, entry in cache.class_cache.items():
        params = entry.params
        print(
            f"  class {class_id}: {params.kind.value} x{params.n_components} "
            f"from client {entry.client_id} in round {entry.round_index}"
        )
    for client_id in sorted(cache.thetas):
        mirror = cache.mirrors.get(client_id)
        classes = sorted(mirror.classes()) if mirror is not None else []
        coupled = " +coupled" if client_id in cache.coupled else ""
        print(f"  client {client_id}: {len(cache.thetas[client_id])} params, classes {classes}{coupled}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pfedgrp",
        description="Personalized federated learning with generative replay: experiment runner",
    )
    parser.add_argument("--version", action="version", version=f"{settings.PROJECT_NAME} {settings.VERSION}")
    parser.add_argument("--log-level", default=None, help="Override LOG_LEVEL")
    verbs = parser.add_subparsers(dest="verb", required=True)

    run = verbs.add_parser("run", help="Run every (method, seed) pair of a config and write results")
    run.add_argument("config", help="JSON run document")
    run.add_argument("--output-dir", default=None, help="Override output_dir of the config")
    run.set_defaults(handler=_run)

    validate = verbs.add_parser("validate", help="Check a config without running it")
    validate.add_argument("config", help="JSON run document")
    validate.set_defaults(handler=_validate)

    rep = verbs.add_parser("report", help="Rebuild iaa.csv, summary.json and iaa.svg from run records")
    rep.add_argument("out_dir", help="Output directory of a previous run")
    rep.set_defaults(handler=_report)

    inspect = verbs.add_parser("cache", help="Summarize a server cache checkpoint")
    inspect.add_argument("checkpoint", help="Checkpoint file written under checkpoint_dir")
    inspect.set_defaults(handler=_cache)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Console script entry point.

    Returns:
        0 on success, 1 on a configuration error, 2 on a runtime error
    """
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.handler(args)
    except (ConfigError, ConfigurationError) as e:
        logger.error(f"Configuration error: {e.message}")
        print(f"error: {e.message}", file=sys.stderr)
        return EXIT_CONFIG
    except (PFedGRPError, OSError) as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
