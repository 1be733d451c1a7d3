"""Command-line entry point for the FedMap simulator."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from typing import Optional, Sequence

sys.path.insert(0, os.path.dirname(__file__))

from constants import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_RUNTIME_ERROR, LOG_FILE, VERSION  # noqa: E402


def setup_logging(log_file: Optional[str] = LOG_FILE, verbose: bool = False):
    """Setup logging configuration with rotation."""
    from logging.handlers import RotatingFileHandler

    formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    handlers: list[logging.Handler] = [console_handler]

    if log_file:
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=5 * 1024 * 1024,
            backupCount=3,
            encoding="utf-8",
        )
        file_handler.setFormatter(formatter)
        handlers.append(file_handler)

    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, handlers=handlers, force=True)

    def handle_exception(exc_type, exc_value, exc_traceback):
        if issubclass(exc_type, KeyboardInterrupt):
            sys.__excepthook__(exc_type, exc_value, exc_traceback)
            return
        logging.error("Uncaught exception", exc_info=(exc_type, exc_value, exc_traceback))

    sys.excepthook = handle_exception


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedmap", description="Deterministic FedMap federated-learning simulator"
    )
    parser.add_argument("--version", action="version", version=VERSION)
    parser.add_argument("--log-file", default=LOG_FILE, help="Rotating log file ('' to disable)")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one experiment")
    run.add_argument("--config", required=True, help="key=value or JSON config file")
    run.add_argument("--out", required=True, help="Output directory")
    run.add_argument("--seed", type=int, default=None, help="Override the config seed")

    sweep = sub.add_parser("sweep", help="Run every cell of a parameter grid")
    sweep.add_argument("--config", required=True, help="Base config file")
    sweep.add_argument("--grid", required=True, help="Grid file (comma-separated alternatives)")
    sweep.add_argument("--out", required=True, help="Output directory")
    sweep.add_argument("--xlsx", action="store_true", help="Also write summary.xlsx")

    schedule = sub.add_parser("schedule", help="Pruning schedule tools")
    schedule_sub = schedule.add_subparsers(dest="schedule_command", required=True)
    preview = schedule_sub.add_parser("preview", help="Print (t, K_t) as CSV")
    preview.add_argument("--config", required=True, help="Config file")
    preview.add_argument("--out", default=None, help="Write CSV here instead of stdout")
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    from experiment_runner import ExperimentRunner
    from settings_manager import SettingsManager

    settings = SettingsManager()
    cfg = settings.load_config(args.config)
    if args.seed is not None:
        cfg = settings.with_seed(cfg, args.seed)
    ExperimentRunner(settings).run(cfg, args.out)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    from experiment_runner import ExperimentRunner
    from settings_manager import SettingsManager

    settings = SettingsManager()
    base = settings.load_config(args.config)
    grid = settings.load_grid(args.grid)
    manifests = ExperimentRunner(settings).sweep(base, grid, args.out, xlsx=args.xlsx)
    return EXIT_OK if all(m.status == "ok" for m in manifests) else EXIT_RUNTIME_ERROR


def cmd_schedule_preview(args: argparse.Namespace) -> int:
    from export_manager import ExportManager
    from schedule import preview_rows
    from settings_manager import SettingsManager

    cfg = SettingsManager().load_config(args.config)
    rows = preview_rows(cfg.schedule.resolved(cfg.num_weights, cfg.rounds))
    if args.out:
        ok, msg = ExportManager.write_rows(args.out, ["t", "K_t"], rows)
        if not ok:
            raise OSError(msg)
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(["t", "K_t"])
        writer.writerows(rows)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_file or None, args.verbose)

    from settings_manager import ConfigError

    logger = logging.getLogger("CLI")
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        return cmd_schedule_preview(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG_ERROR
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return EXIT_RUNTIME_ERROR
    except Exception as e:
        logger.exception(f"Run failed: {e}")
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
