# experiment_runner.py
"""Runs experiments and sweeps, and writes their artifacts"""

import logging
import math
import os
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

from constants import (
    CHECKPOINT_FILE,
    FINAL_MASK_FILE,
    MANIFEST_FILE,
    MASK_LOG,
    METRICS_COLUMNS,
    METRICS_CSV,
    METRICS_JSONL,
    PARTITIONS_DIR,
    RESOLVED_CONFIG,
    SUMMARY_COLUMNS,
    SUMMARY_CSV,
    SUMMARY_XLSX,
    THREADS_ENV_VAR,
    VERSION,
)
from data import export_client_csv
from export_manager import ExportManager
from federation import FederationEngine
from models import ExperimentConfig, RoundMetrics, RunManifest
from nn import save_model
from pruning import save_mask
from settings_manager import ConfigError, SettingsManager


def threads_from_env() -> int:
    """Worker threads for client training; FEDMAP_THREADS, default 1 (sequential)."""
    raw = os.environ.get(THREADS_ENV_VAR, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"expected a positive integer, got '{raw}'", THREADS_ENV_VAR) from None
    if value < 1:
        raise ConfigError(f"expected a positive integer, got {value}", THREADS_ENV_VAR)
    return value


def bytes_to_target_sparsity(metrics: Sequence[RoundMetrics], d: int, floor_fraction: float) -> Optional[int]:
    """Cumulative bytes at the first round whose K reaches the schedule floor."""
    target = int(math.floor(d * floor_fraction + 0.5))
    for m in metrics:
        if m.remaining_params <= target:
            return m.cumulative_bytes
    return None


def _now() -> str:
    return datetime.now().isoformat(timespec="seconds")


def _check(result: tuple[bool, str]) -> None:
    ok, msg = result
    if not ok:
        raise OSError(msg)


class ExperimentRunner:
    """Executes one configured run or a grid of runs into an output directory"""

    def __init__(self, settings_manager: Optional[SettingsManager] = None, threads: Optional[int] = None):
        self.settings = settings_manager or SettingsManager()
        self.threads = threads if threads is not None else threads_from_env()
        self.logger = logging.getLogger("ExperimentRunner")
        self.last_metrics: list[RoundMetrics] = []

    def run(self, cfg: ExperimentConfig, out_dir: str | os.PathLike) -> RunManifest:
        """
        Run `cfg` and write metrics CSV (plus JSONL), mask-chain log, final model,
        final mask and manifest into `out_dir`. Files are written via temp-and-rename.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        started_at = _now()
        config_hash = self.settings.config_hash(cfg)
        self.logger.info(
            f"Run {cfg.method.value} seed={cfg.seed} hash={config_hash[:12]} -> {out}"
        )

        engine = FederationEngine(cfg, threads=self.threads)
        engine.on_status_update = lambda status: self.logger.info(status)
        metrics = engine.run()
        self.last_metrics = metrics

        outputs: dict[str, str] = {}
        rows = [m.as_row() for m in metrics]
        _check(ExportManager.export_to_csv(rows, out / METRICS_CSV, METRICS_COLUMNS))
        outputs["metrics"] = str(out / METRICS_CSV)
        if cfg.output.jsonl:
            _check(ExportManager.export_to_jsonl(rows, out / METRICS_JSONL))
            outputs["metrics_jsonl"] = str(out / METRICS_JSONL)

        _check(ExportManager.export_lines([e.as_line() for e in engine.mask_events], out / MASK_LOG))
        outputs["mask_log"] = str(out / MASK_LOG)
        if engine.final_model is not None:
            save_model(engine.final_model, out / CHECKPOINT_FILE)
            outputs["checkpoint"] = str(out / CHECKPOINT_FILE)
        if engine.final_mask is not None:
            save_mask(engine.final_mask, out / FINAL_MASK_FILE)
            outputs["final_mask"] = str(out / FINAL_MASK_FILE)
        _check(ExportManager.export_lines(
            self.settings.dump_config(cfg).splitlines(), out / RESOLVED_CONFIG
        ))
        outputs["config"] = str(out / RESOLVED_CONFIG)
        if cfg.output.export_partitions:
            export_client_csv(engine.parts, out / PARTITIONS_DIR)
            outputs["partitions"] = str(out / PARTITIONS_DIR)

        manifest = RunManifest(
            config_hash=config_hash,
            seed=cfg.seed,
            method=cfg.method.value,
            started_at=started_at,
            finished_at=_now(),
            version=VERSION,
            outputs=outputs,
            out_dir=str(out),
        )
        _check(ExportManager.export_json(manifest.to_dict(), out / MANIFEST_FILE))
        final = metrics[-1]
        self.logger.info(
            f"Run complete: acc={final.global_test_accuracy:.4f} "
            f"remaining={final.remaining_fraction:.1%} bytes={final.cumulative_bytes}"
        )
        return manifest

    def sweep(
        self,
        base: ExperimentConfig,
        grid: dict[str, list[str]],
        out_dir: str | os.PathLike,
        xlsx: bool = False,
    ) -> list[RunManifest]:
        """
        One run per grid cell under `out_dir/cell_NNN`. A failing cell is logged and
        recorded with status=failed; the sweep goes on.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cells = self.settings.grid_cells(grid)
        self.logger.info(f"Sweep of {len(cells)} cells -> {out}")

        manifests: list[RunManifest] = []
        summary: list[dict] = []
        for index, overrides in enumerate(cells):
            cell_dir = out / f"cell_{index:03d}"
            row = {
                "cell": index,
                "method": overrides.get("method", base.method.value),
                "s": overrides.get("schedule.s", str(base.schedule.s)),
                "local_epochs": overrides.get("local_epochs", str(base.local_epochs)),
                "seed": overrides.get("seed", str(base.seed)),
                "status": "ok",
                "final_accuracy": "",
                "final_remaining_fraction": "",
                "bytes_to_target_sparsity": "",
                "out_dir": str(cell_dir),
                "error": "",
            }
            started_at = _now()
            try:
                cfg = self.settings.with_overrides(base, overrides)
                manifest = self.run(cfg, cell_dir)
                final = self.last_metrics[-1]
                reached = bytes_to_target_sparsity(
                    self.last_metrics, cfg.num_weights, cfg.schedule.floor_fraction
                )
                row.update(
                    final_accuracy=final.global_test_accuracy,
                    final_remaining_fraction=final.remaining_fraction,
                    bytes_to_target_sparsity="" if reached is None else reached,
                )
            except Exception as e:
                self.logger.error(f"Sweep cell {index} ({overrides}) failed: {e}")
                manifest = RunManifest(
                    config_hash="",
                    seed=int(row["seed"]) if str(row["seed"]).isdigit() else base.seed,
                    method=str(row["method"]),
                    started_at=started_at,
                    finished_at=_now(),
                    version=VERSION,
                    status="failed",
                    error=str(e),
                    out_dir=str(cell_dir),
                )
                row.update(status="failed", error=str(e))
            manifests.append(manifest)
            summary.append(row)

        _check(ExportManager.export_to_csv(summary, out / SUMMARY_CSV, SUMMARY_COLUMNS))
        if xlsx:
            ok, msg = ExportManager.export_to_excel(summary, out / SUMMARY_XLSX, SUMMARY_COLUMNS)
            if not ok:
                self.logger.warning(f"Excel summary skipped: {msg}")
        failed = sum(1 for m in manifests if m.status != "ok")
        self.logger.info(f"Sweep finished: {len(manifests) - failed} ok, {failed} failed")
        return manifests
