# settings_manager.py
"""Experiment configuration: key=value (or JSON) files, validation and canonical dumps"""

import hashlib
import itertools
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Type, TypeVar

from constants import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_BITS_PER_PARAM,
    DEFAULT_CLASSES,
    DEFAULT_CLIENTS,
    DEFAULT_DIM,
    DEFAULT_DIRICHLET_BETA,
    DEFAULT_FEDDR_ALPHA,
    DEFAULT_FEDDR_ETA,
    DEFAULT_FLOOR_FRACTION,
    DEFAULT_HIDDEN,
    DEFAULT_LOCAL_EPOCHS,
    DEFAULT_LR,
    DEFAULT_POST_ALPHA,
    DEFAULT_POST_ETA,
    DEFAULT_PRUNE_FRACTION,
    DEFAULT_PRUNE_INTERVAL,
    DEFAULT_ROUNDS,
    DEFAULT_SAMPLES,
    DEFAULT_SEED,
    DEFAULT_SKEW_FACTOR,
    DEFAULT_SPREAD,
    DEFAULT_SWITCH_EVENT,
    DEFAULT_WEIGHT_DECAY,
    SUPPORTED_BITS_PER_PARAM,
)
from models import (
    DataSettings,
    ExperimentConfig,
    FedDRSettings,
    HybridConfig,
    Method,
    ModelSettings,
    OutputSettings,
    PartitionMode,
    PartitionSpec,
    ScheduleKind,
    ScheduleSpec,
)

E = TypeVar("E", bound=Enum)

# Recognised keys and their defaults, as they appear in a config file.
DEFAULTS: dict[str, str] = {
    "method": Method.FEDMAP.value,
    "clients": str(DEFAULT_CLIENTS),
    "rounds": str(DEFAULT_ROUNDS),
    "local_epochs": str(DEFAULT_LOCAL_EPOCHS),
    "lr": repr(DEFAULT_LR),
    "weight_decay": repr(DEFAULT_WEIGHT_DECAY),
    "batch_size": str(DEFAULT_BATCH_SIZE),
    "seed": str(DEFAULT_SEED),
    "bits_per_param": str(DEFAULT_BITS_PER_PARAM),
    "schedule.kind": ScheduleKind.STEPWISE.value,
    "schedule.s": str(DEFAULT_PRUNE_INTERVAL),
    "schedule.p_g": repr(DEFAULT_PRUNE_FRACTION),
    "schedule.floor": repr(DEFAULT_FLOOR_FRACTION),
    "model.hidden": ",".join(str(h) for h in DEFAULT_HIDDEN),
    "model.bias": "false",
    "data.classes": str(DEFAULT_CLASSES),
    "data.dim": str(DEFAULT_DIM),
    "data.samples": str(DEFAULT_SAMPLES),
    "data.spread": repr(DEFAULT_SPREAD),
    "partition.mode": PartitionMode.IID.value,
    "partition.beta": repr(DEFAULT_DIRICHLET_BETA),
    "partition.skew_factor": repr(DEFAULT_SKEW_FACTOR),
    "feddr.enabled": "false",
    "feddr.alpha": repr(DEFAULT_FEDDR_ALPHA),
    "feddr.eta": repr(DEFAULT_FEDDR_ETA),
    "feddr.config": HybridConfig.FEDMAP_FEDDR.value,
    "feddr.switch_event": str(DEFAULT_SWITCH_EVENT),
    "feddr.post_alpha": repr(DEFAULT_POST_ALPHA),
    "feddr.post_eta": repr(DEFAULT_POST_ETA),
    "output.jsonl": "true",
    "output.export_partitions": "false",
}

# model.hidden is itself a comma list, so grid alternatives for it use ';'
LIST_VALUED_KEYS = ("model.hidden",)

RawConfig = dict[str, tuple[str, Optional[int]]]


class ConfigError(ValueError):
    """Invalid configuration; names the offending key and, for parse errors, the line."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        location = []
        if line is not None:
            location.append(f"line {line}")
        if key is not None:
            location.append(f"'{key}'")
        prefix = " ".join(location) + ": " if location else ""
        super().__init__(f"{prefix}{message}")


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _flatten(data: Any, prefix: str = "") -> dict[str, str]:
    if not isinstance(data, dict):
        raise ConfigError("JSON config must be an object", key=prefix.rstrip(".") or None)
    flat: dict[str, str] = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = _format_value(value)
    return flat


class SettingsManager:
    """Loads, validates and canonicalizes experiment configurations"""

    def __init__(self):
        self.logger = logging.getLogger("SettingsManager")

    # ------------------------------------------------------------------ parsing

    def parse_text(self, text: str) -> RawConfig:
        """`key = value` lines; '#' starts a comment line; later duplicates are errors."""
        raw: RawConfig = {}
        for line_no, line in enumerate(text.splitlines(), 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError("expected 'key = value'", line=line_no)
            key, value = (part.strip() for part in stripped.split("=", 1))
            if not key:
                raise ConfigError("missing key before '='", line=line_no)
            if key in raw:
                raise ConfigError(f"duplicate key (first set on line {raw[key][1]})", key, line_no)
            raw[key] = (value, line_no)
        return raw

    def read_raw(self, path: str | Path) -> RawConfig:
        source = Path(path)
        try:
            text = source.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {source}: {e.strerror or e}") from e
        if source.suffix.lower() == ".json":
            try:
                data = json.loads(text)
            except json.JSONDecodeError as e:
                raise ConfigError(f"invalid JSON: {e.msg}", line=e.lineno) from e
            return {k: (v, None) for k, v in _flatten(data).items()}
        return self.parse_text(text)

    def load_config(self, path: str | Path) -> ExperimentConfig:
        """Read, apply defaults, validate. Raises ConfigError."""
        cfg = self.build_config(self.read_raw(path))
        self.logger.info(f"Loaded config {path} (hash {self.config_hash(cfg)[:12]})")
        return cfg

    # --------------------------------------------------------------- validation

    @staticmethod
    def _value(raw: RawConfig, key: str) -> tuple[str, Optional[int]]:
        if key in raw:
            return raw[key]
        return DEFAULTS[key], None

    def _as_int(
        self, raw: RawConfig, key: str, *, min_value: int, max_value: Optional[int] = None
    ) -> int:
        value, line = self._value(raw, key)
        try:
            parsed = int(value)
        except ValueError:
            raise ConfigError(f"expected an integer, got '{value}'", key, line) from None
        if parsed < min_value or (max_value is not None and parsed > max_value):
            bound = f"[{min_value}, {max_value}]" if max_value is not None else f">= {min_value}"
            raise ConfigError(f"must be {bound}, got {parsed}", key, line)
        return parsed

    def _as_float(
        self,
        raw: RawConfig,
        key: str,
        *,
        low: float,
        high: Optional[float] = None,
        low_inclusive: bool = False,
        high_inclusive: bool = True,
    ) -> float:
        value, line = self._value(raw, key)
        try:
            parsed = float(value)
        except ValueError:
            raise ConfigError(f"expected a number, got '{value}'", key, line) from None
        too_low = parsed < low if low_inclusive else parsed <= low
        too_high = high is not None and (parsed > high if high_inclusive else parsed >= high)
        if too_low or too_high or parsed != parsed:
            lo = "[" if low_inclusive else "("
            hi = "]" if high_inclusive else ")"
            bound = f"{lo}{low}, {high if high is not None else 'inf'}{hi}"
            raise ConfigError(f"must lie in {bound}, got {value}", key, line)
        return parsed

    def _as_bool(self, raw: RawConfig, key: str) -> bool:
        value, line = self._value(raw, key)
        lowered = value.strip().lower()
        if lowered in ("true", "1", "yes", "y", "on"):
            return True
        if lowered in ("false", "0", "no", "n", "off"):
            return False
        raise ConfigError(f"expected true/false, got '{value}'", key, line)

    def _as_choice(self, raw: RawConfig, key: str, enum_type: Type[E]) -> E:
        value, line = self._value(raw, key)
        try:
            return enum_type(value.strip().lower())
        except ValueError:
            valid = ", ".join(str(e.value) for e in enum_type)
            raise ConfigError(f"unknown value '{value}' (expected one of: {valid})", key, line) from None

    def _as_int_list(self, raw: RawConfig, key: str, *, min_value: int) -> tuple[int, ...]:
        value, line = self._value(raw, key)
        items = [item.strip() for item in value.split(",") if item.strip()]
        try:
            parsed = tuple(int(item) for item in items)
        except ValueError:
            raise ConfigError(f"expected a comma-separated integer list, got '{value}'", key, line) from None
        if any(p < min_value for p in parsed):
            raise ConfigError(f"every entry must be >= {min_value}", key, line)
        return parsed

    def build_config(self, raw: RawConfig) -> ExperimentConfig:
        for key, (_, line) in raw.items():
            if key not in DEFAULTS:
                raise ConfigError("unknown configuration key", key, line)

        bits = self._as_int(raw, "bits_per_param", min_value=1)
        if bits not in SUPPORTED_BITS_PER_PARAM:
            raise ConfigError(
                f"must be one of {SUPPORTED_BITS_PER_PARAM}, got {bits}",
                "bits_per_param",
                self._value(raw, "bits_per_param")[1],
            )
        classes = self._as_int(raw, "data.classes", min_value=2)
        samples = self._as_int(raw, "data.samples", min_value=classes)
        clients = self._as_int(raw, "clients", min_value=1)
        seed = self._as_int(raw, "seed", min_value=0, max_value=2**64 - 1)
        method = self._as_choice(raw, "method", Method)

        feddr = FedDRSettings(
            enabled=self._as_bool(raw, "feddr.enabled"),
            alpha=self._as_float(raw, "feddr.alpha", low=0.0),
            eta=self._as_float(raw, "feddr.eta", low=0.0),
            config=self._as_choice(raw, "feddr.config", HybridConfig),
            switch_event=self._as_int(raw, "feddr.switch_event", min_value=1),
            post_alpha=self._as_float(raw, "feddr.post_alpha", low=0.0),
            post_eta=self._as_float(raw, "feddr.post_eta", low=0.0),
        )
        if feddr.enabled and method == Method.FEDERATED_PRUNING:
            raise ConfigError(
                "FedDR cannot be combined with method=federated_pruning",
                "feddr.enabled",
                self._value(raw, "feddr.enabled")[1],
            )

        return ExperimentConfig(
            method=method,
            clients=clients,
            rounds=self._as_int(raw, "rounds", min_value=1),
            local_epochs=self._as_int(raw, "local_epochs", min_value=0),
            lr=self._as_float(raw, "lr", low=0.0),
            weight_decay=self._as_float(raw, "weight_decay", low=0.0, low_inclusive=True),
            batch_size=self._as_int(raw, "batch_size", min_value=1),
            seed=seed,
            bits_per_param=bits,
            schedule=ScheduleSpec(
                kind=self._as_choice(raw, "schedule.kind", ScheduleKind),
                s=self._as_int(raw, "schedule.s", min_value=1),
                p_g=self._as_float(raw, "schedule.p_g", low=0.0, high=1.0, high_inclusive=False),
                floor_fraction=self._as_float(raw, "schedule.floor", low=0.0, high=1.0),
                T=self._as_int(raw, "rounds", min_value=1),
            ),
            model=ModelSettings(
                hidden=self._as_int_list(raw, "model.hidden", min_value=1),
                bias=self._as_bool(raw, "model.bias"),
            ),
            data=DataSettings(
                classes=classes,
                dim=self._as_int(raw, "data.dim", min_value=1),
                samples=samples,
                spread=self._as_float(raw, "data.spread", low=0.0, low_inclusive=True),
            ),
            partition=PartitionSpec(
                mode=self._as_choice(raw, "partition.mode", PartitionMode),
                num_clients=clients,
                seed=seed,
                beta=self._as_float(raw, "partition.beta", low=0.0),
                skew_factor=self._as_float(raw, "partition.skew_factor", low=0.0),
            ),
            feddr=feddr,
            output=OutputSettings(
                jsonl=self._as_bool(raw, "output.jsonl"),
                export_partitions=self._as_bool(raw, "output.export_partitions"),
            ),
        )

    # ------------------------------------------------------------- canonical io

    @staticmethod
    def to_mapping(cfg: ExperimentConfig) -> dict[str, str]:
        """Every key with its canonical string value."""
        values: dict[str, Any] = {
            "method": cfg.method.value,
            "clients": cfg.clients,
            "rounds": cfg.rounds,
            "local_epochs": cfg.local_epochs,
            "lr": float(cfg.lr),
            "weight_decay": float(cfg.weight_decay),
            "batch_size": cfg.batch_size,
            "seed": cfg.seed,
            "bits_per_param": cfg.bits_per_param,
            "schedule.kind": cfg.schedule.kind.value,
            "schedule.s": cfg.schedule.s,
            "schedule.p_g": float(cfg.schedule.p_g),
            "schedule.floor": float(cfg.schedule.floor_fraction),
            "model.hidden": list(cfg.model.hidden),
            "model.bias": cfg.model.bias,
            "data.classes": cfg.data.classes,
            "data.dim": cfg.data.dim,
            "data.samples": cfg.data.samples,
            "data.spread": float(cfg.data.spread),
            "partition.mode": cfg.partition.mode.value,
            "partition.beta": float(cfg.partition.beta),
            "partition.skew_factor": float(cfg.partition.skew_factor),
            "feddr.enabled": cfg.feddr.enabled,
            "feddr.alpha": float(cfg.feddr.alpha),
            "feddr.eta": float(cfg.feddr.eta),
            "feddr.config": cfg.feddr.config.value,
            "feddr.switch_event": cfg.feddr.switch_event,
            "feddr.post_alpha": float(cfg.feddr.post_alpha),
            "feddr.post_eta": float(cfg.feddr.post_eta),
            "output.jsonl": cfg.output.jsonl,
            "output.export_partitions": cfg.output.export_partitions,
        }
        return {key: _format_value(values[key]) for key in sorted(values)}

    def dump_config(self, cfg: ExperimentConfig) -> str:
        """Canonical text: every key, sorted, one `key = value` per line."""
        return "".join(f"{key} = {value}\n" for key, value in self.to_mapping(cfg).items())

    def config_hash(self, cfg: ExperimentConfig) -> str:
        return hashlib.sha256(self.dump_config(cfg).encode("utf-8")).hexdigest()

    def with_overrides(self, cfg: ExperimentConfig, overrides: dict[str, str]) -> ExperimentConfig:
        raw: RawConfig = {k: (v, None) for k, v in self.to_mapping(cfg).items()}
        for key, value in overrides.items():
            raw[key] = (value, None)
        return self.build_config(raw)

    def with_seed(self, cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
        if seed < 0 or seed > 2**64 - 1:
            raise ConfigError(f"must be a 64-bit unsigned integer, got {seed}", "seed")
        return cfg.with_seed(seed)

    # -------------------------------------------------------------------- grids

    def load_grid(self, path: str | Path) -> dict[str, list[str]]:
        """
        Sweep grid: same syntax as a config, each value a comma-separated list of
        alternatives (';'-separated for list-valued keys such as model.hidden).
        """
        grid: dict[str, list[str]] = {}
        for key, (value, line) in self.read_raw(path).items():
            if key not in DEFAULTS:
                raise ConfigError("unknown configuration key", key, line)
            sep = ";" if key in LIST_VALUED_KEYS else ","
            options = [v.strip() for v in value.split(sep) if v.strip()]
            if not options:
                raise ConfigError("grid entry has no values", key, line)
            grid[key] = options
        if not grid:
            raise ConfigError("grid is empty")
        return grid

    @staticmethod
    def grid_cells(grid: dict[str, list[str]]) -> list[dict[str, str]]:
        """Cartesian product in grid-file key order; the last key varies fastest."""
        keys = list(grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
