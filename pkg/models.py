# models.py
"""Configuration and result models for the FedMap simulator"""

from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Optional

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


class ScheduleKind(Enum):
    STEPWISE = "stepwise"
    CONTINUOUS = "continuous"


class Method(Enum):
    FEDMAP = "fedmap"
    FEDAVG_DENSE = "fedavg_dense"
    FEDERATED_PRUNING = "federated_pruning"


class PartitionMode(Enum):
    IID = "iid"
    DIRICHLET_LABEL_SKEW = "dirichlet_label_skew"
    SIZE_SKEW = "size_skew"


class HybridConfig(Enum):
    """FedDR variants: plain, with pruning, and the three switching hybrids"""
    FEDDR = "feddr"                # FedDR, no pruning
    FEDMAP_FEDDR = "fedmap-feddr"  # FedDR with FedMap pruning
    C1 = "c1"                      # switch to plain FedMap/FedAvg at the switch event
    C2 = "c2"                      # switch alpha/eta to post-switch values
    C3 = "c3"                      # C2 plus sample-size weighted aggregation


class Direction(Enum):
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class ScheduleSpec:
    """Parameters of K_t = Schedule(d, t); d and T are filled in once the model exists"""
    kind: ScheduleKind = ScheduleKind.STEPWISE
    s: int = DEFAULT_PRUNE_INTERVAL
    p_g: float = DEFAULT_PRUNE_FRACTION
    floor_fraction: float = DEFAULT_FLOOR_FRACTION
    d: int = 0
    T: int = DEFAULT_ROUNDS

    def __post_init__(self):
        if self.s < 1:
            raise ValueError(f"schedule.s must be >= 1, got {self.s}")
        if not 0.0 < self.p_g < 1.0:
            raise ValueError(f"schedule.p_g must lie in (0, 1), got {self.p_g}")
        if not 0.0 < self.floor_fraction <= 1.0:
            raise ValueError(f"schedule.floor must lie in (0, 1], got {self.floor_fraction}")
        if self.d < 0 or self.T < 0:
            raise ValueError("schedule d and T must be non-negative")

    def resolved(self, d: int, T: int) -> "ScheduleSpec":
        return replace(self, d=d, T=T)


@dataclass(frozen=True)
class PartitionSpec:
    mode: PartitionMode = PartitionMode.IID
    num_clients: int = DEFAULT_CLIENTS
    seed: int = DEFAULT_SEED
    beta: float = DEFAULT_DIRICHLET_BETA
    skew_factor: float = DEFAULT_SKEW_FACTOR

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("partition needs at least one client")
        if not self.beta > 0:
            raise ValueError(f"partition.beta must be positive, got {self.beta}")
        if not self.skew_factor > 0:
            raise ValueError(f"partition.skew_factor must be positive, got {self.skew_factor}")


@dataclass(frozen=True)
class FedDRSettings:
    enabled: bool = False
    alpha: float = DEFAULT_FEDDR_ALPHA
    eta: float = DEFAULT_FEDDR_ETA
    config: HybridConfig = HybridConfig.FEDMAP_FEDDR
    switch_event: int = DEFAULT_SWITCH_EVENT
    post_alpha: float = DEFAULT_POST_ALPHA
    post_eta: float = DEFAULT_POST_ETA


@dataclass(frozen=True)
class DataSettings:
    classes: int = DEFAULT_CLASSES
    dim: int = DEFAULT_DIM
    samples: int = DEFAULT_SAMPLES
    spread: float = DEFAULT_SPREAD


@dataclass(frozen=True)
class ModelSettings:
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    bias: bool = False


@dataclass(frozen=True)
class OutputSettings:
    jsonl: bool = True
    export_partitions: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    """One fully validated experiment"""
    method: Method = Method.FEDMAP
    clients: int = DEFAULT_CLIENTS
    rounds: int = DEFAULT_ROUNDS
    local_epochs: int = DEFAULT_LOCAL_EPOCHS
    lr: float = DEFAULT_LR
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = DEFAULT_SEED
    bits_per_param: int = DEFAULT_BITS_PER_PARAM
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    model: ModelSettings = field(default_factory=ModelSettings)
    data: DataSettings = field(default_factory=DataSettings)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    feddr: FedDRSettings = field(default_factory=FedDRSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    def __post_init__(self):
        if self.clients < 1:
            raise ValueError("clients must be >= 1")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be >= 0")
        if self.bits_per_param not in SUPPORTED_BITS_PER_PARAM:
            raise ValueError(f"bits_per_param must be one of {SUPPORTED_BITS_PER_PARAM}")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.data.dim, *self.model.hidden, self.data.classes)

    @property
    def num_weights(self) -> int:
        """d, the prunable parameter count of the configured MLP."""
        sizes = self.layer_sizes
        return sum(a * b for a, b in zip(sizes, sizes[1:]))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, partition=replace(self.partition, seed=seed))


@dataclass
class RoundMetrics:
    """Per-round record written to the metrics CSV"""
    round: int
    global_test_accuracy: float
    mean_client_accuracy: float
    remaining_params: int
    remaining_fraction: float
    uplink_bytes_per_client: int
    downlink_bytes: int
    cumulative_bytes: int
    prune_event: bool

    def as_row(self) -> dict:
        row = asdict(self)
        row["prune_event"] = int(self.prune_event)
        return row


@dataclass
class MaskEvent:
    """One entry of the mask-chain log"""
    round: int
    remaining_params: int
    digest: str
    nested: bool
    reactivated: int = 0

    def as_line(self) -> str:
        return (
            f"round={self.round} K={self.remaining_params} sha256={self.digest} "
            f"nested={'true' if self.nested else 'false'} reactivated={self.reactivated}"
        )


@dataclass
class RunManifest:
    """Provenance of one run"""
    config_hash: str
    seed: int
    method: str
    started_at: str
    finished_at: str
    version: str
    status: str = "ok"
    outputs: dict[str, str] = field(default_factory=dict)
    error: Optional[str] = None
    out_dir: str = ""

    def to_dict(self) -> dict:
        return asdict(self)
