# constants.py
"""Centralized constants for the simulator"""

VERSION = "fedmap-sim 1.0.0"

# Training defaults (SGD, lr 0.01, weight decay 5e-4)
DEFAULT_LR = 0.01
DEFAULT_WEIGHT_DECAY = 5e-4
DEFAULT_BATCH_SIZE = 32
DEFAULT_LOCAL_EPOCHS = 4

# Federation
DEFAULT_CLIENTS = 8
DEFAULT_ROUNDS = 120
DEFAULT_SEED = 0

# Pruning schedule
DEFAULT_PRUNE_INTERVAL = 30
DEFAULT_PRUNE_FRACTION = 0.25
DEFAULT_FLOOR_FRACTION = 0.05

# Model / data
DEFAULT_HIDDEN = (64, 32)
DEFAULT_CLASSES = 4
DEFAULT_DIM = 16
DEFAULT_SAMPLES = 4000
DEFAULT_SPREAD = 1.0
TRAIN_FRACTION = 0.8
BLOB_SEPARATION = 4.0

# Partitioning
DEFAULT_DIRICHLET_BETA = 0.5
DEFAULT_SKEW_FACTOR = 1.5
DIRICHLET_MAX_ATTEMPTS = 100

# FedDR
DEFAULT_FEDDR_ALPHA = 0.95
DEFAULT_FEDDR_ETA = 1000.0
DEFAULT_POST_ALPHA = 1.75
DEFAULT_POST_ETA = 10.0
DEFAULT_SWITCH_EVENT = 1

# Communication
DEFAULT_BITS_PER_PARAM = 32
SUPPORTED_BITS_PER_PARAM = (16, 32, 64)

# Binary formats
CHECKPOINT_MAGIC = b"FMAP1"
MASK_MAGIC = b"FMSK1"
PAYLOAD_MAGIC = b"FPAY1"

# Environment
THREADS_ENV_VAR = "FEDMAP_THREADS"

# Output files
METRICS_CSV = "metrics.csv"
METRICS_JSONL = "metrics.jsonl"
MASK_LOG = "masks.log"
CHECKPOINT_FILE = "final_model.fmap"
FINAL_MASK_FILE = "final_mask.fmsk"
MANIFEST_FILE = "manifest.json"
SUMMARY_CSV = "summary.csv"
SUMMARY_XLSX = "summary.xlsx"
LOG_FILE = "fedmap.log"
RESOLVED_CONFIG = "config.resolved.cfg"
PARTITIONS_DIR = "partitions"

METRICS_COLUMNS = [
    "round",
    "global_test_accuracy",
    "mean_client_accuracy",
    "remaining_params",
    "remaining_fraction",
    "uplink_bytes_per_client",
    "downlink_bytes",
    "cumulative_bytes",
    "prune_event",
]

SUMMARY_COLUMNS = [
    "cell",
    "method",
    "s",
    "local_epochs",
    "seed",
    "status",
    "final_accuracy",
    "final_remaining_fraction",
    "bytes_to_target_sparsity",
    "out_dir",
    "error",
]

# CLI exit codes
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3
