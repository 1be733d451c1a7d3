# data.py
"""Synthetic Gaussian-blob data and client partitioning"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import numpy.typing as npt

from constants import BLOB_SEPARATION, DIRICHLET_MAX_ATTEMPTS, TRAIN_FRACTION
from models import PartitionMode, PartitionSpec
from nn.base import Dataset, StructuralError
from seed_utils import derive_rng

logger = logging.getLogger("DataPartitioner")


@dataclass
class SplitDataset:
    train: Dataset
    test: Dataset

    @property
    def num_classes(self) -> int:
        return self.train.num_classes


def _class_means(classes: int, dim: int, rng: np.random.Generator) -> npt.NDArray[np.float64]:
    """Regular simplex vertices (centered basis vectors) under a seeded rotation."""
    if dim >= classes:
        basis = np.eye(classes, dim)
        basis[:, :classes] -= 1.0 / classes
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        q = q * np.sign(np.diag(r))
        return BLOB_SEPARATION * basis @ q.T
    means = rng.standard_normal((classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    return BLOB_SEPARATION * means


def synth_blobs(classes: int, dim: int, n: int, spread: float, seed: int) -> SplitDataset:
    """
    One isotropic Gaussian cluster per class, labels assigned round-robin so the
    classes are balanced within one example. Shuffled, then split 80/20.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if dim < 1:
        raise ValueError(f"dim must be positive, got {dim}")
    if n < classes:
        raise ValueError(f"need at least one example per class ({n} < {classes})")
    if spread < 0:
        raise ValueError(f"spread must be non-negative, got {spread}")
    # both splits keep at least one example; n >= classes >= 2 makes that possible
    n_train = min(max(int(round(n * TRAIN_FRACTION)), 1), n - 1)

    rng = derive_rng(seed, "data")
    means = _class_means(classes, dim, rng)
    labels = np.arange(n, dtype=np.int64) % classes
    features = means[labels] + spread * rng.standard_normal((n, dim))
    order = rng.permutation(n)
    features, labels = features[order], labels[order]
    return SplitDataset(
        train=Dataset(features[:n_train], labels[:n_train], classes),
        test=Dataset(features[n_train:], labels[n_train:], classes),
    )


def _largest_remainder(shares: npt.NDArray[np.float64], total: int) -> npt.NDArray[np.int64]:
    exact = shares * total
    counts = np.floor(exact).astype(np.int64)
    remainder = total - int(counts.sum())
    if remainder > 0:
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def _dirichlet_indices(
    labels: npt.NDArray[np.int64], num_classes: int, spec: PartitionSpec, rng: np.random.Generator
) -> list[npt.NDArray[np.int64]]:
    client_indices: list[list[int]] = [[] for _ in range(spec.num_clients)]
    for c in range(num_classes):
        idx_c = np.flatnonzero(labels == c)
        rng.shuffle(idx_c)
        proportions = rng.dirichlet([spec.beta] * spec.num_clients)
        splits = _largest_remainder(proportions, len(idx_c))
        start = 0
        for client, take in enumerate(splits):
            client_indices[client].extend(idx_c[start:start + int(take)].tolist())
            start += int(take)
    result = []
    for indices in client_indices:
        arr = np.array(indices, dtype=np.int64)
        rng.shuffle(arr)
        result.append(arr)
    return result


def partition(dataset: Dataset, spec: PartitionSpec) -> list[Dataset]:
    """
    Split `dataset` into spec.num_clients disjoint, non-empty parts that cover it.

    iid: seeded shuffle, then near-equal chunks. dirichlet_label_skew: per-class
    client proportions drawn from Dirichlet(beta), redrawn while any client is
    empty. size_skew: client k gets a share proportional to skew_factor**k.
    """
    n = len(dataset)
    clients = spec.num_clients
    if n < clients:
        raise StructuralError(f"{n} examples cannot cover {clients} clients")
    rng = derive_rng(spec.seed, "partition")

    if spec.mode == PartitionMode.IID:
        parts = np.array_split(rng.permutation(n), clients)
    elif spec.mode == PartitionMode.SIZE_SKEW:
        shares = spec.skew_factor ** np.arange(clients, dtype=np.float64)
        counts = _largest_remainder(shares / shares.sum(), n)
        if np.any(counts == 0):
            raise StructuralError(
                f"size skew {spec.skew_factor} leaves a client empty with {n} examples"
            )
        parts = np.split(rng.permutation(n), np.cumsum(counts)[:-1])
    else:
        for attempt in range(1, DIRICHLET_MAX_ATTEMPTS + 1):
            parts = _dirichlet_indices(dataset.labels, dataset.num_classes, spec, rng)
            if all(len(p) > 0 for p in parts):
                break
            logger.debug(f"Dirichlet draw {attempt} left a client empty, redrawing")
        else:
            raise StructuralError(
                f"Dirichlet(beta={spec.beta}) left a client empty after "
                f"{DIRICHLET_MAX_ATTEMPTS} draws"
            )

    result = [dataset.subset(p) for p in parts]
    if logger.isEnabledFor(logging.DEBUG):
        for client_id, part in enumerate(result):
            logger.debug(f"client {client_id}: {len(part)} examples, labels {label_histogram(part).tolist()}")
    return result


def label_histogram(dataset: Dataset) -> npt.NDArray[np.int64]:
    return np.bincount(dataset.labels, minlength=dataset.num_classes).astype(np.int64)


def export_client_csv(parts: Sequence[Dataset], out_dir: str | os.PathLike) -> list[Path]:
    """One CSV per client: feature columns then the label."""
    from export_manager import ExportManager

    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    written = []
    for client_id, part in enumerate(parts):
        path = target / f"client_{client_id:03d}.csv"
        header = [f"x{j}" for j in range(part.dim)] + ["label"]
        rows = [
            [repr(float(v)) for v in features] + [int(label)]
            for features, label in zip(part.features, part.labels)
        ]
        ok, msg = ExportManager.write_rows(path, header, rows)
        if not ok:
            raise OSError(msg)
        written.append(path)
    logger.info(f"Exported {len(parts)} client partitions to {target}")
    return written
