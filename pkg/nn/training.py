"""Mask-respecting local training and evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from constants import DEFAULT_BATCH_SIZE, DEFAULT_LR, DEFAULT_WEIGHT_DECAY
from nn.base import Dataset, Gradients, MaskLike, Model, StructuralError
from nn.mlp import backward, forward, sgd_step


@dataclass(frozen=True)
class TrainHyper:
    lr: float = DEFAULT_LR
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    batch_size: int = DEFAULT_BATCH_SIZE


class ProximalTerm(Protocol):
    """Extra gradient added to every minibatch gradient (e.g. a quadratic pull)."""

    def gradient(self, model: Model) -> Gradients:
        ...


def check_mask_compliance(model: Model, mask: MaskLike) -> None:
    if len(mask.bits) != len(model.layers):
        raise StructuralError("mask layer count does not match model")
    for index, (bits, weight) in enumerate(zip(mask.bits, model.weights)):
        if bits.shape != weight.shape:
            raise StructuralError(f"layer {index}: mask shape {bits.shape} != {weight.shape}")
        if np.any(weight[~bits] != 0.0):
            raise StructuralError(f"layer {index}: model has nonzero weights outside the mask")


def _masked_sum(grads: Gradients, extra: Gradients, mask: MaskLike) -> Gradients:
    weights = [
        np.where(bits, g + e, 0.0) for g, e, bits in zip(grads.weights, extra.weights, mask.bits)
    ]
    biases = [
        None if g is None or e is None else g + e for g, e in zip(grads.biases, extra.biases)
    ]
    return Gradients(weights=weights, biases=biases)


def train_local(
    model: Model,
    mask: MaskLike,
    data: Dataset,
    epochs: int,
    hyper: TrainHyper,
    rng: np.random.Generator,
    prox: Optional[ProximalTerm] = None,
) -> Model:
    """
    Run `epochs` full passes of minibatch SGD with masked gradients.

    Each epoch visits the data in a fresh permutation drawn from `rng`. Pruned
    positions stay exactly 0.
    """
    if len(data) == 0:
        raise StructuralError("cannot train on an empty dataset")
    if epochs < 0:
        raise ValueError(f"epochs must be non-negative, got {epochs}")
    if hyper.batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {hyper.batch_size}")
    check_mask_compliance(model, mask)

    current = model.copy()
    n = len(data)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            batch = data.subset(order[start:start + hyper.batch_size])
            grads = backward(current, batch, mask)
            if prox is not None:
                grads = _masked_sum(grads, prox.gradient(current), mask)
            current = sgd_step(current, grads, hyper.lr, hyper.weight_decay)
    return current


def evaluate(model: Model, data: Dataset) -> tuple[float, float]:
    """Return (accuracy, mean loss) over the whole dataset."""
    if len(data) == 0:
        raise StructuralError("cannot evaluate on an empty dataset")
    loss, predictions = forward(model, data)
    correct = int(np.count_nonzero(predictions == data.labels))
    return correct / len(data), loss
