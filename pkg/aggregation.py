# aggregation.py
"""Server-side fusion of client updates"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from codec import ParamDelta, SparsePayload
from nn.base import StructuralError
from pruning import PruneMask

WEIGHT_SUM_TOLERANCE = 1e-9


@dataclass
class ClientUpdate:
    """One client's upload for a round"""
    client_id: int
    payload: SparsePayload
    mask_id: str  # digest of the round's shared mask
    num_samples: int = 0


def sample_weights(num_samples: Sequence[int]) -> list[float]:
    """n_k / sum(n_j)"""
    total = sum(num_samples)
    if total <= 0 or any(n < 0 for n in num_samples):
        raise StructuralError("sample counts must be non-negative with a positive total")
    return [n / total for n in num_samples]


def fedavg_aggregate(
    updates: Sequence[ClientUpdate],
    weights: Optional[Sequence[float]] = None,
) -> SparsePayload:
    """
    Elementwise mean of the payloads, or weighted sum when `weights` is given.

    Summation runs in ascending client_id order so the result does not depend on
    the order updates arrived in.
    """
    if not updates:
        raise StructuralError("cannot aggregate an empty update list")
    if weights is not None:
        if len(weights) != len(updates):
            raise StructuralError(f"{len(weights)} weights for {len(updates)} updates")
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise StructuralError("aggregation weights must be non-negative and sum to 1")

    order = sorted(range(len(updates)), key=lambda i: updates[i].client_id)
    first = updates[order[0]].payload
    for i in order:
        p = updates[i].payload
        if len(p) != len(first) or p.num_biases != first.num_biases:
            raise StructuralError(
                f"client {updates[i].client_id} payload length {len(p)}+{p.num_biases} "
                f"!= {len(first)}+{first.num_biases}"
            )

    values = np.zeros(len(first), dtype=np.float64)
    bias_values = np.zeros(first.num_biases, dtype=np.float64)
    if weights is None:
        for i in order:
            values += updates[i].payload.values
            bias_values += updates[i].payload.bias_values
        n = float(len(updates))
        return SparsePayload(values / n, bias_values / n)

    for i in order:
        values += weights[i] * updates[i].payload.values
        bias_values += weights[i] * updates[i].payload.bias_values
    return SparsePayload(values, bias_values)


def masked_aggregate(deltas: Sequence[ParamDelta], supports: Sequence[PruneMask]) -> ParamDelta:
    """
    Per position p: sum of delta_n[p] over clients whose mask bit is set, divided by
    the number of such clients. Positions outside every support become 0.

    The denominator counts mask bits, not nonzero deltas: a live weight whose delta
    happens to be 0 still counts. Biases are dense and averaged over all clients.
    """
    if not deltas:
        raise StructuralError("cannot aggregate an empty delta list")
    if len(deltas) != len(supports):
        raise StructuralError(f"{len(deltas)} deltas but {len(supports)} supports")
    shapes = deltas[0].shapes
    for delta, support in zip(deltas, supports):
        if delta.shapes != shapes or support.shapes != shapes:
            raise StructuralError("deltas and supports must all share one shape")
        if delta.bias_layout != deltas[0].bias_layout:
            raise StructuralError("deltas disagree on bias layout")

    weights = []
    for layer in range(len(shapes)):
        numerator = np.zeros(shapes[layer], dtype=np.float64)
        count = np.zeros(shapes[layer], dtype=np.float64)
        for delta, support in zip(deltas, supports):
            bits = support.bits[layer]
            numerator += np.where(bits, delta.weights[layer], 0.0)
            count += bits
        safe = np.where(count > 0, count, 1.0)
        weights.append(np.where(count > 0, numerator / safe, 0.0))

    biases = []
    n = float(len(deltas))
    for layer in range(len(shapes)):
        if deltas[0].biases[layer] is None:
            biases.append(None)
            continue
        total = np.zeros_like(deltas[0].biases[layer])
        for delta in deltas:
            total += delta.biases[layer]
        biases.append(total / n)
    return ParamDelta(weights, biases)
