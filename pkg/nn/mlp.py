"""Forward pass, exact backpropagation and SGD for the dense MLP."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import numpy.typing as npt

from nn.base import (
    Activation,
    Dataset,
    Gradients,
    Layer,
    MaskLike,
    Model,
    NumericError,
    StructuralError,
)


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    bias: bool = False,
    hidden_activation: Activation = Activation.RELU,
) -> Model:
    """
    He-normal initialised MLP, e.g. sizes=(16, 64, 32, 4).

    Hidden layers use `hidden_activation`, the output layer is softmax.
    """
    if len(sizes) < 2 or min(sizes) < 1:
        raise StructuralError(f"invalid layer sizes: {list(sizes)}")
    layers = []
    for index, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        std = np.sqrt(2.0 / fan_in)
        weight = rng.normal(0.0, std, size=(fan_in, fan_out))
        is_last = index == len(sizes) - 2
        layers.append(
            Layer(
                weight=weight,
                bias=np.zeros(fan_out, dtype=np.float64) if bias else None,
                activation=Activation.SOFTMAX if is_last else hidden_activation,
            )
        )
    return Model(layers)


@dataclass
class _ForwardCache:
    inputs: list[npt.NDArray[np.float64]]  # input to each layer
    pre_activations: list[npt.NDArray[np.float64]]
    log_probs: npt.NDArray[np.float64]


def _check_batch(model: Model, batch: Dataset) -> None:
    if not model.layers:
        raise StructuralError("model has no layers")
    if len(batch) == 0:
        raise StructuralError("empty batch")
    if batch.dim != model.layers[0].fan_in:
        raise StructuralError(
            f"batch has {batch.dim} features but input layer expects {model.layers[0].fan_in}"
        )
    if batch.num_classes != model.layers[-1].fan_out:
        raise StructuralError(
            f"batch has {batch.num_classes} classes but output layer has "
            f"{model.layers[-1].fan_out} units"
        )


def _run_layers(model: Model, features: npt.NDArray[np.float64]) -> _ForwardCache:
    inputs = []
    pre_activations = []
    a = features
    for index, layer in enumerate(model.layers):
        inputs.append(a)
        z = a @ layer.weight
        if layer.bias is not None:
            z = z + layer.bias
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite activations in layer {index}", layer_index=index)
        pre_activations.append(z)
        if layer.activation == Activation.RELU:
            a = np.maximum(z, 0.0)
        else:
            a = z
    logits = pre_activations[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return _ForwardCache(inputs=inputs, pre_activations=pre_activations, log_probs=log_probs)


def forward(model: Model, batch: Dataset) -> tuple[float, npt.NDArray[np.int64]]:
    """Mean softmax cross-entropy over the batch and per-row argmax predictions."""
    _check_batch(model, batch)
    cache = _run_layers(model, batch.features)
    rows = np.arange(len(batch))
    loss = float(-cache.log_probs[rows, batch.labels].mean())
    return loss, cache.log_probs.argmax(axis=1).astype(np.int64)


def backward(model: Model, batch: Dataset, mask: Optional[MaskLike] = None) -> Gradients:
    """
    Exact reverse-mode gradients of the mean batch loss.

    Where the mask bit is 0 the weight gradient is exactly 0.
    """
    _check_batch(model, batch)
    if mask is not None and len(mask.bits) != len(model.layers):
        raise StructuralError("mask layer count does not match model")
    cache = _run_layers(model, batch.features)
    n = len(batch)

    dz = np.exp(cache.log_probs)
    dz[np.arange(n), batch.labels] -= 1.0
    dz /= n

    weight_grads: list[npt.NDArray[np.float64]] = [np.empty(0)] * len(model.layers)
    bias_grads: list[Optional[npt.NDArray[np.float64]]] = [None] * len(model.layers)
    for index in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[index]
        gw = cache.inputs[index].T @ dz
        if mask is not None:
            bits = mask.bits[index]
            if bits.shape != gw.shape:
                raise StructuralError(f"layer {index}: mask shape {bits.shape} != {gw.shape}")
            gw = np.where(bits, gw, 0.0)
        weight_grads[index] = gw
        if layer.bias is not None:
            bias_grads[index] = dz.sum(axis=0)
        if index > 0:
            da = dz @ layer.weight.T
            previous = model.layers[index - 1]
            if previous.activation == Activation.RELU:
                dz = da * (cache.pre_activations[index - 1] > 0.0)
            else:
                dz = da
    return Gradients(weights=weight_grads, biases=bias_grads)


def sgd_step(model: Model, grads: Gradients, lr: float, weight_decay: float) -> Model:
    """w <- w - lr * (g + weight_decay * w); biases are not decayed."""
    if not lr > 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if weight_decay < 0:
        raise ValueError(f"weight_decay must be non-negative, got {weight_decay}")
    grads.check_congruent(model)

    layers = []
    for index, layer in enumerate(model.layers):
        weight = layer.weight - lr * (grads.weights[index] + weight_decay * layer.weight)
        if not np.all(np.isfinite(weight)):
            raise NumericError(f"non-finite weights after SGD step in layer {index}", layer_index=index)
        bias = None
        gb = grads.biases[index]
        if layer.bias is not None and gb is not None:
            bias = layer.bias - lr * gb
            if not np.all(np.isfinite(bias)):
                raise NumericError(f"non-finite bias after SGD step in layer {index}", layer_index=index)
        layers.append(Layer(weight=weight, bias=bias, activation=layer.activation))
    return Model(layers)
