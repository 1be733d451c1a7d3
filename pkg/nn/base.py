"""Core value types of the dense MLP engine."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol, Sequence

import numpy as np
import numpy.typing as npt

# Row-major 64-bit tensor; shape (fan_in, fan_out) for weights, (fan_out,) for biases.
WeightTensor = npt.NDArray[np.float64]


class StructuralError(ValueError):
    """Raised on shape, length or cardinality violations."""


class WireFormatError(StructuralError):
    """Raised on bad magic or truncated checkpoint, mask and payload bytes."""


class NumericError(ArithmeticError):
    """Raised when activations or parameters become non-finite."""

    def __init__(self, message: str, layer_index: Optional[int] = None):
        super().__init__(message)
        self.layer_index = layer_index


class Activation(Enum):
    RELU = "relu"
    IDENTITY = "identity"
    SOFTMAX = "softmax"  # output layer only, fused with cross-entropy


class MaskLike(Protocol):
    """Anything exposing per-layer boolean arrays shaped like the weights."""

    bits: list[npt.NDArray[np.bool_]]


@dataclass
class Layer:
    """One fully connected layer"""
    weight: WeightTensor
    bias: Optional[WeightTensor] = None
    activation: Activation = Activation.RELU

    @property
    def fan_in(self) -> int:
        return int(self.weight.shape[0])

    @property
    def fan_out(self) -> int:
        return int(self.weight.shape[1])

    def copy(self) -> "Layer":
        return Layer(
            weight=self.weight.copy(),
            bias=None if self.bias is None else self.bias.copy(),
            activation=self.activation,
        )


@dataclass
class Model:
    """
    Ordered stack of dense layers.

    Only weights are prunable; `num_weights` is the parameter count d used by the
    schedule, pruning and the codec. Biases are excluded from d.
    """
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        validate_layers(self.layers)

    @property
    def num_weights(self) -> int:
        return sum(int(layer.weight.size) for layer in self.layers)

    @property
    def num_biases(self) -> int:
        return sum(int(layer.bias.size) for layer in self.layers if layer.bias is not None)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [(layer.fan_in, layer.fan_out) for layer in self.layers]

    @property
    def weights(self) -> list[WeightTensor]:
        return [layer.weight for layer in self.layers]

    @property
    def biases(self) -> list[Optional[WeightTensor]]:
        return [layer.bias for layer in self.layers]

    def copy(self) -> "Model":
        return Model([layer.copy() for layer in self.layers])

    def with_weights(
        self,
        weights: Sequence[WeightTensor],
        biases: Optional[Sequence[Optional[WeightTensor]]] = None,
    ) -> "Model":
        """New model with the same activations and the given parameter arrays."""
        if len(weights) != len(self.layers):
            raise StructuralError(
                f"expected {len(self.layers)} weight tensors, got {len(weights)}"
            )
        new_biases = biases if biases is not None else self.biases
        layers = []
        for index, (layer, w, b) in enumerate(zip(self.layers, weights, new_biases)):
            if w.shape != layer.weight.shape:
                raise StructuralError(
                    f"layer {index}: weight shape {w.shape} != {layer.weight.shape}"
                )
            layers.append(
                Layer(
                    weight=np.array(w, dtype=np.float64),
                    bias=None if b is None else np.array(b, dtype=np.float64),
                    activation=layer.activation,
                )
            )
        return Model(layers)

    def flat_weights(self) -> WeightTensor:
        if not self.layers:
            return np.zeros(0, dtype=np.float64)
        return np.concatenate([w.ravel() for w in self.weights])

    def equals(self, other: "Model") -> bool:
        """Bitwise equality of every parameter."""
        if self.shapes != other.shapes:
            return False
        for a, b in zip(self.layers, other.layers):
            if a.activation != b.activation:
                return False
            if not np.array_equal(a.weight, b.weight):
                return False
            if (a.bias is None) != (b.bias is None):
                return False
            if a.bias is not None and b.bias is not None and not np.array_equal(a.bias, b.bias):
                return False
        return True


@dataclass
class Gradients:
    """Per-parameter gradients, congruent with the Model they came from."""
    weights: list[WeightTensor]
    biases: list[Optional[WeightTensor]]

    @classmethod
    def zeros_like(cls, model: Model) -> "Gradients":
        return cls(
            weights=[np.zeros_like(w) for w in model.weights],
            biases=[None if b is None else np.zeros_like(b) for b in model.biases],
        )

    def check_congruent(self, model: Model) -> None:
        if len(self.weights) != len(model.layers):
            raise StructuralError("gradient layer count does not match model")
        for index, (g, layer) in enumerate(zip(self.weights, model.layers)):
            if g.shape != layer.weight.shape:
                raise StructuralError(
                    f"layer {index}: gradient shape {g.shape} != {layer.weight.shape}"
                )
            gb = self.biases[index]
            if (gb is None) != (layer.bias is None):
                raise StructuralError(f"layer {index}: bias gradient presence mismatch")
            if gb is not None and layer.bias is not None and gb.shape != layer.bias.shape:
                raise StructuralError(f"layer {index}: bias gradient shape mismatch")


@dataclass
class Dataset:
    """Feature matrix plus integer class labels"""
    features: npt.NDArray[np.float64]
    labels: npt.NDArray[np.int64]
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise StructuralError("features must be a 2-D matrix")
        if self.features.shape[0] != self.labels.shape[0]:
            raise StructuralError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise StructuralError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: npt.ArrayLike) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


def validate_layers(layers: Sequence[Layer]) -> None:
    for index, layer in enumerate(layers):
        if layer.weight.ndim != 2 or min(layer.weight.shape) < 1:
            raise StructuralError(f"layer {index}: weight must be a non-empty 2-D tensor")
        if layer.bias is not None and layer.bias.shape != (layer.fan_out,):
            raise StructuralError(
                f"layer {index}: bias shape {layer.bias.shape} != ({layer.fan_out},)"
            )
        if index > 0 and layers[index - 1].fan_out != layer.fan_in:
            raise StructuralError(
                f"layer {index}: fan_in {layer.fan_in} does not match previous fan_out "
                f"{layers[index - 1].fan_out}"
            )
        is_last = index == len(layers) - 1
        if layer.activation == Activation.SOFTMAX and not is_last:
            raise StructuralError(f"layer {index}: softmax is only allowed at the output")
        if is_last and layer.activation != Activation.SOFTMAX:
            raise StructuralError("output layer must use softmax activation")
