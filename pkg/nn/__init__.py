# nn/__init__.py
from .base import (
    Activation,
    Dataset,
    Gradients,
    Layer,
    MaskLike,
    Model,
    NumericError,
    StructuralError,
    WeightTensor,
    WireFormatError,
)
from .mlp import backward, forward, init_mlp, sgd_step
from .training import ProximalTerm, TrainHyper, evaluate, train_local
from .checkpoint import decode_model, encode_model, load_model, save_model

__all__ = [
    'Activation',
    'Dataset',
    'Gradients',
    'Layer',
    'MaskLike',
    'Model',
    'NumericError',
    'StructuralError',
    'WeightTensor',
    'WireFormatError',
    'backward',
    'forward',
    'init_mlp',
    'sgd_step',
    'ProximalTerm',
    'TrainHyper',
    'evaluate',
    'train_local',
    'decode_model',
    'encode_model',
    'load_model',
    'save_model',
]
