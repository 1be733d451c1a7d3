"""
FMAP1 model checkpoints.

Layout (little-endian):
    b"FMAP1"
    u32 layer count
    per layer: u32 rows, u32 cols, u32 bias length (0 = no bias), u32 activation code
    all weights (row-major, layer order) as f8
    all biases (layer order) as f8
"""

from __future__ import annotations

import logging
import os
import struct
from pathlib import Path

import numpy as np

from constants import CHECKPOINT_MAGIC
from nn.base import Activation, Layer, Model, WireFormatError

logger = logging.getLogger("Checkpoint")

_ACTIVATION_CODES = {
    Activation.RELU: 0,
    Activation.IDENTITY: 1,
    Activation.SOFTMAX: 2,
}
_ACTIVATION_BY_CODE = {code: act for act, code in _ACTIVATION_CODES.items()}


def encode_model(model: Model) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(model.layers))]
    for layer in model.layers:
        bias_len = 0 if layer.bias is None else int(layer.bias.size)
        parts.append(
            struct.pack(
                "<4I", layer.fan_in, layer.fan_out, bias_len, _ACTIVATION_CODES[layer.activation]
            )
        )
    for layer in model.layers:
        parts.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
    for layer in model.layers:
        if layer.bias is not None:
            parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_model(blob: bytes) -> Model:
    magic_len = len(CHECKPOINT_MAGIC)
    if blob[:magic_len] != CHECKPOINT_MAGIC:
        raise WireFormatError("not an FMAP1 checkpoint (bad magic)")
    offset = magic_len
    try:
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        headers = []
        for _ in range(count):
            headers.append(struct.unpack_from("<4I", blob, offset))
            offset += 16
    except struct.error as e:
        raise WireFormatError(f"truncated FMAP1 header: {e}") from e

    def take(n: int) -> np.ndarray:
        nonlocal offset
        end = offset + 8 * n
        if end > len(blob):
            raise WireFormatError("truncated FMAP1 parameter block")
        values = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).astype(np.float64)
        offset = end
        return values

    weights = [take(rows * cols).reshape(rows, cols) for rows, cols, _, _ in headers]
    biases = [take(bias_len) if bias_len else None for _, _, bias_len, _ in headers]
    if offset != len(blob):
        raise WireFormatError(f"{len(blob) - offset} trailing bytes after FMAP1 checkpoint")

    layers = []
    for (rows, cols, bias_len, code), w, b in zip(headers, weights, biases):
        if code not in _ACTIVATION_BY_CODE:
            raise WireFormatError(f"unknown activation code {code}")
        layers.append(Layer(weight=w, bias=b, activation=_ACTIVATION_BY_CODE[code]))
    return Model(layers)


def save_model(model: Model, path: str | os.PathLike) -> Path:
    """Write a checkpoint atomically (temp file, then rename)."""
    target = Path(path)
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_bytes(encode_model(model))
    os.replace(tmp, target)
    logger.info(f"Saved checkpoint: {target} ({len(model.layers)} layers, d={model.num_weights})")
    return target


def load_model(path: str | os.PathLike) -> Model:
    return decode_model(Path(path).read_bytes())
