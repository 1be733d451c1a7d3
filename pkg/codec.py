# codec.py
"""
Sparse payload compression (RWZ / RFM), the FPAY1 wire format and byte accounting.

Payload values follow the mask support in canonical order: layer ascending, then
row-major flat index ascending. Biases, when the model has them, are never pruned
and travel densely after the K weight values.

FPAY1 frame layout:

    b"FPAY1" | u32 round | u32 client id | u32 K | K floats | [B bias floats]

The bias block is an extension of the plain frame and is present only when the model
has biases; its length is implied by the bytes left after the K values. Bias-free
frames are byte-identical to the plain layout.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from constants import DEFAULT_BITS_PER_PARAM, PAYLOAD_MAGIC, SUPPORTED_BITS_PER_PARAM
from models import Direction
from nn.base import Model, NumericError, StructuralError, WeightTensor, WireFormatError
from pruning import PruneMask

_WIRE_DTYPES = {16: "<f2", 32: "<f4", 64: "<f8"}


def _empty() -> WeightTensor:
    return np.zeros(0, dtype=np.float64)


@dataclass
class ParamDelta:
    """Model-shaped values (weights plus optional biases), e.g. θ_a − θ_b."""
    weights: list[WeightTensor]
    biases: list[Optional[WeightTensor]] = field(default_factory=list)

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        if not self.biases:
            self.biases = [None] * len(self.weights)
        if len(self.biases) != len(self.weights):
            raise StructuralError("bias list length does not match weight list length")
        self.biases = [None if b is None else np.asarray(b, dtype=np.float64) for b in self.biases]

    @classmethod
    def between(cls, a: Model, b: Model) -> "ParamDelta":
        """a − b, parameter by parameter."""
        if a.shapes != b.shapes:
            raise StructuralError(f"model shapes differ: {a.shapes} vs {b.shapes}")
        biases = []
        for ba, bb in zip(a.biases, b.biases):
            if (ba is None) != (bb is None):
                raise StructuralError("bias presence differs between models")
            biases.append(None if ba is None or bb is None else ba - bb)
        return cls([wa - wb for wa, wb in zip(a.weights, b.weights)], biases)

    @classmethod
    def zeros_like(cls, model: Model) -> "ParamDelta":
        return cls(
            [np.zeros_like(w) for w in model.weights],
            [None if b is None else np.zeros_like(b) for b in model.biases],
        )

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [tuple(w.shape) for w in self.weights]

    @property
    def bias_layout(self) -> list[Optional[int]]:
        return [None if b is None else int(b.size) for b in self.biases]

    def negated(self) -> "ParamDelta":
        return ParamDelta([-w for w in self.weights], [None if b is None else -b for b in self.biases])

    def subtract_from(self, model: Model) -> Model:
        """model − self, the server update θ_t = θ_{t−1} − Δ."""
        if self.shapes != [tuple(s) for s in model.shapes]:
            raise StructuralError(f"delta shapes {self.shapes} do not match model {model.shapes}")
        biases = []
        for b, db in zip(model.biases, self.biases):
            if b is None:
                biases.append(None)
            else:
                biases.append(b if db is None else b - db)
        return model.with_weights([w - dw for w, dw in zip(model.weights, self.weights)], biases)


DeltaLike = Union[ParamDelta, Sequence[WeightTensor]]


def _as_delta(delta: DeltaLike) -> ParamDelta:
    return delta if isinstance(delta, ParamDelta) else ParamDelta(list(delta))


@dataclass
class SparsePayload:
    """K surviving weight values in canonical order, then the dense biases."""
    values: WeightTensor
    bias_values: WeightTensor = field(default_factory=_empty)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.bias_values = np.asarray(self.bias_values, dtype=np.float64).ravel()

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def num_biases(self) -> int:
        return int(self.bias_values.size)


def rwz(delta: DeltaLike, mask: PruneMask) -> SparsePayload:
    """Remove Where Zero: keep the values at supp(mask), drop everything else."""
    delta = _as_delta(delta)
    if delta.shapes != mask.shapes:
        raise StructuralError(f"delta shapes {delta.shapes} do not match mask {mask.shapes}")
    if delta.weights:
        values = np.concatenate([w[bits] for w, bits in zip(delta.weights, mask.bits)])
    else:
        values = _empty()
    bias_parts = [b for b in delta.biases if b is not None]
    bias_values = np.concatenate(bias_parts) if bias_parts else _empty()
    return SparsePayload(values, bias_values)


def rfm(
    payload: SparsePayload,
    mask: PruneMask,
    bias_layout: Optional[Sequence[Optional[int]]] = None,
) -> ParamDelta:
    """
    Recover From Mask: scatter the i-th payload value to the i-th set bit of the mask.

    `bias_layout` gives each layer's bias length (None for no bias); omit it for
    bias-free models.
    """
    if len(payload) != mask.nonzero:
        raise StructuralError(
            f"payload has {len(payload)} values but the mask has {mask.nonzero} set bits"
        )
    weights = []
    offset = 0
    for bits in mask.bits:
        layer = np.zeros(bits.shape, dtype=np.float64)
        n = int(np.count_nonzero(bits))
        layer[bits] = payload.values[offset:offset + n]
        weights.append(layer)
        offset += n

    layout = list(bias_layout) if bias_layout is not None else [None] * len(weights)
    if len(layout) != len(weights):
        raise StructuralError("bias layout length does not match mask layer count")
    expected = sum(n for n in layout if n is not None)
    if expected != payload.num_biases:
        raise StructuralError(
            f"payload carries {payload.num_biases} bias values, layout expects {expected}"
        )
    biases: list[Optional[WeightTensor]] = []
    offset = 0
    for n in layout:
        if n is None:
            biases.append(None)
        else:
            biases.append(payload.bias_values[offset:offset + n].copy())
            offset += n
    return ParamDelta(weights, biases)


def payload_bytes(k: int, bits_per_param: int, num_biases: int = 0) -> int:
    return math.ceil((k + num_biases) * bits_per_param / 8)


def mask_bytes(d: int) -> int:
    return math.ceil(d / 8)


@dataclass(frozen=True)
class ByteLedger:
    """
    Accounted communication. `round_*` fields cover the current round only;
    `total_*` fields are running sums over the run.
    """
    bits_per_param: int = DEFAULT_BITS_PER_PARAM
    round_uplink: int = 0
    round_downlink: int = 0
    round_mask: int = 0
    total_uplink: int = 0
    total_downlink: int = 0
    total_mask: int = 0

    def __post_init__(self):
        if self.bits_per_param not in SUPPORTED_BITS_PER_PARAM:
            raise ValueError(f"bits_per_param must be one of {SUPPORTED_BITS_PER_PARAM}")

    @property
    def cumulative(self) -> int:
        """All accounted bytes so far; mask bytes are part of the downlink/uplink counts."""
        return self.total_uplink + self.total_downlink

    def next_round(self) -> "ByteLedger":
        return replace(self, round_uplink=0, round_downlink=0, round_mask=0)


def account(
    ledger: ByteLedger,
    k: int,
    direction: Direction,
    with_mask: bool,
    d: int,
    num_biases: int = 0,
) -> ByteLedger:
    """Add one message of K values (plus a d-bit mask if `with_mask`) to the ledger."""
    if k < 0 or k > d:
        raise StructuralError(f"K must lie in [0, {d}], got {k}")
    sent = payload_bytes(k, ledger.bits_per_param, num_biases)
    extra = mask_bytes(d) if with_mask else 0
    if direction == Direction.UP:
        return replace(
            ledger,
            round_uplink=ledger.round_uplink + sent + extra,
            total_uplink=ledger.total_uplink + sent + extra,
            round_mask=ledger.round_mask + extra,
            total_mask=ledger.total_mask + extra,
        )
    return replace(
        ledger,
        round_downlink=ledger.round_downlink + sent + extra,
        total_downlink=ledger.total_downlink + sent + extra,
        round_mask=ledger.round_mask + extra,
        total_mask=ledger.total_mask + extra,
    )


@dataclass
class PayloadFrame:
    round: int
    client_id: int
    payload: SparsePayload


def encode_payload(
    payload: SparsePayload,
    round_index: int,
    client_id: int,
    bits_per_param: int = DEFAULT_BITS_PER_PARAM,
) -> bytes:
    """
    FPAY1 frame: magic, u32 round, u32 client id, u32 K, K floats, then B bias floats
    when the model has biases. A bias-free frame is exactly 17 + K * width bytes.

    Floats are little-endian at `bits_per_param` width, so 16/32-bit frames quantize.
    """
    dtype = _wire_dtype(bits_per_param)
    parts = [
        PAYLOAD_MAGIC,
        struct.pack("<3I", round_index, client_id, len(payload)),
        payload.values.astype(dtype).tobytes(),
    ]
    if payload.num_biases:
        parts.append(payload.bias_values.astype(dtype).tobytes())
    return b"".join(parts)


def decode_payload(blob: bytes, bits_per_param: int = DEFAULT_BITS_PER_PARAM) -> PayloadFrame:
    """Parse an FPAY1 frame; whatever follows the K values is the bias block."""
    dtype = _wire_dtype(bits_per_param)
    width = bits_per_param // 8
    magic_len = len(PAYLOAD_MAGIC)
    if blob[:magic_len] != PAYLOAD_MAGIC:
        raise WireFormatError("not an FPAY1 payload (bad magic)")
    try:
        round_index, client_id, k = struct.unpack_from("<3I", blob, magic_len)
    except struct.error as e:
        raise WireFormatError(f"truncated FPAY1 header: {e}") from e
    offset = magic_len + 12
    values = _read_floats(blob, offset, k, dtype, width)
    offset += k * width
    tail = len(blob) - offset
    if tail % width:
        raise WireFormatError(f"{tail} trailing bytes do not form whole {bits_per_param}-bit biases")
    bias_values = _read_floats(blob, offset, tail // width, dtype, width)
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(bias_values))):
        raise NumericError(f"non-finite value in payload from client {client_id}")
    return PayloadFrame(round_index, client_id, SparsePayload(values, bias_values))


def _wire_dtype(bits_per_param: int) -> str:
    if bits_per_param not in _WIRE_DTYPES:
        raise ValueError(f"bits_per_param must be one of {SUPPORTED_BITS_PER_PARAM}")
    return _WIRE_DTYPES[bits_per_param]


def _read_floats(blob: bytes, offset: int, n: int, dtype: str, width: int) -> WeightTensor:
    if offset + n * width > len(blob):
        raise WireFormatError("truncated FPAY1 value block")
    return np.frombuffer(blob, dtype=dtype, count=n, offset=offset).astype(np.float64)
