# pruning.py
"""LAMP scoring, global magnitude pruning and mask algebra"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import numpy.typing as npt

from constants import MASK_MAGIC
from nn.base import Model, StructuralError, WeightTensor, WireFormatError

BitArray = npt.NDArray[np.bool_]


class PruneMask:
    """
    Per-layer binary masks shaped like the model's weights.

    Flat ordering is (layer, row-major index) ascending. Bit arrays are frozen so
    the cached nonzero count stays valid.
    """

    __slots__ = ("bits", "nonzero")

    def __init__(self, bits: Sequence[npt.ArrayLike]):
        frozen = []
        for layer_bits in bits:
            arr = np.array(layer_bits, dtype=np.bool_)
            arr.setflags(write=False)
            frozen.append(arr)
        self.bits: list[BitArray] = frozen
        self.nonzero = int(sum(int(np.count_nonzero(b)) for b in frozen))

    @classmethod
    def ones(cls, model: Model) -> "PruneMask":
        return cls([np.ones(w.shape, dtype=np.bool_) for w in model.weights])

    @classmethod
    def zeros(cls, model: Model) -> "PruneMask":
        return cls([np.zeros(w.shape, dtype=np.bool_) for w in model.weights])

    @classmethod
    def from_support(cls, model: Model) -> "PruneMask":
        """Mask of the model's currently nonzero weights."""
        return cls([w != 0.0 for w in model.weights])

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [tuple(b.shape) for b in self.bits]

    @property
    def size(self) -> int:
        return int(sum(b.size for b in self.bits))

    def flat(self) -> BitArray:
        if not self.bits:
            return np.zeros(0, dtype=np.bool_)
        return np.concatenate([b.ravel() for b in self.bits])

    def check_congruent(self, other: "PruneMask") -> None:
        if self.shapes != other.shapes:
            raise StructuralError(f"mask shapes differ: {self.shapes} vs {other.shapes}")

    def check_matches(self, model: Model) -> None:
        if self.shapes != [tuple(w.shape) for w in model.weights]:
            raise StructuralError(
                f"mask shapes {self.shapes} do not match model weights {model.shapes}"
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PruneMask):
            return NotImplemented
        return self.shapes == other.shapes and all(
            np.array_equal(a, b) for a, b in zip(self.bits, other.bits)
        )

    def __hash__(self) -> int:
        return hash(self.digest())

    def __repr__(self) -> str:
        return f"PruneMask(layers={len(self.bits)}, nonzero={self.nonzero}/{self.size})"

    def packed(self) -> bytes:
        return b"".join(np.packbits(b.ravel(), bitorder="little").tobytes() for b in self.bits)

    def digest(self) -> str:
        """SHA-256 of shapes plus packed bits, stable across processes."""
        h = hashlib.sha256()
        for shape in self.shapes:
            h.update(struct.pack(f"<{len(shape)}I", *shape))
        h.update(self.packed())
        return h.hexdigest()


@dataclass
class LampScores:
    """Per-weight LAMP scores, same layout as the model's weights."""
    scores: list[WeightTensor]

    def flat(self) -> WeightTensor:
        if not self.scores:
            return np.zeros(0, dtype=np.float64)
        return np.concatenate([s.ravel() for s in self.scores])


def _layer_lamp(weight: WeightTensor) -> WeightTensor:
    flat = weight.ravel()
    order = np.argsort(np.abs(flat), kind="stable")
    squared = flat[order] ** 2
    suffix = np.cumsum(squared[::-1])[::-1]
    sorted_scores = np.zeros_like(squared)
    positive = suffix > 0.0
    sorted_scores[positive] = squared[positive] / suffix[positive]
    scores = np.empty_like(sorted_scores)
    scores[order] = sorted_scores
    return scores.reshape(weight.shape)


def lamp_scores(model: Model) -> LampScores:
    """
    score(u) = w_u^2 / sum of w_v^2 over v sorted at or after u by |w| (ascending,
    stable on flat index). Computed per layer.
    """
    return LampScores([_layer_lamp(w) for w in model.weights])


def apply_mask(model: Model, mask: PruneMask) -> Model:
    mask.check_matches(model)
    weights = [np.where(bits, w, 0.0) for w, bits in zip(model.weights, mask.bits)]
    return model.with_weights(weights)


def prune(model: Model, k: int, within: Optional[PruneMask] = None) -> tuple[Model, PruneMask]:
    """
    Keep exactly the `k` globally highest LAMP scores and zero the rest.

    Ties go to the lower layer index, then the lower flat index. With `within`,
    only positions inside that mask are candidates.
    """
    d = model.num_weights
    if k < 0 or k > d:
        raise StructuralError(f"K must lie in [0, {d}], got {k}")
    if within is not None:
        within.check_matches(model)
        if k > within.nonzero:
            raise StructuralError(f"K={k} exceeds the {within.nonzero} candidate positions")

    scores = lamp_scores(model).flat()
    if within is not None:
        scores = np.where(within.flat(), scores, -np.inf)
    # stable sort on negated scores: equal scores keep ascending global index
    order = np.argsort(-scores, kind="stable")
    keep = np.zeros(d, dtype=np.bool_)
    keep[order[:k]] = True

    bits = []
    offset = 0
    for w in model.weights:
        bits.append(keep[offset:offset + w.size].reshape(w.shape))
        offset += w.size
    mask = PruneMask(bits)
    return apply_mask(model, mask), mask


def is_subset(a: PruneMask, b: PruneMask) -> bool:
    """True iff supp(a) is contained in supp(b)."""
    a.check_congruent(b)
    return all(not np.any(x & ~y) for x, y in zip(a.bits, b.bits))


def reactivated_count(current: PruneMask, previous: PruneMask) -> int:
    """Positions live in `current` that were pruned in `previous`."""
    current.check_congruent(previous)
    return int(sum(int(np.count_nonzero(x & ~y)) for x, y in zip(current.bits, previous.bits)))


def encode_mask(mask: PruneMask) -> bytes:
    """FMSK1: magic, u32 layer count, u32 bit count per layer, packed little-endian bitmaps."""
    parts = [MASK_MAGIC, struct.pack("<I", len(mask.bits))]
    parts.extend(struct.pack("<I", int(b.size)) for b in mask.bits)
    parts.append(mask.packed())
    return b"".join(parts)


def decode_mask(blob: bytes, shapes: Optional[Sequence[tuple[int, ...]]] = None) -> PruneMask:
    """Inverse of encode_mask; layers are reshaped to `shapes` when given, else kept 1-D."""
    magic_len = len(MASK_MAGIC)
    if blob[:magic_len] != MASK_MAGIC:
        raise WireFormatError("not an FMSK1 mask (bad magic)")
    try:
        (count,) = struct.unpack_from("<I", blob, magic_len)
        sizes = struct.unpack_from(f"<{count}I", blob, magic_len + 4)
    except struct.error as e:
        raise WireFormatError(f"truncated FMSK1 header: {e}") from e
    if shapes is not None and (
        len(shapes) != count or any(int(np.prod(s)) != n for s, n in zip(shapes, sizes))
    ):
        raise StructuralError("FMSK1 bit counts do not match the requested shapes")

    offset = magic_len + 4 + 4 * count
    bits = []
    for index, n in enumerate(sizes):
        n_bytes = (n + 7) // 8
        chunk = blob[offset:offset + n_bytes]
        if len(chunk) != n_bytes:
            raise WireFormatError("truncated FMSK1 bitmap")
        layer = np.unpackbits(np.frombuffer(chunk, dtype=np.uint8), count=n, bitorder="little")
        layer = layer.astype(np.bool_)
        bits.append(layer.reshape(shapes[index]) if shapes is not None else layer)
        offset += n_bytes
    if offset != len(blob):
        raise WireFormatError(f"{len(blob) - offset} trailing bytes after FMSK1 mask")
    return PruneMask(bits)


def save_mask(mask: PruneMask, path: str | os.PathLike) -> Path:
    target = Path(path)
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_bytes(encode_mask(mask))
    os.replace(tmp, target)
    return target


def load_mask(path: str | os.PathLike, shapes: Optional[Sequence[tuple[int, ...]]] = None) -> PruneMask:
    return decode_mask(Path(path).read_bytes(), shapes)
