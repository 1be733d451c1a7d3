import itertools
import struct
import unittest

import numpy as np

from codec import (
    ByteLedger,
    ParamDelta,
    SparsePayload,
    account,
    decode_payload,
    encode_payload,
    mask_bytes,
    payload_bytes,
    rfm,
    rwz,
)
from models import Direction
from nn import NumericError, StructuralError, WireFormatError, init_mlp
from pruning import PruneMask, prune


def _mask_from_flat(flat, shapes):
    bits, offset = [], 0
    for shape in shapes:
        n = int(np.prod(shape))
        bits.append(np.asarray(flat[offset:offset + n], dtype=bool).reshape(shape))
        offset += n
    return PruneMask(bits)


class TestRemoveWhereZero(unittest.TestCase):
    def test_selects_masked_values_in_order(self):
        delta = [np.array([[0.5, 0.0, -1.2, 0.0]])]
        mask = PruneMask([np.array([[True, False, True, False]])])
        payload = rwz(delta, mask)
        np.testing.assert_array_equal(payload.values, [0.5, -1.2])

    def test_full_mask_flattens_everything(self):
        model = init_mlp((3, 4, 2), np.random.default_rng(0))
        payload = rwz(model.weights, PruneMask.ones(model))
        np.testing.assert_array_equal(payload.values, model.flat_weights())

    def test_empty_mask_gives_empty_payload(self):
        model = init_mlp((3, 4, 2), np.random.default_rng(0))
        self.assertEqual(len(rwz(model.weights, PruneMask.zeros(model))), 0)

    def test_shape_mismatch(self):
        model = init_mlp((3, 4, 2), np.random.default_rng(0))
        with self.assertRaises(StructuralError):
            rwz([np.zeros((3, 4))], PruneMask.ones(model))


class TestRecoverFromMask(unittest.TestCase):
    def test_exhaustive_small_masks(self):
        shapes = [(2, 2), (2, 2)]
        rng = np.random.default_rng(1)
        x = [rng.normal(size=s) for s in shapes]
        for flat in itertools.product((False, True), repeat=8):
            mask = _mask_from_flat(flat, shapes)
            restored = rfm(rwz(x, mask), mask)
            for r, w, bits in zip(restored.weights, x, mask.bits):
                np.testing.assert_array_equal(r, np.where(bits, w, 0.0))

    def test_random_larger_masks(self):
        rng = np.random.default_rng(2)
        failures = 0
        for _ in range(10_000):
            sizes = rng.integers(1, 9, size=int(rng.integers(2, 5)))
            shapes = [(int(a), int(b)) for a, b in zip(sizes[:-1], sizes[1:])]
            density = rng.random()
            mask = PruneMask([rng.random(s) < density for s in shapes])
            x = [rng.normal(size=s) for s in shapes]
            restored = rfm(rwz(x, mask), mask)
            if not all(
                np.array_equal(r, np.where(bits, w, 0.0))
                for r, w, bits in zip(restored.weights, x, mask.bits)
            ):
                failures += 1
        self.assertEqual(failures, 0)

    def test_pruned_model_masks(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            model = init_mlp((12, 20, 5), rng)
            _, mask = prune(model, int(rng.integers(0, model.num_weights + 1)))
            x = [rng.normal(size=w.shape) for w in model.weights]
            restored = rfm(rwz(x, mask), mask)
            for r, w, bits in zip(restored.weights, x, mask.bits):
                np.testing.assert_array_equal(r, np.where(bits, w, 0.0))

    def test_empty_payload_zero_mask(self):
        mask = PruneMask([np.zeros((2, 3), dtype=bool)])
        restored = rfm(SparsePayload(np.zeros(0)), mask)
        np.testing.assert_array_equal(restored.weights[0], np.zeros((2, 3)))

    def test_single_value_lands_at_its_bit(self):
        shapes = [(2, 2), (2, 2), (2, 2)]
        flat = [False] * 12
        flat[8 + 3] = True
        mask = _mask_from_flat(flat, shapes)
        restored = rfm(SparsePayload([7.0]), mask)
        self.assertEqual(restored.weights[2][1, 1], 7.0)
        self.assertEqual(sum(float(np.abs(w).sum()) for w in restored.weights), 7.0)

    def test_length_mismatch(self):
        mask = PruneMask([np.array([[True, True, False]])])
        with self.assertRaises(StructuralError):
            rfm(SparsePayload([1.0]), mask)

    def test_biases_travel_densely(self):
        model = init_mlp((3, 4, 2), np.random.default_rng(3), bias=True)
        for layer in model.layers:
            layer.bias[:] = np.arange(layer.fan_out) + 1.0
        delta = ParamDelta(model.weights, model.biases)
        _, mask = prune(model, 5)
        payload = rwz(delta, mask)
        self.assertEqual(len(payload), 5)
        self.assertEqual(payload.num_biases, 6)
        restored = rfm(payload, mask, delta.bias_layout)
        for rb, b in zip(restored.biases, model.biases):
            np.testing.assert_array_equal(rb, b)


class TestByteAccounting(unittest.TestCase):
    def test_payload_and_mask_sizes(self):
        self.assertEqual(payload_bytes(7500, 32), 30000)
        self.assertEqual(payload_bytes(3, 16), 6)
        self.assertEqual(payload_bytes(5, 64, num_biases=2), 56)
        self.assertEqual(mask_bytes(10000), 1250)
        self.assertEqual(mask_bytes(9), 2)

    def test_ledger_examples(self):
        ledger = account(ByteLedger(32), 7500, Direction.UP, False, 10000)
        self.assertEqual(ledger.round_uplink, 30000)
        ledger = account(ledger, 7500, Direction.DOWN, True, 10000)
        self.assertEqual(ledger.round_downlink, 31250)
        self.assertEqual(ledger.round_mask, 1250)
        self.assertEqual(ledger.cumulative, 61250)
        same = account(ledger, 0, Direction.UP, False, 10000)
        self.assertEqual(same.cumulative, ledger.cumulative)

    def test_next_round_keeps_totals(self):
        ledger = account(ByteLedger(32), 100, Direction.UP, False, 1000)
        fresh = ledger.next_round()
        self.assertEqual(fresh.round_uplink, 0)
        self.assertEqual(fresh.total_uplink, 400)

    def test_rejects_k_above_d(self):
        with self.assertRaises(StructuralError):
            account(ByteLedger(32), 11, Direction.UP, False, 10)

    def test_rejects_unsupported_width(self):
        with self.assertRaises(ValueError):
            ByteLedger(8)


class TestPayloadFrames(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(4)
        self.payload = SparsePayload(rng.normal(size=9), rng.normal(size=3))

    def test_bias_free_frame_is_header_plus_values(self):
        payload = SparsePayload([1.5, -2.0, 0.25])
        blob = encode_payload(payload, 7, 3, 32)
        self.assertEqual(len(blob), 17 + 4 * 3)
        self.assertEqual(blob[:5], b"FPAY1")
        self.assertEqual(struct.unpack_from("<3I", blob, 5), (7, 3, 3))
        self.assertEqual(struct.unpack_from("<3f", blob, 17), (1.5, -2.0, 0.25))
        frame = decode_payload(blob, 32)
        self.assertEqual(frame.payload.num_biases, 0)
        self.assertEqual(len(encode_payload(SparsePayload(np.zeros(0)), 1, 0, 64)), 17)

    def test_frame_header_and_values(self):
        blob = encode_payload(self.payload, 12, 5, 64)
        self.assertTrue(blob.startswith(b"FPAY1"))
        self.assertEqual(len(blob), 17 + 9 * 8 + 3 * 8)
        frame = decode_payload(blob, 64)
        self.assertEqual((frame.round, frame.client_id), (12, 5))
        np.testing.assert_array_equal(frame.payload.values, self.payload.values)
        np.testing.assert_array_equal(frame.payload.bias_values, self.payload.bias_values)

    def test_narrow_widths_quantize(self):
        blob = encode_payload(self.payload, 1, 0, 16)
        self.assertEqual(len(blob), 17 + 9 * 2 + 3 * 2)
        received = decode_payload(blob, 16).payload
        np.testing.assert_array_equal(
            received.values, self.payload.values.astype(np.float16).astype(np.float64)
        )
        self.assertEqual(len(encode_payload(self.payload, 1, 0, 32)), 17 + 9 * 4 + 3 * 4)

    def test_malformed_frames(self):
        blob = encode_payload(self.payload, 1, 2, 32)
        with self.assertRaises(WireFormatError):
            decode_payload(b"FPAY0" + blob[5:], 32)
        with self.assertRaises(WireFormatError):
            decode_payload(blob[:-2], 32)
        with self.assertRaises(WireFormatError):
            decode_payload(blob + b"\x00", 32)
        with self.assertRaises(WireFormatError):
            decode_payload(blob[:12], 32)
        with self.assertRaises(WireFormatError):
            decode_payload(blob[:17 + 8], 32)

    def test_non_finite_values_rejected(self):
        bad = SparsePayload(np.array([1.0, np.nan]))
        with self.assertRaises(NumericError):
            decode_payload(encode_payload(bad, 1, 0, 32), 32)


if __name__ == "__main__":
    unittest.main()
