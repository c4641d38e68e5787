import io

import numpy as np
import pytest

from dualdomain.errors import ValidationError
from dualdomain.jpegcodec import (
    BASE_LUMA_STEPS,
    DCT,
    build_transform,
    compress_block,
    dequantize,
    intervals,
    quantize,
    scaled_quant_table,
)


class TestTransform:
    def test_forward_inverse_identity(self):
        t = build_transform()
        assert np.max(np.abs(t.forward @ t.inverse - np.eye(64))) < 1e-10

    def test_rows_unit_norm(self):
        t = build_transform()
        assert np.max(np.abs(np.linalg.norm(t.forward, axis=1) - 1.0)) < 1e-12

    def test_constant_block_concentrates_in_dc(self):
        coeffs = DCT.forward @ np.full(64, 3.25)
        assert coeffs[0] == pytest.approx(8 * 3.25, abs=1e-10)
        assert np.max(np.abs(coeffs[1:])) < 1e-10

    def test_isometry(self, rng):
        for _ in range(20):
            x = rng.standard_normal(64) * 100
            assert np.linalg.norm(DCT.forward @ x) == pytest.approx(
                np.linalg.norm(x), abs=1e-10
            )

    def test_round_trip(self, rng):
        x = rng.standard_normal(64) * 200
        assert np.max(np.abs(DCT.inverse @ (DCT.forward @ x) - x)) < 1e-10


class TestQuantTable:
    def test_q50_equals_base(self):
        assert np.array_equal(scaled_quant_table(50).steps, BASE_LUMA_STEPS)

    def test_q10_first_step(self):
        # floor((16 * 500 + 50) / 100) = 80
        assert scaled_quant_table(10).steps[0] == 80

    def test_q100_all_ones(self):
        assert np.all(scaled_quant_table(100).steps == 1)

    def test_steps_within_byte_range(self):
        for q in range(1, 101):
            steps = scaled_quant_table(q).steps
            assert steps.min() >= 1 and steps.max() <= 255

    def test_monotone_in_quality(self):
        prev = scaled_quant_table(1).steps
        for q in range(2, 101):
            cur = scaled_quant_table(q).steps
            assert np.all(cur <= prev)
            prev = cur

    @pytest.mark.parametrize("q", [0, 101, -3])
    def test_out_of_range_rejected(self, q):
        with pytest.raises(ValidationError):
            scaled_quant_table(q)

    @pytest.mark.parametrize("q", [5, 10, 20, 35, 50, 75, 92, 100])
    def test_matches_reference_encoder(self, q):
        # Pillow's libjpeg tables are the reference for the scaling rule.
        PIL = pytest.importorskip("PIL.Image")
        img = PIL.fromarray(np.full((8, 8), 128, dtype=np.uint8), mode="L")
        buf = io.BytesIO()
        img.save(buf, format="JPEG", quality=q)
        buf.seek(0)
        table = np.asarray(PIL.open(buf).quantization[0], dtype=np.int64)
        assert np.array_equal(scaled_quant_table(q).steps, table)


class TestQuantize:
    def test_basic_rounding(self):
        table = scaled_quant_table(50)
        coeffs = np.zeros(64)
        coeffs[0] = 100.0  # step 16 -> 6.25 -> 6
        assert quantize(coeffs, table).indices[0] == 6

    def test_zero_block(self):
        table = scaled_quant_table(50)
        assert np.all(quantize(np.zeros(64), table).indices == 0)

    def test_half_away_from_zero(self):
        table = scaled_quant_table(50)
        coeffs = np.zeros(64)
        coeffs[0] = 8.0  # exactly half of step 16
        coeffs[1] = -5.5  # exactly half of step 11
        block = quantize(coeffs, table)
        assert block.indices[0] == 1
        assert block.indices[1] == -1

    def test_idempotent(self, rng):
        table = scaled_quant_table(20)
        for _ in range(50):
            block = quantize(rng.standard_normal(64) * 300, table)
            again = quantize(dequantize(block), table)
            assert np.array_equal(block.indices, again.indices)

    def test_dequantize_values(self):
        table = scaled_quant_table(50)
        block = quantize(np.zeros(64), table)
        block.indices[0] = 6
        deq = dequantize(block)
        assert deq[0] == 96.0
        assert np.all(deq[1:] == 0.0)

    def test_rounding_bound(self, rng):
        table = scaled_quant_table(10)
        coeffs = rng.standard_normal(64) * 300
        deq = dequantize(quantize(coeffs, table))
        assert np.all(np.abs(coeffs - deq) <= table.steps / 2.0 + 1e-12)


class TestIntervals:
    def test_basic(self):
        table = scaled_quant_table(50)
        block = quantize(np.zeros(64), table)
        block.indices[0] = 6  # step 16
        iv = intervals(block)
        assert iv.lower[0] == 88.0 and iv.upper[0] == 104.0

    def test_zero_index_symmetric(self):
        table = scaled_quant_table(50)
        block = quantize(np.zeros(64), table)
        iv = intervals(block)
        # step 10 sits at flat index 2 of the base table
        assert iv.lower[2] == -5.0 and iv.upper[2] == 5.0

    def test_contains_original(self, rng):
        table = scaled_quant_table(5)
        for _ in range(50):
            coeffs = rng.standard_normal(64) * 500
            iv = intervals(quantize(coeffs, table))
            assert np.all(coeffs >= iv.lower - 1e-9)
            assert np.all(coeffs <= iv.upper + 1e-9)

    def test_width_equals_step(self):
        table = scaled_quant_table(30)
        iv = intervals(quantize(np.linspace(-400, 400, 64), table))
        assert np.allclose(iv.upper - iv.lower, table.steps)

    def test_midpoint_is_dequantized(self, rng):
        table = scaled_quant_table(20)
        block = quantize(rng.standard_normal(64) * 200, table)
        iv = intervals(block)
        assert np.array_equal((iv.lower + iv.upper) / 2.0, dequantize(block))


class TestCompressBlock:
    def test_constant_block_unchanged(self):
        shifted = np.zeros(64)  # pixel value 128 after mean shift
        out = compress_block(shifted, 10)
        assert np.max(np.abs(out.pixels - shifted)) < 1e-12
        assert np.all(out.intervals.lower == -out.block.table.steps / 2.0)
        assert np.all(out.intervals.upper == out.block.table.steps / 2.0)

    def test_q100_close_to_input(self, rng):
        x = rng.uniform(-128, 127, 64)
        out = compress_block(x, 100)
        bound = 0.5 * np.max(np.sum(np.abs(DCT.inverse), axis=1))
        assert np.max(np.abs(out.pixels - x)) <= bound

    def test_output_inside_own_intervals(self, rng):
        for q in (5, 20, 80):
            x = rng.uniform(-128, 127, 64)
            out = compress_block(x, q)
            coeffs = DCT.forward @ out.pixels
            assert np.all(coeffs >= out.intervals.lower - 1e-9)
            assert np.all(coeffs <= out.intervals.upper + 1e-9)

    def test_deterministic(self, rng):
        x = rng.uniform(-128, 127, 64)
        a = compress_block(x, 10)
        b = compress_block(x, 10)
        assert np.array_equal(a.pixels, b.pixels)

    def test_pixel_error_energy_bound(self, rng):
        # coefficient error is at most q/2 per entry; isometry carries the
        # l2 bound to pixel space
        table = scaled_quant_table(10)
        x = rng.uniform(-128, 127, 64)
        out = compress_block(x, 10)
        assert np.linalg.norm(out.pixels - x) <= 0.5 * np.linalg.norm(table.steps) + 1e-9
