"""Tensor substrate: clipping, quantizer shifts, and the STN1 format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qnn.errors import BadMagic, Truncated
from qnn.tensor import (
    ElementWidth,
    Tensor,
    choose_shift,
    clip,
    dequantize,
    quantize_float,
    quantize_tensor,
    read_stn1,
    write_stn1,
)


class TestClip:
    def test_saturates_high(self):
        assert clip(40000, ElementWidth.int16) == 32767

    def test_symmetric_lower_bound(self):
        """The negative bound is -(2**15 - 1), not -2**15."""
        assert clip(-40000, ElementWidth.int16) == -32767
        assert clip(-32768, ElementWidth.int16) == -32767

    def test_identity_in_range(self):
        assert clip(5, ElementWidth.int16) == 5

    @given(st.integers(-(10**9), 10**9))
    def test_idempotent(self, x):
        once = clip(x, ElementWidth.int16)
        assert clip(once, ElementWidth.int16) == once

    @pytest.mark.parametrize("width,hi", [
        (ElementWidth.int8, 127),
        (ElementWidth.int16, 32767),
        (ElementWidth.int32, 2**31 - 1),
    ])
    def test_bounds_per_width(self, width, hi):
        assert clip(10**12, width) == hi
        assert clip(-(10**12), width) == -hi

    def test_rejects_float_width(self):
        with pytest.raises(ValueError):
            clip(1, ElementWidth.float32)


class TestWidths:
    def test_double_width_accumulators(self):
        assert ElementWidth.int16.accumulator_bits == 32
        assert ElementWidth.int32.accumulator_bits == 64
        assert ElementWidth.int8.accumulator_bits == 16

    def test_dtype_mapping(self):
        assert ElementWidth.int16.dtype == np.dtype(np.int16)
        assert ElementWidth.float32.dtype == np.dtype(np.float32)


class TestDequantize:
    def test_examples(self):
        assert dequantize(Tensor((1,), ElementWidth.int16, 4, [48])).data[0] == 3.0
        assert dequantize(Tensor((1,), ElementWidth.int16, 12, [0])).data[0] == 0.0
        assert dequantize(Tensor((1,), ElementWidth.int16, 7, [-26])).data[0] == np.float32(-0.203125)

    def test_preserves_dims(self):
        t = Tensor((2, 3, 4), ElementWidth.int16, 3)
        assert dequantize(t).dims == (2, 3, 4)

    def test_float_passthrough(self):
        t = Tensor((2,), ElementWidth.float32, 0, [1.5, -2.5])
        d = dequantize(t)
        assert np.array_equal(d.data, t.data)


class TestQuantizeFloat:
    def test_examples(self):
        assert quantize_float(0.5, 15, ElementWidth.int16) == 16384
        assert quantize_float(1.0, 15, ElementWidth.int16) == 32767  # saturates
        assert quantize_float(-0.203125, 7, ElementWidth.int16) == -26

    def test_round_half_to_even(self):
        # 2.5 and 3.5 at q=0 round to the even neighbors
        assert quantize_float(2.5, 0, ElementWidth.int16) == 2
        assert quantize_float(3.5, 0, ElementWidth.int16) == 4

    def test_rejects_negative_shift(self):
        with pytest.raises(ValueError):
            quantize_float(1.0, -1, ElementWidth.int16)

    @given(st.integers(-32766, 32766), st.integers(0, 14))
    @settings(max_examples=300)
    def test_round_trip_off_saturation(self, stored, q):
        """quantize(dequantize(t)) == t when nothing sits on the clip bound."""
        t = Tensor((1,), ElementWidth.int16, q, [stored])
        back = quantize_tensor(dequantize(t), q, ElementWidth.int16)
        assert back.data[0] == stored and back.q == q


class TestChooseShift:
    def test_examples(self):
        assert choose_shift(0.5, ElementWidth.int16) == 15
        assert choose_shift(1.0, ElementWidth.int16) == 14
        assert choose_shift(0.0, ElementWidth.int16) == 15  # maximum useful shift

    @pytest.mark.parametrize("max_abs", [1e-3, 0.1, 0.25, 0.3, 0.9, 1.5, 7.3, 300.0])
    def test_matches_linear_scan(self, max_abs):
        hi = ElementWidth.int16.max_value
        best = 0
        for q in range(64):
            if round(max_abs * (1 << q)) <= hi:
                best = q
        assert choose_shift(max_abs, ElementWidth.int16) == best

    def test_fit_is_tight(self):
        q = choose_shift(0.3, ElementWidth.int16)
        assert round(0.3 * (1 << q)) <= 32767
        assert round(0.3 * (1 << (q + 1))) > 32767


class TestStn1:
    def roundtrip(self, t):
        back = read_stn1(write_stn1(t))
        assert back == t

    def test_roundtrip_widths(self):
        rng = np.random.default_rng(0)
        self.roundtrip(Tensor((2, 3), ElementWidth.int16, 5,
                              rng.integers(-100, 100, (2, 3))))
        self.roundtrip(Tensor((4,), ElementWidth.int32, 20,
                              rng.integers(-10**6, 10**6, (4,))))
        self.roundtrip(Tensor((2, 2, 2), ElementWidth.int8, 3,
                              rng.integers(-100, 100, (2, 2, 2))))
        self.roundtrip(Tensor((3, 2), ElementWidth.float32, 0,
                              rng.uniform(-1, 1, (3, 2)).astype(np.float32)))

    def test_header_layout(self):
        buf = write_stn1(Tensor((2, 3), ElementWidth.int16, 5))
        assert buf[:4] == b"STN1"
        assert buf[4] == 2        # width code for int16
        assert buf[5] == 5        # quantizer shift
        assert buf[6] == 2        # rank
        assert int.from_bytes(buf[7:11], "little") == 2
        assert int.from_bytes(buf[11:15], "little") == 3

    def test_bad_magic(self):
        with pytest.raises(BadMagic):
            read_stn1(b"NOPE" + bytes(20))

    def test_truncated(self):
        buf = write_stn1(Tensor((2, 3), ElementWidth.int16, 5))
        with pytest.raises(Truncated):
            read_stn1(buf[:-1])
        with pytest.raises(Truncated):
            read_stn1(buf[:6])


class TestTensorInvariants:
    def test_payload_matches_dims(self):
        with pytest.raises(ValueError):
            Tensor((2, 3), ElementWidth.int16, 0, [1, 2, 3])

    def test_rejects_negative_q(self):
        with pytest.raises(ValueError):
            Tensor((1,), ElementWidth.int16, -1, [0])

    def test_rejects_empty_extent(self):
        with pytest.raises(ValueError):
            Tensor((0,), ElementWidth.int16, 0, [])

    def test_float_ignores_q(self):
        t = Tensor((1,), ElementWidth.float32, 9, [1.0])
        assert t.q == 0
