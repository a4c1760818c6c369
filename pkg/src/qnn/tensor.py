"""Numeric tensor container with power-of-two quantizer metadata.

A stored integer element x with shift count q represents the real value
x / 2**q.  Quantization is shift-only: there is no zero point.  Integer
tensors saturate to the symmetric range [-(2**(w-1) - 1), 2**(w-1) - 1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import BadMagic, Truncated


class ElementWidth(Enum):
    """Element storage width of a tensor (one width per whole graph)."""

    float32 = "float32"
    int32 = "int32"
    int16 = "int16"
    int8 = "int8"

    @property
    def is_integer(self) -> bool:
        return self is not ElementWidth.float32

    @property
    def bits(self) -> int:
        return {"float32": 32, "int32": 32, "int16": 16, "int8": 8}[self.value]

    @property
    def accumulator_bits(self) -> int:
        """Width of the double-width accumulator used for inner products."""
        return {"int32": 64, "int16": 32, "int8": 16}[self.value]

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.value)

    @property
    def acc_dtype(self):
        """Dtype used for exact intermediate sums.

        int64 covers int16/int8 inner products exactly at any realistic
        length; int32 products need arbitrary precision, so Python ints
        (object dtype) are used there.
        """
        if self is ElementWidth.int32:
            return object
        return np.int64

    @property
    def max_value(self) -> int:
        return 2 ** (self.bits - 1) - 1

    @property
    def min_value(self) -> int:
        return -(2 ** (self.bits - 1)) + 1


# STN1 / SMF1 width codes.
WIDTH_CODES = {
    ElementWidth.float32: 0,
    ElementWidth.int32: 1,
    ElementWidth.int16: 2,
    ElementWidth.int8: 3,
}
WIDTH_FROM_CODE = {v: k for k, v in WIDTH_CODES.items()}


def clip(x, width: ElementWidth):
    """Saturate x to the symmetric representable range of an integer width.

    The lower bound is -(2**(w-1) - 1), not -2**(w-1).  Accepts scalars or
    arrays; always computes in a dtype wide enough to hold the input.
    """
    if not width.is_integer:
        raise ValueError("clip is defined for integer widths only")
    if isinstance(x, np.ndarray):
        return np.clip(x, width.min_value, width.max_value)
    return max(width.min_value, min(width.max_value, x))


@dataclass
class Tensor:
    """An n-dimensional array with an element width and a quantizer shift.

    ``q`` is ignored (kept 0) for float32 tensors.  ``data`` is row-major
    and owned by the tensor; kernels never mutate their inputs.
    """

    dims: tuple
    width: ElementWidth
    q: int = 0
    data: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if any(d <= 0 for d in self.dims):
            raise ValueError(f"non-positive extent in dims {self.dims}")
        if self.q < 0:
            raise ValueError(f"quantizer shift must be non-negative, got {self.q}")
        if self.data is None:
            self.data = np.zeros(self.dims, dtype=self.width.dtype)
        else:
            self.data = np.asarray(self.data, dtype=self.width.dtype).reshape(self.dims)
        if not self.width.is_integer:
            self.q = 0

    @classmethod
    def from_array(cls, arr, width: ElementWidth, q: int = 0) -> "Tensor":
        arr = np.asarray(arr)
        return cls(dims=arr.shape if arr.shape else (1,), width=width, q=q, data=arr)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def copy(self) -> "Tensor":
        return Tensor(self.dims, self.width, self.q, self.data.copy())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Tensor)
            and self.dims == other.dims
            and self.width is other.width
            and self.q == other.q
            and np.array_equal(self.data, other.data)
        )


def dequantize(t: Tensor) -> Tensor:
    """Recover real values x / 2**q as a float32 tensor of the same dims."""
    if not t.width.is_integer:
        return t.copy()
    scale = np.float32(1.0 / (1 << t.q))
    return Tensor(t.dims, ElementWidth.float32, 0, t.data.astype(np.float32) * scale)


def quantize_float(v, q: int, width: ElementWidth):
    """Round v * 2**q to nearest even and saturate to the width's range.

    Accepts scalars or arrays; returns the stored integer(s).
    """
    if q < 0:
        raise ValueError("quantizer shift must be non-negative")
    scaled = np.atleast_1d(np.rint(np.asarray(v, dtype=np.float64) * (1 << q)))
    out = clip(scaled, width).astype(width.dtype)
    if np.ndim(v) == 0:
        return int(out[0])
    return out.reshape(np.shape(v))


def quantize_tensor(t: Tensor, q: int, width: ElementWidth) -> Tensor:
    """Quantize a float32 tensor to the given integer width and shift."""
    return Tensor(t.dims, width, q, quantize_float(t.data, q, width))


def choose_shift(max_abs: float, width: ElementWidth, cap: int = 63) -> int:
    """Largest q >= 0 for which round(max_abs * 2**q) still fits the width.

    max_abs = 0 degenerates to the maximum useful shift, bits - 1.  If even
    q = 0 overflows, 0 is returned and values will saturate.
    """
    if max_abs < 0:
        raise ValueError("max_abs must be non-negative")
    if max_abs == 0:
        return width.bits - 1
    best = 0
    for q in range(cap + 1):
        if round(max_abs * (1 << q)) <= width.max_value:
            best = q
        else:
            break
    return best


# ---------------------------------------------------------------------------
# STN1 tensor file format
#
#   bytes 0-3   magic "STN1"
#   byte 4      width code (0=f32, 1=i32, 2=i16, 3=i8)
#   byte 5      signed quantizer shift
#   byte 6      rank r
#   then        r little-endian u32 extents
#   then        row-major little-endian payload
# ---------------------------------------------------------------------------

STN1_MAGIC = b"STN1"


def write_stn1(t: Tensor) -> bytes:
    header = STN1_MAGIC + struct.pack(
        "<BbB", WIDTH_CODES[t.width], t.q, len(t.dims)
    )
    extents = struct.pack(f"<{len(t.dims)}I", *t.dims)
    payload = np.ascontiguousarray(t.data, dtype=t.width.dtype)
    payload = payload.astype(payload.dtype.newbyteorder("<"), copy=False)
    return header + extents + payload.tobytes()


def read_stn1(buf: bytes) -> Tensor:
    if len(buf) < 7:
        raise Truncated("tensor file shorter than its fixed header")
    if buf[:4] != STN1_MAGIC:
        raise BadMagic(f"expected STN1 magic, got {buf[:4]!r}")
    code, q, rank = struct.unpack("<BbB", buf[4:7])
    if code not in WIDTH_FROM_CODE:
        raise BadMagic(f"unknown width code {code}")
    width = WIDTH_FROM_CODE[code]
    if width.is_integer and q < 0:
        raise BadMagic(f"negative quantizer shift {q} in tensor header")
    need = 7 + 4 * rank
    if len(buf) < need:
        raise Truncated("tensor file ends inside the extent list")
    dims = struct.unpack(f"<{rank}I", buf[7:need])
    count = int(np.prod(dims)) if dims else 1
    dtype = width.dtype.newbyteorder("<")
    payload = buf[need : need + count * dtype.itemsize]
    if len(payload) < count * dtype.itemsize:
        raise Truncated("tensor payload shorter than the extents imply")
    data = np.frombuffer(payload, dtype=dtype).astype(width.dtype).reshape(dims)
    return Tensor(dims, width, q if width.is_integer else 0, data)


def save_stn1(t: Tensor, path) -> None:
    with open(path, "wb") as f:
        f.write(write_stn1(t))


def load_stn1(path) -> Tensor:
    with open(path, "rb") as f:
        return read_stn1(f.read())
