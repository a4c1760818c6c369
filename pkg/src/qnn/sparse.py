"""Run-length-aligned compressed-row weight matrices for dense layers.

Every stored run has a length that is a multiple of the SIMD alignment
(8 or 16); zeros inside a run are stored and multiplied like any other
value, so they count toward the MAC tally.  When the column count is not
a multiple of the alignment, a trailing run may overhang the logical
width by up to alignment - 1 stored zeros; the input vector is padded
with zeros over the overhang at multiply time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ShapeMismatch
from .kernels import _portable
from .tensor import ElementWidth, Tensor, clip


ALIGNMENTS = (8, 16)


@dataclass
class Run:
    row: int
    start: int
    values: np.ndarray = field(repr=False)

    @property
    def length(self) -> int:
        return int(self.values.shape[0])


@dataclass
class SparsePackedMatrix:
    rows: int
    cols: int
    alignment: int
    width: ElementWidth
    q: int
    runs: list[Run]

    def __post_init__(self):
        if self.alignment not in ALIGNMENTS:
            raise ValueError(f"alignment must be one of {ALIGNMENTS}")
        limit = -(-self.cols // self.alignment) * self.alignment
        last = {}
        for r in self.runs:
            if r.length % self.alignment:
                raise ValueError(
                    f"run length {r.length} not a multiple of {self.alignment}"
                )
            if not 0 <= r.row < self.rows:
                raise ValueError(f"run row {r.row} outside matrix")
            if r.start < last.get(r.row, 0) or r.start + r.length > limit:
                raise ValueError("runs must be disjoint, ascending, in bounds")
            if r.start + r.length > self.cols and np.any(
                r.values[self.cols - r.start :] != 0
            ):
                raise ValueError("overhang past the logical width must be zero")
            last[r.row] = r.start + r.length

    def to_dense(self) -> Tensor:
        out = np.zeros((self.rows, self.cols), dtype=self.width.dtype)
        for r in self.runs:
            n = min(r.length, self.cols - r.start)
            out[r.row, r.start : r.start + n] = r.values[:n]
        return Tensor((self.rows, self.cols), self.width, self.q, out)


def pack_sparse(dense: Tensor, alignment: int = 8) -> SparsePackedMatrix:
    """Pack a 2-D weight tensor losslessly into aligned runs.

    Each maximal nonzero segment expands to the smallest covering run
    whose start and length are multiples of the alignment; touching or
    overlapping runs merge.
    """
    if len(dense.dims) != 2:
        raise ShapeMismatch(f"can only pack 2-D matrices, got {dense.dims}")
    if alignment not in ALIGNMENTS:
        raise ValueError(f"alignment must be one of {ALIGNMENTS}")
    rows, cols = dense.dims
    pad = -(-cols // alignment) * alignment - cols
    runs = []
    for i in range(rows):
        row = dense.data[i]
        nz = np.flatnonzero(row)
        if nz.size == 0:
            continue
        intervals = []
        seg_start = nz[0]
        prev = nz[0]
        for c in nz[1:]:
            if c != prev + 1:
                intervals.append((seg_start, prev + 1))
                seg_start = c
            prev = c
        intervals.append((seg_start, prev + 1))
        aligned = []
        for s, e in intervals:
            rs = (s // alignment) * alignment
            re = -(-e // alignment) * alignment
            if aligned and rs <= aligned[-1][1]:
                aligned[-1] = (aligned[-1][0], max(aligned[-1][1], re))
            else:
                aligned.append((rs, re))
        padded = np.concatenate([row, np.zeros(pad, dtype=row.dtype)]) if pad else row
        for rs, re in aligned:
            runs.append(Run(i, int(rs), padded[rs:re].copy()))
    return SparsePackedMatrix(rows, cols, alignment, dense.width, dense.q, runs)


def spmv_q(m: SparsePackedMatrix, x: Tensor, q_i: int = 0) -> Tensor:
    """Sparse matrix-vector product, bit-exact with the dense matmul rule.

    x is [cols] or [batch, cols]; the result carries quantizer x.q - q_i
    and every element equals the dense product of the unpacked matrix.
    """
    from .errors import QuantizerOrder

    if x.q < q_i:
        raise QuantizerOrder(f"internal shift {q_i} exceeds input quantizer {x.q}")
    if x.dims[-1] != m.cols:
        raise ShapeMismatch(f"input length {x.dims[-1]} != matrix cols {m.cols}")
    batched = len(x.dims) == 2
    xin = x.data if batched else x.data[None, :]
    limit = -(-m.cols // m.alignment) * m.alignment
    if m.width.is_integer:
        xa = np.zeros((xin.shape[0], limit), dtype=m.width.acc_dtype)
        xa[:, : m.cols] = xin.astype(m.width.acc_dtype)
        acc = np.zeros((xin.shape[0], m.rows), dtype=m.width.acc_dtype)
        if _portable():
            xl = xa.tolist()
            for r in m.runs:
                vals = r.values.tolist()
                for b in range(xin.shape[0]):
                    seg = xl[b][r.start : r.start + r.length]
                    acc[b, r.row] += sum(v * s for v, s in zip(vals, seg))
        else:
            for r in m.runs:
                v = r.values.astype(m.width.acc_dtype)
                acc[:, r.row] += np.dot(xa[:, r.start : r.start + r.length], v)
        shift = m.q + q_i
        if shift:
            acc = acc >> shift
        out = clip(acc, m.width).astype(m.width.dtype)
        qout = x.q - q_i
    else:
        xa = np.zeros((xin.shape[0], limit), dtype=np.float32)
        xa[:, : m.cols] = xin.astype(np.float32)
        acc = np.zeros((xin.shape[0], m.rows), dtype=np.float32)
        for r in m.runs:
            acc[:, r.row] += xa[:, r.start : r.start + r.length] @ r.values
        out, qout = acc, 0
    if not batched:
        out = out[0]
    return Tensor(out.shape, m.width, qout, out)


def sparse_mac_count(m: SparsePackedMatrix) -> int:
    """Multiplies executed per application: the sum of run lengths."""
    return sum(r.length for r in m.runs)


def dense_mac_count(m: SparsePackedMatrix) -> int:
    return m.rows * m.cols


def density(m: SparsePackedMatrix) -> Fraction:
    """Executed over dense MAC ratio, exact."""
    return Fraction(sparse_mac_count(m), dense_mac_count(m))
