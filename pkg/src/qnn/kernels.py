"""Shift-only fixed-point layer kernels plus float32 reference kernels.

Every integer kernel is a pure function of (inputs, attributes) and is
bit-exact across platforms: inner products are accumulated exactly (int64
for int16/int8 tensors, arbitrary precision for int32) and reduced by a
single arithmetic right shift followed by a saturating clip.  Right shift
of a negative value floors toward -infinity everywhere.

Setting QNN_PORTABLE=1 in the environment routes inner products through a
plain-Python accumulation loop instead of the vectorized fast path; the
two paths must produce byte-identical results and the test suite holds
them to that.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import (
    QuantizerOrder,
    ShapeMismatch,
    SlopeOutOfRange,
    UnsupportedStride,
)
from .tensor import ElementWidth, Tensor, choose_shift, clip


def _portable() -> bool:
    return os.environ.get("QNN_PORTABLE", "0") not in ("", "0")


def _acc(arr: np.ndarray, width: ElementWidth) -> np.ndarray:
    return arr.astype(width.acc_dtype)


def _finish(acc: np.ndarray, shift: int, width: ElementWidth) -> np.ndarray:
    """Single arithmetic right shift then saturating clip, back to storage."""
    if shift:
        acc = acc >> shift
    return clip(acc, width).astype(width.dtype)


def _dot_exact(a: np.ndarray, b: np.ndarray, width: ElementWidth) -> np.ndarray:
    """Exact integer a @ b with a [M, K] and b [K, N]."""
    if _portable():
        m, k = a.shape
        n = b.shape[1]
        al = a.tolist()
        bl = b.tolist()
        out = [[sum(al[i][t] * bl[t][j] for t in range(k)) for j in range(n)]
               for i in range(m)]
        return np.array(out, dtype=width.acc_dtype)
    return np.dot(_acc(a, width), _acc(b, width))


# ---------------------------------------------------------------------------
# binary arithmetic kernels
# ---------------------------------------------------------------------------

def bias_add_q(x0: Tensor, x1: Tensor) -> Tensor:
    """y = C((x0 >> (q0-q1)) + x1), output quantizer q1."""
    if x0.q < x1.q:
        raise QuantizerOrder(
            f"bias add needs q0 >= q1, got q0={x0.q} q1={x1.q}"
        )
    if x1.dims != (x0.dims[-1],) and x1.dims != x0.dims:
        raise ShapeMismatch(
            f"bias {x1.dims} does not broadcast over last dim of {x0.dims}"
        )
    acc = (_acc(x0.data, x0.width) >> (x0.q - x1.q)) + _acc(x1.data, x0.width)
    return Tensor(x0.dims, x0.width, x1.q, _finish(acc, 0, x0.width))


def add_q(x0: Tensor, x1: Tensor) -> Tensor:
    """y = C((x0 >> (q0-q)) + (x1 >> (q1-q))) with q = min(q0, q1)."""
    q = min(x0.q, x1.q)
    try:
        dims = np.broadcast_shapes(x0.dims, x1.dims)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {x0.dims} with {x1.dims}") from None
    acc = (_acc(x0.data, x0.width) >> (x0.q - q)) + (
        _acc(x1.data, x1.width) >> (x1.q - q)
    )
    return Tensor(dims, x0.width, q, _finish(np.broadcast_to(acc, dims), 0, x0.width))


def mul_q(x0: Tensor, x1: Tensor, q_i: int = 0) -> Tensor:
    """Elementwise y = C((x0 * x1) >> (q1+q_i)), output quantizer q0 - q_i."""
    if x0.q < q_i:
        raise QuantizerOrder(f"internal shift {q_i} exceeds input quantizer {x0.q}")
    try:
        dims = np.broadcast_shapes(x0.dims, x1.dims)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {x0.dims} with {x1.dims}") from None
    acc = _acc(x0.data, x0.width) * _acc(x1.data, x1.width)
    acc = np.broadcast_to(acc, dims)
    return Tensor(dims, x0.width, x0.q - q_i, _finish(acc, x1.q + q_i, x0.width))


def matmul_q(x0: Tensor, w: Tensor, q_i: int = 0) -> Tensor:
    """y = C(sum(x0 * w) >> (q1+q_i)), output quantizer q0 - q_i.

    x0 is [..., K] with rank 1 or 2, w is [K, N]; the sum is accumulated
    exactly before the single shift.
    """
    if x0.q < q_i:
        raise QuantizerOrder(f"internal shift {q_i} exceeds input quantizer {x0.q}")
    if len(w.dims) != 2 or x0.dims[-1] != w.dims[0]:
        raise ShapeMismatch(f"matmul inner dims disagree: {x0.dims} @ {w.dims}")
    a = x0.data.reshape(-1, x0.dims[-1])
    acc = _dot_exact(a, w.data, x0.width)
    out_dims = x0.dims[:-1] + (w.dims[1],)
    out = _finish(acc, w.q + q_i, x0.width).reshape(out_dims)
    return Tensor(out_dims, x0.width, x0.q - q_i, out)


def concat_q(parts: list[Tensor], axis: int = -1) -> Tensor:
    """Shift every part down to the minimum quantizer, then concatenate."""
    if not parts:
        raise ShapeMismatch("concat of zero tensors")
    if len(parts) == 1:
        return parts[0].copy()
    rank = len(parts[0].dims)
    axis = axis % rank
    for p in parts[1:]:
        if len(p.dims) != rank or any(
            p.dims[i] != parts[0].dims[i] for i in range(rank) if i != axis
        ):
            raise ShapeMismatch(
                f"concat dims differ off-axis: {[p.dims for p in parts]}"
            )
    q = min(p.q for p in parts)
    shifted = [p.data if p.q == q else p.data >> (p.q - q) for p in parts]
    data = np.concatenate(shifted, axis=axis)
    return Tensor(data.shape, parts[0].width, q, data)


def leaky_relu_q(x: Tensor, alpha: float) -> Tensor:
    """Negative inputs map to (alpha_int * x) >> q_alpha; quantizer unchanged.

    q_alpha is the largest shift for which round(alpha * 2**q_alpha) still
    fits the weight width, so the slope is stored at maximum precision.
    """
    if abs(alpha) >= 1:
        raise SlopeOutOfRange(f"|alpha| must be < 1, got {alpha}")
    q_a = choose_shift(abs(alpha), x.width)
    a_int = int(np.rint(alpha * (1 << q_a)))
    acc = _acc(x.data, x.width)
    neg = _finish(acc * a_int, q_a, x.width)
    out = np.where(x.data >= 0, x.data, neg).astype(x.width.dtype)
    return Tensor(x.dims, x.width, x.q, out)


def prelu_q(x: Tensor, slopes: Tensor) -> Tensor:
    """Per-channel LeakyReLU; the slope tensor carries its own quantizer."""
    if slopes.dims not in ((x.dims[-1],), x.dims, (1,)):
        raise ShapeMismatch(f"slope dims {slopes.dims} do not broadcast over {x.dims}")
    acc = _acc(x.data, x.width) * _acc(slopes.data, x.width)
    neg = _finish(np.broadcast_to(acc, x.dims), slopes.q, x.width)
    out = np.where(x.data >= 0, x.data, neg).astype(x.width.dtype)
    return Tensor(x.dims, x.width, x.q, out)


def maximum_q(x0: Tensor, x1: Tensor) -> Tensor:
    """y = max(x0, C(x1 << (q0-q1))), output quantizer q0.

    The second operand is left-shifted up to the first operand's quantizer;
    the shifted value is saturated before comparison (an unclipped shift
    could leave the representable range).
    """
    if x0.q < x1.q:
        raise QuantizerOrder(f"maximum needs q0 >= q1, got q0={x0.q} q1={x1.q}")
    try:
        dims = np.broadcast_shapes(x0.dims, x1.dims)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {x0.dims} with {x1.dims}") from None
    lifted = _finish(_acc(x1.data, x1.width) << (x0.q - x1.q), 0, x0.width)
    out = np.maximum(np.broadcast_to(x0.data, dims), np.broadcast_to(lifted, dims))
    return Tensor(dims, x0.width, x0.q, out.astype(x0.width.dtype))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, np.array(0, dtype=x.data.dtype))
    return Tensor(x.dims, x.width, x.q, out)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _conv_geometry(size: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    """Output extent and leading pad for one spatial axis."""
    if padding == "same":
        out = -(-size // stride)
        pad_total = max((out - 1) * stride + k - size, 0)
        return out, pad_total // 2
    if padding == "valid":
        if size < k:
            raise ShapeMismatch(f"kernel {k} exceeds input extent {size}")
        return (size - k) // stride + 1, 0
    raise ShapeMismatch(f"unknown padding {padding!r}")


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: str):
    """Patch matrix [N*OH*OW, kh*kw*C] for NHWC input, zero padded."""
    n, h, w, c = x.shape
    oh, pt = _conv_geometry(h, kh, stride, padding)
    ow, pl = _conv_geometry(w, kw, stride, padding)
    ph = max((oh - 1) * stride + kh - h - pt, 0)
    pw = max((ow - 1) * stride + kw - w - pl, 0)
    xp = np.pad(x, ((0, 0), (pt, ph), (pl, pw), (0, 0)))
    cols = np.empty((n, oh, ow, kh, kw, c), dtype=x.dtype)
    for a in range(kh):
        for b in range(kw):
            cols[:, :, :, a, b, :] = xp[
                :, a : a + oh * stride : stride, b : b + ow * stride : stride, :
            ]
    return cols.reshape(n * oh * ow, kh * kw * c), (n, oh, ow)


def _grouped_conv_acc(x, w, stride, groups, padding, width):
    """Exact conv accumulator [N, OH, OW, Cout] for NHWC x, HWIO w."""
    n, h, w_in, cin = x.shape
    kh, kw, cin_g, cout = w.shape
    if cin % groups or cout % groups or cin // groups != cin_g:
        raise ShapeMismatch(
            f"channels {cin}->{cout} not divisible into {groups} groups of {cin_g}"
        )
    cout_g = cout // groups
    outs = []
    shape = None
    for g in range(groups):
        xg = x[..., g * cin_g : (g + 1) * cin_g]
        wg = w[..., g * cout_g : (g + 1) * cout_g].reshape(kh * kw * cin_g, cout_g)
        cols, shape = _im2col(xg, kh, kw, stride, padding)
        if width.is_integer:
            outs.append(_dot_exact(cols, wg, width))
        else:
            outs.append(np.dot(cols, wg))
    acc = np.concatenate(outs, axis=-1)
    n, oh, ow = shape
    return acc.reshape(n, oh, ow, -1)


def _check_conv_args(x: Tensor, w: Tensor, stride: int, q_i: int):
    if len(x.dims) != 4 or len(w.dims) != 4:
        raise ShapeMismatch(
            f"conv wants NHWC input and HWIO kernel, got {x.dims} and {w.dims}"
        )
    if stride not in (1, 2):
        raise UnsupportedStride(f"stride {stride} not supported")
    if x.q < q_i:
        raise QuantizerOrder(f"internal shift {q_i} exceeds input quantizer {x.q}")


def conv2d_q(
    x: Tensor, w: Tensor, stride: int = 1, groups: int = 1,
    padding: str = "same", q_i: int = 0,
) -> Tensor:
    """Spatial correlation with exact accumulation, single shift, clip.

    x is [N, H, W, Cin]; w is [kh, kw, Cin/groups, Cout].  Output quantizer
    is q0 - q_i, matching the dense matmul rule.
    """
    _check_conv_args(x, w, stride, q_i)
    acc = _grouped_conv_acc(x.data, w.data, stride, groups, padding, x.width)
    out = _finish(acc, w.q + q_i, x.width)
    return Tensor(out.shape, x.width, x.q - q_i, out)


def _conv_transpose_acc(x: Tensor, w: Tensor, stride, groups, padding):
    """Exact transpose-conv accumulator via zero stuffing plus a
    flipped-kernel forward conv; handles the same/valid output geometry."""
    kh, kw, cout_g, cin = w.dims
    n, h, w_in, cin_x = x.dims
    if cin != cin_x:
        raise ShapeMismatch(f"kernel input channels {cin} != tensor channels {cin_x}")
    if cin % groups:
        raise ShapeMismatch(f"channels {cin} not divisible into {groups} groups")
    cin_g = cin // groups
    # Equivalent forward kernel: flip spatially, swap channel roles per group.
    eq = np.zeros((kh, kw, cin_g, cout_g * groups), dtype=w.data.dtype)
    for g in range(groups):
        blk = w.data[::-1, ::-1, :, g * cin_g : (g + 1) * cin_g]
        eq[:, :, :, g * cout_g : (g + 1) * cout_g] = np.moveaxis(blk, 2, 3)
    stuffed = np.zeros(
        (n, (h - 1) * stride + 1, (w_in - 1) * stride + 1, cin), dtype=x.data.dtype
    )
    stuffed[:, ::stride, ::stride, :] = x.data
    xp = np.pad(stuffed, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
    acc = _grouped_conv_acc(xp, eq, 1, groups, "valid", x.width)
    if padding == "valid":
        return acc
    if padding != "same":
        raise ShapeMismatch(f"unknown padding {padding!r}")
    # "same": output is exactly (h*stride, w*stride); the full extent is
    # cropped when the kernel overhangs, zero-extended when stride exceeds it
    th, tw = h * stride, w_in * stride
    pt = max(kh - stride, 0) // 2
    pl = max(kw - stride, 0) // 2
    out = np.zeros((n, th, tw, acc.shape[3]), dtype=acc.dtype)
    ch = min(th, acc.shape[1] - pt)
    cw = min(tw, acc.shape[2] - pl)
    out[:, :ch, :cw, :] = acc[:, pt : pt + ch, pl : pl + cw, :]
    return out


def conv2d_transpose_q(
    x: Tensor, w: Tensor, stride: int = 1, groups: int = 1,
    padding: str = "same", q_i: int = 0,
) -> Tensor:
    """Transposed convolution, same quantizer rule as the forward conv.

    x is [N, H, W, Cin]; w is [kh, kw, Cout/groups, Cin].  "same" padding
    yields H*stride x W*stride output; "valid" yields the full extent.
    """
    _check_conv_args(x, w, stride, q_i)
    acc = _conv_transpose_acc(x, w, stride, groups, padding)
    out = _finish(acc, w.q + q_i, x.width)
    return Tensor(out.shape, x.width, x.q - q_i, out)


def maxpool(
    x: Tensor, kernel: tuple[int, int], stride: tuple[int, int] | None = None,
    padding: str = "valid",
) -> Tensor:
    """Window maximum over raw stored values; quantizer passes through."""
    squeeze = len(x.dims) == 2
    data = x.data[None, :, :, None] if squeeze else x.data
    if data.ndim != 4:
        raise ShapeMismatch(f"maxpool wants NHWC (or HW) input, got {x.dims}")
    kh, kw = kernel
    sh, sw = stride if stride is not None else kernel
    n, h, w, c = data.shape
    oh, pt = _conv_geometry(h, kh, sh, padding)
    ow, pl = _conv_geometry(w, kw, sw, padding)
    fill = x.width.min_value if x.width.is_integer else -np.inf
    xp = np.full(
        (n, pt + max((oh - 1) * sh + kh, h), pl + max((ow - 1) * sw + kw, w), c),
        fill, dtype=data.dtype,
    )
    xp[:, pt : pt + h, pl : pl + w, :] = data
    out = np.stack(
        [
            xp[:, a : a + oh * sh : sh, b : b + ow * sw : sw, :]
            for a in range(kh)
            for b in range(kw)
        ]
    ).max(axis=0)
    if squeeze:
        out = out[0, :, :, 0]
    return Tensor(out.shape, x.width, x.q, out)


# ---------------------------------------------------------------------------
# data-movement kernels (quantizer passes through unchanged)
# ---------------------------------------------------------------------------

def reshape(x: Tensor, dims) -> Tensor:
    try:
        out = x.data.reshape(dims)
    except ValueError:
        raise ShapeMismatch(f"cannot reshape {x.dims} to {tuple(dims)}") from None
    return Tensor(out.shape, x.width, x.q, out)


def transpose(x: Tensor, perm) -> Tensor:
    if sorted(perm) != list(range(len(x.dims))):
        raise ShapeMismatch(f"perm {perm} is not a permutation of rank {len(x.dims)}")
    out = np.transpose(x.data, perm)
    return Tensor(out.shape, x.width, x.q, out)


def flatten(x: Tensor, axis: int = 1) -> Tensor:
    if not 0 <= axis <= len(x.dims):
        raise ShapeMismatch(f"flatten axis {axis} out of range for {x.dims}")
    lead = int(np.prod(x.dims[:axis])) if axis else 1
    out = x.data.reshape(lead, -1)
    return Tensor(out.shape, x.width, x.q, out)


def slice_(x: Tensor, starts, ends) -> Tensor:
    if len(starts) != len(x.dims) or len(ends) != len(x.dims):
        raise ShapeMismatch("slice starts/ends must give one bound per axis")
    idx = tuple(slice(s, e) for s, e in zip(starts, ends))
    out = x.data[idx]
    if 0 in out.shape:
        raise ShapeMismatch(f"slice {starts}:{ends} empties {x.dims}")
    return Tensor(out.shape, x.width, x.q, out.copy())


def expand(x: Tensor, dims) -> Tensor:
    try:
        out = np.broadcast_to(x.data, tuple(dims)).copy()
    except ValueError:
        raise ShapeMismatch(f"cannot expand {x.dims} to {tuple(dims)}") from None
    return Tensor(out.shape, x.width, x.q, out)


def shape_of(x: Tensor) -> Tensor:
    """Dims of the input as a rank-1 tensor of the same width, q = 0."""
    if x.width.is_integer:
        data = clip(np.array(x.dims, dtype=np.int64), x.width).astype(x.width.dtype)
    else:
        data = np.array(x.dims, dtype=np.float32)
    return Tensor((len(x.dims),), x.width, 0, data)


# ---------------------------------------------------------------------------
# float32 reference kernels
# ---------------------------------------------------------------------------

def _f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32)


def bias_add_f(x0: Tensor, x1: Tensor) -> Tensor:
    if x1.dims != (x0.dims[-1],) and x1.dims != x0.dims:
        raise ShapeMismatch(
            f"bias {x1.dims} does not broadcast over last dim of {x0.dims}"
        )
    return Tensor.from_array(_f32(x0.data + x1.data), ElementWidth.float32)


def add_f(x0: Tensor, x1: Tensor) -> Tensor:
    try:
        out = _f32(x0.data) + _f32(x1.data)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {x0.dims} with {x1.dims}") from None
    return Tensor.from_array(out, ElementWidth.float32)


def mul_f(x0: Tensor, x1: Tensor) -> Tensor:
    try:
        out = _f32(x0.data) * _f32(x1.data)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {x0.dims} with {x1.dims}") from None
    return Tensor.from_array(out, ElementWidth.float32)


def matmul_f(x0: Tensor, w: Tensor) -> Tensor:
    if len(w.dims) != 2 or x0.dims[-1] != w.dims[0]:
        raise ShapeMismatch(f"matmul inner dims disagree: {x0.dims} @ {w.dims}")
    out = np.dot(_f32(x0.data).reshape(-1, x0.dims[-1]), _f32(w.data))
    return Tensor.from_array(out.reshape(x0.dims[:-1] + (w.dims[1],)),
                             ElementWidth.float32)


def conv2d_f(x: Tensor, w: Tensor, stride=1, groups=1, padding="same") -> Tensor:
    _check_conv_args(x, w, stride, 0)
    acc = _grouped_conv_acc(_f32(x.data), _f32(w.data), stride, groups, padding,
                            ElementWidth.float32)
    return Tensor.from_array(_f32(acc), ElementWidth.float32)


def conv2d_transpose_f(x: Tensor, w: Tensor, stride=1, groups=1,
                       padding="same") -> Tensor:
    _check_conv_args(x, w, stride, 0)
    xf = Tensor(x.dims, ElementWidth.float32, 0, _f32(x.data))
    wf = Tensor(w.dims, ElementWidth.float32, 0, _f32(w.data))
    acc = _conv_transpose_acc(xf, wf, stride, groups, padding)
    return Tensor.from_array(_f32(acc), ElementWidth.float32)


def concat_f(parts: list[Tensor], axis: int = -1) -> Tensor:
    return concat_q([Tensor(p.dims, ElementWidth.float32, 0, _f32(p.data))
                     for p in parts], axis)


def leaky_relu_f(x: Tensor, alpha: float) -> Tensor:
    if abs(alpha) >= 1:
        raise SlopeOutOfRange(f"|alpha| must be < 1, got {alpha}")
    data = _f32(x.data)
    return Tensor.from_array(np.where(data >= 0, data, np.float32(alpha) * data),
                             ElementWidth.float32)


def prelu_f(x: Tensor, slopes: Tensor) -> Tensor:
    data = _f32(x.data)
    out = np.where(data >= 0, data, _f32(slopes.data) * data)
    return Tensor.from_array(_f32(out), ElementWidth.float32)


def maximum_f(x0: Tensor, x1: Tensor) -> Tensor:
    try:
        out = np.maximum(_f32(x0.data), _f32(x1.data))
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {x0.dims} with {x1.dims}") from None
    return Tensor.from_array(out, ElementWidth.float32)
