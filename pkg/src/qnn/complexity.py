"""Exact operation accounting over a graph.

MACs count multiply-accumulates only (the accumulating add is part of the
MAC); elementwise arithmetic, comparisons, and shifts land in a separate
per-node tally.  Counts are derived from propagated shapes, so they are
layout- and implementation-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .graph import Graph, OpKind, _toposort
from .kernels import _conv_geometry
from .sparse import sparse_mac_count


@dataclass
class NodeCost:
    node_id: int
    kind: str
    out_dims: tuple
    macs: int
    other_ops: int


@dataclass
class CostReport:
    per_node: list[NodeCost]

    @property
    def total_macs(self) -> int:
        return sum(c.macs for c in self.per_node)

    @property
    def total_other_ops(self) -> int:
        return sum(c.other_ops for c in self.per_node)


def _prod(dims) -> int:
    return int(np.prod(dims)) if dims else 1


def count_macs(g: Graph, input_dims: list[tuple] | None = None) -> CostReport:
    """Per-node and total MAC/op counts for concrete input dims.

    input_dims defaults to the dims declared by the model's input
    descriptors.
    """
    if input_dims is None:
        input_dims = [d.dims for d in g.inputs]
    if len(input_dims) != len(g.inputs):
        raise ShapeMismatch(
            f"graph wants {len(g.inputs)} inputs, got {len(input_dims)}"
        )
    dims: dict[int, tuple] = {
        d.id: tuple(int(x) for x in shape)
        for d, shape in zip(g.inputs, input_dims)
    }
    report = []
    for n in _toposort(g):
        ins = [dims[i] for i in n.inputs]
        kind = n.kind
        macs = 0
        ops = 0
        if kind is OpKind.Const:
            out = n.const.dims
        elif kind is OpKind.MatMul:
            x, w = ins
            if len(w) != 2 or x[-1] != w[0]:
                raise ShapeMismatch(f"node {n.id}: matmul dims {x} @ {w}")
            out = x[:-1] + (w[1],)
            macs = _prod(x[:-1]) * w[0] * w[1]
        elif kind is OpKind.SparseMatMul:
            x = ins[0]
            m = n.sparse
            if x[-1] != m.cols:
                raise ShapeMismatch(
                    f"node {n.id}: input {x} vs sparse cols {m.cols}"
                )
            out = x[:-1] + (m.rows,)
            macs = _prod(x[:-1]) * sparse_mac_count(m)
        elif kind in (OpKind.Conv2D, OpKind.Conv2DTranspose):
            x, w = ins
            if len(x) != 4 or len(w) != 4:
                raise ShapeMismatch(f"node {n.id}: conv dims {x} with {w}")
            stride = n.attr("stride", 1)
            groups = n.attr("groups", 1)
            padding = n.attr("padding", "same")
            kh, kw = w[0], w[1]
            if kind is OpKind.Conv2D:
                oh, _ = _conv_geometry(x[1], kh, stride, padding)
                ow, _ = _conv_geometry(x[2], kw, stride, padding)
                cout = w[3]
                out = (x[0], oh, ow, cout)
                macs = oh * ow * cout * (x[3] // groups) * kh * kw * x[0]
            else:
                if padding == "same":
                    oh, ow = x[1] * stride, x[2] * stride
                else:
                    oh = (x[1] - 1) * stride + kh
                    ow = (x[2] - 1) * stride + kw
                cout = w[2] * groups
                out = (x[0], oh, ow, cout)
                # every input sample meets every kernel tap of its group
                macs = x[1] * x[2] * cout * (x[3] // groups) * kh * kw * x[0]
        elif kind is OpKind.Mul:
            out = tuple(np.broadcast_shapes(*ins))
            ops = _prod(out)
        elif kind in (OpKind.Add, OpKind.BiasAdd, OpKind.Maximum):
            out = tuple(np.broadcast_shapes(*ins)) if kind is not OpKind.BiasAdd else ins[0]
            ops = _prod(out)
        elif kind is OpKind.Concat:
            axis = n.attr("axis", -1) % len(ins[0])
            out = list(ins[0])
            out[axis] = sum(s[axis] for s in ins)
            out = tuple(out)
            ops = _prod(out)  # per-element shift to the common quantizer
        elif kind is OpKind.MaxPool:
            kh, kw = n.attr("kernel", (2, 2))
            sh, sw = n.attr("stride_hw") or (kh, kw)
            padding = n.attr("padding", "valid")
            x = ins[0]
            squeeze = len(x) == 2
            shape4 = (1, x[0], x[1], 1) if squeeze else x
            oh, _ = _conv_geometry(shape4[1], kh, sh, padding)
            ow, _ = _conv_geometry(shape4[2], kw, sw, padding)
            out4 = (shape4[0], oh, ow, shape4[3])
            out = (oh, ow) if squeeze else out4
            ops = _prod(out4) * (kh * kw - 1)
        elif kind in (OpKind.Relu, OpKind.LeakyRelu, OpKind.PRelu):
            out = ins[0]
            ops = _prod(out)
        elif kind is OpKind.Flatten:
            axis = n.attr("axis", 1)
            out = (_prod(ins[0][:axis]), _prod(ins[0][axis:]))
        elif kind is OpKind.Transpose:
            perm = n.attr("perm")
            out = tuple(ins[0][p] for p in perm)
        elif kind is OpKind.Reshape:
            target = list(n.attr("dims"))
            if -1 in target:
                rest = _prod([d for d in target if d != -1])
                target[target.index(-1)] = _prod(ins[0]) // max(rest, 1)
            out = tuple(target)
            if _prod(out) != _prod(ins[0]):
                raise ShapeMismatch(f"node {n.id}: reshape {ins[0]} -> {out}")
        elif kind is OpKind.Slice:
            starts, ends = n.attr("starts"), n.attr("ends")
            out = tuple(e - s for s, e in zip(starts, ends))
        elif kind is OpKind.Expand:
            out = tuple(n.attr("dims"))
        elif kind is OpKind.Shape:
            out = (len(ins[0]),)
        else:  # pragma: no cover
            raise ShapeMismatch(f"node {n.id}: no cost rule for {kind}")
        dims[n.id] = out
        report.append(NodeCost(n.id, kind.name, out, int(macs), int(ops)))
    return CostReport(report)


def kmac_per_pixel(g: Graph, pixels: int, input_dims=None) -> float:
    """Total MACs normalized per output pixel, in thousands."""
    if pixels <= 0:
        raise ValueError("pixel count must be positive")
    return count_macs(g, input_dims).total_macs / pixels / 1000.0
