"""Immutable dataflow graph of typed layers and its executor.

A graph carries one element width for all tensors (whole-graph precision).
Execution walks nodes in a deterministic topological order (ready nodes
drain in ascending id order), dispatching to the integer kernels for
integer widths and the float kernels otherwise.  Output quantizers follow
the per-kernel shift rules and can be predicted statically; `validate`
checks exactly the conditions execution relies on.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels as K
from .errors import InvalidNode, QnnError, ShapeMismatch
from .sparse import SparsePackedMatrix, spmv_q
from .tensor import ElementWidth, Tensor, dequantize


class OpKind(Enum):
    Const = 0
    MatMul = 1
    SparseMatMul = 2
    Conv2D = 3
    Conv2DTranspose = 4
    Add = 5
    BiasAdd = 6
    Mul = 7
    Concat = 8
    MaxPool = 9
    Maximum = 10
    Relu = 11
    PRelu = 12
    LeakyRelu = 13
    Flatten = 14
    Transpose = 15
    Reshape = 16
    Slice = 17
    Expand = 18
    Shape = 19


# input arity per kind; Concat is variadic (None).
ARITY = {
    OpKind.Const: 0,
    OpKind.MatMul: 2,
    OpKind.SparseMatMul: 1,
    OpKind.Conv2D: 2,
    OpKind.Conv2DTranspose: 2,
    OpKind.Add: 2,
    OpKind.BiasAdd: 2,
    OpKind.Mul: 2,
    OpKind.Concat: None,
    OpKind.MaxPool: 1,
    OpKind.Maximum: 2,
    OpKind.Relu: 1,
    OpKind.PRelu: 2,
    OpKind.LeakyRelu: 1,
    OpKind.Flatten: 1,
    OpKind.Transpose: 1,
    OpKind.Reshape: 1,
    OpKind.Slice: 1,
    OpKind.Expand: 1,
    OpKind.Shape: 1,
}


_LIST_ATTRS = ("perm", "dims", "starts", "ends", "kernel", "stride_hw")


@dataclass
class Node:
    id: int
    kind: OpKind
    inputs: list[int] = field(default_factory=list)
    attrs: dict = field(default_factory=dict)
    const: Tensor | None = None
    sparse: SparsePackedMatrix | None = None

    def __post_init__(self):
        # canonical attribute types so load(save(g)) compares equal
        self.inputs = [int(i) for i in self.inputs]
        norm = {}
        for k, v in self.attrs.items():
            if k == "alpha":
                norm[k] = float(np.float32(v))
            elif k == "padding":
                norm[k] = str(v)
            elif k in _LIST_ATTRS:
                norm[k] = [int(x) for x in v]
            else:
                norm[k] = int(v)
        self.attrs = norm

    def attr(self, name, default=None):
        return self.attrs.get(name, default)


@dataclass
class InputDesc:
    id: int
    dims: tuple
    q: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)


@dataclass
class Graph:
    width: ElementWidth
    inputs: list[InputDesc]
    nodes: list[Node]
    outputs: list[int]

    def node_map(self) -> dict[int, Node]:
        return {n.id: n for n in self.nodes}

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return False
        if (self.width, self.outputs) != (other.width, other.outputs):
            return False
        if [(i.id, i.dims, i.q) for i in self.inputs] != [
            (i.id, i.dims, i.q) for i in other.inputs
        ]:
            return False
        if len(self.nodes) != len(other.nodes):
            return False
        for a, b in zip(self.nodes, other.nodes):
            if (a.id, a.kind, a.inputs, a.attrs) != (b.id, b.kind, b.inputs, b.attrs):
                return False
            if (a.const is None) != (b.const is None) or (
                a.const is not None and a.const != b.const
            ):
                return False
            if (a.sparse is None) != (b.sparse is None):
                return False
            if a.sparse is not None:
                if (a.sparse.rows, a.sparse.cols, a.sparse.alignment, a.sparse.q) != (
                    b.sparse.rows, b.sparse.cols, b.sparse.alignment, b.sparse.q
                ):
                    return False
                if len(a.sparse.runs) != len(b.sparse.runs) or any(
                    (ra.row, ra.start) != (rb.row, rb.start)
                    or not np.array_equal(ra.values, rb.values)
                    for ra, rb in zip(a.sparse.runs, b.sparse.runs)
                ):
                    return False
        return True


@dataclass
class Violation:
    node_id: int | None
    code: str
    message: str

    def __str__(self):
        where = f"node {self.node_id}: " if self.node_id is not None else ""
        return f"{where}{self.code}: {self.message}"


def _toposort(g: Graph) -> list[Node]:
    """Execution order: ready nodes drain in ascending id order."""
    nodes = g.node_map()
    indeg = {}
    consumers: dict[int, list[int]] = {}
    heap = []
    for n in g.nodes:
        deps = [i for i in n.inputs if i in nodes]
        indeg[n.id] = len(deps)
        for i in deps:
            consumers.setdefault(i, []).append(n.id)
        if indeg[n.id] == 0:
            heapq.heappush(heap, n.id)
    order = []
    while heap:
        nid = heapq.heappop(heap)
        order.append(nodes[nid])
        for c in consumers.get(nid, []):
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    return order


def validate(g: Graph) -> list[Violation]:
    """Static report of everything that would make `infer` fail."""
    out: list[Violation] = []
    ids = set()
    for n in g.nodes:
        if n.id in ids:
            out.append(Violation(n.id, "duplicate-id", "node id reused"))
        ids.add(n.id)
    for i in g.inputs:
        if i.id in ids:
            out.append(Violation(i.id, "duplicate-id", "input id collides with a node"))
        ids.add(i.id)
        if g.width.is_integer and i.q < 0:
            out.append(Violation(i.id, "bad-quantizer", f"negative input q {i.q}"))
    known = ids
    for n in g.nodes:
        want = ARITY[n.kind]
        if want is not None and len(n.inputs) != want:
            out.append(Violation(
                n.id, "arity", f"{n.kind.name} wants {want} inputs, has {len(n.inputs)}"
            ))
        if n.kind is OpKind.Concat and len(n.inputs) < 1:
            out.append(Violation(n.id, "arity", "Concat needs at least one input"))
        for i in n.inputs:
            if i not in known:
                out.append(Violation(n.id, "missing-input", f"references id {i}"))
        if n.kind is OpKind.Const and n.const is None:
            out.append(Violation(n.id, "missing-payload", "Const without tensor"))
        if n.kind is OpKind.SparseMatMul and n.sparse is None:
            out.append(Violation(n.id, "missing-payload", "SparseMatMul without matrix"))
        if n.kind is OpKind.Const and n.const is not None and n.const.width is not g.width:
            out.append(Violation(
                n.id, "mixed-width",
                f"constant is {n.const.width.value}, graph is {g.width.value}",
            ))
        if n.kind in (OpKind.Conv2D, OpKind.Conv2DTranspose):
            if n.attr("stride", 1) not in (1, 2):
                out.append(Violation(n.id, "bad-attribute",
                                     f"stride {n.attr('stride')}"))
            if n.attr("groups", 1) < 1:
                out.append(Violation(n.id, "bad-attribute",
                                     f"groups {n.attr('groups')}"))
            if n.attr("padding", "same") not in ("same", "valid"):
                out.append(Violation(n.id, "bad-attribute",
                                     f"padding {n.attr('padding')!r}"))
        if n.kind in (OpKind.LeakyRelu,) and abs(n.attr("alpha", 0.0)) >= 1:
            out.append(Violation(n.id, "bad-attribute",
                                 f"|alpha| must be < 1, got {n.attr('alpha')}"))
        if n.attr("q_i", 0) < 0:
            out.append(Violation(n.id, "bad-attribute",
                                 f"negative internal shift {n.attr('q_i')}"))
    # cycle / reachability
    order = _toposort(g)
    if len(order) != len(g.nodes):
        left = sorted(set(n.id for n in g.nodes) - set(n.id for n in order))
        out.append(Violation(left[0] if left else None, "cycle",
                             f"nodes {left} never become ready"))
    for o in g.outputs:
        if o not in known:
            out.append(Violation(None, "missing-output", f"output id {o} undefined"))
    if not out and g.width.is_integer:
        try:
            q = predict_quantizers(g)
        except QnnError as e:
            out.append(Violation(None, "quantizer-order", str(e)))
    return out


def predict_quantizers(g: Graph) -> dict[int, int]:
    """Statically predicted output quantizer for every id, integer graphs.

    Raises QuantizerOrder (via the shared checks) when a node would need a
    shift its kernel refuses; `validate` reports that as a violation.
    """
    from .errors import QuantizerOrder

    q: dict[int, int] = {i.id: i.q for i in g.inputs}
    for n in _toposort(g):
        if n.kind is OpKind.Const:
            q[n.id] = n.const.q
            continue
        if n.kind is OpKind.SparseMatMul:
            q0 = q[n.inputs[0]]
            qi = n.attr("q_i", 0)
            if q0 < qi:
                raise QuantizerOrder(
                    f"node {n.id}: internal shift {qi} exceeds input quantizer {q0}"
                )
            q[n.id] = q0 - qi
            continue
        ins = [q[i] for i in n.inputs]
        kind = n.kind
        if kind in (OpKind.MatMul, OpKind.Conv2D, OpKind.Conv2DTranspose, OpKind.Mul):
            qi = n.attr("q_i", 0)
            if ins[0] < qi:
                raise QuantizerOrder(
                    f"node {n.id}: internal shift {qi} exceeds input quantizer {ins[0]}"
                )
            q[n.id] = ins[0] - qi
        elif kind is OpKind.BiasAdd:
            if ins[0] < ins[1]:
                raise QuantizerOrder(
                    f"node {n.id}: bias add needs q0 >= q1, got {ins[0]} < {ins[1]}"
                )
            q[n.id] = ins[1]
        elif kind is OpKind.Add:
            q[n.id] = min(ins)
        elif kind is OpKind.Concat:
            q[n.id] = min(ins)
        elif kind is OpKind.Maximum:
            if ins[0] < ins[1]:
                raise QuantizerOrder(
                    f"node {n.id}: maximum needs q0 >= q1, got {ins[0]} < {ins[1]}"
                )
            q[n.id] = ins[0]
        elif kind is OpKind.Shape:
            q[n.id] = 0
        else:
            # single-input rule: output takes the input's quantizer
            q[n.id] = ins[0]
    return q


def _run_node(n: Node, ins: list[Tensor], width: ElementWidth) -> Tensor:
    integer = width.is_integer
    kind = n.kind
    if kind is OpKind.Const:
        return n.const
    if kind is OpKind.SparseMatMul:
        return spmv_q(n.sparse, ins[0], n.attr("q_i", 0))
    if kind is OpKind.MatMul:
        return (K.matmul_q(ins[0], ins[1], n.attr("q_i", 0)) if integer
                else K.matmul_f(ins[0], ins[1]))
    if kind is OpKind.Conv2D:
        args = (ins[0], ins[1], n.attr("stride", 1), n.attr("groups", 1),
                n.attr("padding", "same"))
        return (K.conv2d_q(*args, q_i=n.attr("q_i", 0)) if integer
                else K.conv2d_f(*args))
    if kind is OpKind.Conv2DTranspose:
        args = (ins[0], ins[1], n.attr("stride", 1), n.attr("groups", 1),
                n.attr("padding", "same"))
        return (K.conv2d_transpose_q(*args, q_i=n.attr("q_i", 0)) if integer
                else K.conv2d_transpose_f(*args))
    if kind is OpKind.Add:
        return K.add_q(ins[0], ins[1]) if integer else K.add_f(ins[0], ins[1])
    if kind is OpKind.BiasAdd:
        return K.bias_add_q(ins[0], ins[1]) if integer else K.bias_add_f(ins[0], ins[1])
    if kind is OpKind.Mul:
        return (K.mul_q(ins[0], ins[1], n.attr("q_i", 0)) if integer
                else K.mul_f(ins[0], ins[1]))
    if kind is OpKind.Concat:
        return (K.concat_q if integer else K.concat_f)(ins, n.attr("axis", -1))
    if kind is OpKind.MaxPool:
        return K.maxpool(ins[0], tuple(n.attr("kernel", (2, 2))),
                         tuple(n.attr("stride_hw")) if n.attr("stride_hw") else None,
                         n.attr("padding", "valid"))
    if kind is OpKind.Maximum:
        return K.maximum_q(ins[0], ins[1]) if integer else K.maximum_f(ins[0], ins[1])
    if kind is OpKind.Relu:
        return K.relu(ins[0])
    if kind is OpKind.PRelu:
        return K.prelu_q(ins[0], ins[1]) if integer else K.prelu_f(ins[0], ins[1])
    if kind is OpKind.LeakyRelu:
        return (K.leaky_relu_q(ins[0], n.attr("alpha", 0.01)) if integer
                else K.leaky_relu_f(ins[0], n.attr("alpha", 0.01)))
    if kind is OpKind.Flatten:
        return K.flatten(ins[0], n.attr("axis", 1))
    if kind is OpKind.Transpose:
        return K.transpose(ins[0], n.attr("perm"))
    if kind is OpKind.Reshape:
        return K.reshape(ins[0], n.attr("dims"))
    if kind is OpKind.Slice:
        return K.slice_(ins[0], n.attr("starts"), n.attr("ends"))
    if kind is OpKind.Expand:
        return K.expand(ins[0], n.attr("dims"))
    if kind is OpKind.Shape:
        return K.shape_of(ins[0])
    raise InvalidNode(f"no execution rule for {kind}", n.id)


class ExecutionContext:
    """Owns the mutable scratch state for one inference stream.

    A context is confined to one thread at a time; share the Graph, make
    one context per thread.  Value buffers are dropped as soon as the last
    consumer has run.
    """

    def __init__(self, graph: Graph):
        self.graph = graph
        self.order = _toposort(graph)
        if len(self.order) != len(graph.nodes):
            raise InvalidNode("graph contains a cycle; run validate() for details")
        self._consumers: dict[int, int] = {}
        for n in graph.nodes:
            for i in n.inputs:
                self._consumers[i] = self._consumers.get(i, 0) + 1

    def run(self, inputs: list[Tensor]) -> list[Tensor]:
        g = self.graph
        if len(inputs) != len(g.inputs):
            raise ShapeMismatch(
                f"graph wants {len(g.inputs)} inputs, got {len(inputs)}"
            )
        values: dict[int, Tensor] = {}
        for desc, t in zip(g.inputs, inputs):
            if tuple(t.dims) != desc.dims:
                raise ShapeMismatch(
                    f"input {desc.id} wants dims {desc.dims}, got {t.dims}"
                )
            if t.width is not g.width:
                raise ShapeMismatch(
                    f"input {desc.id} is {t.width.value}, graph is {g.width.value}"
                )
            if g.width.is_integer and t.q != desc.q:
                raise ShapeMismatch(
                    f"input {desc.id} carries q={t.q}, graph declares q={desc.q}"
                )
            values[desc.id] = t
        pending = dict(self._consumers)
        keep = set(g.outputs)
        for n in self.order:
            ins = []
            for i in n.inputs:
                if i not in values:
                    raise InvalidNode(f"input id {i} never produced", n.id)
                ins.append(values[i])
            try:
                values[n.id] = _run_node(n, ins, g.width)
            except QnnError as e:
                raise type(e)(f"node {n.id} ({n.kind.name}): {e}") from e
            for i in n.inputs:
                pending[i] -= 1
                if pending[i] == 0 and i not in keep:
                    values.pop(i, None)
        missing = [o for o in g.outputs if o not in values]
        if missing:
            raise InvalidNode(f"output ids {missing} never produced")
        return [values[o] for o in g.outputs]


def infer(g: Graph, inputs: list[Tensor]) -> list[Tensor]:
    """One-shot execution; wraps a fresh ExecutionContext."""
    return ExecutionContext(g).run(inputs)


def dequantize_graph(g: Graph) -> Graph:
    """Float twin of an integer graph: constants dequantized, shifts dropped."""
    if not g.width.is_integer:
        return g
    nodes = []
    for n in g.nodes:
        const = dequantize(n.const) if n.const is not None else None
        sparse = None
        if n.sparse is not None:
            dense = dequantize(n.sparse.to_dense())
            from .sparse import pack_sparse

            sparse = pack_sparse(dense, n.sparse.alignment)
        attrs = {k: v for k, v in n.attrs.items() if k != "q_i"}
        nodes.append(Node(n.id, n.kind, list(n.inputs), attrs, const, sparse))
    inputs = [InputDesc(i.id, i.dims, 0) for i in g.inputs]
    return Graph(ElementWidth.float32, inputs, nodes, list(g.outputs))
