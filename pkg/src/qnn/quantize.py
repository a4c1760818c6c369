"""Static conversion of a float32 graph into a shift-only integer graph.

Weights get the largest shift that still fits their magnitude; latent
(activation) shifts come from calibration-run ranges with a fixed
headroom factor; each MatMul/Conv/Mul node gets the largest internal
shift that keeps its output quantizer non-negative while leaving the
output representable on the calibration data.
"""

from __future__ import annotations

import numpy as np

from .errors import CalibrationEmpty, QuantizerOrder, Unquantizable
from .graph import Graph, InputDesc, Node, OpKind, _run_node, _toposort, validate
from .sparse import Run, SparsePackedMatrix
from .tensor import ElementWidth, Tensor, choose_shift, quantize_tensor

__all__ = ["choose_shift", "static_quantize", "DEFAULT_INPUT_Q", "INTEGER_RULES"]

# Default input quantizer per width (8-bit content at 10-bit depth maps
# exactly onto these).
DEFAULT_INPUT_Q = {
    ElementWidth.int16: 7,
    ElementWidth.int32: 23,
    ElementWidth.int8: 3,
}

# Kinds with an integer execution rule; anything else is unquantizable.
INTEGER_RULES = frozenset(OpKind)

_WEIGHT_CONSUMERS = (
    OpKind.MatMul,
    OpKind.Conv2D,
    OpKind.Conv2DTranspose,
    OpKind.Mul,
    OpKind.SparseMatMul,
)


def _as_sample_sets(calibration, n_inputs: int) -> list[list[Tensor]]:
    sets = []
    for sample in calibration:
        if isinstance(sample, Tensor):
            sample = [sample]
        if len(sample) != n_inputs:
            raise CalibrationEmpty(
                f"calibration sample has {len(sample)} tensors, graph wants {n_inputs}"
            )
        sets.append(list(sample))
    return sets


def _float_stats(g: Graph, samples: list[list[Tensor]]) -> dict[int, float]:
    """Max |value| seen per id across all calibration runs (float path)."""
    order = _toposort(g)
    stats: dict[int, float] = {}

    def see(i, t):
        m = float(np.max(np.abs(t.data))) if t.size else 0.0
        stats[i] = max(stats.get(i, 0.0), m)

    for sample in samples:
        values = {d.id: t for d, t in zip(g.inputs, sample)}
        for d in g.inputs:
            see(d.id, values[d.id])
        for n in order:
            ins = [values[i] for i in n.inputs]
            values[n.id] = _run_node(n, ins, g.width)
            see(n.id, values[n.id])
    return stats


def static_quantize(
    g: Graph,
    calibration,
    width: ElementWidth = ElementWidth.int16,
    input_q: int | None = None,
    headroom: float = 1.25,
) -> Graph:
    """Quantize a validated float graph to the given integer width.

    Deterministic in (graph, calibration, width).  Raises Unquantizable
    when a node kind has no integer rule, CalibrationEmpty when no
    calibration inputs are supplied.
    """
    if not width.is_integer:
        raise ValueError("target width must be an integer width")
    if g.width.is_integer:
        raise ValueError("source graph must be float32")
    problems = validate(g)
    if problems:
        raise QuantizerOrder(f"source graph does not validate: {problems[0]}")
    calibration = list(calibration) if calibration is not None else []
    if not calibration:
        raise CalibrationEmpty("static quantization needs calibration inputs")
    samples = _as_sample_sets(calibration, len(g.inputs))
    for n in g.nodes:
        if n.kind not in INTEGER_RULES:
            raise Unquantizable(f"node {n.id} ({n.kind.name}) has no integer rule")

    q_in = DEFAULT_INPUT_Q[width] if input_q is None else input_q
    stats = _float_stats(g, samples)
    nodes = g.node_map()
    order = _toposort(g)

    def desired(nid: int) -> int:
        return choose_shift(stats.get(nid, 0.0) * headroom, width)

    # Pass A: cap constants from their consumers' roles.
    caps: dict[int, list[int]] = {n.id: [] for n in g.nodes if n.kind is OpKind.Const}

    def free_q(nid: int) -> int:
        c = nodes[nid].const
        return choose_shift(float(np.max(np.abs(c.data))) if c.size else 0.0, width)

    plan: dict[int, int] = {d.id: q_in for d in g.inputs}
    for n in order:
        if n.kind is OpKind.Const:
            plan[n.id] = free_q(n.id)
            continue
        ins = n.inputs
        if n.kind in _WEIGHT_CONSUMERS:
            q0 = plan[ins[0]]
            plan[n.id] = min(q0, desired(n.id))
        elif n.kind is OpKind.BiasAdd:
            q0 = plan[ins[0]]
            qb = min(plan[ins[1]], q0, desired(n.id))
            if ins[1] in caps:
                caps[ins[1]].append(qb)
            plan[n.id] = qb
        elif n.kind in (OpKind.Add, OpKind.Concat):
            for i in ins:
                if i in caps:
                    caps[i].append(min(plan[i], desired(n.id)))
            plan[n.id] = min(plan[i] for i in ins)
        elif n.kind is OpKind.Maximum:
            if ins[1] in caps:
                caps[ins[1]].append(min(plan[ins[1]], plan[ins[0]]))
            plan[n.id] = plan[ins[0]]
        elif n.kind is OpKind.Shape:
            plan[n.id] = 0
        else:
            plan[n.id] = plan[ins[0]]

    const_q = {
        nid: min([free_q(nid)] + caps[nid]) for nid in caps
    }

    # Pass B: final forward quantizer assignment with constants pinned,
    # choosing q_i as the gap between input and desired output shifts.
    final: dict[int, int] = {d.id: q_in for d in g.inputs}
    new_nodes: list[Node] = []
    by_id: dict[int, Node] = {}
    for n in order:
        attrs = dict(n.attrs)
        const = None
        sparse = None
        if n.kind is OpKind.Const:
            qc = const_q[n.id]
            const = quantize_tensor(n.const, qc, width)
            final[n.id] = qc
        elif n.kind is OpKind.SparseMatMul:
            src = n.sparse
            qw = choose_shift(
                max((float(np.max(np.abs(r.values))) for r in src.runs), default=0.0),
                width,
            )
            runs = [
                Run(r.row, r.start,
                    quantize_tensor(
                        Tensor((r.length,), ElementWidth.float32, 0, r.values),
                        qw, width).data)
                for r in src.runs
            ]
            sparse = SparsePackedMatrix(src.rows, src.cols, src.alignment,
                                        width, qw, runs)
            q0 = final[n.inputs[0]]
            q_out = min(q0, desired(n.id))
            attrs["q_i"] = q0 - q_out
            final[n.id] = q_out
        elif n.kind in (OpKind.MatMul, OpKind.Conv2D, OpKind.Conv2DTranspose,
                        OpKind.Mul):
            q0 = final[n.inputs[0]]
            q_out = min(q0, desired(n.id))
            attrs["q_i"] = q0 - q_out
            final[n.id] = q_out
        elif n.kind is OpKind.BiasAdd:
            final[n.id] = final[n.inputs[1]]
        elif n.kind in (OpKind.Add, OpKind.Concat):
            final[n.id] = min(final[i] for i in n.inputs)
        elif n.kind is OpKind.Maximum:
            final[n.id] = final[n.inputs[0]]
        elif n.kind is OpKind.Shape:
            final[n.id] = 0
        else:
            final[n.id] = final[n.inputs[0]]
        by_id[n.id] = Node(n.id, n.kind, list(n.inputs), attrs, const, sparse)
    # keep original node order for stable serialization
    for n in g.nodes:
        new_nodes.append(by_id[n.id])

    out = Graph(
        width,
        [InputDesc(d.id, d.dims, q_in) for d in g.inputs],
        new_nodes,
        list(g.outputs),
    )
    problems = validate(out)
    if problems:
        raise QuantizerOrder(f"quantization produced an invalid graph: {problems[0]}")
    return out
