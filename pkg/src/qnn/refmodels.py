"""Reference model builders.

No trained weights ship with the engine; these builders produce graphs
with the published layer layout (fully-connected intra predictors with
1216-wide hidden layers, sparse weight matrices at the published per-layer
MAC budgets) and random weights, so complexity figures are real while
predictions are synthetic.  Builders are deterministic in their seed.
"""

from __future__ import annotations

import numpy as np

from .graph import Graph, InputDesc, Node, OpKind
from .intra import GRP_HEAD, REP_HEAD, context_spec
from .quantize import static_quantize
from .sparse import pack_sparse
from .tensor import ElementWidth, Tensor

# Executed-MAC budget per output pixel for the sparse intra models.
SPARSE_MACS_PER_PIXEL = {(4, 4): 7773, (8, 8): 2624, (16, 16): 1411}

HIDDEN = 1216
LEAKY_SLOPE = 0.1


def _fc_layer_dims(net_shape: tuple) -> list[tuple[int, int]]:
    h, w = net_shape
    spec = context_spec(h, w)
    ctx = spec.flat_len(h, w)
    out = h * w + REP_HEAD + 2 * GRP_HEAD
    n_fc = 4 if net_shape == (16, 16) else 3
    dims = [(ctx, HIDDEN)]
    for _ in range(n_fc - 2):
        dims.append((HIDDEN, HIDDEN))
    dims.append((HIDDEN, out))
    return dims


def _aligned_sparse_dense(rows, cols, target, alignment, scale, rng):
    """Dense [rows, cols] float matrix whose aligned-run packing executes
    exactly `target` multiplies (target must divide by the alignment)."""
    assert target % alignment == 0 and cols % alignment == 0
    slots = cols // alignment
    n_runs = target // alignment
    base, extra = divmod(n_runs, rows)
    assert base + (1 if extra else 0) <= slots, "budget exceeds row capacity"
    dense = np.zeros((rows, cols), dtype=np.float32)
    boosted = rng.permutation(rows)[:extra]
    counts = np.full(rows, base)
    counts[boosted] += 1
    for r in range(rows):
        if counts[r] == 0:
            continue
        chosen = rng.choice(slots, size=counts[r], replace=False)
        for s in chosen:
            vals = rng.uniform(0.1 * scale, scale, alignment) * rng.choice(
                [-1.0, 1.0], alignment
            )
            dense[r, s * alignment : (s + 1) * alignment] = vals
    return dense


def _split_budget(total, sizes, alignment):
    """Apportion a MAC budget over layers proportionally, aligned."""
    grand = sum(sizes)
    parts = [((total * s // grand) // alignment) * alignment for s in sizes[:-1]]
    parts.append(total - sum(parts))
    return parts


def build_intra_model(
    net_shape: tuple,
    width: ElementWidth = ElementWidth.int16,
    seed: int = 0,
    sparse: bool = True,
    alignment: int = 8,
    input_q: int | None = None,
) -> Graph:
    """Fully-connected intra predictor for one native block shape.

    Sparse builds pin the executed-MAC count to the published per-pixel
    budget; dense builds keep full matrices.  Integer widths run the
    static quantizer over synthetic calibration contexts.
    """
    h, w = net_shape
    if net_shape not in SPARSE_MACS_PER_PIXEL and sparse:
        sparse = False
    rng = np.random.default_rng(seed + 1000 * h + w)
    dims = _fc_layer_dims(net_shape)
    budget = None
    if sparse:
        total = SPARSE_MACS_PER_PIXEL[net_shape] * h * w
        budget = _split_budget(total, [i * o for i, o in dims], alignment)

    nodes = []
    nid = 100
    prev = 0  # input id
    ctx_len = dims[0][0]
    for li, (fan_in, fan_out) in enumerate(dims):
        scale = 0.8 / np.sqrt(fan_in)
        last = li == len(dims) - 1
        if sparse:
            dense = _aligned_sparse_dense(
                fan_out, fan_in, budget[li], alignment, scale, rng
            )
            m = pack_sparse(
                Tensor((fan_out, fan_in), ElementWidth.float32, 0, dense), alignment
            )
            mm = Node(nid, OpKind.SparseMatMul, [prev], sparse=m)
            nodes.append(mm)
            nid += 1
        else:
            wdat = rng.uniform(-scale, scale, (fan_in, fan_out)).astype(np.float32)
            wc = Node(nid, OpKind.Const,
                      const=Tensor((fan_in, fan_out), ElementWidth.float32, 0, wdat))
            mm = Node(nid + 1, OpKind.MatMul, [prev, wc.id])
            nodes.extend([wc, mm])
            nid += 2
        bdat = rng.uniform(-0.1, 0.1, (fan_out,)).astype(np.float32)
        bc = Node(nid, OpKind.Const,
                  const=Tensor((fan_out,), ElementWidth.float32, 0, bdat))
        ba = Node(nid + 1, OpKind.BiasAdd, [mm.id, bc.id])
        nodes.extend([bc, ba])
        nid += 2
        prev = ba.id
        if not last:
            act = Node(nid, OpKind.LeakyRelu, [prev], {"alpha": LEAKY_SLOPE})
            nodes.append(act)
            prev = act.id
            nid += 1
    g = Graph(ElementWidth.float32, [InputDesc(0, (1, ctx_len))], nodes, [prev])
    if not width.is_integer:
        return g
    calib = [
        Tensor((1, ctx_len), ElementWidth.float32, 0,
               rng.uniform(-255.0, 255.0, (1, ctx_len)).astype(np.float32))
        for _ in range(3)
    ]
    return static_quantize(g, calib, width, input_q=input_q)


def build_all_intra_models(width=ElementWidth.int16, seed=0, sparse=True):
    from .intra import NATIVE_SHAPES

    return {s: build_intra_model(s, width, seed, sparse) for s in NATIVE_SHAPES}


# ---------------------------------------------------------------------------
# small loop-filter graphs for harness runs (any model file works; these
# give the behaviors the tests and demos need)
# ---------------------------------------------------------------------------

def build_filter_model(
    kind: str = "zero",
    patch: int = 32,
    border: int = 8,
    channels: int = 5,
    width: ElementWidth = ElementWidth.float32,
    seed: int = 0,
    qp_gain: float = 0.0,
    bias: float = 0.0,
) -> Graph:
    """1x1-conv residual filters over [1, patch+2b, patch+2b, channels].

    kind "zero": residual identically zero.
    kind "bias": constant residual of `bias` (normalized sample units).
    kind "qp-linear": residual = qp_gain * QP-plane + bias, so candidate
        parameters shift the output in a controlled way.
    kind "conv": seeded random 3x3 conv stack (for fidelity tests).
    """
    side = patch + 2 * border
    in_dims = (1, side, side, channels)
    nodes = []
    if kind in ("zero", "bias", "qp-linear"):
        wdat = np.zeros((1, 1, channels, 1), dtype=np.float32)
        if kind == "qp-linear":
            wdat[0, 0, 3, 0] = qp_gain  # channel 3 is the QP plane
        wc = Node(10, OpKind.Const,
                  const=Tensor((1, 1, channels, 1), ElementWidth.float32, 0, wdat))
        cv = Node(11, OpKind.Conv2D, [0, 10], {"stride": 1, "groups": 1,
                                               "padding": "same"})
        bc = Node(12, OpKind.Const,
                  const=Tensor((1,), ElementWidth.float32, 0,
                               np.array([bias], dtype=np.float32)))
        ba = Node(13, OpKind.BiasAdd, [11, 12])
        nodes = [wc, cv, bc, ba]
        out = 13
    elif kind == "conv":
        rng = np.random.default_rng(seed)
        f = 8
        w1 = rng.uniform(-0.25, 0.25, (3, 3, channels, f)).astype(np.float32)
        w2 = rng.uniform(-0.25, 0.25, (3, 3, f, 1)).astype(np.float32)
        n1 = Node(10, OpKind.Const, const=Tensor(w1.shape, ElementWidth.float32, 0, w1))
        c1 = Node(11, OpKind.Conv2D, [0, 10], {"stride": 1, "groups": 1,
                                               "padding": "same"})
        a1 = Node(12, OpKind.LeakyRelu, [11], {"alpha": 0.1})
        n2 = Node(13, OpKind.Const, const=Tensor(w2.shape, ElementWidth.float32, 0, w2))
        c2 = Node(14, OpKind.Conv2D, [12, 13], {"stride": 1, "groups": 1,
                                                "padding": "same"})
        nodes = [n1, c1, a1, n2, c2]
        out = 14
    else:
        raise ValueError(f"unknown filter-model kind {kind!r}")
    g = Graph(ElementWidth.float32, [InputDesc(0, in_dims)], nodes, [out])
    if not width.is_integer:
        return g
    rng = np.random.default_rng(seed + 7)
    calib = [
        Tensor(in_dims, ElementWidth.float32, 0,
               rng.uniform(0.0, 1.0, in_dims).astype(np.float32))
        for _ in range(2)
    ]
    return static_quantize(g, calib, width)
