"""Shared test helpers: big-integer reference oracles and graph builders.

The oracles are written in plain Python integer arithmetic (arbitrary
precision, floor shifts) and stay independent of the engine's numpy fast
paths; every integer kernel result is judged against them.
"""

from __future__ import annotations

import numpy as np

from qnn.graph import Graph, InputDesc, Node, OpKind
from qnn.tensor import ElementWidth, Tensor


# ---------------------------------------------------------------------------
# big-integer kernel oracles
# ---------------------------------------------------------------------------

def o_clip(x: int, bits: int) -> int:
    lo = -(1 << (bits - 1)) + 1
    hi = (1 << (bits - 1)) - 1
    return max(lo, min(hi, x))


def o_bias_add(x0, q0, x1, q1, bits):
    return [o_clip((a >> (q0 - q1)) + b, bits) for a, b in zip(x0, x1)]


def o_add(x0, q0, x1, q1, bits):
    q = min(q0, q1)
    return [o_clip((a >> (q0 - q)) + (b >> (q1 - q)), bits) for a, b in zip(x0, x1)]


def o_mul(x0, q0, x1, q1, q_i, bits):
    return [o_clip((a * b) >> (q1 + q_i), bits) for a, b in zip(x0, x1)]


def o_matmul(x0, q0, w, q1, q_i, bits):
    """x0: list length K; w: K x N nested list; returns length-N list."""
    k = len(x0)
    n = len(w[0])
    out = []
    for j in range(n):
        acc = 0
        for t in range(k):
            acc += x0[t] * w[t][j]
        out.append(o_clip(acc >> (q1 + q_i), bits))
    return out


def o_concat(parts, qs, bits):
    q = min(qs)
    out = []
    for vals, qk in zip(parts, qs):
        out.extend(v >> (qk - q) for v in vals)
    return out


def o_slope_shift(alpha: float, bits: int) -> int:
    hi = (1 << (bits - 1)) - 1
    if alpha == 0:
        return bits - 1
    best = 0
    for q in range(64):
        if round(abs(alpha) * (1 << q)) <= hi:
            best = q
        else:
            break
    return best


def o_leaky_relu(x, alpha, bits):
    qa = o_slope_shift(alpha, bits)
    a_int = round(alpha * (1 << qa))
    return [v if v >= 0 else o_clip((a_int * v) >> qa, bits) for v in x]


def o_maximum(x0, q0, x1, q1, bits):
    return [max(a, o_clip(b << (q0 - q1), bits)) for a, b in zip(x0, x1)]


def o_conv2d(x, q0, w, q1, stride, padding, q_i, bits):
    """x: [H][W][C] nested lists; w: [kh][kw][C][F]; valid/same, groups=1."""
    h, ww, c = len(x), len(x[0]), len(x[0][0])
    kh, kw, _, f = len(w), len(w[0]), len(w[0][0]), len(w[0][0][0])

    def geom(size, k, s):
        if padding == "same":
            out = -(-size // s)
            pad = max((out - 1) * s + k - size, 0)
            return out, pad // 2
        return (size - k) // s + 1, 0

    oh, pt = geom(h, kh, stride)
    ow, pl = geom(ww, kw, stride)
    out = [[[0] * f for _ in range(ow)] for _ in range(oh)]
    for oy in range(oh):
        for ox in range(ow):
            for fo in range(f):
                acc = 0
                for a in range(kh):
                    for b in range(kw):
                        iy = oy * stride + a - pt
                        ix = ox * stride + b - pl
                        if 0 <= iy < h and 0 <= ix < ww:
                            for ci in range(c):
                                acc += x[iy][ix][ci] * w[a][b][ci][fo]
                out[oy][ox][fo] = o_clip(acc >> (q1 + q_i), bits)
    return out


# ---------------------------------------------------------------------------
# tensor and graph builders
# ---------------------------------------------------------------------------

def int_tensor(rng, dims, width=ElementWidth.int16, q=10, lo=None, hi=None):
    lo = -width.max_value if lo is None else lo
    hi = width.max_value if hi is None else hi
    data = rng.integers(lo, hi + 1, dims).astype(width.dtype)
    return Tensor(dims, width, q, data)


def float_tensor(rng, dims, scale=1.0):
    return Tensor(dims, ElementWidth.float32, 0,
                  rng.uniform(-scale, scale, dims).astype(np.float32))


def const_node(nid, arr):
    arr = np.asarray(arr, dtype=np.float32)
    return Node(nid, OpKind.Const,
                const=Tensor(arr.shape, ElementWidth.float32, 0, arr))


def build_random_mlp(rng, n_layers=3, in_dim=8, hidden=12, out_dim=4,
                     act="leaky"):
    """Float MLP with weight scales that keep activations near [-1, 1]."""
    nodes = []
    nid = 100
    prev = 0
    dims = [in_dim] + [hidden] * (n_layers - 1) + [out_dim]
    for li in range(n_layers):
        fan_in, fan_out = dims[li], dims[li + 1]
        scale = 1.0 / np.sqrt(fan_in)
        wc = const_node(nid, rng.uniform(-scale, scale, (fan_in, fan_out)))
        mm = Node(nid + 1, OpKind.MatMul, [prev, wc.id])
        bc = const_node(nid + 2, rng.uniform(-0.1, 0.1, (fan_out,)))
        ba = Node(nid + 3, OpKind.BiasAdd, [mm.id, bc.id])
        nodes.extend([wc, mm, bc, ba])
        prev = ba.id
        nid += 4
        if li < n_layers - 1:
            if act == "leaky":
                a = Node(nid, OpKind.LeakyRelu, [prev], {"alpha": 0.1})
            else:
                a = Node(nid, OpKind.Relu, [prev])
            nodes.append(a)
            prev = a.id
            nid += 1
    return Graph(ElementWidth.float32, [InputDesc(0, (1, in_dim))], nodes, [prev])


def build_random_cnn(rng, n_layers=2, side=6, chans=3, feats=4):
    """Small float CNN: stacked same-padding 3x3 convs with bias and relu."""
    nodes = []
    nid = 100
    prev = 0
    cin = chans
    for li in range(n_layers):
        cout = feats
        scale = 1.0 / np.sqrt(9 * cin)
        wc = const_node(nid, rng.uniform(-scale, scale, (3, 3, cin, cout)))
        cv = Node(nid + 1, OpKind.Conv2D, [prev, wc.id],
                  {"stride": 1, "groups": 1, "padding": "same"})
        bc = const_node(nid + 2, rng.uniform(-0.1, 0.1, (cout,)))
        ba = Node(nid + 3, OpKind.BiasAdd, [cv.id, bc.id])
        nodes.extend([wc, cv, bc, ba])
        prev = ba.id
        nid += 4
        if li < n_layers - 1:
            a = Node(nid, OpKind.Relu, [prev])
            nodes.append(a)
            prev = a.id
            nid += 1
        cin = cout
    return Graph(ElementWidth.float32, [InputDesc(0, (1, side, side, chans))],
                 nodes, [prev])
