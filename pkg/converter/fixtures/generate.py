#!/usr/bin/env python3
"""Regenerate the ONNX fixtures and their frozen reference outputs.

The ONNX files are written with a minimal hand-rolled protobuf encoder
(the sandbox has no onnx package); the expected outputs come from plain
numpy implementations of the ONNX op semantics, so they are independent
of both the converter and the engine under test.

Run from this directory: python3 generate.py
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
OPSET = 17

# ---------------------------------------------------------------------------
# protobuf wire encoding
# ---------------------------------------------------------------------------


def varint(v: int) -> bytes:
    if v < 0:
        v += 1 << 64
    out = bytearray()
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def field(num: int, wire: int, payload: bytes) -> bytes:
    return varint((num << 3) | wire) + payload


def f_varint(num: int, v: int) -> bytes:
    return field(num, 0, varint(v))


def f_bytes(num: int, payload: bytes) -> bytes:
    return field(num, 2, varint(len(payload)) + payload)


def f_string(num: int, s: str) -> bytes:
    return f_bytes(num, s.encode())


def f_packed_i64(num: int, vals) -> bytes:
    return f_bytes(num, b"".join(varint(int(v)) for v in vals))


def f_float(num: int, v: float) -> bytes:
    return field(num, 5, struct.pack("<f", v))


# AttributeProto types
AT_FLOAT, AT_INT, AT_STRING, AT_TENSOR, AT_FLOATS, AT_INTS = 1, 2, 3, 4, 6, 7


def attr_int(name: str, v: int) -> bytes:
    return f_bytes(5, f_string(1, name) + f_varint(3, v) + f_varint(20, AT_INT))


def attr_float(name: str, v: float) -> bytes:
    return f_bytes(5, f_string(1, name) + f_float(2, v) + f_varint(20, AT_FLOAT))


def attr_ints(name: str, vals) -> bytes:
    return f_bytes(5, f_string(1, name) + f_packed_i64(8, vals) + f_varint(20, AT_INTS))


def tensor_proto(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.int64:
        dtype_code = 7
        raw = arr.astype("<i8").tobytes()
    else:
        dtype_code = 1
        raw = arr.astype("<f4").tobytes()
    msg = f_packed_i64(1, arr.shape) + f_varint(2, dtype_code)
    msg += f_string(8, name) + f_bytes(9, raw)
    return msg


def node(op_type: str, inputs, outputs, name="", attrs=b"") -> bytes:
    msg = b"".join(f_string(1, i) for i in inputs)
    msg += b"".join(f_string(2, o) for o in outputs)
    msg += f_string(3, name or f"{op_type}_0") + f_string(4, op_type) + attrs
    return f_bytes(1, msg)


def value_info(name: str, dims, dynamic_last=False) -> bytes:
    dim_msgs = b""
    for i, d in enumerate(dims):
        if dynamic_last and i == len(dims) - 1:
            dim_msgs += f_bytes(1, f_string(2, "N"))  # dim_param
        else:
            dim_msgs += f_bytes(1, f_varint(1, int(d)))
    shape = f_bytes(2, dim_msgs)
    tensor_type = f_varint(1, 1) + shape  # elem_type float
    return f_string(1, name) + f_bytes(2, f_bytes(1, tensor_type))


def model(nodes, inputs, outputs, initializers, opset=OPSET) -> bytes:
    graph = b"".join(nodes)
    graph += b"".join(f_bytes(5, tensor_proto(n, a)) for n, a in initializers)
    graph += f_string(2, "g")
    graph += b"".join(f_bytes(11, vi) for vi in inputs)
    graph += b"".join(f_bytes(12, vi) for vi in outputs)
    m = f_varint(1, 8)  # ir_version
    m += f_string(2, "fixture-gen")
    m += f_bytes(7, graph)
    m += f_bytes(8, f_varint(2, opset))
    return m


# ---------------------------------------------------------------------------
# numpy references for the ONNX op semantics (NCHW)
# ---------------------------------------------------------------------------


def ref_conv(x, w, b, strides, pads, group=1):
    n, cin, h, ww = x.shape
    cout, cin_g, kh, kw = w.shape
    pt, pl, pb, pr = pads
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    oh = (h + pt + pb - kh) // strides[0] + 1
    ow = (ww + pl + pr - kw) // strides[1] + 1
    out = np.zeros((n, cout, oh, ow))
    cpg = cout // group
    for co in range(cout):
        g = co // cpg
        for oy in range(oh):
            for ox in range(ow):
                patch = xp[:, g * cin_g : (g + 1) * cin_g,
                           oy * strides[0] : oy * strides[0] + kh,
                           ox * strides[1] : ox * strides[1] + kw]
                out[:, co, oy, ox] = (patch * w[co]).sum(axis=(1, 2, 3))
    if b is not None:
        out += b[None, :, None, None]
    return out


def ref_conv_transpose(x, w, strides):
    n, cin, h, ww = x.shape
    _, cout, kh, kw = w.shape
    oh = (h - 1) * strides[0] + kh
    ow = (ww - 1) * strides[1] + kw
    out = np.zeros((n, cout, oh, ow))
    for iy in range(h):
        for ix in range(ww):
            for ci in range(cin):
                out[:, :, iy * strides[0] : iy * strides[0] + kh,
                    ix * strides[1] : ix * strides[1] + kw] += (
                    x[:, ci, iy, ix][:, None, None, None] * w[ci][None]
                )
    return out


def ref_maxpool(x, kernel, strides):
    n, c, h, w = x.shape
    kh, kw = kernel
    oh = (h - kh) // strides[0] + 1
    ow = (w - kw) // strides[1] + 1
    out = np.zeros((n, c, oh, ow))
    for oy in range(oh):
        for ox in range(ow):
            out[:, :, oy, ox] = x[:, :, oy * strides[0] : oy * strides[0] + kh,
                                  ox * strides[1] : ox * strides[1] + kw].max(
                axis=(2, 3))
    return out


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------


def f32(rng, *dims, scale=1.0):
    return rng.uniform(-scale, scale, dims).astype(np.float32)


def dump(name, model_bytes, inputs, outputs, image_outputs=()):
    (HERE / f"{name}.onnx").write_bytes(model_bytes)
    meta = {
        "inputs": {k: {"dims": list(v.shape), "data": v.reshape(-1).tolist()}
                   for k, v in inputs.items()},
        "outputs": {k: {"dims": list(v.shape),
                        "data": np.asarray(v, dtype=np.float64).reshape(-1).tolist()}
                    for k, v in outputs.items()},
        "image_outputs": list(image_outputs),
    }
    (HERE / f"{name}.json").write_text(json.dumps(meta))
    print(f"wrote {name}")


def gen_gemm(rng):
    x = f32(rng, 1, 6)
    w = f32(rng, 4, 6)   # Gemm transB=1 layout [N, K]
    b = f32(rng, 4, scale=0.3)
    nodes = [node("Gemm", ["x", "w", "b"], ["y"],
                  attrs=attr_float("alpha", 1.0) + attr_float("beta", 1.0)
                  + attr_int("transB", 1))]
    m = model(nodes, [value_info("x", x.shape)], [value_info("y", (1, 4))],
              [("w", w), ("b", b)])
    y = x @ w.T + b
    dump("op_gemm", m, {"x": x}, {"y": y})


def gen_matmul(rng):
    x = f32(rng, 2, 5)
    w = f32(rng, 5, 3)
    m = model([node("MatMul", ["x", "w"], ["y"])],
              [value_info("x", x.shape)], [value_info("y", (2, 3))], [("w", w)])
    dump("op_matmul", m, {"x": x}, {"y": x @ w})


def gen_elementwise(rng):
    for op, fn in [("Add", np.add), ("Mul", np.multiply), ("Max", np.maximum)]:
        x = f32(rng, 2, 6)
        c = f32(rng, 2, 6)
        m = model([node(op, ["x", "c"], ["y"])],
                  [value_info("x", x.shape)], [value_info("y", x.shape)],
                  [("c", c)])
        dump(f"op_{op.lower()}", m, {"x": x}, {"y": fn(x, c)})


def gen_activations(rng):
    x = f32(rng, 2, 8)
    m = model([node("Relu", ["x"], ["y"])], [value_info("x", x.shape)],
              [value_info("y", x.shape)], [])
    dump("op_relu", m, {"x": x}, {"y": np.maximum(x, 0)})

    m = model([node("LeakyRelu", ["x"], ["y"], attrs=attr_float("alpha", 0.1))],
              [value_info("x", x.shape)], [value_info("y", x.shape)], [])
    dump("op_leakyrelu", m, {"x": x}, {"y": np.where(x >= 0, x, 0.1 * x)})

    slope = f32(rng, 8, scale=0.5)
    m = model([node("PRelu", ["x", "s"], ["y"])], [value_info("x", x.shape)],
              [value_info("y", x.shape)], [("s", slope)])
    dump("op_prelu", m, {"x": x}, {"y": np.where(x >= 0, x, slope * x)})


def gen_conv(rng):
    x = f32(rng, 1, 3, 6, 6)
    w = f32(rng, 4, 3, 3, 3, scale=0.4)
    b = f32(rng, 4, scale=0.2)
    attrs = (attr_ints("strides", [1, 1]) + attr_ints("pads", [1, 1, 1, 1])
             + attr_ints("kernel_shape", [3, 3]))
    m = model([node("Conv", ["x", "w", "b"], ["y"], attrs=attrs)],
              [value_info("x", x.shape)], [value_info("y", (1, 4, 6, 6))],
              [("w", w), ("b", b)])
    y = ref_conv(x, w, b, (1, 1), (1, 1, 1, 1))
    dump("op_conv_same", m, {"x": x}, {"y": y}, image_outputs=["y"])

    x = f32(rng, 1, 2, 8, 8)
    w = f32(rng, 3, 2, 2, 2, scale=0.4)
    attrs = (attr_ints("strides", [2, 2]) + attr_ints("pads", [0, 0, 0, 0])
             + attr_ints("kernel_shape", [2, 2]))
    m = model([node("Conv", ["x", "w"], ["y"], attrs=attrs)],
              [value_info("x", x.shape)], [value_info("y", (1, 3, 4, 4))],
              [("w", w)])
    y = ref_conv(x, w, None, (2, 2), (0, 0, 0, 0))
    dump("op_conv_stride2", m, {"x": x}, {"y": y}, image_outputs=["y"])

    x = f32(rng, 1, 4, 5, 5)
    w = f32(rng, 6, 2, 3, 3, scale=0.4)
    attrs = (attr_ints("strides", [1, 1]) + attr_ints("pads", [1, 1, 1, 1])
             + attr_ints("kernel_shape", [3, 3]) + attr_int("group", 2))
    m = model([node("Conv", ["x", "w"], ["y"], attrs=attrs)],
              [value_info("x", x.shape)], [value_info("y", (1, 6, 5, 5))],
              [("w", w)])
    y = ref_conv(x, w, None, (1, 1), (1, 1, 1, 1), group=2)
    dump("op_conv_grouped", m, {"x": x}, {"y": y}, image_outputs=["y"])


def gen_conv_transpose(rng):
    x = f32(rng, 1, 3, 4, 4)
    w = f32(rng, 3, 2, 2, 2, scale=0.4)  # [Cin, Cout, kh, kw]
    attrs = (attr_ints("strides", [2, 2]) + attr_ints("pads", [0, 0, 0, 0])
             + attr_ints("kernel_shape", [2, 2]))
    m = model([node("ConvTranspose", ["x", "w"], ["y"], attrs=attrs)],
              [value_info("x", x.shape)], [value_info("y", (1, 2, 8, 8))],
              [("w", w)])
    y = ref_conv_transpose(x, w, (2, 2))
    dump("op_convtranspose", m, {"x": x}, {"y": y}, image_outputs=["y"])


def gen_maxpool(rng):
    x = f32(rng, 1, 3, 6, 6)
    attrs = attr_ints("kernel_shape", [2, 2]) + attr_ints("strides", [2, 2])
    m = model([node("MaxPool", ["x"], ["y"], attrs=attrs)],
              [value_info("x", x.shape)], [value_info("y", (1, 3, 3, 3))], [])
    dump("op_maxpool", m, {"x": x}, {"y": ref_maxpool(x, (2, 2), (2, 2))},
         image_outputs=["y"])


def gen_concat(rng):
    x = f32(rng, 2, 3)
    c = f32(rng, 2, 5)
    m = model([node("Concat", ["x", "c"], ["y"], attrs=attr_int("axis", 1))],
              [value_info("x", x.shape)], [value_info("y", (2, 8))], [("c", c)])
    dump("op_concat2d", m, {"x": x}, {"y": np.concatenate([x, c], axis=1)})

    x = f32(rng, 1, 2, 4, 4)
    c = f32(rng, 1, 3, 4, 4)
    m = model([node("Concat", ["x", "c"], ["y"], attrs=attr_int("axis", 1))],
              [value_info("x", x.shape)], [value_info("y", (1, 5, 4, 4))],
              [("c", c)])
    dump("op_concat_channels", m, {"x": x},
         {"y": np.concatenate([x, c], axis=1)}, image_outputs=["y"])


def gen_movement(rng):
    x = f32(rng, 2, 6)
    m = model([node("Transpose", ["x"], ["y"], attrs=attr_ints("perm", [1, 0]))],
              [value_info("x", x.shape)], [value_info("y", (6, 2))], [])
    dump("op_transpose", m, {"x": x}, {"y": x.T})

    x = f32(rng, 2, 6)
    shape = np.array([3, 4], dtype=np.int64)
    m = model([node("Reshape", ["x", "shape"], ["y"])],
              [value_info("x", x.shape)], [value_info("y", (3, 4))],
              [("shape", shape)])
    dump("op_reshape", m, {"x": x}, {"y": x.reshape(3, 4)})

    x = f32(rng, 4, 6)
    m = model([node("Slice", ["x", "starts", "ends", "axes"], ["y"])],
              [value_info("x", x.shape)], [value_info("y", (2, 3))],
              [("starts", np.array([1, 2], dtype=np.int64)),
               ("ends", np.array([3, 5], dtype=np.int64)),
               ("axes", np.array([0, 1], dtype=np.int64))])
    dump("op_slice", m, {"x": x}, {"y": x[1:3, 2:5]})

    x = f32(rng, 3, 1)
    m = model([node("Expand", ["x", "shape"], ["y"])],
              [value_info("x", x.shape)], [value_info("y", (3, 4))],
              [("shape", np.array([3, 4], dtype=np.int64))])
    dump("op_expand", m, {"x": x}, {"y": np.broadcast_to(x, (3, 4)).copy()})

    x = f32(rng, 2, 7)
    m = model([node("Flatten", ["x"], ["y"], attrs=attr_int("axis", 1))],
              [value_info("x", x.shape)], [value_info("y", (2, 7))], [])
    dump("op_flatten2d", m, {"x": x}, {"y": x.reshape(2, 7)})


def gen_mlp(rng):
    x = f32(rng, 1, 10)
    w1, b1 = f32(rng, 16, 10, scale=0.4), f32(rng, 16, scale=0.2)
    w2, b2 = f32(rng, 12, 16, scale=0.4), f32(rng, 12, scale=0.2)
    w3, b3 = f32(rng, 4, 12, scale=0.4), f32(rng, 4, scale=0.2)
    gattrs = (attr_float("alpha", 1.0) + attr_float("beta", 1.0)
              + attr_int("transB", 1))
    nodes = [
        node("Gemm", ["x", "w1", "b1"], ["h1"], "g1", gattrs),
        node("Relu", ["h1"], ["a1"], "r1"),
        node("Gemm", ["a1", "w2", "b2"], ["h2"], "g2", gattrs),
        node("LeakyRelu", ["h2"], ["a2"], "l2", attr_float("alpha", 0.1)),
        node("Gemm", ["a2", "w3", "b3"], ["y"], "g3", gattrs),
    ]
    m = model(nodes, [value_info("x", x.shape)], [value_info("y", (1, 4))],
              [("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2),
               ("w3", w3), ("b3", b3)])
    h = np.maximum(x @ w1.T + b1, 0)
    h2 = h @ w2.T + b2
    a2 = np.where(h2 >= 0, h2, 0.1 * h2)
    y = a2 @ w3.T + b3
    dump("net_mlp", m, {"x": x}, {"y": y})


def gen_cnn(rng):
    x = f32(rng, 1, 2, 6, 6)
    w1 = f32(rng, 4, 2, 3, 3, scale=0.3)
    b1 = f32(rng, 4, scale=0.2)
    w2 = f32(rng, 3, 4, 3, 3, scale=0.3)
    wfc = f32(rng, 5, 3 * 6 * 6, scale=0.2)
    bfc = f32(rng, 5, scale=0.2)
    cattrs = (attr_ints("strides", [1, 1]) + attr_ints("pads", [1, 1, 1, 1])
              + attr_ints("kernel_shape", [3, 3]))
    gattrs = (attr_float("alpha", 1.0) + attr_float("beta", 1.0)
              + attr_int("transB", 1))
    nodes = [
        node("Conv", ["x", "w1", "b1"], ["c1"], "c1n", cattrs),
        node("LeakyRelu", ["c1"], ["a1"], "l1", attr_float("alpha", 0.1)),
        node("Conv", ["a1", "w2"], ["c2"], "c2n", cattrs),
        node("Relu", ["c2"], ["a2"], "r2"),
        node("Flatten", ["a2"], ["flat"], "fl", attr_int("axis", 1)),
        node("Gemm", ["flat", "wfc", "bfc"], ["y"], "g", gattrs),
    ]
    m = model(nodes, [value_info("x", x.shape)], [value_info("y", (1, 5))],
              [("w1", w1), ("b1", b1), ("w2", w2), ("wfc", wfc), ("bfc", bfc)])
    c1 = ref_conv(x, w1, b1, (1, 1), (1, 1, 1, 1))
    a1 = np.where(c1 >= 0, c1, 0.1 * c1)
    c2 = ref_conv(a1, w2, None, (1, 1), (1, 1, 1, 1))
    a2 = np.maximum(c2, 0)
    y = a2.reshape(1, -1) @ wfc.T + bfc
    dump("net_cnn", m, {"x": x}, {"y": y})


def gen_negative(rng):
    x = f32(rng, 1, 4)
    m = model([node("Sigmoid", ["x"], ["y"])], [value_info("x", x.shape)],
              [value_info("y", x.shape)], [])
    (HERE / "bad_unsupported_op.onnx").write_bytes(m)
    print("wrote bad_unsupported_op")

    m = model([node("Relu", ["x"], ["y"])],
              [value_info("x", (1, 4), dynamic_last=True)],
              [value_info("y", (1, 4), dynamic_last=True)], [])
    (HERE / "bad_dynamic_shape.onnx").write_bytes(m)
    print("wrote bad_dynamic_shape")


def main():
    rng = np.random.default_rng(20240)
    gen_gemm(rng)
    gen_matmul(rng)
    gen_elementwise(rng)
    gen_activations(rng)
    gen_conv(rng)
    gen_conv_transpose(rng)
    gen_maxpool(rng)
    gen_concat(rng)
    gen_movement(rng)
    gen_mlp(rng)
    gen_cnn(rng)
    gen_negative(rng)


if __name__ == "__main__":
    main()
