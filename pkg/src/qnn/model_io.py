"""SMF1 model file format.

Layout (all integers little-endian):

    magic "SMF1" (4B) | version u32 | width code u8
    input count u32, then per input: id u32, q i8, rank u8, rank x u32 dims
    node count u32, then per node:
        id u32 | kind u16 | arity u8 | arity x u32 input ids
        attribute count u8 | attributes as (tag u8, len u32, payload) TLVs
        Const nodes:        payload length u32 + STN1 blob
        SparseMatMul nodes: payload length u32 + sparse blob
    output count u32, then u32 ids

Sparse blob: rows u32 | cols u32 | alignment u8 | run count u32 |
run table (row u32, start u32, len u32) | values as one STN1 blob.

Serialization is canonical (attributes sorted by tag), so re-saving a
loaded model reproduces identical bytes.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import BadMagic, BadVersion, InvalidNode, Truncated
from .graph import Graph, InputDesc, Node, OpKind
from .sparse import Run, SparsePackedMatrix
from .tensor import (
    Tensor,
    WIDTH_CODES,
    WIDTH_FROM_CODE,
    read_stn1,
    write_stn1,
)

SMF1_MAGIC = b"SMF1"
VERSION = 1

# attribute tag -> (name, pack, unpack)
_U32 = (lambda v: struct.pack("<I", v), lambda b: struct.unpack("<I", b)[0])
_I32 = (lambda v: struct.pack("<i", v), lambda b: struct.unpack("<i", b)[0])
_F32 = (lambda v: struct.pack("<f", v), lambda b: float(np.float32(struct.unpack("<f", b)[0])))
_I32L = (
    lambda v: struct.pack(f"<{len(v)}i", *v),
    lambda b: list(struct.unpack(f"<{len(b) // 4}i", b)),
)
_PAD = (
    lambda v: bytes([{"valid": 0, "same": 1}[v]]),
    lambda b: {0: "valid", 1: "same"}[b[0]],
)

ATTR_TAGS = {
    "stride": (1, *_U32),
    "groups": (2, *_U32),
    "padding": (3, *_PAD),
    "alpha": (4, *_F32),
    "q_i": (5, *_U32),
    "axis": (6, *_I32),
    "perm": (7, *_I32L),
    "dims": (8, *_I32L),
    "starts": (9, *_I32L),
    "ends": (10, *_I32L),
    "kernel": (11, *_I32L),
    "stride_hw": (12, *_I32L),
}
ATTR_BY_TAG = {tag: (name, pack, unpack) for name, (tag, pack, unpack) in ATTR_TAGS.items()}


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise Truncated(f"file ends at byte {len(self.buf)}, "
                            f"needed {n} more at offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return self.take(1)[0]

    def i8(self):
        return struct.unpack("<b", self.take(1))[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def _write_sparse(m: SparsePackedMatrix) -> bytes:
    out = [struct.pack("<IIBI", m.rows, m.cols, m.alignment, len(m.runs))]
    for r in m.runs:
        out.append(struct.pack("<III", r.row, r.start, r.length))
    values = (np.concatenate([r.values for r in m.runs])
              if m.runs else np.zeros(0, dtype=m.width.dtype))
    blob = write_stn1(Tensor((max(len(values), 1),), m.width, m.q,
                             values if len(values) else np.zeros(1, m.width.dtype)))
    out.append(struct.pack("<I", len(blob)))
    out.append(blob)
    return b"".join(out)


def _read_sparse(r: _Reader, node_id: int) -> SparsePackedMatrix:
    rows, cols, align, nruns = struct.unpack("<IIBI", r.take(13))
    table = [struct.unpack("<III", r.take(12)) for _ in range(nruns)]
    blob = r.take(r.u32())
    values = read_stn1(blob)
    runs = []
    off = 0
    for row, start, length in table:
        runs.append(Run(row, start, values.data[off : off + length].copy()))
        off += length
    total = sum(length for _, _, length in table)
    if total and total != values.size:
        raise InvalidNode(
            f"sparse payload holds {values.size} values, runs need {total}", node_id
        )
    try:
        return SparsePackedMatrix(rows, cols, align, values.width, values.q, runs)
    except ValueError as e:
        raise InvalidNode(f"bad sparse matrix: {e}", node_id) from e


def save_model(g: Graph) -> bytes:
    out = [SMF1_MAGIC, struct.pack("<IB", VERSION, WIDTH_CODES[g.width])]
    out.append(struct.pack("<I", len(g.inputs)))
    for i in g.inputs:
        out.append(struct.pack("<IbB", i.id, i.q, len(i.dims)))
        out.append(struct.pack(f"<{len(i.dims)}I", *i.dims))
    out.append(struct.pack("<I", len(g.nodes)))
    for n in g.nodes:
        out.append(struct.pack("<IHB", n.id, n.kind.value, len(n.inputs)))
        if n.inputs:
            out.append(struct.pack(f"<{len(n.inputs)}I", *n.inputs))
        attrs = sorted(
            (ATTR_TAGS[k][0], ATTR_TAGS[k][1](v)) for k, v in n.attrs.items()
        )
        out.append(struct.pack("<B", len(attrs)))
        for tag, payload in attrs:
            out.append(struct.pack("<BI", tag, len(payload)))
            out.append(payload)
        if n.kind is OpKind.Const:
            blob = write_stn1(n.const)
            out.append(struct.pack("<I", len(blob)))
            out.append(blob)
        elif n.kind is OpKind.SparseMatMul:
            out.append(_write_sparse(n.sparse))
    out.append(struct.pack("<I", len(g.outputs)))
    if g.outputs:
        out.append(struct.pack(f"<{len(g.outputs)}I", *g.outputs))
    return b"".join(out)


def load_model(buf: bytes) -> Graph:
    r = _Reader(buf)
    if r.take(4) != SMF1_MAGIC:
        raise BadMagic(f"expected SMF1 magic, got {buf[:4]!r}")
    version = r.u32()
    if version != VERSION:
        raise BadVersion(f"unsupported model version {version}")
    code = r.u8()
    if code not in WIDTH_FROM_CODE:
        raise BadVersion(f"unknown width code {code}")
    width = WIDTH_FROM_CODE[code]
    inputs = []
    for _ in range(r.u32()):
        iid, q, rank = struct.unpack("<IbB", r.take(6))
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        inputs.append(InputDesc(iid, dims, q))
    nodes = []
    for _ in range(r.u32()):
        nid = r.u32()
        kind_code = r.u16()
        try:
            kind = OpKind(kind_code)
        except ValueError:
            raise InvalidNode(f"unknown op code {kind_code}", nid) from None
        arity = r.u8()
        node_inputs = [r.u32() for _ in range(arity)]
        attrs = {}
        for _ in range(r.u8()):
            tag = r.u8()
            payload = r.take(r.u32())
            if tag not in ATTR_BY_TAG:
                raise InvalidNode(f"unknown attribute tag {tag}", nid)
            name, _, unpack = ATTR_BY_TAG[tag]
            try:
                attrs[name] = unpack(payload)
            except (KeyError, struct.error) as e:
                raise InvalidNode(f"bad {name} attribute: {e}", nid) from e
        const = sparse = None
        if kind is OpKind.Const:
            const = read_stn1(r.take(r.u32()))
        elif kind is OpKind.SparseMatMul:
            sparse = _read_sparse(r, nid)
        nodes.append(Node(nid, kind, node_inputs, attrs, const, sparse))
    outputs = [r.u32() for _ in range(r.u32())]
    if r.pos != len(buf):
        raise Truncated(f"{len(buf) - r.pos} trailing bytes after output list")
    return Graph(width, inputs, nodes, outputs)


def save_model_file(g: Graph, path) -> None:
    with open(path, "wb") as f:
        f.write(save_model(g))


def load_model_file(path) -> Graph:
    with open(path, "rb") as f:
        return load_model(f.read())
