/** ONNX model structures parsed straight off the protobuf wire. */

import { ProtoReader, WIRE_LEN, readFloats, readInts } from "./proto";

export const TENSOR_FLOAT = 1;
export const TENSOR_INT64 = 7;

export interface OnnxTensor {
  name: string;
  dims: number[];
  dataType: number;
  floats: Float32Array; // populated for float tensors
  ints: number[]; // populated for int64 tensors
}

export interface OnnxAttr {
  name: string;
  f?: number;
  i?: number;
  s?: string;
  t?: OnnxTensor;
  floats: number[];
  ints: number[];
}

export interface OnnxNode {
  opType: string;
  name: string;
  inputs: string[];
  outputs: string[];
  attrs: Map<string, OnnxAttr>;
}

export interface ValueInfo {
  name: string;
  dims: (number | null)[]; // null marks a symbolic dimension
}

export interface OnnxModel {
  irVersion: number;
  opset: number;
  nodes: OnnxNode[];
  initializers: Map<string, OnnxTensor>;
  inputs: ValueInfo[];
  outputs: ValueInfo[];
}

function parseTensor(buf: Uint8Array): OnnxTensor {
  const r = new ProtoReader(buf);
  const t: OnnxTensor = {
    name: "",
    dims: [],
    dataType: TENSOR_FLOAT,
    floats: new Float32Array(0),
    ints: [],
  };
  const dims: bigint[] = [];
  const floatData: number[] = [];
  const intData: bigint[] = [];
  let raw: Uint8Array | null = null;
  while (!r.done) {
    const { field, wire } = r.tag();
    switch (field) {
      case 1:
        readInts(r, wire, dims);
        break;
      case 2:
        t.dataType = Number(r.varint());
        break;
      case 4:
        readFloats(r, wire, floatData);
        break;
      case 7:
        readInts(r, wire, intData);
        break;
      case 8:
        t.name = r.string();
        break;
      case 9:
        raw = r.bytes();
        break;
      default:
        r.skip(wire);
    }
  }
  t.dims = dims.map(Number);
  if (raw !== null) {
    const copy = raw.slice(); // realign before typed-array views
    if (t.dataType === TENSOR_FLOAT) {
      t.floats = new Float32Array(copy.buffer, 0, copy.byteLength / 4);
    } else if (t.dataType === TENSOR_INT64) {
      const big = new BigInt64Array(copy.buffer, 0, copy.byteLength / 8);
      t.ints = Array.from(big, Number);
    } else {
      throw new Error(`tensor ${t.name}: unsupported element type ${t.dataType}`);
    }
  } else if (t.dataType === TENSOR_FLOAT) {
    t.floats = Float32Array.from(floatData);
  } else if (t.dataType === TENSOR_INT64) {
    t.ints = intData.map(Number);
  } else {
    throw new Error(`tensor ${t.name}: unsupported element type ${t.dataType}`);
  }
  return t;
}

function parseAttr(buf: Uint8Array): OnnxAttr {
  const r = new ProtoReader(buf);
  const a: OnnxAttr = { name: "", floats: [], ints: [] };
  const ints: bigint[] = [];
  while (!r.done) {
    const { field, wire } = r.tag();
    switch (field) {
      case 1:
        a.name = r.string();
        break;
      case 2:
        a.f = r.fixed32();
        break;
      case 3:
        a.i = Number(r.varint());
        break;
      case 4:
        a.s = new TextDecoder().decode(r.bytes());
        break;
      case 5:
        a.t = parseTensor(r.bytes());
        break;
      case 7:
        readFloats(r, wire, a.floats);
        break;
      case 8:
        readInts(r, wire, ints);
        break;
      default:
        r.skip(wire);
    }
  }
  a.ints = ints.map(Number);
  return a;
}

function parseNode(buf: Uint8Array): OnnxNode {
  const r = new ProtoReader(buf);
  const n: OnnxNode = { opType: "", name: "", inputs: [], outputs: [], attrs: new Map() };
  while (!r.done) {
    const { field, wire } = r.tag();
    switch (field) {
      case 1:
        n.inputs.push(r.string());
        break;
      case 2:
        n.outputs.push(r.string());
        break;
      case 3:
        n.name = r.string();
        break;
      case 4:
        n.opType = r.string();
        break;
      case 5: {
        const a = parseAttr(r.bytes());
        n.attrs.set(a.name, a);
        break;
      }
      default:
        r.skip(wire);
    }
  }
  return n;
}

function parseValueInfo(buf: Uint8Array): ValueInfo {
  const r = new ProtoReader(buf);
  const v: ValueInfo = { name: "", dims: [] };
  while (!r.done) {
    const { field, wire } = r.tag();
    if (field === 1) {
      v.name = r.string();
    } else if (field === 2 && wire === WIRE_LEN) {
      // TypeProto -> tensor_type -> shape -> dim*
      const type = new ProtoReader(r.bytes());
      while (!type.done) {
        const t1 = type.tag();
        if (t1.field !== 1 || t1.wire !== WIRE_LEN) {
          type.skip(t1.wire);
          continue;
        }
        const tensorType = new ProtoReader(type.bytes());
        while (!tensorType.done) {
          const t2 = tensorType.tag();
          if (t2.field !== 2 || t2.wire !== WIRE_LEN) {
            tensorType.skip(t2.wire);
            continue;
          }
          const shape = new ProtoReader(tensorType.bytes());
          while (!shape.done) {
            const t3 = shape.tag();
            if (t3.field !== 1 || t3.wire !== WIRE_LEN) {
              shape.skip(t3.wire);
              continue;
            }
            const dim = new ProtoReader(shape.bytes());
            let value: number | null = null;
            while (!dim.done) {
              const t4 = dim.tag();
              if (t4.field === 1 && t4.wire === 0) value = Number(dim.varint());
              else dim.skip(t4.wire);
            }
            v.dims.push(value);
          }
        }
      }
    } else {
      r.skip(wire);
    }
  }
  return v;
}

export function parseModel(buf: Uint8Array): OnnxModel {
  const r = new ProtoReader(buf);
  const m: OnnxModel = {
    irVersion: 0,
    opset: 0,
    nodes: [],
    initializers: new Map(),
    inputs: [],
    outputs: [],
  };
  let graph: Uint8Array | null = null;
  while (!r.done) {
    const { field, wire } = r.tag();
    switch (field) {
      case 1:
        m.irVersion = Number(r.varint());
        break;
      case 7:
        graph = r.bytes();
        break;
      case 8: {
        const op = new ProtoReader(r.bytes());
        let domain = "";
        let version = 0;
        while (!op.done) {
          const t = op.tag();
          if (t.field === 1) domain = op.string();
          else if (t.field === 2) version = Number(op.varint());
          else op.skip(t.wire);
        }
        if (domain === "") m.opset = version;
        break;
      }
      default:
        r.skip(wire);
    }
  }
  if (graph === null) throw new Error("model has no graph");
  const g = new ProtoReader(graph);
  while (!g.done) {
    const { field, wire } = g.tag();
    switch (field) {
      case 1:
        m.nodes.push(parseNode(g.bytes()));
        break;
      case 5: {
        const t = parseTensor(g.bytes());
        m.initializers.set(t.name, t);
        break;
      }
      case 11:
        m.inputs.push(parseValueInfo(g.bytes()));
        break;
      case 12:
        m.outputs.push(parseValueInfo(g.bytes()));
        break;
      default:
        g.skip(wire);
    }
  }
  // initializers that also appear as graph inputs are weights, not feeds
  m.inputs = m.inputs.filter((v) => !m.initializers.has(v.name));
  return m;
}
