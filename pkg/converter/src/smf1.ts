/** Writers for the engine's file formats: SMF1 models and STN1 tensors.
 *
 * Serialization is canonical (attributes sorted by tag) so converting the
 * same source twice yields identical bytes.
 */

export enum Kind {
  Const = 0,
  MatMul = 1,
  SparseMatMul = 2,
  Conv2D = 3,
  Conv2DTranspose = 4,
  Add = 5,
  BiasAdd = 6,
  Mul = 7,
  Concat = 8,
  MaxPool = 9,
  Maximum = 10,
  Relu = 11,
  PRelu = 12,
  LeakyRelu = 13,
  Flatten = 14,
  Transpose = 15,
  Reshape = 16,
  Slice = 17,
  Expand = 18,
  Shape = 19,
}

export interface Attrs {
  stride?: number;
  groups?: number;
  padding?: "valid" | "same";
  alpha?: number;
  q_i?: number;
  axis?: number;
  perm?: number[];
  dims?: number[];
  starts?: number[];
  ends?: number[];
  kernel?: number[];
  stride_hw?: number[];
}

export interface Smf1Node {
  id: number;
  kind: Kind;
  inputs: number[];
  attrs: Attrs;
  constDims?: number[];
  constData?: Float32Array;
}

export interface Smf1Graph {
  inputs: { id: number; dims: number[] }[];
  nodes: Smf1Node[];
  outputs: number[];
}

class ByteSink {
  private chunks: Uint8Array[] = [];

  push(b: Uint8Array): void {
    this.chunks.push(b);
  }

  u8(v: number): void {
    this.push(new Uint8Array([v & 0xff]));
  }

  i8(v: number): void {
    this.u8(v < 0 ? v + 256 : v);
  }

  u16(v: number): void {
    const b = new Uint8Array(2);
    new DataView(b.buffer).setUint16(0, v, true);
    this.push(b);
  }

  u32(v: number): void {
    const b = new Uint8Array(4);
    new DataView(b.buffer).setUint32(0, v >>> 0, true);
    this.push(b);
  }

  i32(v: number): void {
    const b = new Uint8Array(4);
    new DataView(b.buffer).setInt32(0, v | 0, true);
    this.push(b);
  }

  f32(v: number): void {
    const b = new Uint8Array(4);
    new DataView(b.buffer).setFloat32(0, v, true);
    this.push(b);
  }

  bytes(): Uint8Array {
    const total = this.chunks.reduce((n, c) => n + c.length, 0);
    const out = new Uint8Array(total);
    let pos = 0;
    for (const c of this.chunks) {
      out.set(c, pos);
      pos += c.length;
    }
    return out;
  }
}

export function writeStn1Float(dims: number[], data: Float32Array): Uint8Array {
  const s = new ByteSink();
  s.push(new TextEncoder().encode("STN1"));
  s.u8(0); // float32 width code
  s.i8(0); // quantizer shift
  s.u8(dims.length);
  for (const d of dims) s.u32(d);
  const payload = new Uint8Array(data.length * 4);
  const view = new DataView(payload.buffer);
  for (let i = 0; i < data.length; i++) view.setFloat32(i * 4, data[i], true);
  s.push(payload);
  return s.bytes();
}

export interface Stn1Tensor {
  dims: number[];
  widthCode: number;
  q: number;
  data: Float64Array;
}

export function readStn1(buf: Uint8Array): Stn1Tensor {
  const magic = new TextDecoder().decode(buf.subarray(0, 4));
  if (magic !== "STN1") throw new Error("not an STN1 tensor file");
  const widthCode = buf[4];
  const q = buf[5] > 127 ? buf[5] - 256 : buf[5];
  const rank = buf[6];
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const dims: number[] = [];
  for (let i = 0; i < rank; i++) dims.push(view.getUint32(7 + 4 * i, true));
  const count = dims.reduce((a, b) => a * b, 1);
  let pos = 7 + 4 * rank;
  const data = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    switch (widthCode) {
      case 0:
        data[i] = view.getFloat32(pos, true);
        pos += 4;
        break;
      case 1:
        data[i] = view.getInt32(pos, true);
        pos += 4;
        break;
      case 2:
        data[i] = view.getInt16(pos, true);
        pos += 2;
        break;
      case 3:
        data[i] = view.getInt8(pos);
        pos += 1;
        break;
      default:
        throw new Error(`unknown width code ${widthCode}`);
    }
  }
  return { dims, widthCode, q, data };
}

const ATTR_ORDER: [keyof Attrs, number][] = [
  ["stride", 1],
  ["groups", 2],
  ["padding", 3],
  ["alpha", 4],
  ["q_i", 5],
  ["axis", 6],
  ["perm", 7],
  ["dims", 8],
  ["starts", 9],
  ["ends", 10],
  ["kernel", 11],
  ["stride_hw", 12],
];

function attrPayload(name: keyof Attrs, value: unknown): Uint8Array {
  const s = new ByteSink();
  switch (name) {
    case "stride":
    case "groups":
    case "q_i":
      s.u32(value as number);
      break;
    case "padding":
      s.u8(value === "same" ? 1 : 0);
      break;
    case "alpha":
      s.f32(value as number);
      break;
    case "axis":
      s.i32(value as number);
      break;
    default:
      for (const v of value as number[]) s.i32(v);
  }
  return s.bytes();
}

export function writeSmf1(g: Smf1Graph): Uint8Array {
  const s = new ByteSink();
  s.push(new TextEncoder().encode("SMF1"));
  s.u32(1); // version
  s.u8(0); // float32 width code
  s.u32(g.inputs.length);
  for (const inp of g.inputs) {
    s.u32(inp.id);
    s.i8(0); // float inputs carry no shift
    s.u8(inp.dims.length);
    for (const d of inp.dims) s.u32(d);
  }
  s.u32(g.nodes.length);
  for (const n of g.nodes) {
    s.u32(n.id);
    s.u16(n.kind);
    s.u8(n.inputs.length);
    for (const i of n.inputs) s.u32(i);
    const present = ATTR_ORDER.filter(([name]) => n.attrs[name] !== undefined);
    s.u8(present.length);
    for (const [name, tag] of present) {
      const payload = attrPayload(name, n.attrs[name]);
      s.u8(tag);
      s.u32(payload.length);
      s.push(payload);
    }
    if (n.kind === Kind.Const) {
      const blob = writeStn1Float(n.constDims!, n.constData!);
      s.u32(blob.length);
      s.push(blob);
    }
  }
  s.u32(g.outputs.length);
  for (const o of g.outputs) s.u32(o);
  return s.bytes();
}
