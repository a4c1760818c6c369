/** ONNX graph to SMF1 model translation.
 *
 * The engine is channels-last, so 4-D activations are carried as NHWC
 * ("image" layout) and convolution weights are permuted at convert time.
 * Layout-sensitive data movement (Flatten/Reshape/Transpose/Slice/Expand/
 * Shape) on an image value gets an explicit NHWC->NCHW transpose in front,
 * after which the value continues in ONNX's own layout ("flat"), so
 * downstream semantics match the source exactly.
 *
 * Quantization is deliberately not done here: the converter emits float
 * models and the engine's own static quantizer integerizes them.
 */

import { OnnxModel, OnnxNode, OnnxTensor, parseModel, TENSOR_INT64 } from "./onnx";
import { Attrs, Kind, Smf1Graph, Smf1Node, writeSmf1 } from "./smf1";

export class UnsupportedOpError extends Error {
  constructor(op: string, detail = "") {
    super(`unsupported op ${op}${detail ? `: ${detail}` : ""}`);
    this.name = "UnsupportedOpError";
  }
}

export class DynamicShapeError extends Error {
  constructor(name: string) {
    super(`value ${name} has a symbolic dimension; only static shapes convert`);
    this.name = "DynamicShapeError";
  }
}

type Layout = "image" | "flat";

interface Value {
  id: number;
  dims: number[];
  layout: Layout;
}

export interface ConvertResult {
  bytes: Uint8Array;
  /** output names in order, flagged when the engine emits them channels-last */
  outputs: { name: string; image: boolean }[];
  inputs: { name: string; dims: number[]; image: boolean }[];
}

const SUPPORTED_OPSET_MAX = 18;

function prod(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1);
}

/** Flat-index permutation of a dense tensor. */
function permute(data: Float32Array, dims: number[], perm: number[]): Float32Array {
  const out = new Float32Array(data.length);
  const outDims = perm.map((p) => dims[p]);
  const inStrides = new Array(dims.length).fill(1);
  for (let i = dims.length - 2; i >= 0; i--) inStrides[i] = inStrides[i + 1] * dims[i + 1];
  const outStrides = new Array(dims.length).fill(1);
  for (let i = dims.length - 2; i >= 0; i--) outStrides[i] = outStrides[i + 1] * outDims[i + 1];
  const idx = new Array(dims.length).fill(0);
  for (let o = 0; o < out.length; o++) {
    let rem = o;
    for (let a = 0; a < dims.length; a++) {
      idx[a] = Math.floor(rem / outStrides[a]);
      rem %= outStrides[a];
    }
    let src = 0;
    for (let a = 0; a < dims.length; a++) src += idx[a] * inStrides[perm[a]];
    out[o] = data[src];
  }
  return out;
}

const NCHW_TO_NHWC = [0, 2, 3, 1];
const NHWC_TO_NCHW = [0, 3, 1, 2];

/** Engine "same" padding distribution for one axis (leading pad). */
function samePads(size: number, k: number, stride: number): [number, number] {
  const out = Math.ceil(size / stride);
  const total = Math.max((out - 1) * stride + k - size, 0);
  const lead = Math.floor(total / 2);
  return [lead, total - lead];
}

export class Converter {
  private nodes: Smf1Node[] = [];
  private values = new Map<string, Value>();
  private nextId = 0;
  private model: OnnxModel;

  constructor(buf: Uint8Array) {
    this.model = parseModel(buf);
    if (this.model.opset > SUPPORTED_OPSET_MAX) {
      throw new UnsupportedOpError("opset", `version ${this.model.opset} is newer than ${SUPPORTED_OPSET_MAX}`);
    }
  }

  private alloc(): number {
    return this.nextId++;
  }

  private emit(kind: Kind, inputs: number[], attrs: Attrs = {}, constDims?: number[], constData?: Float32Array): number {
    const id = this.alloc();
    this.nodes.push({ id, kind, inputs, attrs, constDims, constData });
    return id;
  }

  private constValue(t: OnnxTensor, layout: Layout = "flat", permuteTo?: number[]): Value {
    let dims = t.dims.length ? t.dims.slice() : [1];
    let data = t.floats;
    if (permuteTo) {
      data = permute(data, dims, permuteTo);
      dims = permuteTo.map((p) => t.dims[p]);
    }
    const id = this.emit(Kind.Const, [], {}, dims, data);
    return { id, dims, layout };
  }

  /** Resolve a node input to a converted value, materializing initializer
   * constants on first use. */
  private value(name: string, wantLayout?: Layout): Value {
    const existing = this.values.get(name);
    if (existing) {
      if (wantLayout && existing.layout !== wantLayout && existing.dims.length === 4) {
        const perm = wantLayout === "flat" ? NHWC_TO_NCHW : NCHW_TO_NHWC;
        const id = this.emit(Kind.Transpose, [existing.id], { perm });
        const v: Value = { id, dims: perm.map((p) => existing.dims[p]), layout: wantLayout };
        this.values.set(name, v);
        return v;
      }
      return existing;
    }
    const init = this.model.initializers.get(name);
    if (!init) throw new UnsupportedOpError("input", `value ${name} is not defined`);
    if (init.dataType === TENSOR_INT64) {
      throw new UnsupportedOpError("initializer", `${name} is int64; only shape-like uses are allowed`);
    }
    const v =
      wantLayout === "image" && init.dims.length === 4
        ? this.constValue(init, "image", NCHW_TO_NHWC)
        : this.constValue(init, "flat");
    this.values.set(name, v);
    return v;
  }

  /** int64 initializer consumed as attribute data (Reshape/Slice/Expand). */
  private intList(name: string, op: string): number[] {
    const init = this.model.initializers.get(name);
    if (!init) throw new UnsupportedOpError(op, `${name} must be a constant initializer`);
    if (init.dataType !== TENSOR_INT64) throw new UnsupportedOpError(op, `${name} must be int64`);
    return init.ints.slice();
  }

  private attrInt(n: OnnxNode, name: string, dflt: number): number {
    const a = n.attrs.get(name);
    return a?.i !== undefined ? a.i : dflt;
  }

  private attrInts(n: OnnxNode, name: string, dflt: number[]): number[] {
    const a = n.attrs.get(name);
    return a && a.ints.length ? a.ints.slice() : dflt;
  }

  private attrFloat(n: OnnxNode, name: string, dflt: number): number {
    const a = n.attrs.get(name);
    return a?.f !== undefined ? a.f : dflt;
  }

  /** Map explicit pads to the engine's valid/same vocabulary. */
  private padding(n: OnnxNode, inDims: number[], kernel: number[], strides: number[]): "valid" | "same" {
    const auto = n.attrs.get("auto_pad")?.s ?? "NOTSET";
    if (auto === "VALID") return "valid";
    if (auto === "SAME_UPPER") return "same";
    if (auto !== "NOTSET") throw new UnsupportedOpError(n.opType, `auto_pad ${auto}`);
    const pads = this.attrInts(n, "pads", [0, 0, 0, 0]);
    if (pads.every((p) => p === 0)) return "valid";
    const [st, sb] = samePads(inDims[1], kernel[0], strides[0]);
    const [sl, sr] = samePads(inDims[2], kernel[1], strides[1]);
    if (pads[0] === st && pads[1] === sl && pads[2] === sb && pads[3] === sr) return "same";
    throw new UnsupportedOpError(
      n.opType,
      `pads [${pads}] do not match the engine's valid/same geometry`,
    );
  }

  convert(): ConvertResult {
    const m = this.model;
    const inputs: { id: number; dims: number[] }[] = [];
    const inputMeta: ConvertResult["inputs"] = [];
    for (const vi of m.inputs) {
      if (vi.dims.some((d) => d === null)) throw new DynamicShapeError(vi.name);
      const dims = vi.dims as number[];
      const id = this.alloc();
      if (dims.length === 4) {
        const nhwc = NCHW_TO_NHWC.map((p) => dims[p]);
        inputs.push({ id, dims: nhwc });
        this.values.set(vi.name, { id, dims: nhwc, layout: "image" });
      } else {
        inputs.push({ id, dims });
        this.values.set(vi.name, { id, dims, layout: "flat" });
      }
      inputMeta.push({ name: vi.name, dims, image: dims.length === 4 });
    }
    for (const node of m.nodes) {
      this.convertNode(node);
    }
    const outputs: number[] = [];
    const outputMeta: ConvertResult["outputs"] = [];
    for (const vo of m.outputs) {
      const v = this.values.get(vo.name);
      if (!v) throw new UnsupportedOpError("output", `value ${vo.name} was never produced`);
      outputs.push(v.id);
      outputMeta.push({ name: vo.name, image: v.layout === "image" && v.dims.length === 4 });
    }
    const graph: Smf1Graph = { inputs, nodes: this.nodes, outputs };
    return { bytes: writeSmf1(graph), outputs: outputMeta, inputs: inputMeta };
  }

  private set(name: string, v: Value): void {
    this.values.set(name, v);
  }

  private convertNode(n: OnnxNode): void {
    switch (n.opType) {
      case "Constant": {
        const t = n.attrs.get("value")?.t;
        if (!t) throw new UnsupportedOpError("Constant", "only tensor values");
        this.set(n.outputs[0], this.constValue(t));
        return;
      }
      case "Gemm":
        return this.convertGemm(n);
      case "MatMul":
        return this.convertMatMul(n);
      case "Add":
      case "Mul":
      case "Max":
        return this.convertBinary(n);
      case "Relu": {
        const x = this.value(n.inputs[0]);
        const id = this.emit(Kind.Relu, [x.id]);
        this.set(n.outputs[0], { ...x, id });
        return;
      }
      case "LeakyRelu": {
        const x = this.value(n.inputs[0]);
        const alpha = this.attrFloat(n, "alpha", 0.01);
        const id = this.emit(Kind.LeakyRelu, [x.id], { alpha });
        this.set(n.outputs[0], { ...x, id });
        return;
      }
      case "PRelu":
        return this.convertPRelu(n);
      case "Conv":
        return this.convertConv(n);
      case "ConvTranspose":
        return this.convertConvTranspose(n);
      case "MaxPool":
        return this.convertMaxPool(n);
      case "Concat":
        return this.convertConcat(n);
      case "Flatten":
        return this.convertFlatten(n);
      case "Transpose":
        return this.convertTranspose(n);
      case "Reshape":
        return this.convertReshape(n);
      case "Slice":
        return this.convertSlice(n);
      case "Expand":
        return this.convertExpand(n);
      case "Shape": {
        const x = this.value(n.inputs[0], "flat");
        const id = this.emit(Kind.Shape, [x.id]);
        this.set(n.outputs[0], { id, dims: [x.dims.length], layout: "flat" });
        return;
      }
      default:
        throw new UnsupportedOpError(n.opType);
    }
  }

  private convertGemm(n: OnnxNode): void {
    if (this.attrFloat(n, "alpha", 1) !== 1 || this.attrFloat(n, "beta", 1) !== 1) {
      throw new UnsupportedOpError("Gemm", "alpha/beta must be 1");
    }
    if (this.attrInt(n, "transA", 0) !== 0) {
      throw new UnsupportedOpError("Gemm", "transA must be 0");
    }
    const x = this.value(n.inputs[0], "flat");
    const wInit = this.model.initializers.get(n.inputs[1]);
    if (!wInit) throw new UnsupportedOpError("Gemm", "weight must be an initializer");
    const transB = this.attrInt(n, "transB", 0);
    const w = transB ? this.constValue({ ...wInit, dims: wInit.dims }, "flat", [1, 0]) : this.constValue(wInit);
    const mm = this.emit(Kind.MatMul, [x.id, w.id]);
    let out = mm;
    const outDims = [x.dims[0], w.dims[1]];
    if (n.inputs.length > 2 && n.inputs[2]) {
      const b = this.value(n.inputs[2]);
      out = this.emit(Kind.BiasAdd, [mm, b.id]);
    }
    this.set(n.outputs[0], { id: out, dims: outDims, layout: "flat" });
  }

  private convertMatMul(n: OnnxNode): void {
    const x = this.value(n.inputs[0], "flat");
    const w = this.value(n.inputs[1], "flat");
    if (w.dims.length !== 2) throw new UnsupportedOpError("MatMul", "second operand must be 2-D");
    const id = this.emit(Kind.MatMul, [x.id, w.id]);
    const dims = [...x.dims.slice(0, -1), w.dims[1]];
    this.set(n.outputs[0], { id, dims, layout: "flat" });
  }

  private convertBinary(n: OnnxNode): void {
    const kind = { Add: Kind.Add, Mul: Kind.Mul, Max: Kind.Maximum }[n.opType as "Add" | "Mul" | "Max"];
    const a = this.value(n.inputs[0]);
    const b = this.value(n.inputs[1], a.layout);
    if (a.dims.length === 4 && b.dims.length === 4 && a.layout !== b.layout) {
      throw new UnsupportedOpError(n.opType, "operand layouts disagree");
    }
    const sameDims = a.dims.join() === b.dims.join();
    const scalar = prod(a.dims) === 1 || prod(b.dims) === 1;
    if (!sameDims && !scalar) {
      throw new UnsupportedOpError(n.opType, `broadcast ${a.dims} with ${b.dims} not supported`);
    }
    const id = this.emit(kind, [a.id, b.id]);
    const dims = prod(a.dims) >= prod(b.dims) ? a.dims : b.dims;
    this.set(n.outputs[0], { id, dims, layout: a.layout });
  }

  private convertPRelu(n: OnnxNode): void {
    const x = this.value(n.inputs[0]);
    const init = this.model.initializers.get(n.inputs[1]);
    if (!init) throw new UnsupportedOpError("PRelu", "slope must be an initializer");
    const squeezed = init.dims.filter((d) => d !== 1);
    const channels = x.dims[x.dims.length - 1];
    if (squeezed.length > 1 || (squeezed.length === 1 && squeezed[0] !== channels)) {
      throw new UnsupportedOpError("PRelu", `slope dims [${init.dims}] do not map per-channel`);
    }
    const slope = this.constValue({ ...init, dims: squeezed.length ? squeezed : [1] });
    const id = this.emit(Kind.PRelu, [x.id, slope.id]);
    this.set(n.outputs[0], { ...x, id });
  }

  private convStride(n: OnnxNode): number {
    const strides = this.attrInts(n, "strides", [1, 1]);
    if (strides[0] !== strides[1]) throw new UnsupportedOpError(n.opType, "anisotropic strides");
    if (strides[0] !== 1 && strides[0] !== 2) {
      throw new UnsupportedOpError(n.opType, `stride ${strides[0]} not supported`);
    }
    return strides[0];
  }

  private convertConv(n: OnnxNode): void {
    const x = this.value(n.inputs[0], "image");
    if (x.dims.length !== 4) throw new UnsupportedOpError("Conv", "input must be 4-D");
    const wInit = this.model.initializers.get(n.inputs[1]);
    if (!wInit) throw new UnsupportedOpError("Conv", "weight must be an initializer");
    const stride = this.convStride(n);
    const groups = this.attrInt(n, "group", 1);
    const [cout, cinG, kh, kw] = wInit.dims;
    const padding = this.padding(n, x.dims, [kh, kw], [stride, stride]);
    const w = this.constValue(wInit, "flat", [2, 3, 1, 0]); // -> [kh, kw, Cin/g, Cout]
    const conv = this.emit(Kind.Conv2D, [x.id, w.id], { stride, groups, padding });
    const oh = padding === "same" ? Math.ceil(x.dims[1] / stride) : Math.floor((x.dims[1] - kh) / stride) + 1;
    const ow = padding === "same" ? Math.ceil(x.dims[2] / stride) : Math.floor((x.dims[2] - kw) / stride) + 1;
    let out = conv;
    if (n.inputs.length > 2 && n.inputs[2]) {
      const b = this.value(n.inputs[2]);
      out = this.emit(Kind.BiasAdd, [conv, b.id]);
    }
    this.set(n.outputs[0], { id: out, dims: [x.dims[0], oh, ow, cout], layout: "image" });
  }

  private convertConvTranspose(n: OnnxNode): void {
    const x = this.value(n.inputs[0], "image");
    const wInit = this.model.initializers.get(n.inputs[1]);
    if (!wInit) throw new UnsupportedOpError("ConvTranspose", "weight must be an initializer");
    const stride = this.convStride(n);
    const groups = this.attrInt(n, "group", 1);
    const pads = this.attrInts(n, "pads", [0, 0, 0, 0]);
    if (pads.some((p) => p !== 0)) {
      throw new UnsupportedOpError("ConvTranspose", "only zero pads (full output) convert");
    }
    if (this.attrInts(n, "output_padding", [0, 0]).some((p) => p !== 0)) {
      throw new UnsupportedOpError("ConvTranspose", "output_padding not supported");
    }
    const [cin, coutG, kh, kw] = wInit.dims;
    const w = this.constValue(wInit, "flat", [2, 3, 1, 0]); // -> [kh, kw, Cout/g, Cin]
    const id = this.emit(Kind.Conv2DTranspose, [x.id, w.id], { stride, groups, padding: "valid" });
    const oh = (x.dims[1] - 1) * stride + kh;
    const ow = (x.dims[2] - 1) * stride + kw;
    let out = id;
    if (n.inputs.length > 2 && n.inputs[2]) {
      const b = this.value(n.inputs[2]);
      out = this.emit(Kind.BiasAdd, [id, b.id]);
    }
    this.set(n.outputs[0], { id: out, dims: [x.dims[0], oh, ow, coutG * groups], layout: "image" });
  }

  private convertMaxPool(n: OnnxNode): void {
    const x = this.value(n.inputs[0], "image");
    const kernel = this.attrInts(n, "kernel_shape", []);
    if (kernel.length !== 2) throw new UnsupportedOpError("MaxPool", "2-D pooling only");
    const strides = this.attrInts(n, "strides", kernel);
    const padding = this.padding(n, x.dims, kernel, strides);
    const id = this.emit(Kind.MaxPool, [x.id], { kernel, stride_hw: strides, padding });
    const geom = (size: number, k: number, s: number) =>
      padding === "same" ? Math.ceil(size / s) : Math.floor((size - k) / s) + 1;
    const dims = [x.dims[0], geom(x.dims[1], kernel[0], strides[0]), geom(x.dims[2], kernel[1], strides[1]), x.dims[3]];
    this.set(n.outputs[0], { id, dims, layout: "image" });
  }

  private convertConcat(n: OnnxNode): void {
    const parts = n.inputs.map((name, i) => this.value(name, i === 0 ? undefined : this.value(n.inputs[0]).layout));
    const layout = parts[0].layout;
    let axis = this.attrInt(n, "axis", 0);
    const rank = parts[0].dims.length;
    if (axis < 0) axis += rank;
    let engineAxis = axis;
    if (layout === "image" && rank === 4) {
      engineAxis = NCHW_TO_NHWC.indexOf(axis);
    }
    const id = this.emit(Kind.Concat, parts.map((p) => p.id), { axis: engineAxis });
    const dims = parts[0].dims.slice();
    dims[engineAxis] = parts.reduce((a, p) => a + p.dims[engineAxis], 0);
    this.set(n.outputs[0], { id, dims, layout });
  }

  private convertFlatten(n: OnnxNode): void {
    const x = this.value(n.inputs[0], "flat");
    let axis = this.attrInt(n, "axis", 1);
    if (axis < 0) axis += x.dims.length;
    const id = this.emit(Kind.Flatten, [x.id], { axis });
    const dims = [prod(x.dims.slice(0, axis)), prod(x.dims.slice(axis))];
    this.set(n.outputs[0], { id, dims, layout: "flat" });
  }

  private convertTranspose(n: OnnxNode): void {
    const x = this.value(n.inputs[0], "flat");
    const perm = this.attrInts(n, "perm", [...x.dims.keys()].reverse());
    const id = this.emit(Kind.Transpose, [x.id], { perm });
    this.set(n.outputs[0], { id, dims: perm.map((p) => x.dims[p]), layout: "flat" });
  }

  private convertReshape(n: OnnxNode): void {
    const x = this.value(n.inputs[0], "flat");
    const target = this.intList(n.inputs[1], "Reshape");
    const resolved = target.map((d, i) => (d === 0 ? x.dims[i] : d));
    const known = prod(resolved.filter((d) => d !== -1));
    const dims = resolved.map((d) => (d === -1 ? prod(x.dims) / known : d));
    const id = this.emit(Kind.Reshape, [x.id], { dims });
    this.set(n.outputs[0], { id, dims, layout: "flat" });
  }

  private convertSlice(n: OnnxNode): void {
    const x = this.value(n.inputs[0], "flat");
    const starts = this.intList(n.inputs[1], "Slice");
    const ends = this.intList(n.inputs[2], "Slice");
    const axes = n.inputs[3] ? this.intList(n.inputs[3], "Slice") : starts.map((_, i) => i);
    if (n.inputs[4]) {
      const steps = this.intList(n.inputs[4], "Slice");
      if (steps.some((s) => s !== 1)) throw new UnsupportedOpError("Slice", "steps must be 1");
    }
    const fullStarts = x.dims.map(() => 0);
    const fullEnds = x.dims.slice();
    axes.forEach((axRaw, i) => {
      const ax = axRaw < 0 ? axRaw + x.dims.length : axRaw;
      let s = starts[i];
      let e = ends[i];
      if (s < 0) s += x.dims[ax];
      if (e < 0) e += x.dims[ax];
      fullStarts[ax] = Math.max(0, Math.min(s, x.dims[ax]));
      fullEnds[ax] = Math.max(0, Math.min(e, x.dims[ax]));
    });
    const id = this.emit(Kind.Slice, [x.id], { starts: fullStarts, ends: fullEnds });
    const dims = x.dims.map((_, i) => fullEnds[i] - fullStarts[i]);
    this.set(n.outputs[0], { id, dims, layout: "flat" });
  }

  private convertExpand(n: OnnxNode): void {
    const x = this.value(n.inputs[0], "flat");
    const dims = this.intList(n.inputs[1], "Expand");
    const id = this.emit(Kind.Expand, [x.id], { dims });
    this.set(n.outputs[0], { id, dims, layout: "flat" });
  }
}

export function convert(buf: Uint8Array): Uint8Array {
  return new Converter(buf).convert().bytes;
}

/** Convert plus the layout metadata a caller needs to feed/read the model. */
export function convertWithMeta(buf: Uint8Array): ConvertResult {
  return new Converter(buf).convert();
}
