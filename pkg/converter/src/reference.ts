/** Plain float evaluator for the supported ONNX op subset (NCHW layouts,
 * float64 accumulation).  This is the converter's own reference for the
 * --check probe; the test suite pins it against frozen fixture outputs. */

import { OnnxModel, OnnxNode, OnnxTensor, TENSOR_INT64 } from "./onnx";
import { UnsupportedOpError } from "./convert";

export interface RefTensor {
  dims: number[];
  data: Float64Array;
}

function prod(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1);
}

export function tensorOf(dims: number[], data: ArrayLike<number>): RefTensor {
  return { dims: dims.slice(), data: Float64Array.from(data as number[]) };
}

function fromInit(t: OnnxTensor): RefTensor {
  if (t.dataType === TENSOR_INT64) {
    return { dims: t.dims.slice(), data: Float64Array.from(t.ints) };
  }
  return { dims: t.dims.slice(), data: Float64Array.from(t.floats) };
}

function elementwise(a: RefTensor, b: RefTensor, f: (x: number, y: number) => number): RefTensor {
  if (prod(b.dims) === 1) {
    return { dims: a.dims.slice(), data: a.data.map((v) => f(v, b.data[0])) };
  }
  if (prod(a.dims) === 1) {
    return { dims: b.dims.slice(), data: b.data.map((v) => f(a.data[0], v)) };
  }
  if (a.dims.join() !== b.dims.join()) {
    throw new UnsupportedOpError("broadcast", `${a.dims} with ${b.dims}`);
  }
  const out = new Float64Array(a.data.length);
  for (let i = 0; i < out.length; i++) out[i] = f(a.data[i], b.data[i]);
  return { dims: a.dims.slice(), data: out };
}

function matmul(a: RefTensor, b: RefTensor): RefTensor {
  const k = a.dims[a.dims.length - 1];
  const n = b.dims[1];
  const lead = prod(a.dims.slice(0, -1));
  const out = new Float64Array(lead * n);
  for (let r = 0; r < lead; r++) {
    for (let c = 0; c < n; c++) {
      let acc = 0;
      for (let t = 0; t < k; t++) acc += a.data[r * k + t] * b.data[t * n + c];
      out[r * n + c] = acc;
    }
  }
  return { dims: [...a.dims.slice(0, -1), n], data: out };
}

function conv(x: RefTensor, w: RefTensor, b: RefTensor | null, strides: number[], pads: number[], group: number): RefTensor {
  const [nb, cin, h, ww] = x.dims;
  const [cout, cinG, kh, kw] = w.dims;
  const [pt, pl, pb, pr] = pads;
  const oh = Math.floor((h + pt + pb - kh) / strides[0]) + 1;
  const ow = Math.floor((ww + pl + pr - kw) / strides[1]) + 1;
  const out = new Float64Array(nb * cout * oh * ow);
  const cpg = cout / group;
  const at = (n: number, c: number, y: number, xx: number) =>
    x.data[((n * cin + c) * h + y) * ww + xx];
  for (let n = 0; n < nb; n++) {
    for (let co = 0; co < cout; co++) {
      const g = Math.floor(co / cpg);
      for (let oy = 0; oy < oh; oy++) {
        for (let ox = 0; ox < ow; ox++) {
          let acc = b ? b.data[co] : 0;
          for (let a = 0; a < kh; a++) {
            for (let bb = 0; bb < kw; bb++) {
              const iy = oy * strides[0] + a - pt;
              const ix = ox * strides[1] + bb - pl;
              if (iy < 0 || iy >= h || ix < 0 || ix >= ww) continue;
              for (let ci = 0; ci < cinG; ci++) {
                acc += at(n, g * cinG + ci, iy, ix) * w.data[((co * cinG + ci) * kh + a) * kw + bb];
              }
            }
          }
          out[((n * cout + co) * oh + oy) * ow + ox] = acc;
        }
      }
    }
  }
  return { dims: [nb, cout, oh, ow], data: out };
}

function convTranspose(x: RefTensor, w: RefTensor, strides: number[]): RefTensor {
  const [nb, cin, h, ww] = x.dims;
  const [, cout, kh, kw] = w.dims;
  const oh = (h - 1) * strides[0] + kh;
  const ow = (ww - 1) * strides[1] + kw;
  const out = new Float64Array(nb * cout * oh * ow);
  for (let n = 0; n < nb; n++) {
    for (let ci = 0; ci < cin; ci++) {
      for (let iy = 0; iy < h; iy++) {
        for (let ix = 0; ix < ww; ix++) {
          const v = x.data[((n * cin + ci) * h + iy) * ww + ix];
          for (let co = 0; co < cout; co++) {
            for (let a = 0; a < kh; a++) {
              for (let bb = 0; bb < kw; bb++) {
                const oy = iy * strides[0] + a;
                const ox = ix * strides[1] + bb;
                out[((n * cout + co) * oh + oy) * ow + ox] +=
                  v * w.data[((ci * cout + co) * kh + a) * kw + bb];
              }
            }
          }
        }
      }
    }
  }
  return { dims: [nb, cout, oh, ow], data: out };
}

function maxpool(x: RefTensor, kernel: number[], strides: number[], pads: number[]): RefTensor {
  const [nb, c, h, w] = x.dims;
  const [pt, pl] = [pads[0], pads[1]];
  const oh = Math.floor((h + pads[0] + pads[2] - kernel[0]) / strides[0]) + 1;
  const ow = Math.floor((w + pads[1] + pads[3] - kernel[1]) / strides[1]) + 1;
  const out = new Float64Array(nb * c * oh * ow);
  for (let n = 0; n < nb; n++) {
    for (let ci = 0; ci < c; ci++) {
      for (let oy = 0; oy < oh; oy++) {
        for (let ox = 0; ox < ow; ox++) {
          let best = -Infinity;
          for (let a = 0; a < kernel[0]; a++) {
            for (let bb = 0; bb < kernel[1]; bb++) {
              const iy = oy * strides[0] + a - pt;
              const ix = ox * strides[1] + bb - pl;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              best = Math.max(best, x.data[((n * c + ci) * h + iy) * w + ix]);
            }
          }
          out[((n * c + ci) * oh + oy) * ow + ox] = best;
        }
      }
    }
  }
  return { dims: [nb, c, oh, ow], data: out };
}

function transpose(x: RefTensor, perm: number[]): RefTensor {
  const outDims = perm.map((p) => x.dims[p]);
  const inStrides = new Array(x.dims.length).fill(1);
  for (let i = x.dims.length - 2; i >= 0; i--) inStrides[i] = inStrides[i + 1] * x.dims[i + 1];
  const outStrides = new Array(outDims.length).fill(1);
  for (let i = outDims.length - 2; i >= 0; i--) outStrides[i] = outStrides[i + 1] * outDims[i + 1];
  const out = new Float64Array(x.data.length);
  const idx = new Array(outDims.length).fill(0);
  for (let o = 0; o < out.length; o++) {
    let rem = o;
    for (let a = 0; a < outDims.length; a++) {
      idx[a] = Math.floor(rem / outStrides[a]);
      rem %= outStrides[a];
    }
    let src = 0;
    for (let a = 0; a < outDims.length; a++) src += idx[a] * inStrides[perm[a]];
    out[o] = x.data[src];
  }
  return { dims: outDims, data: out };
}

export function evaluate(model: OnnxModel, feeds: Map<string, RefTensor>): Map<string, RefTensor> {
  const values = new Map<string, RefTensor>();
  for (const [name, t] of model.initializers) values.set(name, fromInit(t));
  for (const vi of model.inputs) {
    const f = feeds.get(vi.name);
    if (!f) throw new Error(`missing feed for input ${vi.name}`);
    values.set(vi.name, f);
  }
  const attrI = (n: OnnxNode, name: string, d: number) => n.attrs.get(name)?.i ?? d;
  const attrF = (n: OnnxNode, name: string, d: number) => n.attrs.get(name)?.f ?? d;
  const attrIs = (n: OnnxNode, name: string, d: number[]) => {
    const a = n.attrs.get(name);
    return a && a.ints.length ? a.ints : d;
  };
  for (const n of model.nodes) {
    const get = (i: number) => {
      const v = values.get(n.inputs[i]);
      if (!v) throw new Error(`value ${n.inputs[i]} undefined at ${n.opType}`);
      return v;
    };
    let out: RefTensor;
    switch (n.opType) {
      case "Constant":
        out = fromInit(n.attrs.get("value")!.t!);
        break;
      case "Gemm": {
        const x = get(0);
        let w = get(1);
        if (attrI(n, "transB", 0)) w = transpose(w, [1, 0]);
        out = matmul(x, w);
        if (n.inputs.length > 2) out = elementwiseBias(out, get(2));
        break;
      }
      case "MatMul":
        out = matmul(get(0), get(1));
        break;
      case "Add":
        out = elementwise(get(0), get(1), (a, b) => a + b);
        break;
      case "Mul":
        out = elementwise(get(0), get(1), (a, b) => a * b);
        break;
      case "Max":
        out = elementwise(get(0), get(1), Math.max);
        break;
      case "Relu":
        out = { dims: get(0).dims.slice(), data: get(0).data.map((v) => Math.max(v, 0)) };
        break;
      case "LeakyRelu": {
        const alpha = attrF(n, "alpha", 0.01);
        out = { dims: get(0).dims.slice(), data: get(0).data.map((v) => (v >= 0 ? v : alpha * v)) };
        break;
      }
      case "PRelu": {
        const x = get(0);
        const s = get(1);
        const sq = s.dims.filter((d) => d !== 1);
        // slope is scalar or per-channel: channels sit at axis 1 for NCHW
        // rank-4 values and at the last axis otherwise
        let channel: (i: number) => number;
        if (sq.length === 0) {
          channel = () => 0;
        } else if (x.dims.length === 4) {
          const hw = x.dims[2] * x.dims[3];
          channel = (i) => Math.floor(i / hw) % x.dims[1];
        } else {
          const c = x.dims[x.dims.length - 1];
          channel = (i) => i % c;
        }
        const out2 = new Float64Array(x.data.length);
        for (let i = 0; i < out2.length; i++) {
          const slope = s.data[channel(i)];
          out2[i] = x.data[i] >= 0 ? x.data[i] : slope * x.data[i];
        }
        out = { dims: x.dims.slice(), data: out2 };
        break;
      }
      case "Conv":
        out = conv(get(0), get(1), n.inputs.length > 2 ? get(2) : null,
                   attrIs(n, "strides", [1, 1]), attrIs(n, "pads", [0, 0, 0, 0]),
                   attrI(n, "group", 1));
        break;
      case "ConvTranspose":
        out = convTranspose(get(0), get(1), attrIs(n, "strides", [1, 1]));
        break;
      case "MaxPool":
        out = maxpool(get(0), attrIs(n, "kernel_shape", []),
                      attrIs(n, "strides", attrIs(n, "kernel_shape", [])),
                      attrIs(n, "pads", [0, 0, 0, 0]));
        break;
      case "Concat": {
        let axis = attrI(n, "axis", 0);
        const parts = n.inputs.map((_, i) => get(i));
        if (axis < 0) axis += parts[0].dims.length;
        out = concat(parts, axis);
        break;
      }
      case "Flatten": {
        const x = get(0);
        let axis = attrI(n, "axis", 1);
        if (axis < 0) axis += x.dims.length;
        out = { dims: [prod(x.dims.slice(0, axis)), prod(x.dims.slice(axis))], data: x.data.slice() };
        break;
      }
      case "Transpose":
        out = transpose(get(0), attrIs(n, "perm", [...get(0).dims.keys()].reverse()));
        break;
      case "Reshape": {
        const x = get(0);
        const target = Array.from(get(1).data, Number);
        const resolved = target.map((d, i) => (d === 0 ? x.dims[i] : d));
        const known = prod(resolved.filter((d) => d !== -1));
        const dims = resolved.map((d) => (d === -1 ? prod(x.dims) / known : d));
        out = { dims, data: x.data.slice() };
        break;
      }
      case "Slice": {
        const x = get(0);
        const starts = Array.from(get(1).data, Number);
        const ends = Array.from(get(2).data, Number);
        const axes = n.inputs[3] ? Array.from(get(3).data, Number) : starts.map((_, i) => i);
        out = slice(x, starts, ends, axes);
        break;
      }
      case "Expand": {
        const x = get(0);
        const dims = Array.from(get(1).data, Number);
        out = expand(x, dims);
        break;
      }
      case "Shape":
        out = { dims: [get(0).dims.length], data: Float64Array.from(get(0).dims) };
        break;
      default:
        throw new UnsupportedOpError(n.opType);
    }
    values.set(n.outputs[0], out);
  }
  const result = new Map<string, RefTensor>();
  for (const vo of model.outputs) result.set(vo.name, values.get(vo.name)!);
  return result;
}

function elementwiseBias(x: RefTensor, b: RefTensor): RefTensor {
  const n = b.data.length;
  const out = new Float64Array(x.data.length);
  for (let i = 0; i < out.length; i++) out[i] = x.data[i] + b.data[i % n];
  return { dims: x.dims.slice(), data: out };
}

function concat(parts: RefTensor[], axis: number): RefTensor {
  const dims = parts[0].dims.slice();
  dims[axis] = parts.reduce((a, p) => a + p.dims[axis], 0);
  const inner = prod(parts[0].dims.slice(axis + 1));
  const outer = prod(parts[0].dims.slice(0, axis));
  const out = new Float64Array(prod(dims));
  let offset = 0;
  for (const p of parts) {
    const span = p.dims[axis] * inner;
    for (let o = 0; o < outer; o++) {
      out.set(p.data.subarray(o * span, (o + 1) * span), o * dims[axis] * inner + offset);
    }
    offset += span;
  }
  return { dims, data: out };
}

function slice(x: RefTensor, starts: number[], ends: number[], axes: number[]): RefTensor {
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
  const outDims = x.dims.map((_, i) => fullEnds[i] - fullStarts[i]);
  const out = new Float64Array(prod(outDims));
  const inStrides = new Array(x.dims.length).fill(1);
  for (let i = x.dims.length - 2; i >= 0; i--) inStrides[i] = inStrides[i + 1] * x.dims[i + 1];
  const outStrides = new Array(outDims.length).fill(1);
  for (let i = outDims.length - 2; i >= 0; i--) outStrides[i] = outStrides[i + 1] * outDims[i + 1];
  const idx = new Array(outDims.length).fill(0);
  for (let o = 0; o < out.length; o++) {
    let rem = o;
    let src = 0;
    for (let a = 0; a < outDims.length; a++) {
      idx[a] = Math.floor(rem / outStrides[a]) + fullStarts[a];
      rem %= outStrides[a];
      src += idx[a] * inStrides[a];
    }
    out[o] = x.data[src];
  }
  return { dims: outDims, data: out };
}

function expand(x: RefTensor, dims: number[]): RefTensor {
  const out = new Float64Array(prod(dims));
  const rank = dims.length;
  const xDims = new Array(rank - x.dims.length).fill(1).concat(x.dims);
  const xStrides = new Array(rank).fill(0);
  let s = 1;
  for (let i = rank - 1; i >= 0; i--) {
    xStrides[i] = xDims[i] === 1 ? 0 : s;
    s *= xDims[i];
  }
  const outStrides = new Array(rank).fill(1);
  for (let i = rank - 2; i >= 0; i--) outStrides[i] = outStrides[i + 1] * dims[i + 1];
  for (let o = 0; o < out.length; o++) {
    let rem = o;
    let src = 0;
    for (let a = 0; a < rank; a++) {
      const ia = Math.floor(rem / outStrides[a]);
      rem %= outStrides[a];
      src += Math.min(ia, xDims[a] - 1) * xStrides[a];
    }
    out[o] = x.data[src];
  }
  return { dims: dims.slice(), data: out };
}
