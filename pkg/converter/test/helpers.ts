/** Fixture loading and engine-CLI plumbing shared by the test modules. */

import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { RefTensor, tensorOf } from "../src/reference";
import { readStn1, writeStn1Float } from "../src/smf1";

export const FIXTURES = join(__dirname, "..", "fixtures");

export interface FixtureMeta {
  inputs: Record<string, { dims: number[]; data: number[] }>;
  outputs: Record<string, { dims: number[]; data: number[] }>;
  image_outputs: string[];
}

export function loadFixture(name: string): { onnx: Uint8Array; meta: FixtureMeta } {
  const onnx = new Uint8Array(readFileSync(join(FIXTURES, `${name}.onnx`)));
  const meta = JSON.parse(readFileSync(join(FIXTURES, `${name}.json`), "utf-8"));
  return { onnx, meta };
}

export function feedsOf(meta: FixtureMeta): Map<string, RefTensor> {
  const feeds = new Map<string, RefTensor>();
  for (const [name, t] of Object.entries(meta.inputs)) {
    feeds.set(name, tensorOf(t.dims, t.data));
  }
  return feeds;
}

export function maxAbsDiff(a: ArrayLike<number>, b: ArrayLike<number>): number {
  if (a.length !== b.length) return Infinity;
  let worst = 0;
  for (let i = 0; i < a.length; i++) worst = Math.max(worst, Math.abs(a[i] - b[i]));
  return worst;
}

export function nchwToNhwc(dims: number[], data: ArrayLike<number>): { dims: number[]; data: Float64Array } {
  const [n, c, h, w] = dims;
  const out = new Float64Array(n * c * h * w);
  for (let i = 0; i < n; i++)
    for (let y = 0; y < h; y++)
      for (let x = 0; x < w; x++)
        for (let ch = 0; ch < c; ch++)
          out[((i * h + y) * w + x) * c + ch] = data[((i * c + ch) * h + y) * w + x];
  return { dims: [n, h, w, c], data: out };
}

/** Run the engine CLI on a converted model; returns per-output tensors. */
export function engineInfer(
  smf1: Uint8Array,
  inputs: { dims: number[]; data: ArrayLike<number> }[],
  nOutputs: number,
): { dims: number[]; data: Float64Array }[] {
  const dir = mkdtempSync(join(tmpdir(), "smf1-test-"));
  const model = join(dir, "m.smf1");
  writeFileSync(model, smf1);
  const args = ["infer", "--model", model];
  inputs.forEach((t, i) => {
    const p = join(dir, `in${i}.stn1`);
    writeFileSync(p, writeStn1Float(t.dims, Float32Array.from(t.data as number[])));
    args.push("--input", p);
  });
  const prefix = join(dir, "out");
  if (nOutputs === 1) args.push("--out", `${prefix}0.stn1`);
  else args.push("--out-prefix", prefix);
  execFileSync("qnn", args, { stdio: ["ignore", "pipe", "pipe"] });
  const outs = [];
  for (let i = 0; i < nOutputs; i++) {
    const t = readStn1(new Uint8Array(readFileSync(`${prefix}${i}.stn1`)));
    outs.push({ dims: t.dims, data: t.data });
  }
  return outs;
}

export const OP_FIXTURES = [
  "op_gemm",
  "op_matmul",
  "op_add",
  "op_mul",
  "op_max",
  "op_relu",
  "op_leakyrelu",
  "op_prelu",
  "op_conv_same",
  "op_conv_stride2",
  "op_conv_grouped",
  "op_convtranspose",
  "op_maxpool",
  "op_concat2d",
  "op_concat_channels",
  "op_transpose",
  "op_reshape",
  "op_slice",
  "op_expand",
  "op_flatten2d",
];

export const NET_FIXTURES = ["net_mlp", "net_cnn"];
