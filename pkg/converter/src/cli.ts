#!/usr/bin/env node
/** ONNX -> SMF1 conversion command.
 *
 *   onnx2smf1 convert --in model.onnx --out model.smf1 [--check]
 *
 * --check feeds both sides random inputs: this package's own float
 * evaluator runs the source graph, the engine CLI (`qnn infer`) runs the
 * converted model, and the maximum elementwise difference is printed.
 */

import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { convertWithMeta, DynamicShapeError, UnsupportedOpError } from "./convert";
import { parseModel } from "./onnx";
import { evaluate, RefTensor, tensorOf } from "./reference";
import { readStn1, writeStn1Float } from "./smf1";

function parseArgs(argv: string[]): Map<string, string | boolean> {
  const out = new Map<string, string | boolean>();
  for (let i = 0; i < argv.length; i++) {
    const a = argv[i];
    if (!a.startsWith("--")) continue;
    const key = a.slice(2);
    if (i + 1 < argv.length && !argv[i + 1].startsWith("--")) {
      out.set(key, argv[++i]);
    } else {
      out.set(key, true);
    }
  }
  return out;
}

/** Deterministic uniform(-1, 1) generator for the check probe. */
function* lcg(seed: number): Generator<number> {
  let s = seed >>> 0;
  for (;;) {
    s = (s * 1664525 + 1013904223) >>> 0;
    yield (s / 0xffffffff) * 2 - 1;
  }
}

const NCHW_TO_NHWC = [0, 2, 3, 1];

function nhwcOf(t: RefTensor): RefTensor {
  const [n, c, h, w] = t.dims;
  const out = new Float64Array(t.data.length);
  for (let i = 0; i < n; i++)
    for (let y = 0; y < h; y++)
      for (let x = 0; x < w; x++)
        for (let ch = 0; ch < c; ch++)
          out[((i * h + y) * w + x) * c + ch] = t.data[((i * c + ch) * h + y) * w + x];
  return { dims: NCHW_TO_NHWC.map((p) => t.dims[p]), data: out };
}

function runCheck(onnxBytes: Uint8Array, smf1Path: string, meta: ReturnType<typeof convertWithMeta>): number {
  const model = parseModel(onnxBytes);
  const rand = lcg(0xc0ffee);
  const feeds = new Map<string, RefTensor>();
  for (const inp of meta.inputs) {
    const count = inp.dims.reduce((a, b) => a * b, 1);
    const data = Float64Array.from({ length: count }, () => Math.fround(rand.next().value));
    feeds.set(inp.name, tensorOf(inp.dims, data));
  }
  const expected = evaluate(model, feeds);
  const dir = mkdtempSync(join(tmpdir(), "onnx2smf1-"));
  try {
    const args = ["infer", "--model", smf1Path];
    meta.inputs.forEach((inp, i) => {
      const t = feeds.get(inp.name)!;
      const engineSide = inp.image ? nhwcOf(t) : t;
      const p = join(dir, `in${i}.stn1`);
      writeFileSync(p, writeStn1Float(engineSide.dims, Float32Array.from(engineSide.data)));
      args.push("--input", p);
    });
    const outPrefix = join(dir, "out");
    if (meta.outputs.length === 1) args.push("--out", `${outPrefix}0.stn1`);
    else args.push("--out-prefix", outPrefix);
    execFileSync("qnn", args, { stdio: ["ignore", "pipe", "inherit"] });
    let worst = 0;
    meta.outputs.forEach((o, i) => {
      const got = readStn1(new Uint8Array(readFileSync(`${outPrefix}${i}.stn1`)));
      const want0 = expected.get(o.name)!;
      const want = o.image ? nhwcOf(want0) : want0;
      for (let j = 0; j < want.data.length; j++) {
        worst = Math.max(worst, Math.abs(got.data[j] - want.data[j]));
      }
    });
    return worst;
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

export function main(argv: string[]): number {
  if (argv[0] !== "convert") {
    console.error("usage: onnx2smf1 convert --in model.onnx --out model.smf1 [--check]");
    return 2;
  }
  const args = parseArgs(argv.slice(1));
  const inPath = args.get("in");
  const outPath = args.get("out");
  if (typeof inPath !== "string" || typeof outPath !== "string") {
    console.error("usage: onnx2smf1 convert --in model.onnx --out model.smf1 [--check]");
    return 2;
  }
  let onnxBytes: Uint8Array;
  try {
    onnxBytes = new Uint8Array(readFileSync(inPath));
  } catch (e) {
    console.error(`error: cannot read ${inPath}: ${(e as Error).message}`);
    return 2;
  }
  try {
    const result = convertWithMeta(onnxBytes);
    writeFileSync(outPath, result.bytes);
    console.log(`wrote ${outPath} (${result.bytes.length} bytes)`);
    if (args.get("check")) {
      const worst = runCheck(onnxBytes, outPath, result);
      console.log(`max abs error vs reference: ${worst.toExponential(3)}`);
      if (!(worst <= 1e-5)) {
        console.error("error: float equivalence probe exceeded 1e-5");
        return 4;
      }
    }
    return 0;
  } catch (e) {
    if (e instanceof UnsupportedOpError || e instanceof DynamicShapeError) {
      console.error(`error: ${e.name}: ${e.message}`);
      return 4;
    }
    console.error(`error: ${(e as Error).message}`);
    return 3;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
