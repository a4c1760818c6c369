/** Converted models must match the frozen source-runtime outputs when run
 * by the engine (through its CLI and file formats) within 1e-5. */

import { execFileSync } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { convertWithMeta } from "../src/convert";
import { main as cliMain } from "../src/cli";
import {
  engineInfer,
  feedsOf,
  loadFixture,
  maxAbsDiff,
  nchwToNhwc,
  NET_FIXTURES,
  OP_FIXTURES,
} from "./helpers";

const TOL = 1e-5;

function checkFixture(name: string) {
  const { onnx, meta } = loadFixture(name);
  const result = convertWithMeta(onnx);
  const feeds = feedsOf(meta);
  const engineInputs = result.inputs.map((inp) => {
    const t = feeds.get(inp.name)!;
    return inp.image ? nchwToNhwc(t.dims, t.data) : t;
  });
  const outs = engineInfer(result.bytes, engineInputs, result.outputs.length);
  result.outputs.forEach((o, i) => {
    const want0 = meta.outputs[o.name];
    const want = o.image ? nchwToNhwc(want0.dims, want0.data) : want0;
    expect(outs[i].dims).toEqual(want.dims);
    expect(maxAbsDiff(outs[i].data, want.data)).toBeLessThan(TOL);
  });
}

describe("engine runs converted models to source-runtime outputs", () => {
  it.each(OP_FIXTURES)("%s", (name) => checkFixture(name));
  it.each(NET_FIXTURES)("%s (whole graph)", (name) => checkFixture(name));
});

describe("engine validates converted models", () => {
  it.each(NET_FIXTURES)("%s passes convert-check", (name) => {
    const { onnx } = loadFixture(name);
    const dir = mkdtempSync(join(tmpdir(), "smf1-validate-"));
    const path = join(dir, "m.smf1");
    writeFileSync(path, convertWithMeta(onnx).bytes);
    const out = execFileSync("qnn", ["convert-check", "--model", path], {
      encoding: "utf-8",
    });
    expect(out).toContain("no violations");
  });
});

describe("converter command", () => {
  it("converts and probes float equivalence", () => {
    const dir = mkdtempSync(join(tmpdir(), "cli-"));
    const { onnx } = loadFixture("net_mlp");
    const src = join(dir, "m.onnx");
    writeFileSync(src, onnx);
    const dst = join(dir, "m.smf1");
    const rc = cliMain(["convert", "--in", src, "--out", dst, "--check"]);
    expect(rc).toBe(0);
  });

  it("fails with usage code on missing arguments", () => {
    expect(cliMain(["convert"])).toBe(2);
  });

  it("reports unsupported ops with a distinct exit code", () => {
    const dir = mkdtempSync(join(tmpdir(), "cli-"));
    const dst = join(dir, "m.smf1");
    const bad = join(__dirname, "..", "fixtures", "bad_unsupported_op.onnx");
    expect(cliMain(["convert", "--in", bad, "--out", dst])).toBe(4);
  });
});
