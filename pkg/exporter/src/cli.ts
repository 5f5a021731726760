/**
 * Command-line entry points:
 *
 *   export  --source DIR --cut-layer N [--pooling fold_stride|drop]
 *           [--taps 0,1,2] [--mean r,g,b] [--std r,g,b] --out FILE.skw1
 *   fixture --skw1 FILE.skw1 --out FILE.json [--seed N]
 *   synth   --out-dir DIR [--seed N] [--cut-layer N]
 */

import * as fs from "fs";

import { DEFAULT_FIXTURE_SEED, fixtureJson, makeFixture } from "./fixture";
import { readSkw1, writeSkw1 } from "./skw1";
import { synthesiseVgg16 } from "./synth";
import {
  DEFAULT_MEAN,
  DEFAULT_STD,
  ExportPlan,
  buildEncoder,
  loadSourceWeights,
} from "./vgg16";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`malformed arguments near ${key}`);
    }
    flags.set(key.slice(2), argv[i + 1]);
  }
  return flags;
}

function need(flags: Map<string, string>, key: string): string {
  const v = flags.get(key);
  if (v === undefined) throw new Error(`missing required --${key}`);
  return v;
}

function triple(text: string, what: string): [number, number, number] {
  const parts = text.split(",").map(Number);
  if (parts.length !== 3 || parts.some((v) => !Number.isFinite(v))) {
    throw new Error(`--${what} must be three comma-separated numbers`);
  }
  return [parts[0], parts[1], parts[2]];
}

function cmdExport(argv: string[]): void {
  const flags = parseFlags(argv);
  const cutLayer = Number(need(flags, "cut-layer"));
  const taps = (flags.get("taps") ?? String(cutLayer))
    .split(",")
    .map((t) => Number(t.trim()));
  const plan: ExportPlan = {
    sourceDir: need(flags, "source"),
    sourceModelId: flags.get("model-id") ?? "vgg16",
    cutLayer,
    poolingStrategy: (flags.get("pooling") ?? "fold_stride") as ExportPlan["poolingStrategy"],
    taps,
    inputMean: flags.has("mean") ? triple(flags.get("mean")!, "mean") : DEFAULT_MEAN,
    inputStd: flags.has("std") ? triple(flags.get("std")!, "std") : DEFAULT_STD,
  };
  const outPath = need(flags, "out");
  const src = loadSourceWeights(plan.sourceDir);
  const { net, poolingNote } = buildEncoder(plan, src);
  writeSkw1(net, outPath);
  const sidecar = {
    source_model_id: plan.sourceModelId,
    source_dir: plan.sourceDir,
    cut_layer: plan.cutLayer,
    pooling_strategy: plan.poolingStrategy,
    taps: plan.taps,
    strides: net.layers.map((l) => l.stride),
    input_mean: plan.inputMean,
    input_std: plan.inputStd,
  };
  fs.writeFileSync(outPath + ".plan.json", JSON.stringify(sidecar, null, 1) + "\n");
  if (poolingNote) {
    fs.writeFileSync(outPath + ".pooling-note.txt", poolingNote + "\n");
  }
  const params = net.layers.reduce((a, l) => a + l.weight.length + l.bias.length, 0);
  console.log(
    `exported ${net.layers.length} conv layers (${params} parameters), ` +
      `taps [${net.taps.join(", ")}] -> ${outPath}`
  );
}

function cmdFixture(argv: string[]): void {
  const flags = parseFlags(argv);
  const net = readSkw1(need(flags, "skw1"));
  const seed = flags.has("seed") ? Number(flags.get("seed")) : DEFAULT_FIXTURE_SEED;
  const doc = makeFixture(net, seed);
  const outPath = need(flags, "out");
  fs.writeFileSync(outPath, fixtureJson(doc) + "\n");
  console.log(
    `fixture seed ${seed}: ${doc.activations.length} tap activations -> ${outPath}`
  );
}

function cmdSynth(argv: string[]): void {
  const flags = parseFlags(argv);
  const outDir = need(flags, "out-dir");
  const seed = flags.has("seed") ? Number(flags.get("seed")) : 0;
  const cutLayer = flags.has("cut-layer") ? Number(flags.get("cut-layer")) : 4;
  synthesiseVgg16(outDir, seed, cutLayer);
  console.log(`synthesised VGG16 weights through conv ${cutLayer} -> ${outDir}`);
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    if (command === "export") cmdExport(rest);
    else if (command === "fixture") cmdFixture(rest);
    else if (command === "synth") cmdSynth(rest);
    else {
      console.error("usage: cli.js <export|fixture|synth> [--flags ...]");
      return 2;
    }
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
