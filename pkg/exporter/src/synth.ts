/**
 * Synthesise a VGG16-architecture weight set in the tfjs manifest layout.
 * Stands in for real pretrained weights in offline tests and fixture
 * regeneration; the exporter itself treats the output exactly like any
 * converted VGG16 checkpoint.
 */

import * as fs from "fs";
import * as path from "path";

import { Xoshiro256PP } from "./rng";
import { VGG16_CONV_NAMES, VGG16_WIDTHS } from "./vgg16";

export function synthesiseVgg16(outDir: string, seed: number, cutLayer: number): void {
  if (cutLayer < 0 || cutLayer >= VGG16_CONV_NAMES.length) {
    throw new Error(`cut_layer must be in [0, ${VGG16_CONV_NAMES.length - 1}]`);
  }
  fs.mkdirSync(outDir, { recursive: true });
  const rng = new Xoshiro256PP(seed);
  const weights: { name: string; shape: number[]; dtype: string }[] = [];
  const buffers: Buffer[] = [];
  for (let idx = 0; idx <= cutLayer; idx++) {
    const name = VGG16_CONV_NAMES[idx];
    const inCh = idx === 0 ? 3 : VGG16_WIDTHS[idx - 1];
    const outCh = VGG16_WIDTHS[idx];
    // He-style scale keeps activations in a sane range through the stack
    const std = Math.sqrt(2 / (9 * inCh));
    const kernel = new Float32Array(9 * inCh * outCh);
    const normals = rng.normals(kernel.length);
    for (let i = 0; i < kernel.length; i++) kernel[i] = normals[i] * std;
    const bias = new Float32Array(outCh);
    const bnorm = rng.normals(outCh);
    for (let i = 0; i < outCh; i++) bias[i] = 0.01 * bnorm[i];
    weights.push({ name: `${name}/kernel`, shape: [3, 3, inCh, outCh], dtype: "float32" });
    buffers.push(f32buf(kernel));
    weights.push({ name: `${name}/bias`, shape: [outCh], dtype: "float32" });
    buffers.push(f32buf(bias));
  }
  const shard = "group1-shard1of1.bin";
  fs.writeFileSync(path.join(outDir, shard), Buffer.concat(buffers));
  const manifest = {
    format: "layers-model",
    generatedBy: "sketchforge-weight-exporter synth",
    weightsManifest: [{ paths: [shard], weights }],
  };
  fs.writeFileSync(path.join(outDir, "model.json"), JSON.stringify(manifest, null, 1));
}

function f32buf(arr: Float32Array): Buffer {
  return Buffer.from(arr.buffer.slice(arr.byteOffset, arr.byteOffset + arr.byteLength));
}
