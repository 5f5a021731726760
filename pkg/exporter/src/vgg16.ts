/**
 * VGG16 conv-prefix extraction from tfjs-style weight artifacts
 * (model.json with a weightsManifest plus binary shard files, Keras layer
 * naming). Max-pool layers cannot be represented in SKW1, so they are
 * either folded into the stride of the following conv or dropped.
 */

import * as fs from "fs";
import * as path from "path";

import { ConvLayer, EncoderNet } from "./skw1";

export const VGG16_CONV_NAMES = [
  "block1_conv1", "block1_conv2",
  "block2_conv1", "block2_conv2",
  "block3_conv1", "block3_conv2", "block3_conv3",
  "block4_conv1", "block4_conv2", "block4_conv3",
  "block5_conv1", "block5_conv2", "block5_conv3",
];

export const VGG16_WIDTHS = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512];

/** Conv indices directly preceded by a max-pool in the original network. */
export const AFTER_POOL = new Set([2, 4, 7, 10]);

export type PoolingStrategy = "fold_stride" | "drop";

export interface ExportPlan {
  /** Directory holding model.json and its weight shards. */
  sourceDir: string;
  sourceModelId: string;
  /** Index of the last conv layer to keep, 0-based over the 13 convs. */
  cutLayer: number;
  poolingStrategy: PoolingStrategy;
  /** Tap indices in the exported numbering (== conv index). */
  taps: number[];
  /** Input normalisation recorded in the SKW1 header ([0,1]-range units). */
  inputMean: [number, number, number];
  inputStd: [number, number, number];
}

// ImageNet statistics in [0,1] pixel units.
export const DEFAULT_MEAN: [number, number, number] = [0.485, 0.456, 0.406];
export const DEFAULT_STD: [number, number, number] = [0.229, 0.224, 0.225];

export function validatePlan(plan: ExportPlan): void {
  if (plan.cutLayer < 0 || plan.cutLayer >= VGG16_CONV_NAMES.length) {
    throw new Error(`cut_layer must be in [0, ${VGG16_CONV_NAMES.length - 1}]`);
  }
  if (plan.taps.length === 0) throw new Error("plan needs at least one tap");
  plan.taps.forEach((t, i) => {
    if (t < 0 || t > plan.cutLayer) {
      throw new Error(`tap ${t} outside the exported prefix (cut_layer ${plan.cutLayer})`);
    }
    if (i > 0 && plan.taps[i] <= plan.taps[i - 1]) {
      throw new Error("taps must be strictly increasing");
    }
  });
  if (plan.poolingStrategy !== "fold_stride" && plan.poolingStrategy !== "drop") {
    throw new Error(`unknown pooling strategy ${plan.poolingStrategy}`);
  }
}

interface WeightSpec {
  name: string;
  shape: number[];
  dtype: string;
}

interface WeightsManifestGroup {
  paths: string[];
  weights: WeightSpec[];
}

export interface SourceWeights {
  /** name -> (shape, float data) */
  tensors: Map<string, { shape: number[]; data: Float32Array }>;
}

/** Read model.json + shards; every tensor must be float32. */
export function loadSourceWeights(sourceDir: string): SourceWeights {
  const modelPath = path.join(sourceDir, "model.json");
  let manifest: { weightsManifest?: WeightsManifestGroup[] };
  try {
    manifest = JSON.parse(fs.readFileSync(modelPath, "utf8"));
  } catch (err) {
    throw new Error(`cannot load ${modelPath}: ${(err as Error).message}`);
  }
  if (!manifest.weightsManifest) {
    throw new Error(`${modelPath} has no weightsManifest`);
  }
  const tensors = new Map<string, { shape: number[]; data: Float32Array }>();
  for (const group of manifest.weightsManifest) {
    const buffers = group.paths.map((p) => fs.readFileSync(path.join(sourceDir, p)));
    const blob = Buffer.concat(buffers);
    let offset = 0;
    for (const spec of group.weights) {
      const count = spec.shape.reduce((a, b) => a * b, 1);
      if (spec.dtype !== "float32") {
        throw new Error(`unsupported dtype ${spec.dtype} for ${spec.name}`);
      }
      if (offset + 4 * count > blob.length) {
        throw new Error(`weight shard truncated while reading ${spec.name}`);
      }
      const data = new Float32Array(count);
      for (let i = 0; i < count; i++) data[i] = blob.readFloatLE(offset + 4 * i);
      offset += 4 * count;
      tensors.set(spec.name, { shape: spec.shape, data });
    }
  }
  return { tensors };
}

function findTensor(src: SourceWeights, layerName: string, kind: "kernel" | "bias") {
  for (const candidate of [`${layerName}/${kind}`, `${layerName}/${kind}:0`,
                           `${layerName}_${kind === "kernel" ? "W" : "b"}`]) {
    const hit = src.tensors.get(candidate);
    if (hit) return hit;
  }
  throw new Error(`source weights missing ${layerName}/${kind}`);
}

/** HWIO (tfjs/Keras) -> OIHW (SKW1). */
export function hwioToOihw(data: Float32Array, inCh: number, outCh: number): Float32Array {
  const out = new Float32Array(outCh * inCh * 9);
  for (let ky = 0; ky < 3; ky++) {
    for (let kx = 0; kx < 3; kx++) {
      for (let i = 0; i < inCh; i++) {
        for (let o = 0; o < outCh; o++) {
          const srcIdx = ((ky * 3 + kx) * inCh + i) * outCh + o;
          const dstIdx = ((o * inCh + i) * 3 + ky) * 3 + kx;
          out[dstIdx] = data[srcIdx];
        }
      }
    }
  }
  return out;
}

export interface ExportResult {
  net: EncoderNet;
  /** Human-readable note describing dropped pooling, if any. */
  poolingNote: string | null;
}

export function buildEncoder(plan: ExportPlan, src: SourceWeights): ExportResult {
  validatePlan(plan);
  const layers: ConvLayer[] = [];
  const dropped: number[] = [];
  for (let idx = 0; idx <= plan.cutLayer; idx++) {
    const name = VGG16_CONV_NAMES[idx];
    const kernel = findTensor(src, name, "kernel");
    const bias = findTensor(src, name, "bias");
    const expectIn = idx === 0 ? 3 : VGG16_WIDTHS[idx - 1];
    const expectOut = VGG16_WIDTHS[idx];
    const shapeOk =
      kernel.shape.length === 4 &&
      kernel.shape[0] === 3 &&
      kernel.shape[1] === 3 &&
      kernel.shape[2] === expectIn &&
      kernel.shape[3] === expectOut;
    if (!shapeOk) {
      throw new Error(
        `${name}/kernel has shape [${kernel.shape}], expected [3,3,${expectIn},${expectOut}]`
      );
    }
    if (bias.shape.length !== 1 || bias.shape[0] !== expectOut) {
      throw new Error(`${name}/bias has shape [${bias.shape}], expected [${expectOut}]`);
    }
    let stride = 1;
    if (AFTER_POOL.has(idx)) {
      if (plan.poolingStrategy === "fold_stride") stride = 2;
      else dropped.push(idx);
    }
    layers.push({
      outCh: expectOut,
      inCh: expectIn,
      stride,
      weight: hwioToOihw(kernel.data, expectIn, expectOut),
      bias: Float32Array.from(bias.data),
    });
  }
  const net: EncoderNet = {
    layers,
    taps: [...plan.taps],
    inputMean: Float32Array.from(plan.inputMean),
    inputStd: Float32Array.from(plan.inputStd),
  };
  let poolingNote: string | null = null;
  if (dropped.length > 0) {
    poolingNote =
      "Max-pool layers before conv indices [" + dropped.join(", ") + "] were " +
      "dropped rather than folded. The exported network keeps full spatial " +
      "resolution at those depths, so receptive fields are roughly half the " +
      "original VGG16 size there and activations will not match the source " +
      "network spatially.";
  }
  return { net, poolingNote };
}
