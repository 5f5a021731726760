/**
 * SKW1 binary weight format (little-endian):
 *
 *   magic "SKW1" | u32 version=1 | u32 layer_count | u32 tap_count
 *   | tap_count * u32 tap indices | f32 input_mean[3] | f32 input_std[3]
 *   | per layer: u32 out_ch, in_ch, kernel=3, stride;
 *     f32 weights[out][in][3][3] (row-major); f32 biases[out]
 */

import * as fs from "fs";

export interface ConvLayer {
  outCh: number;
  inCh: number;
  stride: number;
  /** OIHW order, length outCh * inCh * 9 */
  weight: Float32Array;
  bias: Float32Array;
}

export interface EncoderNet {
  layers: ConvLayer[];
  taps: number[];
  inputMean: Float32Array; // length 3
  inputStd: Float32Array; // length 3
}

const MAGIC = "SKW1";
const VERSION = 1;

export function encodeSkw1(net: EncoderNet): Buffer {
  validateNet(net);
  const chunks: Buffer[] = [];
  chunks.push(Buffer.from(MAGIC, "ascii"));
  const head = Buffer.alloc(12);
  head.writeUInt32LE(VERSION, 0);
  head.writeUInt32LE(net.layers.length, 4);
  head.writeUInt32LE(net.taps.length, 8);
  chunks.push(head);
  const taps = Buffer.alloc(4 * net.taps.length);
  net.taps.forEach((t, i) => taps.writeUInt32LE(t, 4 * i));
  chunks.push(taps);
  chunks.push(f32buf(net.inputMean), f32buf(net.inputStd));
  for (const layer of net.layers) {
    const lh = Buffer.alloc(16);
    lh.writeUInt32LE(layer.outCh, 0);
    lh.writeUInt32LE(layer.inCh, 4);
    lh.writeUInt32LE(3, 8);
    lh.writeUInt32LE(layer.stride, 12);
    chunks.push(lh, f32buf(layer.weight), f32buf(layer.bias));
  }
  return Buffer.concat(chunks);
}

export function writeSkw1(net: EncoderNet, path: string): void {
  fs.writeFileSync(path, encodeSkw1(net));
}

export function readSkw1(path: string): EncoderNet {
  const buf = fs.readFileSync(path);
  let pos = 0;
  const take = (n: number): Buffer => {
    if (pos + n > buf.length) {
      throw new Error(`truncated SKW1 file (need ${n} bytes at offset ${pos})`);
    }
    const out = buf.subarray(pos, pos + n);
    pos += n;
    return out;
  };
  if (take(4).toString("ascii") !== MAGIC) throw new Error("bad SKW1 magic");
  const head = take(12);
  const version = head.readUInt32LE(0);
  if (version !== VERSION) throw new Error(`unsupported SKW1 version ${version}`);
  const layerCount = head.readUInt32LE(4);
  const tapCount = head.readUInt32LE(8);
  const tapsBuf = take(4 * tapCount);
  const taps: number[] = [];
  for (let i = 0; i < tapCount; i++) taps.push(tapsBuf.readUInt32LE(4 * i));
  const inputMean = readF32(take(12), 3);
  const inputStd = readF32(take(12), 3);
  const layers: ConvLayer[] = [];
  for (let l = 0; l < layerCount; l++) {
    const lh = take(16);
    const outCh = lh.readUInt32LE(0);
    const inCh = lh.readUInt32LE(4);
    const kernel = lh.readUInt32LE(8);
    const stride = lh.readUInt32LE(12);
    if (kernel !== 3) throw new Error(`only 3x3 kernels supported, got ${kernel}`);
    const weight = readF32(take(4 * outCh * inCh * 9), outCh * inCh * 9);
    const bias = readF32(take(4 * outCh), outCh);
    layers.push({ outCh, inCh, stride, weight, bias });
  }
  if (pos !== buf.length) {
    throw new Error(`${buf.length - pos} trailing bytes after SKW1 payload`);
  }
  const net = { layers, taps, inputMean, inputStd };
  validateNet(net);
  return net;
}

export function validateNet(net: EncoderNet): void {
  if (net.layers.length === 0) throw new Error("encoder needs at least one layer");
  if (net.taps.length === 0) throw new Error("encoder needs at least one tap");
  net.layers.forEach((layer, i) => {
    if (layer.stride !== 1 && layer.stride !== 2) {
      throw new Error(`layer ${i}: stride must be 1 or 2, got ${layer.stride}`);
    }
    if (layer.weight.length !== layer.outCh * layer.inCh * 9) {
      throw new Error(`layer ${i}: weight length mismatch`);
    }
    if (layer.bias.length !== layer.outCh) {
      throw new Error(`layer ${i}: bias length mismatch`);
    }
    if (i > 0 && layer.inCh !== net.layers[i - 1].outCh) {
      throw new Error(`layer ${i}: input channels do not chain`);
    }
    for (const arr of [layer.weight, layer.bias]) {
      for (let k = 0; k < arr.length; k++) {
        if (!Number.isFinite(arr[k])) throw new Error(`layer ${i}: non-finite weight`);
      }
    }
  });
  net.taps.forEach((t, i) => {
    if (t < 0 || t >= net.layers.length) throw new Error(`tap ${t} out of range`);
    if (i > 0 && net.taps[i] <= net.taps[i - 1]) {
      throw new Error("taps must be strictly increasing");
    }
  });
}

function f32buf(arr: Float32Array | number[]): Buffer {
  const f = arr instanceof Float32Array ? arr : Float32Array.from(arr);
  return Buffer.from(f.buffer.slice(f.byteOffset, f.byteOffset + f.byteLength));
}

function readF32(buf: Buffer, n: number): Float32Array {
  const out = new Float32Array(n);
  for (let i = 0; i < n; i++) out[i] = buf.readFloatLE(4 * i);
  return out;
}
