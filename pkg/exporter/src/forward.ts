/**
 * Reference forward pass for exported networks: 3x3 convolution with
 * 1-pixel reflection padding and stride 1 or 2, each followed by ReLU.
 * Used to record fixture activations; mirrors the consumer's arithmetic
 * (float64 accumulation over float32 weights).
 */

import { EncoderNet } from "./skw1";

export interface Tensor {
  h: number;
  w: number;
  c: number;
  /** row-major (h, w, c) */
  data: Float64Array;
}

export function tensor(h: number, w: number, c: number, data?: Float64Array): Tensor {
  return { h, w, c, data: data ?? new Float64Array(h * w * c) };
}

function reflectPad(x: Tensor): Tensor {
  if (x.h < 2 || x.w < 2) throw new Error("reflection padding needs spatial dims >= 2");
  const out = tensor(x.h + 2, x.w + 2, x.c);
  const idx = (t: Tensor, y: number, xx: number, ch: number) => (y * t.w + xx) * t.c + ch;
  for (let y = -1; y <= x.h; y++) {
    // mirror without repeating the edge sample
    const sy = y < 0 ? -y : y >= x.h ? 2 * x.h - 2 - y : y;
    for (let xx = -1; xx <= x.w; xx++) {
      const sx = xx < 0 ? -xx : xx >= x.w ? 2 * x.w - 2 - xx : xx;
      for (let ch = 0; ch < x.c; ch++) {
        out.data[idx(out, y + 1, xx + 1, ch)] = x.data[idx(x, sy, sx, ch)];
      }
    }
  }
  return out;
}

export function convForward(x: Tensor, weight: Float32Array, bias: Float32Array,
                            outCh: number, inCh: number, stride: number): Tensor {
  if (x.c !== inCh) throw new Error(`input has ${x.c} channels, layer expects ${inCh}`);
  const pad = reflectPad(x);
  const ho = Math.floor((x.h - 1) / stride) + 1;
  const wo = Math.floor((x.w - 1) / stride) + 1;
  const out = tensor(ho, wo, outCh);
  for (let oy = 0; oy < ho; oy++) {
    for (let ox = 0; ox < wo; ox++) {
      for (let oc = 0; oc < outCh; oc++) {
        let acc = bias[oc];
        for (let ky = 0; ky < 3; ky++) {
          for (let kx = 0; kx < 3; kx++) {
            const py = oy * stride + ky;
            const px = ox * stride + kx;
            const base = (py * pad.w + px) * inCh;
            const wbase = ((oc * inCh) * 3 + ky) * 3 + kx;
            for (let ic = 0; ic < inCh; ic++) {
              acc += pad.data[base + ic] * weight[wbase + ic * 9];
            }
          }
        }
        out.data[(oy * wo + ox) * outCh + oc] = acc;
      }
    }
  }
  return out;
}

function relu(x: Tensor): Tensor {
  const out = tensor(x.h, x.w, x.c);
  for (let i = 0; i < x.data.length; i++) out.data[i] = Math.max(x.data[i], 0);
  return out;
}

export interface TapActivation {
  tap: number;
  value: Tensor;
}

/** Normalise, run every layer, record activations at the tap indices. */
export function forward(net: EncoderNet, input: Tensor): TapActivation[] {
  if (input.c !== net.layers[0].inCh) {
    throw new Error(`encoder expects ${net.layers[0].inCh} input channels, got ${input.c}`);
  }
  let x = tensor(input.h, input.w, input.c);
  for (let i = 0; i < input.data.length; i++) {
    const ch = i % input.c;
    x.data[i] = (input.data[i] - net.inputMean[ch]) / net.inputStd[ch];
  }
  const taps = new Set(net.taps);
  const out: TapActivation[] = [];
  net.layers.forEach((layer, i) => {
    x = relu(convForward(x, layer.weight, layer.bias, layer.outCh, layer.inCh, layer.stride));
    if (taps.has(i)) out.push({ tap: i, value: x });
  });
  return out;
}
