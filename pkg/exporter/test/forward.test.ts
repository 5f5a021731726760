import { describe, expect, it } from "vitest";

import { convForward, forward, tensor } from "../src/forward";
import { Xoshiro256PP } from "../src/rng";
import { EncoderNet } from "../src/skw1";

function identityNet(): EncoderNet {
  const weight = new Float32Array(9);
  weight[4] = 1; // centre of the single 3x3 kernel
  return {
    layers: [{ outCh: 1, inCh: 1, stride: 1, weight, bias: new Float32Array(1) }],
    taps: [0],
    inputMean: Float32Array.from([0, 0, 0]),
    inputStd: Float32Array.from([1, 1, 1]),
  };
}

describe("reference forward pass", () => {
  it("identity delta kernel passes positive inputs through", () => {
    const x = tensor(5, 5, 1, Float64Array.from(new Xoshiro256PP(1).uniforms(25)));
    const acts = forward(identityNet(), x);
    expect(acts).toHaveLength(1);
    for (let i = 0; i < x.data.length; i++) {
      expect(acts[0].value.data[i]).toBeCloseTo(x.data[i], 12);
    }
  });

  it("relu zeroes negative pre-activations", () => {
    const net = identityNet();
    net.layers[0].bias = Float32Array.from([-0.5]);
    const x = tensor(4, 4, 1, new Float64Array(16).fill(0.25));
    const acts = forward(net, x);
    for (const v of acts[0].value.data) expect(v).toBe(0);
  });

  it("stride 2 halves spatial dims with ceil semantics", () => {
    const rng = new Xoshiro256PP(2);
    const out = convForward(
      tensor(7, 10, 1, Float64Array.from(rng.uniforms(70))),
      Float32Array.from(rng.uniforms(9)),
      new Float32Array(1),
      1,
      1,
      2
    );
    expect([out.h, out.w]).toEqual([4, 5]);
  });

  it("matches a hand-evaluated 3x3 reflection-padded convolution", () => {
    // 3x3 input, all-ones kernel: centre output sums the whole image, and
    // the corner output sums the reflection-padded 3x3 window
    const x = tensor(3, 3, 1, Float64Array.from([1, 2, 3, 4, 5, 6, 7, 8, 9]));
    const out = convForward(x, new Float32Array(9).fill(1), new Float32Array(1), 1, 1, 1);
    expect(out.data[4]).toBeCloseTo(45, 12);
    // padded window at (0,0): reflect rows/cols 1 -> [[5,4,5],[2,1,2],[5,4,5]]
    expect(out.data[0]).toBeCloseTo(5 + 4 + 5 + 2 + 1 + 2 + 5 + 4 + 5, 12);
  });

  it("applies input normalisation per channel", () => {
    const net = identityNet();
    net.inputMean = Float32Array.from([0.5, 0, 0]);
    net.inputStd = Float32Array.from([0.25, 1, 1]);
    const x = tensor(4, 4, 1, new Float64Array(16).fill(0.75));
    const acts = forward(net, x);
    for (const v of acts[0].value.data) expect(v).toBeCloseTo(1.0, 12);
  });

  it("rejects channel mismatches", () => {
    const x = tensor(4, 4, 3, new Float64Array(48));
    expect(() => forward(identityNet(), x)).toThrow(/channels/);
  });
});
