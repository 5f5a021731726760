/**
 * Conformance fixtures: a seeded 16x16x3 test tensor plus the reference
 * activations of an exported network at every tap, serialised as JSON for
 * any SKW1 consumer to replay and compare against (tolerance 1e-4 max abs).
 */

import { forward, tensor, Tensor } from "./forward";
import { Xoshiro256PP } from "./rng";
import { EncoderNet } from "./skw1";

export const FIXTURE_SIZE = 16;
export const DEFAULT_FIXTURE_SEED = 20240;

export interface FixtureDoc {
  seed: number;
  input: { shape: [number, number, number]; data: number[] };
  taps: number[];
  activations: { tap: number; shape: [number, number, number]; data: number[] }[];
}

export function fixtureInput(seed: number, channels: number): Tensor {
  const rng = new Xoshiro256PP(seed);
  const t = tensor(FIXTURE_SIZE, FIXTURE_SIZE, channels);
  for (let i = 0; i < t.data.length; i++) t.data[i] = rng.uniform();
  return t;
}

export function makeFixture(net: EncoderNet, seed: number = DEFAULT_FIXTURE_SEED): FixtureDoc {
  const input = fixtureInput(seed, net.layers[0].inCh);
  const acts = forward(net, input);
  return {
    seed,
    input: {
      shape: [input.h, input.w, input.c],
      data: Array.from(input.data),
    },
    taps: [...net.taps],
    activations: acts.map((a) => ({
      tap: a.tap,
      shape: [a.value.h, a.value.w, a.value.c],
      data: Array.from(a.value.data),
    })),
  };
}

export function fixtureJson(doc: FixtureDoc): string {
  // JSON.stringify prints shortest round-trip decimals: deterministic bytes
  // and bit-exact float recovery on the consumer side
  return JSON.stringify(doc);
}
