/**
 * splitmix64 + xoshiro256++ (public reference algorithms, BigInt arithmetic).
 * Streams match the consumer side bit for bit, so "seed N" names the same
 * fixture tensor in both codebases.
 */

const MASK64 = (1n << 64n) - 1n;

export function splitmix64(state: bigint): [bigint, bigint] {
  state = (state + 0x9e3779b97f4a7c15n) & MASK64;
  let z = state;
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64;
  return [z ^ (z >> 31n), state];
}

function rotl(x: bigint, k: bigint): bigint {
  return ((x << k) | (x >> (64n - k))) & MASK64;
}

export class Xoshiro256PP {
  private s: bigint[];

  constructor(seed: bigint | number) {
    let state = BigInt(seed) & MASK64;
    const s: bigint[] = [];
    for (let i = 0; i < 4; i++) {
      const [out, next] = splitmix64(state);
      s.push(out);
      state = next;
    }
    if (s[0] === 0n && s[1] === 0n && s[2] === 0n && s[3] === 0n) {
      s[0] = 1n; // xoshiro forbids the all-zero state
    }
    this.s = s;
  }

  nextU64(): bigint {
    const s = this.s;
    const result = (rotl((s[0] + s[3]) & MASK64, 23n) + s[0]) & MASK64;
    const t = (s[1] << 17n) & MASK64;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45n);
    return result;
  }

  /** Uniform in [0, 1), 53-bit resolution. */
  uniform(): number {
    return Number(this.nextU64() >> 11n) * 2 ** -53;
  }

  uniforms(n: number): Float64Array {
    const out = new Float64Array(n);
    for (let i = 0; i < n; i++) out[i] = this.uniform();
    return out;
  }

  /** n standard normals via Box-Muller (u1 open-interval, then u2). */
  normals(n: number): Float64Array {
    const out = new Float64Array(n);
    let i = 0;
    while (i < n) {
      const u1 = (Number(this.nextU64() >> 11n) + 1) * 2 ** -53;
      const u2 = this.uniform();
      const r = Math.sqrt(-2 * Math.log(u1));
      out[i] = r * Math.cos(2 * Math.PI * u2);
      if (i + 1 < n) out[i + 1] = r * Math.sin(2 * Math.PI * u2);
      i += 2;
    }
    return out;
  }
}
