/**
 * Portable seed-to-noise recipe (see ../../docs/protocol.md).
 *
 * A splitmix64 counter stream feeds a Box-Muller transform.  Integer steps
 * run on BigInt and are exact; float steps are plain IEEE-754 double
 * operations through Math, so results agree with any other conforming
 * runtime to the last few libm bits (1e-12 relative on normals, exact on
 * uniforms).
 */

const MASK64 = (1n << 64n) - 1n;
const GAMMA = 0x9e3779b97f4a7c15n;
const MIX1 = 0xbf58476d1ce4e5b9n;
const MIX2 = 0x94d049bb133111ebn;
const TWO_NEG53 = 2 ** -53;
const TAU = 6.283185307179586;

/** splitmix64 finalizer: one 64-bit integer in, one out. */
export function mix64(value: bigint): bigint {
  let z = value & MASK64;
  z = ((z ^ (z >> 30n)) * MIX1) & MASK64;
  z = ((z ^ (z >> 27n)) * MIX2) & MASK64;
  return z ^ (z >> 31n);
}

/** Raw stream output k (1-based counter): mix64(seed + k * GAMMA mod 2^64). */
export function streamU64(seed: bigint, k: number): bigint {
  return mix64((seed + BigInt(k) * GAMMA) & MASK64);
}

/** `count` doubles in (0, 1]: ((u64 >> 11) + 1) * 2^-53. */
export function uniforms(seed: bigint, count: number): number[] {
  const out = new Array<number>(count);
  for (let k = 1; k <= count; k++) {
    out[k - 1] = Number((streamU64(seed, k) >> 11n) + 1n) * TWO_NEG53;
  }
  return out;
}

/**
 * `count` standard normals from the stream for `seed`.
 *
 * Uniforms are consumed in consecutive pairs (u1, u2); each pair yields
 * z0 = sqrt(-2 ln u1) * cos(tau * u2) and z1 = the sin twin.  An odd count
 * still consumes the full final pair and discards the sin twin.
 */
export function normals(seed: bigint, count: number): number[] {
  if (count <= 0) {
    return [];
  }
  const pairs = (count + 1) >> 1;
  const u = uniforms(seed, 2 * pairs);
  const out = new Array<number>(2 * pairs);
  for (let i = 0; i < pairs; i++) {
    const r = Math.sqrt(-2.0 * Math.log(u[2 * i]));
    const phi = TAU * u[2 * i + 1];
    out[2 * i] = r * Math.cos(phi);
    out[2 * i + 1] = r * Math.sin(phi);
  }
  return out.slice(0, count);
}
