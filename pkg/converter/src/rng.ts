/**
 * Deterministic PRNG for the declared source weights.
 *
 * Every entry is seeded from the 32-bit FNV-1a hash of its container
 * name XOR a global seed, so the values a tensor receives depend only
 * on its name, never on build order.
 */

export function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193);
  }
  return hash >>> 0;
}

export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function fillUniform(name: string, seed: number, n: number, lo: number, hi: number): Float32Array {
  const next = mulberry32(fnv1a(name) ^ (seed >>> 0));
  const out = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    out[i] = lo + (hi - lo) * next();
  }
  return out;
}
