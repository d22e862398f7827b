/**
 * Deterministic test images for the parity check: smooth per-channel
 * wave fields with enough variety that feature vectors differ from
 * image to image.
 */

import { mkdirSync, writeFileSync } from 'node:fs';
import { join } from 'node:path';
import { mulberry32 } from './rng.js';
import { encodePng } from './png.js';
import type { RgbImage } from './png.js';

export function makeImage(size: number, seed: number): RgbImage {
  const next = mulberry32(seed);
  const pixels = new Uint8Array(size * size * 3);
  // three wave components per channel
  const waves = Array.from({ length: 9 }, () => ({
    fx: (next() - 0.5) * 0.2,
    fy: (next() - 0.5) * 0.2,
    phase: next() * 2 * Math.PI,
  }));
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      for (let c = 0; c < 3; c++) {
        let v = 0;
        for (let w = 0; w < 3; w++) {
          const wave = waves[c * 3 + w];
          v += Math.sin(wave.fx * x + wave.fy * y + wave.phase);
        }
        pixels[(y * size + x) * 3 + c] = Math.round(127.5 + 42 * v);
      }
    }
  }
  return { width: size, height: size, pixels };
}

export function writeParityImages(dir: string, count: number, size = 224, seed = 0): string[] {
  mkdirSync(dir, { recursive: true });
  const paths: string[] = [];
  for (let i = 0; i < count; i++) {
    const path = join(dir, `parity_${String(i).padStart(2, '0')}.png`);
    writeFileSync(path, encodePng(makeImage(size, seed + i)));
    paths.push(path);
  }
  return paths;
}
