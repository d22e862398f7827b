/**
 * Converted-base parity check.
 *
 * Rebuilds the declared source model for a container, runs both stacks
 * over the same images, and compares the channel-mean pooled features:
 * TensorFlow.js forward on one side, the engine CLI loading the
 * converted container on the other. The engine prints pooled features
 * for headless containers, one line per image.
 */

import { execFileSync } from 'node:child_process';
import { existsSync, readdirSync, readFileSync } from 'node:fs';
import { join } from 'node:path';
import * as tf from '@tensorflow/tfjs';
import { decodeContainer } from './container.js';
import { architectureForId, DEFAULT_SEED, buildSource } from './convert.js';
import { decodePng } from './png.js';
import type { RgbImage } from './png.js';
import { writeParityImages } from './images.js';

export interface ImageParity {
  path: string;
  maxAbsDiff: number;
  argmaxAgrees: boolean;
}

export interface ParityReport {
  containerPath: string;
  architectureId: string;
  images: ImageParity[];
  maxAbsDiff: number;
  argmaxMatches: number;
  tolerance: number;
  seconds: number;
  ok: boolean;
}

export interface VerifyOptions {
  tolerance?: number;
  seed?: number;
  imageCount?: number;
  engineCommand?: string[];
}

function engineCommand(): string[] {
  const override = process.env.AERIALCNN_BIN;
  if (override) {
    return override.split(' ');
  }
  return ['aerialcnn'];
}

export function runEngine(args: string[], command?: string[]): string {
  const [bin, ...prefix] = command ?? engineCommand();
  try {
    return execFileSync(bin, [...prefix, ...args], {
      encoding: 'utf-8',
      maxBuffer: 64 * 1024 * 1024,
    });
  } catch (error) {
    const err = error as NodeJS.ErrnoException;
    if (err.code === 'ENOENT' && !command && !process.env.AERIALCNN_BIN) {
      // fall back to the module entry point when the script isn't on PATH
      return execFileSync('python3', ['-m', 'aerialcnn.cli', ...args], {
        encoding: 'utf-8',
        maxBuffer: 64 * 1024 * 1024,
      });
    }
    throw error;
  }
}

/** Pulls `<path> <f0> <f1> ...` feature lines out of predict output. */
export function parseFeatureLines(stdout: string, paths: string[]): Map<string, Float32Array> {
  const features = new Map<string, Float32Array>();
  const wanted = new Set(paths);
  for (const line of stdout.split('\n')) {
    const fields = line.split(' ');
    if (!wanted.has(fields[0])) {
      continue;
    }
    features.set(fields[0], Float32Array.from(fields.slice(1), Number));
  }
  const missing = paths.filter(p => !features.has(p));
  if (missing.length > 0) {
    throw new Error(`engine output has no feature line for: ${missing.join(', ')}`);
  }
  return features;
}

function listImages(dir: string, count: number): string[] {
  if (existsSync(dir)) {
    const found = readdirSync(dir)
      .filter(f => f.endsWith('.png'))
      .sort()
      .map(f => join(dir, f));
    if (found.length > 0) {
      return found;
    }
  }
  return writeParityImages(dir, count);
}

function pooledFeatures(model: tf.LayersModel, image: RgbImage, scale: number, offsets: number[]): Float32Array {
  return tf.tidy(() => {
    const data = new Float32Array(image.pixels.length);
    for (let i = 0; i < image.pixels.length; i++) {
      data[i] = image.pixels[i] * scale + offsets[i % 3];
    }
    const input = tf.tensor4d(data, [1, image.height, image.width, 3]);
    const output = model.predict(input) as tf.Tensor4D;
    return tf.mean(output, [1, 2]).dataSync() as Float32Array;
  });
}

function argmax(values: Float32Array): number {
  let best = 0;
  for (let i = 1; i < values.length; i++) {
    if (values[i] > values[best]) {
      best = i;
    }
  }
  return best;
}

export async function verifyParity(
  containerPath: string,
  imagesDir: string,
  options: VerifyOptions = {}
): Promise<ParityReport> {
  const started = Date.now();
  const tolerance = options.tolerance ?? 1e-3;
  await tf.setBackend('cpu');

  const container = decodeContainer(readFileSync(containerPath));
  const arch = architectureForId(container.architectureId);
  const source = buildSource(arch, options.seed ?? DEFAULT_SEED);

  const paths = listImages(imagesDir, options.imageCount ?? 10);
  const engineOut = runEngine(['predict', '--weights', containerPath, ...paths], options.engineCommand);
  const engineFeatures = parseFeatureLines(engineOut, paths);

  const images: ImageParity[] = [];
  for (const path of paths) {
    const image = decodePng(readFileSync(path));
    const ours = pooledFeatures(source.model, image, container.preprocessing.scale, container.preprocessing.offsets);
    const theirs = engineFeatures.get(path)!;
    if (theirs.length !== ours.length) {
      throw new Error(`${path}: engine returned ${theirs.length} features, source has ${ours.length}`);
    }
    let maxAbsDiff = 0;
    for (let i = 0; i < ours.length; i++) {
      maxAbsDiff = Math.max(maxAbsDiff, Math.abs(ours[i] - theirs[i]));
    }
    images.push({ path, maxAbsDiff, argmaxAgrees: argmax(ours) === argmax(theirs) });
  }

  const maxAbsDiff = Math.max(...images.map(i => i.maxAbsDiff));
  const argmaxMatches = images.filter(i => i.argmaxAgrees).length;
  return {
    containerPath,
    architectureId: container.architectureId,
    images,
    maxAbsDiff,
    argmaxMatches,
    tolerance,
    seconds: (Date.now() - started) / 1000,
    ok: maxAbsDiff <= tolerance && argmaxMatches === images.length,
  };
}
