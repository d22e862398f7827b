/**
 * Conversion from the seeded TensorFlow.js source models into weight
 * containers.
 *
 * Axis permutations are declared here per layer kind, never inferred
 * from shapes:
 *
 *   conv kernel       [kh, kw, inC, outC] -> [outC, inC, kh, kw]
 *   depthwise kernel  [kh, kw, C, 1]      -> [C, 1, kh, kw]
 *   dense kernel      [in, out]           -> unchanged (heads are
 *                                            stripped anyway)
 *   batchnorm vectors                     -> unchanged
 *
 * Classification heads are never part of a converted container.
 */

import { writeFileSync } from 'node:fs';
import * as tf from '@tensorflow/tfjs';
import { mobileNetV2, vgg16 } from './architectures.js';
import type { Architecture } from './architectures.js';
import { buildModel, seedModel } from './model.js';
import type { BuiltModel } from './model.js';
import { encodeContainer } from './container.js';
import type { Container, Entry, Preprocessing } from './container.js';

export const DEFAULT_SEED = 0;

export type ArchitectureName = 'vgg16' | 'mobilenet_v2';

export function architectureFor(name: ArchitectureName): Architecture {
  return name === 'vgg16' ? vgg16() : mobileNetV2(1.0);
}

export function architectureForId(id: string): Architecture {
  if (id === 'vgg16') {
    return vgg16();
  }
  const match = /^mobilenet_v2_w(\d{3})$/.exec(id);
  if (match) {
    return mobileNetV2(Number(match[1]) / 100);
  }
  throw new Error(`unknown architecture id: ${id}`);
}

/** Input pixels are 0..255; the engine applies value*scale + offset. */
export function declaredPreprocessing(id: string): Preprocessing {
  if (id.startsWith('mobilenet_v2')) {
    return { scale: 1 / 127.5, offsets: [-1, -1, -1] };
  }
  return { scale: 1 / 255, offsets: [0, 0, 0] };
}

function permuteConv(src: Float32Array, kh: number, kw: number, inC: number, outC: number): Float32Array {
  const out = new Float32Array(src.length);
  for (let r = 0; r < kh; r++) {
    for (let c = 0; c < kw; c++) {
      for (let i = 0; i < inC; i++) {
        const row = ((r * kw + c) * inC + i) * outC;
        for (let o = 0; o < outC; o++) {
          out[((o * inC + i) * kh + r) * kw + c] = src[row + o];
        }
      }
    }
  }
  return out;
}

function permuteDepthwise(src: Float32Array, k: number, channels: number): Float32Array {
  const out = new Float32Array(src.length);
  for (let r = 0; r < k; r++) {
    for (let c = 0; c < k; c++) {
      const row = (r * k + c) * channels;
      for (let ch = 0; ch < channels; ch++) {
        out[(ch * k + r) * k + c] = src[row + ch];
      }
    }
  }
  return out;
}

function values(weights: tf.Tensor[], index: number): Float32Array {
  return weights[index].dataSync() as Float32Array;
}

export function convertModel(arch: Architecture, built: BuiltModel): Container {
  const entries: Entry[] = [];
  for (const { def, layer } of built.layers) {
    const weights = layer.getWeights();
    switch (def.kind) {
      case 'conv': {
        entries.push({
          name: `${def.name}/weight`,
          dims: [def.filters, def.inC, def.kernel, def.kernel],
          values: permuteConv(values(weights, 0), def.kernel, def.kernel, def.inC, def.filters),
        });
        if (def.useBias) {
          entries.push({ name: `${def.name}/bias`, dims: [def.filters], values: values(weights, 1) });
        }
        break;
      }
      case 'depthwise': {
        entries.push({
          name: `${def.name}/weight`,
          dims: [def.channels, 1, def.kernel, def.kernel],
          values: permuteDepthwise(values(weights, 0), def.kernel, def.channels),
        });
        break;
      }
      case 'batchnorm': {
        const suffixes = ['gamma', 'beta', 'moving_mean', 'moving_variance'];
        suffixes.forEach((suffix, i) => {
          entries.push({ name: `${def.name}/${suffix}`, dims: [def.channels], values: values(weights, i) });
        });
        break;
      }
      default:
        break;
    }
  }
  return { architectureId: arch.id, preprocessing: declaredPreprocessing(arch.id), entries };
}

export function buildSource(arch: Architecture, seed: number): BuiltModel {
  const built = buildModel(arch);
  seedModel(built, seed);
  return built;
}

export function convertArchitecture(name: ArchitectureName, seed = DEFAULT_SEED): Container {
  const arch = architectureFor(name);
  return convertModel(arch, buildSource(arch, seed));
}

export function convertToFile(name: ArchitectureName, outPath: string, seed = DEFAULT_SEED): Container {
  const container = convertArchitecture(name, seed);
  writeFileSync(outPath, encodeContainer(container));
  return container;
}
