/**
 * Builds the declared architectures as TensorFlow.js layers models and
 * seeds them with the deterministic source weights.
 */

import * as tf from '@tensorflow/tfjs';
import type { Architecture, LayerDef } from './architectures.js';
import { fillUniform } from './rng.js';

export interface BuiltLayer {
  def: LayerDef;
  layer: tf.layers.Layer;
}

export interface BuiltModel {
  model: tf.LayersModel;
  layers: BuiltLayer[];
}

// tfjs layer names reject '/', so graph names are local only; the
// container names come from the defs, never from the tfjs layers.
let uniqueId = 0;
function localName(def: LayerDef): string {
  return `${def.kind}_${uniqueId++}`;
}

export function buildModel(arch: Architecture): BuiltModel {
  const input = tf.input({ shape: [arch.inputSize, arch.inputSize, 3] });
  const outputs = new Map<string, tf.SymbolicTensor>();
  const layers: BuiltLayer[] = [];
  let x = input;

  for (const def of arch.defs) {
    let layer: tf.layers.Layer;
    switch (def.kind) {
      case 'conv':
        layer = tf.layers.conv2d({
          name: localName(def),
          filters: def.filters,
          kernelSize: def.kernel,
          strides: def.stride,
          padding: 'same',
          useBias: def.useBias,
          kernelInitializer: 'zeros',
        });
        x = layer.apply(x) as tf.SymbolicTensor;
        break;
      case 'depthwise':
        layer = tf.layers.depthwiseConv2d({
          name: localName(def),
          kernelSize: def.kernel,
          strides: def.stride,
          padding: 'same',
          depthMultiplier: 1,
          useBias: false,
          depthwiseInitializer: 'zeros',
        });
        x = layer.apply(x) as tf.SymbolicTensor;
        break;
      case 'batchnorm':
        layer = tf.layers.batchNormalization({ name: localName(def), epsilon: def.epsilon });
        x = layer.apply(x) as tf.SymbolicTensor;
        break;
      case 'relu':
        layer = tf.layers.reLU(
          def.maxValue === undefined
            ? { name: localName(def) }
            : { name: localName(def), maxValue: def.maxValue }
        );
        x = layer.apply(x) as tf.SymbolicTensor;
        break;
      case 'maxpool':
        layer = tf.layers.maxPooling2d({
          name: localName(def),
          poolSize: def.size,
          strides: def.stride,
          padding: 'valid',
        });
        x = layer.apply(x) as tf.SymbolicTensor;
        break;
      case 'add': {
        const skip = outputs.get(def.source);
        if (!skip) {
          throw new Error(`${def.name}: unknown residual source ${def.source}`);
        }
        layer = tf.layers.add({ name: localName(def) });
        x = layer.apply([x, skip]) as tf.SymbolicTensor;
        break;
      }
    }
    outputs.set(def.name, x);
    layers.push({ def, layer });
  }

  return { model: tf.model({ inputs: input, outputs: x }), layers };
}

function kernelRange(fanIn: number): number {
  return Math.sqrt(6 / fanIn);
}

/**
 * Installs the declared source weights. Values are generated directly
 * in tfjs layout and keyed by container entry name, so reseeding a
 * rebuilt model always reproduces the same tensors.
 */
export function seedModel(built: BuiltModel, seed: number): void {
  for (const { def, layer } of built.layers) {
    switch (def.kind) {
      case 'conv': {
        const s = kernelRange(def.kernel * def.kernel * def.inC);
        const kernel = tf.tensor(
          fillUniform(`${def.name}/weight`, seed, def.kernel * def.kernel * def.inC * def.filters, -s, s),
          [def.kernel, def.kernel, def.inC, def.filters]
        );
        if (def.useBias) {
          const bias = tf.tensor(fillUniform(`${def.name}/bias`, seed, def.filters, -0.1, 0.1), [def.filters]);
          layer.setWeights([kernel, bias]);
        } else {
          layer.setWeights([kernel]);
        }
        break;
      }
      case 'depthwise': {
        const s = kernelRange(def.kernel * def.kernel);
        const kernel = tf.tensor(
          fillUniform(`${def.name}/weight`, seed, def.kernel * def.kernel * def.channels, -s, s),
          [def.kernel, def.kernel, def.channels, 1]
        );
        layer.setWeights([kernel]);
        break;
      }
      case 'batchnorm': {
        const n = def.channels;
        layer.setWeights([
          tf.tensor(fillUniform(`${def.name}/gamma`, seed, n, 0.8, 1.2), [n]),
          tf.tensor(fillUniform(`${def.name}/beta`, seed, n, -0.1, 0.1), [n]),
          tf.tensor(fillUniform(`${def.name}/moving_mean`, seed, n, -0.1, 0.1), [n]),
          tf.tensor(fillUniform(`${def.name}/moving_variance`, seed, n, 0.5, 1.5), [n]),
        ]);
        break;
      }
      default:
        break;
    }
  }
}
