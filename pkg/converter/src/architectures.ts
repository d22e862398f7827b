/**
 * Declared target architectures.
 *
 * These tables are the conversion contract: they fix the layer
 * sequence, the container entry names, and the entry shapes the
 * aerial-classification engine expects for each architecture. Names
 * use global per-kind counters with a block prefix, mirroring the
 * engine's builders. Nothing here is inferred from a source model.
 */

export type LayerDef =
  | { kind: 'conv'; name: string; filters: number; inC: number; kernel: number; stride: number; useBias: boolean }
  | { kind: 'depthwise'; name: string; channels: number; kernel: number; stride: number }
  | { kind: 'batchnorm'; name: string; channels: number; epsilon: number }
  | { kind: 'relu'; name: string; maxValue?: number }
  | { kind: 'maxpool'; name: string; size: number; stride: number }
  | { kind: 'add'; name: string; source: string };

export interface EntrySpec {
  name: string;
  dims: number[];
}

export interface Architecture {
  id: string;
  inputSize: number;
  defs: LayerDef[];
}

/** Channel rounding used by MobileNetV2 width scaling. */
export function makeDivisible(value: number, divisor = 8): number {
  let out = Math.max(divisor, Math.floor(value + divisor / 2 - ((value + divisor / 2) % divisor)));
  if (out < 0.9 * value) {
    out += divisor;
  }
  return out;
}

// Inverted residual stages: expansion factor, channels, repeats, first stride.
const MOBILENET_STAGES: Array<[number, number, number, number]> = [
  [1, 16, 1, 1],
  [6, 24, 2, 2],
  [6, 32, 3, 2],
  [6, 64, 4, 2],
  [6, 96, 3, 1],
  [6, 160, 3, 2],
  [6, 320, 1, 1],
];

export function mobileNetV2(widthMultiplier = 1.0): Architecture {
  const defs: LayerDef[] = [];
  const counters = { conv: 0, bn: 0, act: 0, dw: 0, add: 0 };

  let channels = makeDivisible(32 * widthMultiplier);
  defs.push({
    kind: 'conv',
    name: `conv2d_${counters.conv++}`,
    filters: channels,
    inC: 3,
    kernel: 3,
    stride: 2,
    useBias: false,
  });
  defs.push({ kind: 'batchnorm', name: `batchnorm_${counters.bn++}`, channels, epsilon: 1e-3 });
  defs.push({ kind: 'relu', name: `activation_${counters.act++}`, maxValue: 6 });

  let block = 0;
  // Output of the current residual chain; add layers point back at it.
  let lastOutput = '';
  for (const [expansion, baseChannels, repeats, firstStride] of MOBILENET_STAGES) {
    const outC = makeDivisible(baseChannels * widthMultiplier);
    for (let repeat = 0; repeat < repeats; repeat++) {
      const stride = repeat === 0 ? firstStride : 1;
      const inC = channels;
      const prefix = `block_${block}`;
      let expanded = inC;
      if (expansion !== 1) {
        expanded = inC * expansion;
        defs.push({
          kind: 'conv',
          name: `${prefix}/conv2d_${counters.conv++}`,
          filters: expanded,
          inC,
          kernel: 1,
          stride: 1,
          useBias: false,
        });
        defs.push({
          kind: 'batchnorm',
          name: `${prefix}/batchnorm_${counters.bn++}`,
          channels: expanded,
          epsilon: 1e-3,
        });
        defs.push({ kind: 'relu', name: `${prefix}/activation_${counters.act++}`, maxValue: 6 });
      }
      defs.push({
        kind: 'depthwise',
        name: `${prefix}/depthwise_conv2d_${counters.dw++}`,
        channels: expanded,
        kernel: 3,
        stride,
      });
      defs.push({
        kind: 'batchnorm',
        name: `${prefix}/batchnorm_${counters.bn++}`,
        channels: expanded,
        epsilon: 1e-3,
      });
      defs.push({ kind: 'relu', name: `${prefix}/activation_${counters.act++}`, maxValue: 6 });
      defs.push({
        kind: 'conv',
        name: `${prefix}/conv2d_${counters.conv++}`,
        filters: outC,
        inC: expanded,
        kernel: 1,
        stride: 1,
        useBias: false,
      });
      const projected = `${prefix}/batchnorm_${counters.bn++}`;
      defs.push({ kind: 'batchnorm', name: projected, channels: outC, epsilon: 1e-3 });
      if (stride === 1 && inC === outC) {
        const added = `${prefix}/residual_add_${counters.add++}`;
        defs.push({ kind: 'add', name: added, source: lastOutput });
        lastOutput = added;
      } else {
        lastOutput = projected;
      }
      channels = outC;
      block++;
    }
  }

  const head = widthMultiplier > 1.0 ? makeDivisible(1280 * widthMultiplier) : 1280;
  defs.push({
    kind: 'conv',
    name: `conv2d_${counters.conv++}`,
    filters: head,
    inC: channels,
    kernel: 1,
    stride: 1,
    useBias: false,
  });
  defs.push({ kind: 'batchnorm', name: `batchnorm_${counters.bn++}`, channels: head, epsilon: 1e-3 });
  defs.push({ kind: 'relu', name: `activation_${counters.act++}`, maxValue: 6 });

  const width = String(Math.round(widthMultiplier * 100)).padStart(3, '0');
  return { id: `mobilenet_v2_w${width}`, inputSize: 224, defs };
}

const VGG_STAGES: Array<[number, number]> = [
  [2, 64],
  [2, 128],
  [3, 256],
  [3, 512],
  [3, 512],
];

export function vgg16(): Architecture {
  const defs: LayerDef[] = [];
  const counters = { conv: 0, act: 0, pool: 0 };
  let channels = 3;
  VGG_STAGES.forEach(([repeats, filters], stage) => {
    const prefix = `block_${stage + 1}`;
    for (let repeat = 0; repeat < repeats; repeat++) {
      defs.push({
        kind: 'conv',
        name: `${prefix}/conv2d_${counters.conv++}`,
        filters,
        inC: channels,
        kernel: 3,
        stride: 1,
        useBias: true,
      });
      defs.push({ kind: 'relu', name: `${prefix}/activation_${counters.act++}` });
      channels = filters;
    }
    defs.push({ kind: 'maxpool', name: `${prefix}/maxpool_${counters.pool++}`, size: 2, stride: 2 });
  });
  return { id: 'vgg16', inputSize: 224, defs };
}

/** Container entries a converted base carries, in build order. */
export function entrySpecs(arch: Architecture): EntrySpec[] {
  const specs: EntrySpec[] = [];
  for (const def of arch.defs) {
    switch (def.kind) {
      case 'conv':
        specs.push({ name: `${def.name}/weight`, dims: [def.filters, def.inC, def.kernel, def.kernel] });
        if (def.useBias) {
          specs.push({ name: `${def.name}/bias`, dims: [def.filters] });
        }
        break;
      case 'depthwise':
        specs.push({ name: `${def.name}/weight`, dims: [def.channels, 1, def.kernel, def.kernel] });
        break;
      case 'batchnorm':
        for (const suffix of ['gamma', 'beta', 'moving_mean', 'moving_variance']) {
          specs.push({ name: `${def.name}/${suffix}`, dims: [def.channels] });
        }
        break;
      default:
        break;
    }
  }
  return specs;
}

/**
 * The 1000-class reference head VGG16 ships with. Never converted;
 * kept only so the full parameter count can be checked by arithmetic.
 */
export function vgg16ReferenceHead(): EntrySpec[] {
  return [
    { name: 'dense_0/weight', dims: [25088, 4096] },
    { name: 'dense_0/bias', dims: [4096] },
    { name: 'dense_1/weight', dims: [4096, 4096] },
    { name: 'dense_1/bias', dims: [4096] },
    { name: 'dense_2/weight', dims: [4096, 1000] },
    { name: 'dense_2/bias', dims: [1000] },
  ];
}

export function countParameters(specs: EntrySpec[]): number {
  return specs.reduce((sum, s) => sum + s.dims.reduce((a, b) => a * b, 1), 0);
}
