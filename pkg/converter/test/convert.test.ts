import { describe, expect, it } from 'vitest';
import {
  countParameters,
  entrySpecs,
  makeDivisible,
  mobileNetV2,
  vgg16,
  vgg16ReferenceHead,
} from '../src/architectures.js';
import { buildSource, convertArchitecture, architectureForId } from '../src/convert.js';
import { encodeContainer } from '../src/container.js';

const ENTRY_NAME = /^[a-z][a-z0-9_]*(\/[a-z][a-z0-9_]*)*$/;

describe('architecture tables', () => {
  it('VGG16 base has 26 entries', () => {
    const specs = entrySpecs(vgg16());
    expect(specs.length).toBe(26);
    expect(countParameters(specs)).toBe(14_714_688);
  });

  it('VGG16 with the 1000-class reference head counts 138,357,544', () => {
    const specs = [...entrySpecs(vgg16()), ...vgg16ReferenceHead()];
    expect(countParameters(specs)).toBe(138_357_544);
  });

  // engine-side counts for the same ids, frozen as oracles
  it.each([
    [0.25, 'mobilenet_v2_w025', 248_768],
    [0.35, 'mobilenet_v2_w035', 410_208],
    [0.5, 'mobilenet_v2_w050', 706_224],
    [0.75, 'mobilenet_v2_w075', 1_382_064],
    [1.0, 'mobilenet_v2_w100', 2_257_984],
    [1.3, 'mobilenet_v2_w130', 3_766_048],
  ])('MobileNetV2 width %f', (width, id, params) => {
    const arch = mobileNetV2(width);
    const specs = entrySpecs(arch);
    expect(arch.id).toBe(id);
    expect(specs.length).toBe(260);
    expect(countParameters(specs)).toBe(params);
  });

  it('every entry name fits the container grammar', () => {
    for (const arch of [vgg16(), mobileNetV2(1.0)]) {
      for (const spec of entrySpecs(arch)) {
        expect(spec.name).toMatch(ENTRY_NAME);
      }
    }
  });

  it('rounds channels the way width scaling requires', () => {
    expect(makeDivisible(32)).toBe(32);
    expect(makeDivisible(32 * 0.25)).toBe(8);
    expect(makeDivisible(96 * 0.25)).toBe(24);
    expect(makeDivisible(1280 * 1.3)).toBe(1664);
  });

  it('resolves container ids back to architectures', () => {
    expect(architectureForId('vgg16').id).toBe('vgg16');
    expect(architectureForId('mobilenet_v2_w075').id).toBe('mobilenet_v2_w075');
    expect(() => architectureForId('resnet50')).toThrow(/unknown architecture/);
  });
});

describe('convertArchitecture', () => {
  it('emits the declared entries in order, heads stripped', () => {
    const container = convertArchitecture('vgg16');
    const specs = entrySpecs(vgg16());
    expect(container.architectureId).toBe('vgg16');
    expect(container.entries.map(e => e.name)).toEqual(specs.map(s => s.name));
    expect(container.entries.map(e => e.dims)).toEqual(specs.map(s => s.dims));
    expect(container.entries.some(e => e.name.startsWith('dense_'))).toBe(false);
  });

  it('is deterministic byte for byte', () => {
    const a = encodeContainer(convertArchitecture('mobilenet_v2'));
    const b = encodeContainer(convertArchitecture('mobilenet_v2'));
    expect(a.equals(b)).toBe(true);
  });

  it('a different seed changes the payload, not the layout', () => {
    const a = convertArchitecture('vgg16', 0);
    const b = convertArchitecture('vgg16', 1);
    expect(a.entries.map(e => e.name)).toEqual(b.entries.map(e => e.name));
    expect(a.entries[0].values[0]).not.toBe(b.entries[0].values[0]);
  });

  it('permutes conv kernels [kh,kw,inC,outC] -> [outC,inC,kh,kw]', () => {
    const arch = mobileNetV2(1.0);
    const source = buildSource(arch, 0);
    const container = convertArchitecture('mobilenet_v2', 0);

    const kernel = source.layers[0].layer.getWeights()[0].dataSync(); // [3,3,3,32]
    const entry = container.entries.find(e => e.name === 'conv2d_0/weight')!;
    expect(entry.dims).toEqual([32, 3, 3, 3]);
    // spot-check a few coordinates with hand-computed flat indices:
    // source (r,c,i,o) at ((r*3+c)*3+i)*32+o, target (o,i,r,c) at ((o*3+i)*3+r)*3+c
    expect(entry.values[0]).toBe(kernel[0]); // (0,0,0,0)
    expect(entry.values[((5 * 3 + 2) * 3 + 1) * 3 + 2]).toBe(kernel[((1 * 3 + 2) * 3 + 2) * 32 + 5]);
    expect(entry.values[((31 * 3 + 0) * 3 + 2) * 3 + 0]).toBe(kernel[((2 * 3 + 0) * 3 + 0) * 32 + 31]);
  });

  it('permutes depthwise kernels [kh,kw,C,1] -> [C,1,kh,kw]', () => {
    const arch = mobileNetV2(1.0);
    const source = buildSource(arch, 0);
    const container = convertArchitecture('mobilenet_v2', 0);

    const dwIndex = arch.defs.findIndex(d => d.kind === 'depthwise');
    const kernel = source.layers[dwIndex].layer.getWeights()[0].dataSync(); // [3,3,32,1]
    const entry = container.entries.find(e => e.name === 'block_0/depthwise_conv2d_0/weight')!;
    expect(entry.dims).toEqual([32, 1, 3, 3]);
    expect(entry.values[(7 * 3 + 1) * 3 + 2]).toBe(kernel[(1 * 3 + 2) * 32 + 7]);
    expect(entry.values[(0 * 3 + 2) * 3 + 0]).toBe(kernel[(2 * 3 + 0) * 32 + 0]);
  });

  it('declares the preprocessing affine per architecture', () => {
    expect(convertArchitecture('mobilenet_v2').preprocessing).toEqual({
      scale: 1 / 127.5,
      offsets: [-1, -1, -1],
    });
    expect(convertArchitecture('vgg16').preprocessing).toEqual({
      scale: 1 / 255,
      offsets: [0, 0, 0],
    });
  });
});
