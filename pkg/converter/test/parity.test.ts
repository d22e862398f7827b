import { beforeAll, describe, expect, it } from 'vitest';
import { execFileSync } from 'node:child_process';
import { mkdtempSync, readFileSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { convertToFile } from '../src/convert.js';
import { runEngine, verifyParity } from '../src/verify.js';
import { writeParityImages } from '../src/images.js';

// Acceptance: a converted MobileNetV2 (w=1.0) container must produce
// engine base features within 1e-3 of the source model on 10 images,
// with feature argmax agreeing on all of them, inside five minutes.

let workDir: string;

beforeAll(() => {
  workDir = mkdtempSync(join(tmpdir(), 'parity-'));
  // fail fast with a readable message when the engine isn't installed
  runEngine(['--help']);
});

describe('converted-base parity', () => {
  it(
    'MobileNetV2 w=1.0 features agree with the engine on 10 images',
    async () => {
      const containerPath = join(workDir, 'mobilenet_v2_w100.bin');
      convertToFile('mobilenet_v2', containerPath);

      const report = await verifyParity(containerPath, join(workDir, 'images'));

      expect(report.architectureId).toBe('mobilenet_v2_w100');
      expect(report.images.length).toBe(10);
      expect(report.maxAbsDiff).toBeLessThanOrEqual(1e-3);
      expect(report.argmaxMatches).toBe(10);
      expect(report.seconds).toBeLessThan(300);
      expect(report.ok).toBe(true);
    },
    300_000
  );
});

describe('engine round trip', () => {
  it('converted VGG16 base loads in the engine with 26 entries', () => {
    const containerPath = join(workDir, 'vgg16.bin');
    const container = convertToFile('vgg16', containerPath);
    expect(container.entries.length).toBe(26);

    const out = runEngine(['inspect-weights', '--weights', containerPath]);
    expect(out).toContain('architecture: vgg16');
    expect(out).toContain('entries: 26');
    expect(out).toContain('total parameters: 14,714,688');
  }, 60_000);

  it('the engine accepts every entry name and shape via predict', () => {
    // strict weight application covers the whole parameter set, so a
    // successful forward pass proves the name mapping is exact
    const containerPath = join(workDir, 'vgg16.bin');
    const [imagePath] = writeParityImages(join(workDir, 'one'), 1);

    const out = runEngine(['predict', '--weights', containerPath, imagePath]);
    const line = out
      .split('\n')
      .find(l => l.startsWith(imagePath));
    expect(line).toBeDefined();
    const features = line!.split(' ').slice(1).map(Number);
    expect(features.length).toBe(512);
    expect(features.every(Number.isFinite)).toBe(true);
  }, 120_000);

  it('a corrupted container is refused by both sides', () => {
    const containerPath = join(workDir, 'broken.bin');
    convertToFile('vgg16', containerPath);
    const buf = Buffer.from(readFileSync(containerPath));
    buf[buf.length - 100] ^= 0xff;
    writeFileSync(containerPath, buf);

    expect(() => runEngine(['inspect-weights', '--weights', containerPath])).toThrow();
  }, 60_000);
});

describe('converter cli', () => {
  it('convert subcommand writes a loadable container', () => {
    const containerPath = join(workDir, 'cli.bin');
    const out = execFileSync(
      'node',
      [join(import.meta.dirname, '..', 'dist', 'cli.js'), 'convert', '--arch', 'mobilenet_v2', '--out', containerPath],
      { encoding: 'utf-8' }
    );
    expect(out).toContain('entries: 260');
    expect(out).toContain('parameters: 2,257,984');

    const inspect = runEngine(['inspect-weights', '--weights', containerPath]);
    expect(inspect).toContain('total parameters: 2,257,984');
  }, 120_000);
});
