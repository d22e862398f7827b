import { describe, expect, it } from 'vitest';
import { crc32 } from 'node:zlib';
import { decodeContainer, encodeContainer, totalParameters, FORMAT_VERSION, MAGIC } from '../src/container.js';
import type { Container } from '../src/container.js';

function smallContainer(): Container {
  return {
    architectureId: 'vgg16',
    preprocessing: { scale: 1 / 255, offsets: [0, -0.5, 0.25] },
    entries: [
      { name: 'block_1/conv2d_0/weight', dims: [2, 3, 1, 1], values: Float32Array.from([1, 2, 3, 4, 5, 6]) },
      { name: 'block_1/conv2d_0/bias', dims: [2], values: Float32Array.from([0.5, -0.5]) },
    ],
  };
}

describe('encodeContainer', () => {
  it('starts with the magic bytes', () => {
    const buf = encodeContainer(smallContainer());
    expect(buf.subarray(0, 4).toString('ascii')).toBe('STWL');
    expect(buf.readUInt32LE(0)).toBe(MAGIC);
    expect(buf.readUInt32LE(4)).toBe(FORMAT_VERSION);
  });

  it('is deterministic', () => {
    const a = encodeContainer(smallContainer());
    const b = encodeContainer(smallContainer());
    expect(a.equals(b)).toBe(true);
  });

  it('closes with a CRC-32 over everything after the magic', () => {
    const buf = encodeContainer(smallContainer());
    const stored = buf.readUInt32LE(buf.length - 4);
    expect(stored).toBe(crc32(buf.subarray(4, buf.length - 4)) >>> 0);
  });

  it('rejects bad entry names and shape mismatches', () => {
    const bad = smallContainer();
    bad.entries[0].name = 'Bad/Name';
    expect(() => encodeContainer(bad)).toThrow(/invalid entry name/);

    const short = smallContainer();
    short.entries[0].values = Float32Array.from([1, 2]);
    expect(() => encodeContainer(short)).toThrow(/dims say 6/);

    const dup = smallContainer();
    dup.entries[1] = { ...dup.entries[0] };
    expect(() => encodeContainer(dup)).toThrow(/duplicate/);
  });
});

describe('decodeContainer', () => {
  it('round trips', () => {
    const original = smallContainer();
    const back = decodeContainer(encodeContainer(original));
    expect(back.architectureId).toBe('vgg16');
    expect(back.preprocessing.scale).toBeCloseTo(1 / 255, 9);
    expect(back.preprocessing.offsets[1]).toBe(-0.5);
    expect(back.entries.map(e => e.name)).toEqual(original.entries.map(e => e.name));
    expect(back.entries[0].dims).toEqual([2, 3, 1, 1]);
    expect(Array.from(back.entries[0].values)).toEqual([1, 2, 3, 4, 5, 6]);
    expect(totalParameters(back)).toBe(8);
  });

  it('reads a hand-assembled buffer', () => {
    // layout oracle written with raw buffer ops, independent of the encoder
    const name = 'dense_0/bias';
    // ten u32/f32 header fields + arch id + name + rank byte + three f32 values
    const buf = Buffer.alloc(4 * 13 + 2 + name.length + 1);
    let at = 0;
    const u32 = (v: number) => { buf.writeUInt32LE(v, at); at += 4; };
    const f32 = (v: number) => { buf.writeFloatLE(v, at); at += 4; };
    u32(0x4c575453);
    u32(1);
    u32(2);
    buf.write('ab', at); at += 2;
    f32(1); f32(0); f32(0); f32(0);
    u32(1);
    u32(name.length);
    buf.write(name, at); at += name.length;
    buf.writeUInt8(1, at); at += 1;
    u32(3);
    f32(7); f32(8); f32(9);
    const crc = Buffer.alloc(4);
    crc.writeUInt32LE(crc32(buf.subarray(4)) >>> 0);

    const container = decodeContainer(Buffer.concat([buf, crc]));
    expect(container.architectureId).toBe('ab');
    expect(container.entries[0].name).toBe(name);
    expect(Array.from(container.entries[0].values)).toEqual([7, 8, 9]);
  });

  it('rejects tampering', () => {
    const good = encodeContainer(smallContainer());

    const magic = Buffer.from(good);
    magic.writeUInt32LE(0xdeadbeef, 0);
    expect(() => decodeContainer(magic)).toThrow(/bad magic/);

    const flipped = Buffer.from(good);
    flipped[flipped.length - 10] ^= 0xff;
    expect(() => decodeContainer(flipped)).toThrow(/checksum mismatch/);

    expect(() => decodeContainer(good.subarray(0, 3))).toThrow(/truncated/);
    expect(() => decodeContainer(Buffer.alloc(0))).toThrow(/truncated/);
  });

  it('rejects an unsupported version', () => {
    const buf = Buffer.from(encodeContainer(smallContainer()));
    buf.writeUInt32LE(9, 4);
    buf.writeUInt32LE(crc32(buf.subarray(4, buf.length - 4)) >>> 0, buf.length - 4);
    expect(() => decodeContainer(buf)).toThrow(/version 9/);
  });
});

describe('crc32', () => {
  it('matches the standard check value', () => {
    expect(crc32(Buffer.from('123456789')) >>> 0).toBe(0xcbf43926);
  });
});
