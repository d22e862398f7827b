/**
 * Binary weight-container codec.
 *
 * Little-endian layout, shared with the Python engine:
 *
 *   u32  magic 0x4C575453
 *   u32  format version (1)
 *   u32  architecture id length, then that many UTF-8 bytes
 *   f32  preprocessing scale
 *   f32  preprocessing offset per channel (3 values)
 *   u32  entry count
 *   per entry:
 *     u32  name length, then that many UTF-8 bytes
 *     u8   rank, then rank u32 dims
 *     f32  row-major payload
 *   u32  CRC-32 over every byte after the magic
 */

import { crc32 } from 'node:zlib';

export const MAGIC = 0x4c575453;
export const FORMAT_VERSION = 1;

const ENTRY_NAME = /^[a-z][a-z0-9_]*(\/[a-z][a-z0-9_]*)*$/;

export interface Preprocessing {
  scale: number;
  offsets: [number, number, number];
}

export interface Entry {
  name: string;
  dims: number[];
  values: Float32Array;
}

export interface Container {
  architectureId: string;
  preprocessing: Preprocessing;
  entries: Entry[];
}

export function entrySize(entry: Entry): number {
  return entry.dims.reduce((a, b) => a * b, 1);
}

export function totalParameters(container: Container): number {
  return container.entries.reduce((sum, e) => sum + entrySize(e), 0);
}

function checkEntry(entry: Entry): void {
  if (!ENTRY_NAME.test(entry.name)) {
    throw new Error(`invalid entry name: ${entry.name}`);
  }
  if (entry.dims.length < 1 || entry.dims.some(d => d < 1 || !Number.isInteger(d))) {
    throw new Error(`invalid dims for ${entry.name}: [${entry.dims}]`);
  }
  if (entry.values.length !== entrySize(entry)) {
    throw new Error(
      `${entry.name}: payload has ${entry.values.length} values, dims say ${entrySize(entry)}`
    );
  }
}

export function encodeContainer(container: Container): Buffer {
  const seen = new Set<string>();
  for (const entry of container.entries) {
    checkEntry(entry);
    if (seen.has(entry.name)) {
      throw new Error(`duplicate entry: ${entry.name}`);
    }
    seen.add(entry.name);
  }

  const parts: Buffer[] = [];
  const u32 = (value: number) => {
    const b = Buffer.alloc(4);
    b.writeUInt32LE(value >>> 0);
    parts.push(b);
  };
  const f32 = (value: number) => {
    const b = Buffer.alloc(4);
    b.writeFloatLE(value);
    parts.push(b);
  };

  u32(MAGIC);
  u32(FORMAT_VERSION);
  const arch = Buffer.from(container.architectureId, 'utf-8');
  u32(arch.length);
  parts.push(arch);
  f32(container.preprocessing.scale);
  for (const offset of container.preprocessing.offsets) {
    f32(offset);
  }
  u32(container.entries.length);
  for (const entry of container.entries) {
    const name = Buffer.from(entry.name, 'utf-8');
    u32(name.length);
    parts.push(name);
    parts.push(Buffer.from([entry.dims.length]));
    for (const dim of entry.dims) {
      u32(dim);
    }
    // Float32Array is already little-endian on every platform Node runs on.
    parts.push(Buffer.from(entry.values.buffer, entry.values.byteOffset, entry.values.byteLength));
  }

  const body = Buffer.concat(parts);
  const tail = Buffer.alloc(4);
  tail.writeUInt32LE(crc32(body.subarray(4)) >>> 0);
  return Buffer.concat([body, tail]);
}

class Cursor {
  private pos = 0;

  constructor(
    private readonly buf: Buffer,
    public context = 'header'
  ) {}

  private take(n: number): number {
    if (this.pos + n > this.buf.length) {
      throw new Error(`container truncated in ${this.context}`);
    }
    const at = this.pos;
    this.pos += n;
    return at;
  }

  u32(): number {
    return this.buf.readUInt32LE(this.take(4));
  }

  u8(): number {
    return this.buf.readUInt8(this.take(1));
  }

  f32(): number {
    return this.buf.readFloatLE(this.take(4));
  }

  utf8(n: number): string {
    const at = this.take(n);
    return this.buf.toString('utf-8', at, at + n);
  }

  floats(n: number): Float32Array {
    const at = this.take(4 * n);
    const out = new Float32Array(n);
    for (let i = 0; i < n; i++) {
      out[i] = this.buf.readFloatLE(at + 4 * i);
    }
    return out;
  }

  at(): number {
    return this.pos;
  }
}

export function decodeContainer(buf: Buffer): Container {
  if (buf.length < 4) {
    throw new Error('container truncated in magic');
  }
  if (buf.readUInt32LE(0) !== MAGIC) {
    throw new Error(`bad magic 0x${buf.readUInt32LE(0).toString(16)}`);
  }
  if (buf.length < 8) {
    throw new Error('container truncated in header');
  }
  const stored = buf.readUInt32LE(buf.length - 4);
  const actual = crc32(buf.subarray(4, buf.length - 4)) >>> 0;
  if (stored !== actual) {
    throw new Error(`checksum mismatch: stored ${stored}, computed ${actual}`);
  }

  const cur = new Cursor(buf.subarray(0, buf.length - 4));
  cur.u32(); // magic, checked above
  const version = cur.u32();
  if (version !== FORMAT_VERSION) {
    throw new Error(`unsupported format version ${version}`);
  }
  const architectureId = cur.utf8(cur.u32());
  const preprocessing: Preprocessing = {
    scale: cur.f32(),
    offsets: [cur.f32(), cur.f32(), cur.f32()],
  };
  const count = cur.u32();
  const entries: Entry[] = [];
  const seen = new Set<string>();
  for (let i = 0; i < count; i++) {
    cur.context = `entry ${i}`;
    const name = cur.utf8(cur.u32());
    cur.context = name;
    if (!ENTRY_NAME.test(name)) {
      throw new Error(`invalid entry name: ${name}`);
    }
    if (seen.has(name)) {
      throw new Error(`duplicate entry: ${name}`);
    }
    seen.add(name);
    const rank = cur.u8();
    const dims: number[] = [];
    for (let d = 0; d < rank; d++) {
      dims.push(cur.u32());
    }
    const size = dims.reduce((a, b) => a * b, 1);
    entries.push({ name, dims, values: cur.floats(size) });
  }
  if (cur.at() !== buf.length - 4) {
    throw new Error(`trailing bytes: ${buf.length - 4 - cur.at()} before checksum`);
  }
  return { architectureId, preprocessing, entries };
}
