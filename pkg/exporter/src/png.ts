/** Minimal grayscale PNG codec.
 *
 * Writes 16-bit grayscale (color type 0, bit depth 16, filter 0 rows,
 * no interlace) which is the engine's label/instance format. The decoder
 * additionally accepts 8-bit grayscale and every scanline filter so that
 * files from other writers verify too.
 */

import { deflateSync, inflateSync } from 'node:zlib';

import { CorruptionError, FormatError } from './errors.js';

const SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

const CRC_TABLE = new Uint32Array(256);
for (let n = 0; n < 256; n++) {
  let c = n;
  for (let k = 0; k < 8; k++) {
    c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
  }
  CRC_TABLE[n] = c >>> 0;
}

export function crc32(buf: Buffer): number {
  let c = 0xffffffff;
  for (let i = 0; i < buf.length; i++) {
    c = CRC_TABLE[(c ^ buf[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function chunk(type: string, data: Buffer): Buffer {
  const head = Buffer.alloc(8);
  head.writeUInt32BE(data.length, 0);
  head.write(type, 4, 'latin1');
  const crcBuf = Buffer.alloc(4);
  crcBuf.writeUInt32BE(crc32(Buffer.concat([head.subarray(4), data])), 0);
  return Buffer.concat([head, data, crcBuf]);
}

export interface GrayImage {
  width: number;
  height: number;
  bitDepth: 8 | 16;
  /** Row-major samples; 8-bit values occupy the low byte. */
  data: Uint16Array;
}

export function encodeGray16(width: number, height: number, data: Uint16Array): Buffer {
  if (data.length !== width * height) {
    throw new FormatError(`pixel count ${data.length} does not match ${width}x${height}`);
  }
  const ihdr = Buffer.alloc(13);
  ihdr.writeUInt32BE(width, 0);
  ihdr.writeUInt32BE(height, 4);
  ihdr[8] = 16; // bit depth
  ihdr[9] = 0; // color type: grayscale
  ihdr[10] = 0; // compression
  ihdr[11] = 0; // filter method
  ihdr[12] = 0; // no interlace

  // one filter byte (0 = none) per row, then big-endian samples
  const raw = Buffer.alloc(height * (1 + width * 2));
  let off = 0;
  for (let r = 0; r < height; r++) {
    raw[off++] = 0;
    for (let c = 0; c < width; c++) {
      raw.writeUInt16BE(data[r * width + c], off);
      off += 2;
    }
  }
  return Buffer.concat([
    SIGNATURE,
    chunk('IHDR', ihdr),
    chunk('IDAT', deflateSync(raw, { level: 9 })),
    chunk('IEND', Buffer.alloc(0)),
  ]);
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

function unfilter(raw: Buffer, height: number, stride: number, bpp: number): Buffer {
  const out = Buffer.alloc(height * stride);
  let inOff = 0;
  for (let r = 0; r < height; r++) {
    const filter = raw[inOff++];
    const row = r * stride;
    const prev = row - stride;
    for (let i = 0; i < stride; i++) {
      const x = raw[inOff + i];
      const left = i >= bpp ? out[row + i - bpp] : 0;
      const up = r > 0 ? out[prev + i] : 0;
      const upLeft = r > 0 && i >= bpp ? out[prev + i - bpp] : 0;
      let value: number;
      switch (filter) {
        case 0:
          value = x;
          break;
        case 1:
          value = x + left;
          break;
        case 2:
          value = x + up;
          break;
        case 3:
          value = x + ((left + up) >> 1);
          break;
        case 4:
          value = x + paeth(left, up, upLeft);
          break;
        default:
          throw new FormatError(`unknown scanline filter ${filter} in row ${r}`);
      }
      out[row + i] = value & 0xff;
    }
    inOff += stride;
  }
  return out;
}

export function decodeGray(buf: Buffer): GrayImage {
  if (buf.length < 8 || !buf.subarray(0, 8).equals(SIGNATURE)) {
    throw new FormatError('not a PNG file');
  }
  let off = 8;
  let ihdr: Buffer | null = null;
  const idat: Buffer[] = [];
  let sawEnd = false;
  while (off + 8 <= buf.length) {
    const len = buf.readUInt32BE(off);
    const type = buf.toString('latin1', off + 4, off + 8);
    const dataStart = off + 8;
    if (dataStart + len + 4 > buf.length) {
      throw new CorruptionError(`truncated ${type} chunk`);
    }
    const data = buf.subarray(dataStart, dataStart + len);
    const stored = buf.readUInt32BE(dataStart + len);
    if (crc32(Buffer.concat([buf.subarray(off + 4, off + 8), data])) !== stored) {
      throw new CorruptionError(`bad CRC in ${type} chunk`);
    }
    if (type === 'IHDR') ihdr = Buffer.from(data);
    else if (type === 'IDAT') idat.push(Buffer.from(data));
    else if (type === 'IEND') {
      sawEnd = true;
      break;
    }
    off = dataStart + len + 4;
  }
  if (!ihdr) throw new FormatError('missing IHDR chunk');
  if (!sawEnd) throw new CorruptionError('missing IEND chunk');

  const width = ihdr.readUInt32BE(0);
  const height = ihdr.readUInt32BE(4);
  const bitDepth = ihdr[8];
  const colorType = ihdr[9];
  if (colorType !== 0 || (bitDepth !== 8 && bitDepth !== 16)) {
    throw new FormatError(
      `expected 8- or 16-bit grayscale, got color type ${colorType} depth ${bitDepth}`,
    );
  }
  if (ihdr[12] !== 0) throw new FormatError('interlaced PNGs are not supported');
  if (!idat.length) throw new CorruptionError('missing IDAT data');

  let raw: Buffer;
  try {
    raw = inflateSync(Buffer.concat(idat));
  } catch (e) {
    throw new CorruptionError(`undecodable IDAT stream: ${(e as Error).message}`);
  }
  const bpp = bitDepth === 16 ? 2 : 1;
  const stride = width * bpp;
  if (raw.length !== height * (1 + stride)) {
    throw new CorruptionError(
      `decompressed size ${raw.length} does not match ${width}x${height}@${bitDepth}`,
    );
  }
  const plain = unfilter(raw, height, stride, bpp);
  const data = new Uint16Array(width * height);
  if (bitDepth === 16) {
    for (let i = 0; i < data.length; i++) data[i] = plain.readUInt16BE(i * 2);
  } else {
    for (let i = 0; i < data.length; i++) data[i] = plain[i];
  }
  return { width, height, bitDepth: bitDepth as 8 | 16, data };
}
