/** PMAP container writer plus a reference decoder for verification.
 *
 * Layout (all little-endian):
 *   bytes 0-7    ASCII magic "PMAPV001"
 *   bytes 8-11   u32 header length L
 *   bytes 12..   UTF-8 JSON header
 *                {"height":H,"width":W,"channels":C,"dtype":"f32le","scheme":...}
 *   then         H*W*C float32, row-major, channel-fastest
 *
 * The header keys are emitted in exactly that order so identical tensors
 * always serialize to identical bytes regardless of which tool wrote them.
 */

import { CorruptionError, FormatError, UsageError, ValidationError } from './errors.js';

export const PMAP_MAGIC = Buffer.from('PMAPV001', 'latin1');

/** Channel counts of the engine's built-in class schemes. */
export const SCHEME_CHANNELS: Record<string, number> = {
  puma_tissue6: 6,
  puma_ext11: 11,
  nuclei_track1: 4,
  nuclei_track2: 11,
  monusac_nuclei: 5,
  panoptils_tissue9: 9,
  binary2: 2,
};

export function schemeChannels(schemeId: string): number {
  const n = SCHEME_CHANNELS[schemeId];
  if (n === undefined) {
    const known = Object.keys(SCHEME_CHANNELS).sort().join(', ');
    throw new UsageError(`unknown scheme id '${schemeId}' (known: ${known})`);
  }
  return n;
}

export interface Pmap {
  schemeId: string;
  height: number;
  width: number;
  channels: number;
  /** Channel-fastest samples: index of (r, c, ch) = (r*width + c)*channels + ch. */
  data: Float32Array;
}

function validateValues(data: Float32Array): void {
  for (let i = 0; i < data.length; i++) {
    const v = data[i];
    if (!Number.isFinite(v)) {
      throw new ValidationError('probability map contains non-finite values');
    }
    if (v < 0 || v > 1) {
      throw new ValidationError('probability map values must lie in [0, 1]');
    }
  }
}

export function makePmap(
  schemeId: string,
  height: number,
  width: number,
  channels: number,
  data: Float32Array,
): Pmap {
  if (height < 0 || width < 0 || channels <= 0) {
    throw new ValidationError(`nonsensical dimensions ${height}x${width}x${channels}`);
  }
  const expected = schemeChannels(schemeId);
  if (channels !== expected) {
    throw new ValidationError(
      `probability map has ${channels} channels but scheme '${schemeId}' defines ${expected} classes`,
    );
  }
  if (data.length !== height * width * channels) {
    throw new ValidationError(
      `sample count ${data.length} does not match ${height}x${width}x${channels}`,
    );
  }
  validateValues(data);
  return { schemeId, height, width, channels, data };
}

export function encodePmap(pmap: Pmap): Buffer {
  // fixed key order, compact separators; matches the engine byte for byte
  const header = Buffer.from(
    `{"height":${pmap.height},"width":${pmap.width},"channels":${pmap.channels},` +
      `"dtype":"f32le","scheme":${JSON.stringify(pmap.schemeId)}}`,
    'utf-8',
  );
  const out = Buffer.alloc(12 + header.length + pmap.data.length * 4);
  PMAP_MAGIC.copy(out, 0);
  out.writeUInt32LE(header.length, 8);
  header.copy(out, 12);
  const view = new DataView(out.buffer, out.byteOffset + 12 + header.length);
  for (let i = 0; i < pmap.data.length; i++) {
    view.setFloat32(i * 4, pmap.data[i], true);
  }
  return out;
}

export function decodePmap(blob: Buffer): Pmap {
  if (blob.length < 8 || !blob.subarray(0, 8).equals(PMAP_MAGIC)) {
    throw new FormatError('bad magic, not a PMAP container');
  }
  if (blob.length < 12) {
    throw new CorruptionError('truncated before header length');
  }
  const headerLen = blob.readUInt32LE(8);
  if (blob.length < 12 + headerLen) {
    throw new CorruptionError('truncated header');
  }
  let header: Record<string, unknown>;
  try {
    header = JSON.parse(blob.toString('utf-8', 12, 12 + headerLen));
  } catch (e) {
    throw new FormatError(`undecodable header: ${(e as Error).message}`);
  }
  const height = header['height'];
  const width = header['width'];
  const channels = header['channels'];
  const dtype = header['dtype'];
  const scheme = header['scheme'];
  if (
    typeof height !== 'number' ||
    typeof width !== 'number' ||
    typeof channels !== 'number' ||
    typeof scheme !== 'string'
  ) {
    throw new FormatError('header missing required fields');
  }
  if (dtype !== 'f32le') {
    throw new FormatError(`unsupported dtype '${String(dtype)}'`);
  }
  if (height < 0 || width < 0 || channels <= 0) {
    throw new FormatError('nonsensical dimensions in header');
  }
  const payload = blob.subarray(12 + headerLen);
  const expected = height * width * channels * 4;
  if (payload.length !== expected) {
    throw new CorruptionError(`payload is ${payload.length} bytes, header declares ${expected}`);
  }
  const copy = Buffer.from(payload); // aligned copy
  const data = new Float32Array(height * width * channels);
  const view = new DataView(copy.buffer, copy.byteOffset, copy.length);
  for (let i = 0; i < data.length; i++) {
    data[i] = view.getFloat32(i * 4, true);
  }
  return makePmap(scheme, height, width, channels, data);
}
