/** Reader for NumPy .npy files (format versions 1.0 and 2.0).
 *
 * Only the dtypes the export paths need are supported: little-endian
 * float32 for probability tensors and unsigned/signed integers for
 * instance id rasters. Fortran-ordered arrays are rejected rather than
 * silently transposed.
 */

import { FormatError, ValidationError } from './errors.js';

const MAGIC = Buffer.from('\x93NUMPY', 'latin1');

export interface NpyArray {
  dtype: '<f4' | '<u2' | '|u1' | '<i4' | '<i8';
  shape: number[];
  data: Float32Array | Uint16Array | Uint8Array | Int32Array | BigInt64Array;
}

function parseHeaderDict(header: string): { descr: string; fortran: boolean; shape: number[] } {
  const descr = /'descr'\s*:\s*'([^']+)'/.exec(header);
  const fortran = /'fortran_order'\s*:\s*(True|False)/.exec(header);
  const shape = /'shape'\s*:\s*\(([^)]*)\)/.exec(header);
  if (!descr || !fortran || !shape) {
    throw new FormatError(`could not parse npy header: ${header.trim()}`);
  }
  const dims = shape[1]
    .split(',')
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => {
      const n = Number(s);
      if (!Number.isInteger(n) || n < 0) throw new FormatError(`bad dimension ${s} in npy shape`);
      return n;
    });
  return { descr: descr[1], fortran: fortran[1] === 'True', shape: dims };
}

export function parseNpy(buf: Buffer): NpyArray {
  if (buf.length < 10 || !buf.subarray(0, 6).equals(MAGIC)) {
    throw new FormatError('not an npy file (bad magic)');
  }
  const major = buf[6];
  let headerLen: number;
  let dataStart: number;
  if (major === 1) {
    headerLen = buf.readUInt16LE(8);
    dataStart = 10 + headerLen;
  } else if (major === 2 || major === 3) {
    if (buf.length < 12) throw new FormatError('truncated npy header');
    headerLen = buf.readUInt32LE(8);
    dataStart = 12 + headerLen;
  } else {
    throw new FormatError(`unsupported npy version ${major}.${buf[7]}`);
  }
  if (dataStart > buf.length) throw new FormatError('truncated npy header');
  const { descr, fortran, shape } = parseHeaderDict(
    buf.toString('latin1', dataStart - headerLen, dataStart),
  );
  if (fortran) {
    throw new ValidationError('fortran-ordered arrays are not supported; save with ascontiguousarray');
  }
  const count = shape.reduce((a, b) => a * b, 1);
  const body = buf.subarray(dataStart);
  const need = (itemsize: number) => {
    if (body.length < count * itemsize) {
      throw new FormatError(`npy payload holds ${body.length} bytes, expected ${count * itemsize}`);
    }
    // copy so the typed array is aligned and detached from the file buffer
    return Buffer.from(body.subarray(0, count * itemsize));
  };
  switch (descr) {
    case '<f4': {
      const b = need(4);
      return { dtype: '<f4', shape, data: new Float32Array(b.buffer, b.byteOffset, count) };
    }
    case '<u2': {
      const b = need(2);
      return { dtype: '<u2', shape, data: new Uint16Array(b.buffer, b.byteOffset, count) };
    }
    case '|u1': {
      const b = need(1);
      return { dtype: '|u1', shape, data: new Uint8Array(b.buffer, b.byteOffset, count) };
    }
    case '<i4': {
      const b = need(4);
      return { dtype: '<i4', shape, data: new Int32Array(b.buffer, b.byteOffset, count) };
    }
    case '<i8': {
      const b = need(8);
      return { dtype: '<i8', shape, data: new BigInt64Array(b.buffer, b.byteOffset, count) };
    }
    default:
      throw new FormatError(`unsupported npy dtype ${descr}`);
  }
}

/** Convert any supported integer payload to Uint16, range-checking ids. */
export function toUint16Ids(arr: NpyArray): Uint16Array {
  if (arr.dtype === '<f4') {
    throw new ValidationError('instance ids must be an integer array, got float32');
  }
  if (arr.data instanceof Uint16Array) return arr.data;
  const out = new Uint16Array(arr.data.length);
  for (let i = 0; i < arr.data.length; i++) {
    const v = Number((arr.data as Uint8Array | Int32Array | BigInt64Array)[i]);
    if (v < 0 || v > 0xffff) {
      throw new ValidationError(`instance id ${v} outside the 16-bit range`);
    }
    out[i] = v;
  }
  return out;
}
