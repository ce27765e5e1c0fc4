/** Shared test utilities: a seeded PRNG and a .npy writer for fixtures. */

export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function randInt(rng: () => number, lo: number, hi: number): number {
  return lo + Math.floor(rng() * (hi - lo + 1));
}

const ITEMSIZE: Record<string, number> = {
  '<f4': 4,
  '<u2': 2,
  '|u1': 1,
  '<i4': 4,
  '<i8': 8,
};

/** Serialize a typed-array payload as a version 1.0 .npy buffer. */
export function makeNpy(
  descr: string,
  shape: number[],
  data: Float32Array | Uint16Array | Uint8Array | Int32Array | BigInt64Array,
  fortran = false,
): Buffer {
  const itemsize = ITEMSIZE[descr];
  if (!itemsize) throw new Error(`test helper: unsupported descr ${descr}`);
  const dims = shape.length === 1 ? `(${shape[0]},)` : `(${shape.join(', ')})`;
  let header = `{'descr': '${descr}', 'fortran_order': ${fortran ? 'True' : 'False'}, 'shape': ${dims}, }`;
  const unpadded = 10 + header.length + 1;
  header += ' '.repeat((64 - (unpadded % 64)) % 64) + '\n';
  const head = Buffer.alloc(10 + header.length);
  head.write('\x93NUMPY', 0, 'latin1');
  head[6] = 1;
  head[7] = 0;
  head.writeUInt16LE(header.length, 8);
  head.write(header, 10, 'latin1');
  const payload = Buffer.from(data.buffer, data.byteOffset, data.byteLength);
  return Buffer.concat([head, payload]);
}

export function randomProbs(rng: () => number, count: number): Float32Array {
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    const roll = rng();
    if (roll < 0.02) out[i] = 0;
    else if (roll < 0.04) out[i] = 1;
    else out[i] = rng();
  }
  return out;
}
