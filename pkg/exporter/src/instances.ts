/** Instance map export: a 16-bit id PNG plus a JSON class sidecar.
 *
 * Sidecar bytes match the engine writer exactly: compact JSON with the id
 * keys sorted numerically and a trailing newline. All validation happens
 * before anything is written so a failed export leaves no files behind.
 */

import { writeFileSync } from 'node:fs';

import { ConsistencyError, FormatError, ValidationError } from './errors.js';
import { decodeGray, encodeGray16 } from './png.js';
import { schemeChannels } from './pmap.js';

export interface InstanceMap {
  schemeId: string;
  height: number;
  width: number;
  ids: Uint16Array;
  classes: Map<number, number>;
}

export function validateInstances(inst: InstanceMap): void {
  if (inst.ids.length !== inst.height * inst.width) {
    throw new ValidationError(
      `id count ${inst.ids.length} does not match ${inst.height}x${inst.width}`,
    );
  }
  const classCount = schemeChannels(inst.schemeId);
  for (const [id, cls] of inst.classes) {
    if (id === 0) {
      throw new ValidationError('instance class table must not contain id 0');
    }
    if (!Number.isInteger(cls) || cls <= 0 || cls >= classCount) {
      throw new ValidationError(
        `instance ${id} has class ${cls} outside scheme '${inst.schemeId}' foreground range`,
      );
    }
  }
  const present = new Set<number>();
  for (let i = 0; i < inst.ids.length; i++) {
    if (inst.ids[i] !== 0) present.add(inst.ids[i]);
  }
  const missing = [...present].filter((id) => !inst.classes.has(id)).sort((a, b) => a - b);
  if (missing.length) {
    throw new ConsistencyError(`ids ${missing.slice(0, 10).join(', ')} missing a class entry`);
  }
}

export function encodeSidecar(inst: InstanceMap): Buffer {
  const keys = [...inst.classes.keys()].sort((a, b) => a - b);
  const body = keys.map((k) => `"${k}":${inst.classes.get(k)}`).join(',');
  return Buffer.from(`{"scheme":${JSON.stringify(inst.schemeId)},"classes":{${body}}}\n`, 'utf-8');
}

export function exportInstances(inst: InstanceMap, pngPath: string, jsonPath: string): void {
  validateInstances(inst);
  const png = encodeGray16(inst.width, inst.height, inst.ids);
  const sidecar = encodeSidecar(inst);
  writeFileSync(pngPath, png);
  writeFileSync(jsonPath, sidecar);
}

/** Reference decoder mirroring the engine's reader, for verification. */
export function decodeInstances(png: Buffer, sidecar: Buffer): InstanceMap {
  const image = decodeGray(png);
  let raw: unknown;
  try {
    raw = JSON.parse(sidecar.toString('utf-8'));
  } catch (e) {
    throw new FormatError(`invalid JSON sidecar: ${(e as Error).message}`);
  }
  if (typeof raw !== 'object' || raw === null) {
    throw new FormatError('malformed sidecar: not an object');
  }
  const scheme = (raw as Record<string, unknown>)['scheme'];
  const table = (raw as Record<string, unknown>)['classes'];
  if (typeof scheme !== 'string' || typeof table !== 'object' || table === null) {
    throw new FormatError('malformed sidecar: missing scheme or classes');
  }
  const classes = new Map<number, number>();
  for (const [k, v] of Object.entries(table)) {
    const id = Number(k);
    if (!Number.isInteger(id) || typeof v !== 'number' || !Number.isInteger(v)) {
      throw new FormatError(`malformed sidecar entry ${k}: ${String(v)}`);
    }
    classes.set(id, v);
  }
  const inst: InstanceMap = {
    schemeId: scheme,
    height: image.height,
    width: image.width,
    ids: image.data,
    classes,
  };
  validateInstances(inst);
  return inst;
}
