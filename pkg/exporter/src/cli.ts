#!/usr/bin/env node
/** Command line entry points.
 *
 * `export-pmap` converts a float32 .npy tensor into the PMAP container;
 * `export-instances` converts an integer id raster plus a class table into
 * the id PNG + JSON sidecar pair. Handlers are exported so tests can call
 * them in process.
 */

import { readFileSync, writeFileSync } from 'node:fs';

import { pathToFileURL } from 'node:url';

import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { ExportError, UsageError, ValidationError, exitCodeFor } from './errors.js';
import { exportInstances } from './instances.js';
import { chwToHwc, cropTopLeft, resizeNearest } from './layout.js';
import { encodePmap, makePmap } from './pmap.js';
import { parseNpy, toUint16Ids } from './npy.js';

function readNpyFile(path: string) {
  let blob: Buffer;
  try {
    blob = readFileSync(path);
  } catch (e) {
    throw new UsageError(`cannot read ${path}: ${(e as Error).message}`);
  }
  return parseNpy(blob);
}

export interface ExportPmapOptions {
  in: string;
  scheme: string;
  out: string;
  layout?: 'hwc' | 'chw';
  crop?: number[];
  resize?: number[];
}

function pair(name: string, values: number[] | undefined): [number, number] | null {
  if (values === undefined) return null;
  if (values.length !== 2 || !values.every((v) => Number.isInteger(v))) {
    throw new UsageError(`--${name} takes two integers (height width)`);
  }
  return [values[0], values[1]];
}

export function runExportPmap(opts: ExportPmapOptions): string {
  const arr = readNpyFile(opts.in);
  if (arr.dtype !== '<f4') {
    throw new ValidationError(`probability tensors must be float32, got ${arr.dtype}`);
  }
  if (arr.shape.length !== 3) {
    throw new ValidationError(`expected a 3-d tensor, got shape (${arr.shape.join(', ')})`);
  }
  let data = arr.data as Float32Array;
  let height: number;
  let width: number;
  let channels: number;
  if ((opts.layout ?? 'hwc') === 'chw') {
    [channels, height, width] = arr.shape;
    data = chwToHwc(data, channels, height, width);
  } else {
    [height, width, channels] = arr.shape;
  }
  const crop = pair('crop', opts.crop);
  if (crop) {
    data = cropTopLeft(data, height, width, channels, crop[0], crop[1]);
    [height, width] = crop;
  }
  const resize = pair('resize', opts.resize);
  if (resize) {
    data = resizeNearest(data, height, width, channels, resize[0], resize[1]);
    [height, width] = resize;
  }
  const blob = encodePmap(makePmap(opts.scheme, height, width, channels, data));
  writeFileSync(opts.out, blob);
  return opts.out;
}

export interface ExportInstancesOptions {
  ids: string;
  classes: string;
  scheme: string;
  outPrefix: string;
}

function readClassTable(path: string): Map<number, number> {
  let raw: unknown;
  try {
    raw = JSON.parse(readFileSync(path, 'utf-8'));
  } catch (e) {
    throw new UsageError(`cannot read class table ${path}: ${(e as Error).message}`);
  }
  if (typeof raw !== 'object' || raw === null) {
    throw new ValidationError(`${path}: class table must be a JSON object`);
  }
  // accept either a bare {"id": class} object or a full sidecar
  const record = raw as Record<string, unknown>;
  const table = typeof record['classes'] === 'object' && record['classes'] !== null
    ? (record['classes'] as Record<string, unknown>)
    : record;
  const classes = new Map<number, number>();
  for (const [k, v] of Object.entries(table)) {
    const id = Number(k);
    if (!Number.isInteger(id) || typeof v !== 'number' || !Number.isInteger(v)) {
      throw new ValidationError(`${path}: bad class entry ${k}: ${String(v)}`);
    }
    classes.set(id, v);
  }
  return classes;
}

export function runExportInstances(opts: ExportInstancesOptions): [string, string] {
  const arr = readNpyFile(opts.ids);
  if (arr.shape.length !== 2) {
    throw new ValidationError(`instance ids must be 2-d, got shape (${arr.shape.join(', ')})`);
  }
  const [height, width] = arr.shape;
  const ids = toUint16Ids(arr);
  const classes = readClassTable(opts.classes);
  const pngPath = `${opts.outPrefix}.png`;
  const jsonPath = `${opts.outPrefix}.json`;
  exportInstances({ schemeId: opts.scheme, height, width, ids, classes }, pngPath, jsonPath);
  return [pngPath, jsonPath];
}

export function main(argv: string[]): number {
  let failed = false;
  const parser = yargs(argv)
    .scriptName('panfuse-export')
    .strict()
    .exitProcess(false)
    .fail((msg, err) => {
      if (err) throw err;
      process.stderr.write(`panfuse-export: usage: ${msg}\n`);
      failed = true;
    })
    .command(
      'export-pmap',
      'write a float32 tensor as a PMAP container',
      (y) =>
        y
          .option('in', { type: 'string', demandOption: true, describe: '.npy float32 tensor' })
          .option('scheme', { type: 'string', demandOption: true, describe: 'class scheme id' })
          .option('out', { type: 'string', demandOption: true, describe: 'output .pmap path' })
          .option('layout', {
            choices: ['hwc', 'chw'] as const,
            default: 'hwc' as const,
            describe: 'axis order of the source tensor',
          })
          .option('crop', { type: 'number', array: true, nargs: 2, describe: 'top-left crop: height width' })
          .option('resize', { type: 'number', array: true, nargs: 2, describe: 'nearest-neighbor resize: height width' }),
      (args) => {
        const out = runExportPmap({
          in: args.in,
          scheme: args.scheme,
          out: args.out,
          layout: args.layout,
          crop: args.crop,
          resize: args.resize,
        });
        process.stdout.write(`wrote ${out}\n`);
      },
    )
    .command(
      'export-instances',
      'write an id raster and class table as PNG + JSON sidecar',
      (y) =>
        y
          .option('ids', { type: 'string', demandOption: true, describe: '.npy integer id raster' })
          .option('classes', { type: 'string', demandOption: true, describe: 'JSON id->class table' })
          .option('scheme', { type: 'string', demandOption: true, describe: 'class scheme id' })
          .option('out-prefix', {
            type: 'string',
            demandOption: true,
            describe: 'output prefix; writes <prefix>.png and <prefix>.json',
          }),
      (args) => {
        const [png, json] = runExportInstances({
          ids: args.ids,
          classes: args.classes,
          scheme: args.scheme,
          outPrefix: args['out-prefix'],
        });
        process.stdout.write(`wrote ${png}\n`);
        process.stdout.write(`wrote ${json}\n`);
      },
    )
    .demandCommand(1, 'pick a command: export-pmap or export-instances');
  try {
    parser.parseSync();
  } catch (e) {
    if (e instanceof ExportError) {
      process.stderr.write(`panfuse-export: ${e.category}: ${e.message}\n`);
      return exitCodeFor(e);
    }
    process.stderr.write(`panfuse-export: internal: ${(e as Error).message}\n`);
    return 3;
  }
  return failed ? 2 : 0;
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href;
if (invokedDirectly) {
  process.exit(main(hideBin(process.argv)));
}
