export {
  ExportError,
  UsageError,
  FormatError,
  CorruptionError,
  ValidationError,
  ConsistencyError,
  exitCodeFor,
} from './errors.js';
export { PMAP_MAGIC, SCHEME_CHANNELS, schemeChannels, makePmap, encodePmap, decodePmap } from './pmap.js';
export type { Pmap } from './pmap.js';
export { encodeGray16, decodeGray, crc32 } from './png.js';
export type { GrayImage } from './png.js';
export { parseNpy, toUint16Ids } from './npy.js';
export type { NpyArray } from './npy.js';
export { chwToHwc, cropTopLeft, resizeNearest } from './layout.js';
export { exportInstances, decodeInstances, encodeSidecar, validateInstances } from './instances.js';
export type { InstanceMap } from './instances.js';
export { runExportPmap, runExportInstances, main } from './cli.js';
export type { ExportPmapOptions, ExportInstancesOptions } from './cli.js';
