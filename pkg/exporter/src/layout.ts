/** Layout normalization and resolution helpers.
 *
 * The container stores channel-fastest (H, W, C). Model frameworks often
 * emit (C, H, W); chwToHwc re-strides without touching values. Crop and
 * nearest-neighbor resize exist only to harmonize sources captured at a
 * different resolution; they run before validation and never interpolate
 * new values.
 */

import { ValidationError } from './errors.js';

type Samples = Float32Array | Uint16Array;

function alloc<T extends Samples>(like: T, length: number): T {
  return new (like.constructor as new (n: number) => T)(length);
}

export function chwToHwc(
  data: Float32Array,
  channels: number,
  height: number,
  width: number,
): Float32Array {
  if (data.length !== channels * height * width) {
    throw new ValidationError(
      `sample count ${data.length} does not match ${channels}x${height}x${width}`,
    );
  }
  const out = new Float32Array(data.length);
  const plane = height * width;
  for (let ch = 0; ch < channels; ch++) {
    for (let p = 0; p < plane; p++) {
      out[p * channels + ch] = data[ch * plane + p];
    }
  }
  return out;
}

export function cropTopLeft<T extends Samples>(
  data: T,
  height: number,
  width: number,
  channels: number,
  newHeight: number,
  newWidth: number,
): T {
  if (newHeight <= 0 || newWidth <= 0) {
    throw new ValidationError(`crop size ${newHeight}x${newWidth} must be positive`);
  }
  if (newHeight > height || newWidth > width) {
    throw new ValidationError(
      `crop ${newHeight}x${newWidth} exceeds source ${height}x${width}`,
    );
  }
  const out = alloc(data, newHeight * newWidth * channels);
  const rowBytes = newWidth * channels;
  for (let r = 0; r < newHeight; r++) {
    const src = (r * width) * channels;
    out.set(data.subarray(src, src + rowBytes) as T, r * rowBytes);
  }
  return out;
}

/** Nearest-neighbor resample; sample centers map as floor((i + 0.5) * src / dst). */
export function resizeNearest<T extends Samples>(
  data: T,
  height: number,
  width: number,
  channels: number,
  newHeight: number,
  newWidth: number,
): T {
  if (newHeight <= 0 || newWidth <= 0) {
    throw new ValidationError(`resize target ${newHeight}x${newWidth} must be positive`);
  }
  const out = alloc(data, newHeight * newWidth * channels);
  const rows = new Int32Array(newHeight);
  const cols = new Int32Array(newWidth);
  for (let r = 0; r < newHeight; r++) {
    rows[r] = Math.min(height - 1, Math.floor(((r + 0.5) * height) / newHeight));
  }
  for (let c = 0; c < newWidth; c++) {
    cols[c] = Math.min(width - 1, Math.floor(((c + 0.5) * width) / newWidth));
  }
  for (let r = 0; r < newHeight; r++) {
    const srcRow = rows[r] * width;
    const dstRow = r * newWidth;
    for (let c = 0; c < newWidth; c++) {
      const src = (srcRow + cols[c]) * channels;
      const dst = (dstRow + c) * channels;
      for (let ch = 0; ch < channels; ch++) out[dst + ch] = data[src + ch];
    }
  }
  return out;
}
