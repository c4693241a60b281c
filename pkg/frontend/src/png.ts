/**
 * PNG loading and bilinear resize to the network input size.
 *
 * Pixels come out as float32 RGB in [0, 1], shape [height, width, 3]
 * flattened row-major, which is what the trunk expects.
 */

import { readFileSync } from 'fs';
import { PNG } from 'pngjs';

export interface RgbImage {
  width: number;
  height: number;
  /** RGB interleaved, length = width * height * 3, values in [0, 1]. */
  data: Float32Array;
}

export function decodePng(filePath: string): RgbImage {
  const png = PNG.sync.read(readFileSync(filePath));
  const out = new Float32Array(png.width * png.height * 3);
  for (let i = 0; i < png.width * png.height; i++) {
    out[i * 3] = png.data[i * 4] / 255;
    out[i * 3 + 1] = png.data[i * 4 + 1] / 255;
    out[i * 3 + 2] = png.data[i * 4 + 2] / 255;
  }
  return { width: png.width, height: png.height, data: out };
}

/** Edge-aligned bilinear resample, one channel triple at a time. */
export function resizeBilinear(
  image: RgbImage,
  newWidth: number,
  newHeight: number,
): RgbImage {
  const { width, height, data } = image;
  const out = new Float32Array(newWidth * newHeight * 3);
  const sx = width / newWidth;
  const sy = height / newHeight;
  for (let y = 0; y < newHeight; y++) {
    const srcY = Math.min(Math.max((y + 0.5) * sy - 0.5, 0), height - 1);
    const y0 = Math.floor(srcY);
    const y1 = Math.min(y0 + 1, height - 1);
    const fy = srcY - y0;
    for (let x = 0; x < newWidth; x++) {
      const srcX = Math.min(Math.max((x + 0.5) * sx - 0.5, 0), width - 1);
      const x0 = Math.floor(srcX);
      const x1 = Math.min(x0 + 1, width - 1);
      const fx = srcX - x0;
      for (let c = 0; c < 3; c++) {
        const tl = data[(y0 * width + x0) * 3 + c];
        const tr = data[(y0 * width + x1) * 3 + c];
        const bl = data[(y1 * width + x0) * 3 + c];
        const br = data[(y1 * width + x1) * 3 + c];
        const top = tl + (tr - tl) * fx;
        const bottom = bl + (br - bl) * fx;
        out[(y * newWidth + x) * 3 + c] = top + (bottom - top) * fy;
      }
    }
  }
  return { width: newWidth, height: newHeight, data: out };
}

export function loadInput(filePath: string, side = 224): RgbImage {
  const decoded = decodePng(filePath);
  if (decoded.width === side && decoded.height === side) return decoded;
  return resizeBilinear(decoded, side, side);
}
