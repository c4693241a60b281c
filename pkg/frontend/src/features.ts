/**
 * Feature extraction: the last max-pool grid as 49 local vectors, and a
 * single global-max-pooled embedding per image. Every emitted vector is
 * L2-normalized; an all-zero vector is left as zeros with a warning
 * because there is no direction to normalize it onto.
 */

import * as tf from '@tensorflow/tfjs';
import { RgbImage } from './png';
import { EMBED_DIM, Trunk } from './trunk';

export function toTensor(image: RgbImage): tf.Tensor4D {
  return tf.tensor4d(image.data, [1, image.height, image.width, 3]);
}

export function l2Normalize(vector: Float32Array, context = ''): Float32Array {
  let sq = 0;
  for (let i = 0; i < vector.length; i++) sq += vector[i] * vector[i];
  if (sq === 0) {
    console.warn(`zero vector left unnormalized${context ? ` (${context})` : ''}`);
    return vector;
  }
  const inv = 1 / Math.sqrt(sq);
  const out = new Float32Array(vector.length);
  for (let i = 0; i < vector.length; i++) out[i] = vector[i] * inv;
  return out;
}

/** The spatial grid of the last max pool, flattened row-major to vectors. */
export function gridFeatures(trunk: Trunk, image: RgbImage): Float32Array[] {
  const flat = tf.tidy(() => {
    const grid = trunk.full.predict(toTensor(image)) as tf.Tensor4D;
    return grid.reshape([-1, EMBED_DIM]);
  });
  const data = flat.dataSync() as Float32Array;
  const n = flat.shape[0];
  flat.dispose();
  const rows: Float32Array[] = [];
  for (let i = 0; i < n; i++) {
    rows.push(
      l2Normalize(data.slice(i * EMBED_DIM, (i + 1) * EMBED_DIM), `cell ${i}`),
    );
  }
  return rows;
}

/** Global max pool over the last grid: one 512-vector per image. */
export function pooledEmbedding(trunk: Trunk, image: RgbImage): Float32Array {
  const pooled = tf.tidy(() => {
    const grid = trunk.full.predict(toTensor(image)) as tf.Tensor4D;
    return grid.max([1, 2]).squeeze();
  });
  const data = pooledData(pooled);
  return l2Normalize(data, 'pooled embedding');
}

function pooledData(t: tf.Tensor): Float32Array {
  const data = t.dataSync() as Float32Array;
  t.dispose();
  return Float32Array.from(data);
}
