/**
 * Convolutional trunk: VGG-16 topology sized for CPU JavaScript.
 *
 * Thirteen 3x3 convolutions in five blocks, each block closed by a 2x2
 * max pool, so a 224x224 input leaves the last pool as a 7x7x512 grid.
 * Channel widths below the final block are reduced from the canonical
 * VGG-16 schedule to keep a forward pass around a couple of seconds on
 * the pure-JS backend; the final block ends at 512 channels because the
 * 49x512 feature contract depends on it. Weights are seeded, so two
 * trunks built with the same seed produce identical features.
 */

import * as tf from '@tensorflow/tfjs';
import { readFileSync, writeFileSync } from 'fs';

const BLOCKS: number[][] = [
  [16, 16],
  [32, 32],
  [64, 64, 64],
  [64, 64, 64],
  [64, 64, 512],
];

export const INPUT_SIDE = 224;
export const GRID_SIDE = 7;
export const EMBED_DIM = 512;

export interface Trunk {
  /** input image -> last max-pool grid [h/32, w/32, 512] */
  full: tf.LayersModel;
  /** input image -> activation entering the last two convolutions */
  prefix: tf.LayersModel;
  /** prefix activation -> last max-pool grid; shares weights with full */
  tail: tf.LayersModel;
  /** the two trainable convolution layers, last in the network */
  trainable: tf.layers.Layer[];
}

export function buildTrunk(seed = 0): Trunk {
  const input = tf.input({ shape: [null, null, 3] });
  let x = input as tf.SymbolicTensor;
  let prefixOut: tf.SymbolicTensor | null = null;
  const convs: tf.layers.Layer[] = [];
  const tailLayers: tf.layers.Layer[] = [];
  let convIndex = 0;
  const totalConvs = BLOCKS.reduce((n, b) => n + b.length, 0);
  BLOCKS.forEach((widths, blockIndex) => {
    widths.forEach((filters, i) => {
      convIndex += 1;
      const layer = tf.layers.conv2d({
        filters,
        kernelSize: 3,
        padding: 'same',
        activation: 'relu',
        name: `conv${blockIndex + 1}_${i + 1}`,
        kernelInitializer: tf.initializers.glorotUniform({
          seed: seed * 1000 + convIndex,
        }),
        biasInitializer: 'zeros',
      });
      convs.push(layer);
      if (convIndex > totalConvs - 2) tailLayers.push(layer);
      x = layer.apply(x) as tf.SymbolicTensor;
      if (convIndex === totalConvs - 2) {
        prefixOut = x; // everything up to here stays frozen during fine-tuning
      }
    });
    const pool = tf.layers.maxPooling2d({
      poolSize: 2,
      strides: 2,
      name: `pool${blockIndex + 1}`,
    });
    if (blockIndex === BLOCKS.length - 1) tailLayers.push(pool);
    x = pool.apply(x) as tf.SymbolicTensor;
  });

  const full = tf.model({ inputs: input, outputs: x, name: 'trunk' });
  if (prefixOut === null) throw new Error('trunk has fewer than 2 convolutions');
  const prefix = tf.model({ inputs: input, outputs: prefixOut, name: 'prefix' });

  const flatWidths = BLOCKS.flat();
  const tailWidth = flatWidths[totalConvs - 3]; // channels entering the tail
  const tailInput = tf.input({ shape: [null, null, tailWidth] });
  let t = tailInput as tf.SymbolicTensor;
  for (const layer of tailLayers) t = layer.apply(t) as tf.SymbolicTensor;
  const tail = tf.model({ inputs: tailInput, outputs: t, name: 'tail' });

  const trainable = tailLayers.filter((l) => l.getClassName() === 'Conv2D');
  for (const layer of convs) {
    layer.trainable = trainable.includes(layer);
  }
  return { full, prefix, tail, trainable };
}

/** Serialize every weight of a model to JSON (index, shape, base64 data). */
export function saveWeights(model: tf.LayersModel, path: string): void {
  const entries = model.getWeights().map((w, i) => {
    const data = w.dataSync() as Float32Array;
    const raw = Buffer.alloc(data.length * 4);
    for (let d = 0; d < data.length; d++) raw.writeFloatLE(data[d], d * 4);
    return { index: i, shape: w.shape, data: raw.toString('base64') };
  });
  writeFileSync(path, JSON.stringify({ version: 1, weights: entries }));
}

export function loadWeights(model: tf.LayersModel, path: string): void {
  const parsed = JSON.parse(readFileSync(path, 'utf-8')) as {
    version: number;
    weights: { index: number; shape: number[]; data: string }[];
  };
  if (parsed.version !== 1) {
    throw new Error(`unsupported weights version ${parsed.version}`);
  }
  const current = model.getWeights();
  if (parsed.weights.length !== current.length) {
    throw new Error(
      `weight count mismatch: file has ${parsed.weights.length}, model has ${current.length}`,
    );
  }
  const tensors = parsed.weights.map((entry) => {
    const raw = Buffer.from(entry.data, 'base64');
    const values = new Float32Array(raw.byteLength / 4);
    for (let d = 0; d < values.length; d++) values[d] = raw.readFloatLE(d * 4);
    return tf.tensor(values, entry.shape);
  });
  model.setWeights(tensors);
  tensors.forEach((t) => t.dispose());
}
