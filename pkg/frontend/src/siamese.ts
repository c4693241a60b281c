/**
 * Siamese comparator on top of the trunk.
 *
 * Both branches share the trunk; each image becomes a 512 global-max
 * embedding, the branches meet in an element-wise L1 distance, and one
 * sigmoid unit scores the pair. Only the last two convolutions and the
 * sigmoid head train; everything below is frozen, so training runs on
 * cached frozen-prefix activations instead of re-running the whole
 * trunk every step.
 */

import * as tf from '@tensorflow/tfjs';
import { RgbImage } from './png';
import { toTensor } from './features';
import { Trunk } from './trunk';
import { Pair, PairDataset } from './pairs';

class L1Distance extends tf.layers.Layer {
  static className = 'L1Distance';

  call(inputs: tf.Tensor | tf.Tensor[]): tf.Tensor {
    const [a, b] = inputs as tf.Tensor[];
    return tf.abs(tf.sub(a, b));
  }

  computeOutputShape(inputShape: tf.Shape | tf.Shape[]): tf.Shape {
    return (inputShape as tf.Shape[])[0];
  }
}
tf.serialization.registerClass(L1Distance);

export interface TrainOptions {
  epochs?: number;
  batchSize?: number;
  learningRate?: number;
  seed?: number;
  /** called after every epoch with the latest accuracies */
  onEpoch?: (epoch: number, trainAcc: number, valAcc: number) => void;
}

export interface TrainOutcome {
  trainAccuracy: number;
  valAccuracy: number;
  testAccuracy: number;
  epochsRun: number;
}

interface SplitTensors {
  a: tf.Tensor4D;
  b: tf.Tensor4D;
  labels: tf.Tensor2D;
}

function gatherSplit(
  stack: tf.Tensor4D,
  indexOf: Map<string, number>,
  pairs: Pair[],
): SplitTensors {
  const ia = pairs.map((p) => indexOf.get(p.a)!);
  const ib = pairs.map((p) => indexOf.get(p.b)!);
  return {
    a: tf.gather(stack, ia) as tf.Tensor4D,
    b: tf.gather(stack, ib) as tf.Tensor4D,
    labels: tf.tensor2d(
      pairs.map((p) => [p.label]),
      [pairs.length, 1],
    ),
  };
}

export async function trainSiamese(
  trunk: Trunk,
  imagesById: Map<string, RgbImage>,
  dataset: PairDataset,
  options: TrainOptions = {},
): Promise<TrainOutcome> {
  const {
    epochs = 16,
    batchSize = 2048,
    learningRate = 0.001,
    seed = 0,
    onEpoch,
  } = options;
  const allPairs = [...dataset.train, ...dataset.val, ...dataset.test];
  if (dataset.train.length === 0 || dataset.val.length === 0) {
    throw new Error('training needs non-empty train and val splits');
  }
  const uniqueIds = [...new Set(allPairs.flatMap((p) => [p.a, p.b]))];
  const missing = uniqueIds.filter((id) => !imagesById.has(id));
  if (missing.length > 0) {
    throw new Error(`pairs reference images without pixels: ${missing.join(', ')}`);
  }

  // cache the frozen prefix once per image
  const activations = uniqueIds.map((id) =>
    tf.tidy(
      () => trunk.prefix.predict(toTensor(imagesById.get(id)!)) as tf.Tensor4D,
    ),
  );
  const stack = tf.concat(activations, 0) as tf.Tensor4D;
  activations.forEach((t) => t.dispose());
  const indexOf = new Map(uniqueIds.map((id, i) => [id, i]));

  const [, height, width, channels] = stack.shape;
  const inputA = tf.input({ shape: [height, width, channels] });
  const inputB = tf.input({ shape: [height, width, channels] });
  const gmp = tf.layers.globalMaxPooling2d({ name: 'global_max' });
  const embedA = gmp.apply(trunk.tail.apply(inputA)) as tf.SymbolicTensor;
  const embedB = gmp.apply(trunk.tail.apply(inputB)) as tf.SymbolicTensor;
  const distance = new L1Distance({ name: 'l1_distance' }).apply([
    embedA,
    embedB,
  ]) as tf.SymbolicTensor;
  const score = tf.layers
    .dense({
      units: 1,
      activation: 'sigmoid',
      name: 'match_score',
      kernelInitializer: tf.initializers.glorotUniform({ seed: seed * 1000 + 777 }),
    })
    .apply(distance) as tf.SymbolicTensor;
  const model = tf.model({ inputs: [inputA, inputB], outputs: score });
  model.compile({
    optimizer: tf.train.adam(learningRate),
    loss: 'binaryCrossentropy',
    metrics: ['accuracy'],
  });

  const train = gatherSplit(stack, indexOf, dataset.train);
  const val = gatherSplit(stack, indexOf, dataset.val);
  const test = gatherSplit(stack, indexOf, dataset.test);
  stack.dispose();

  let abortedAt: { epoch: number; valAcc: number } | null = null;
  const history = await model.fit([train.a, train.b], train.labels, {
    epochs,
    batchSize: Math.min(batchSize, dataset.train.length),
    validationData: [[val.a, val.b], val.labels],
    shuffle: true,
    verbose: 0,
    callbacks: {
      onEpochEnd: async (epoch, logs) => {
        const valAcc = (logs?.val_acc ?? logs?.val_accuracy ?? 0) as number;
        const trainAcc = (logs?.acc ?? logs?.accuracy ?? 0) as number;
        onEpoch?.(epoch + 1, trainAcc, valAcc);
        if (epoch + 1 >= 2 && valAcc <= 0.55 && abortedAt === null) {
          abortedAt = { epoch: epoch + 1, valAcc };
          model.stopTraining = true;
        }
      },
    },
  });
  if (abortedAt !== null) {
    const seen = abortedAt as { epoch: number; valAcc: number };
    throw new Error(
      `validation accuracy ${seen.valAcc.toFixed(3)} after ` +
        `${seen.epoch} epochs is not above chance (0.55); ` +
        `train=${dataset.train.length} val=${dataset.val.length} pairs`,
    );
  }

  const accOf = (key: string): number => {
    const series = (history.history[key] ?? []) as number[];
    return series.length ? series[series.length - 1] : NaN;
  };
  const evaluated = model.evaluate([test.a, test.b], test.labels, {
    batchSize: Math.min(batchSize, Math.max(dataset.test.length, 1)),
  }) as tf.Scalar[];
  const testAccuracy = (await evaluated[1].data())[0];
  evaluated.forEach((t) => t.dispose());
  [train, val, test].forEach((s) => {
    s.a.dispose();
    s.b.dispose();
    s.labels.dispose();
  });

  return {
    trainAccuracy: accOf('acc') || accOf('accuracy'),
    valAccuracy: accOf('val_acc') || accOf('val_accuracy'),
    testAccuracy,
    epochsRun: (history.history['loss'] as number[]).length,
  };
}
