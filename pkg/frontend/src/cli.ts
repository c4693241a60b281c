/**
 * Command line entry points for the embedding extractor.
 *
 * extract-vgg    manifest -> grid feature file (49 x 512 per image)
 * train-siamese  manifest -> trained trunk weights (json)
 * export-siamese manifest -> pooled embedding file (1 x 512 per image)
 */

import * as fs from 'fs';
import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';
import { readCorpusManifest, CorpusRow } from './manifest';
import { loadInput, RgbImage } from './png';
import { buildTrunk, saveWeights, loadWeights } from './trunk';
import { gridFeatures, pooledEmbedding } from './features';
import { minePairs } from './pairs';
import { trainSiamese } from './siamese';
import { writeFeatures, FeatureImage } from './ndf1';

function loadCorpusImages(manifestPath: string): {
  rows: CorpusRow[];
  images: Map<string, RgbImage>;
} {
  const { rows, issues } = readCorpusManifest(manifestPath);
  for (const issue of issues) {
    console.warn(`manifest: ${issue}`);
  }
  const images = new Map<string, RgbImage>();
  for (const row of rows) {
    try {
      images.set(row.id, loadInput(row.path));
    } catch (err) {
      console.warn(`skipping ${row.id}: ${(err as Error).message}`);
    }
  }
  if (images.size === 0) {
    throw new Error('no readable images in manifest');
  }
  return { rows, images };
}

async function extractVgg(args: {
  manifest: string;
  out: string;
  seed: number;
}): Promise<void> {
  const { rows, images } = loadCorpusImages(args.manifest);
  const trunk = buildTrunk(args.seed);
  const featured: FeatureImage[] = [];
  for (const row of rows) {
    const image = images.get(row.id);
    if (!image) continue;
    featured.push({ id: row.id, features: gridFeatures(trunk, image) });
  }
  fs.writeFileSync(args.out, writeFeatures(featured, 'real', 512));
  console.log(`wrote ${featured.length} images to ${args.out}`);
}

async function trainSiameseCmd(args: {
  manifest: string;
  out: string;
  seed: number;
  epochs: number;
  batchSize: number;
  clusters: number;
  pairsPerCluster: number;
}): Promise<void> {
  const { images } = loadCorpusImages(args.manifest);
  const trunk = buildTrunk(args.seed);
  const ids = [...images.keys()];
  const embeddings = ids.map((id) => pooledEmbedding(trunk, images.get(id)!));
  const dataset = minePairs(ids, embeddings, {
    nClusters: args.clusters,
    pairsPerCluster: args.pairsPerCluster,
    seed: args.seed,
  });
  for (const warning of dataset.warnings) {
    console.warn(warning);
  }
  const outcome = await trainSiamese(trunk, images, dataset, {
    epochs: args.epochs,
    batchSize: args.batchSize,
    seed: args.seed,
  });
  saveWeights(trunk.full, args.out);
  console.log(
    `train acc ${outcome.trainAccuracy.toFixed(4)} ` +
      `val acc ${outcome.valAccuracy.toFixed(4)} ` +
      `test acc ${outcome.testAccuracy.toFixed(4)} ` +
      `after ${outcome.epochsRun} epochs; weights in ${args.out}`,
  );
}

async function exportSiamese(args: {
  manifest: string;
  out: string;
  weights?: string;
  seed: number;
}): Promise<void> {
  const { rows, images } = loadCorpusImages(args.manifest);
  const trunk = buildTrunk(args.seed);
  if (args.weights) {
    loadWeights(trunk.full, args.weights);
  }
  const featured: FeatureImage[] = [];
  for (const row of rows) {
    const image = images.get(row.id);
    if (!image) continue;
    featured.push({ id: row.id, features: [pooledEmbedding(trunk, image)] });
  }
  fs.writeFileSync(args.out, writeFeatures(featured, 'real', 512));
  console.log(`wrote ${featured.length} embeddings to ${args.out}`);
}

async function main(): Promise<void> {
  await yargs(hideBin(process.argv))
    .command(
      'extract-vgg <manifest>',
      'write one 7x7 grid of unit-norm 512-vectors per image',
      (y) =>
        y
          .positional('manifest', { type: 'string', demandOption: true })
          .option('out', { type: 'string', demandOption: true })
          .option('seed', { type: 'number', default: 0 }),
      (argv) => extractVgg(argv as never),
    )
    .command(
      'train-siamese <manifest>',
      'mine pairs from the corpus and train the comparator tail',
      (y) =>
        y
          .positional('manifest', { type: 'string', demandOption: true })
          .option('out', { type: 'string', demandOption: true })
          .option('seed', { type: 'number', default: 0 })
          .option('epochs', { type: 'number', default: 16 })
          .option('batch-size', { type: 'number', default: 2048 })
          .option('clusters', { type: 'number', default: 100 })
          .option('pairs-per-cluster', { type: 'number', default: 812 }),
      (argv) => trainSiameseCmd(argv as never),
    )
    .command(
      'export-siamese <manifest>',
      'write one pooled unit-norm 512-vector per image',
      (y) =>
        y
          .positional('manifest', { type: 'string', demandOption: true })
          .option('out', { type: 'string', demandOption: true })
          .option('weights', { type: 'string' })
          .option('seed', { type: 'number', default: 0 }),
      (argv) => exportSiamese(argv as never),
    )
    .demandCommand(1)
    .strict()
    .fail((msg, err) => {
      // matches the engine CLI: usage problems exit 1, data failures exit 2
      console.error(err ? err.message : msg);
      process.exit(err ? 2 : 1);
    })
    .parseAsync();
}

main().catch((err) => {
  console.error((err as Error).message);
  process.exit(2);
});
