/**
 * Training-pair mining.
 *
 * Similar pairs come from images sharing a source stem (`<source>__<manip>`
 * ids group with their source). Dissimilar pairs are sampled inside
 * K-Means clusters of embedding space, across different stems, so they
 * are hard negatives: images that look alike but are not the same
 * picture. Pair lists are split 70/15/15 with no pair in two splits.
 */

export interface Pair {
  a: string;
  b: string;
  label: number; // 1 similar, 0 dissimilar
}

export interface PairDataset {
  train: Pair[];
  val: Pair[];
  test: Pair[];
  warnings: string[];
}

/** Deterministic 32-bit PRNG so mining reproduces exactly given a seed. */
export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function stemOf(id: string): string {
  const cut = id.indexOf('__');
  return cut === -1 ? id : id.slice(0, cut);
}

function squaredDistance(a: Float32Array, b: Float32Array): number {
  let sum = 0;
  for (let i = 0; i < a.length; i++) {
    const d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

export interface KMeansResult {
  assignments: number[];
  centroids: Float32Array[];
}

export function kmeans(
  vectors: Float32Array[],
  k: number,
  seed = 0,
  maxIters = 25,
): KMeansResult {
  const n = vectors.length;
  if (n === 0) return { assignments: [], centroids: [] };
  const kk = Math.max(1, Math.min(k, n));
  const rand = mulberry32(seed ^ 0x9e3779b9);
  // k-means++ style seeding: spread the initial centroids apart
  const centroids: Float32Array[] = [vectors[Math.floor(rand() * n)].slice()];
  const minDist = new Float64Array(n).fill(Infinity);
  while (centroids.length < kk) {
    const latest = centroids[centroids.length - 1];
    let total = 0;
    for (let i = 0; i < n; i++) {
      minDist[i] = Math.min(minDist[i], squaredDistance(vectors[i], latest));
      total += minDist[i];
    }
    let pick = rand() * total;
    let chosen = n - 1;
    for (let i = 0; i < n; i++) {
      pick -= minDist[i];
      if (pick <= 0) {
        chosen = i;
        break;
      }
    }
    centroids.push(vectors[chosen].slice());
  }
  const assignments = new Array<number>(n).fill(0);
  const dim = vectors[0].length;
  for (let iter = 0; iter < maxIters; iter++) {
    let changed = 0;
    for (let i = 0; i < n; i++) {
      let best = 0;
      let bestDist = Infinity;
      for (let c = 0; c < kk; c++) {
        const d = squaredDistance(vectors[i], centroids[c]);
        if (d < bestDist) {
          bestDist = d;
          best = c;
        }
      }
      if (assignments[i] !== best) {
        assignments[i] = best;
        changed += 1;
      }
    }
    const sums = Array.from({ length: kk }, () => new Float64Array(dim));
    const sizes = new Array<number>(kk).fill(0);
    for (let i = 0; i < n; i++) {
      sizes[assignments[i]] += 1;
      const s = sums[assignments[i]];
      const v = vectors[i];
      for (let d = 0; d < dim; d++) s[d] += v[d];
    }
    for (let c = 0; c < kk; c++) {
      if (sizes[c] === 0) {
        centroids[c] = vectors[Math.floor(rand() * n)].slice();
        continue;
      }
      const out = new Float32Array(dim);
      for (let d = 0; d < dim; d++) out[d] = sums[c][d] / sizes[c];
      centroids[c] = out;
    }
    if (changed === 0) break;
  }
  return { assignments, centroids };
}

export interface MineOptions {
  nClusters?: number;
  pairsPerCluster?: number;
  seed?: number;
}

export function minePairs(
  ids: string[],
  embeddings: Float32Array[],
  options: MineOptions = {},
): PairDataset {
  const { nClusters = 100, pairsPerCluster = 812, seed = 0 } = options;
  if (ids.length !== embeddings.length) {
    throw new Error('ids and embeddings must align');
  }
  const warnings: string[] = [];
  const rand = mulberry32(seed);

  // similar: all unordered pairs within a stem group; lone images pair
  // with themselves so every source contributes
  const groups = new Map<string, string[]>();
  ids.forEach((id) => {
    const stem = stemOf(id);
    const group = groups.get(stem) ?? [];
    group.push(id);
    groups.set(stem, group);
  });
  const similar: Pair[] = [];
  for (const members of groups.values()) {
    if (members.length === 1) {
      similar.push({ a: members[0], b: members[0], label: 1 });
      continue;
    }
    for (let i = 0; i < members.length; i++) {
      for (let j = i + 1; j < members.length; j++) {
        similar.push({ a: members[i], b: members[j], label: 1 });
      }
    }
  }

  // dissimilar: within-cluster, cross-stem samples
  const { assignments } = kmeans(embeddings, nClusters, seed);
  const clusters = new Map<number, number[]>();
  assignments.forEach((c, i) => {
    const members = clusters.get(c) ?? [];
    members.push(i);
    clusters.set(c, members);
  });
  const dissimilar: Pair[] = [];
  const used = new Set<string>();
  for (const [cluster, members] of [...clusters.entries()].sort(
    (x, y) => x[0] - y[0],
  )) {
    const crossStem: [string, string][] = [];
    for (let i = 0; i < members.length; i++) {
      for (let j = i + 1; j < members.length; j++) {
        const a = ids[members[i]];
        const b = ids[members[j]];
        if (stemOf(a) !== stemOf(b)) crossStem.push([a, b]);
      }
    }
    if (crossStem.length < pairsPerCluster) {
      warnings.push(
        `cluster ${cluster} has ${crossStem.length} cross-stem pairs, ` +
          `wanted ${pairsPerCluster}`,
      );
    }
    // seeded Fisher-Yates, then take the head
    for (let i = crossStem.length - 1; i > 0; i--) {
      const j = Math.floor(rand() * (i + 1));
      [crossStem[i], crossStem[j]] = [crossStem[j], crossStem[i]];
    }
    for (const [a, b] of crossStem.slice(0, pairsPerCluster)) {
      const key = a < b ? `${a}\0${b}` : `${b}\0${a}`;
      if (used.has(key)) continue;
      used.add(key);
      dissimilar.push({ a, b, label: 0 });
    }
  }

  // approximate balance, then a 70/15/15 split of each label list
  const cap = Math.min(similar.length, dissimilar.length);
  if (cap === 0) {
    throw new Error(
      `cannot mine pairs: ${similar.length} similar, ${dissimilar.length} dissimilar`,
    );
  }
  const shuffled = (list: Pair[]) => {
    const copy = list.slice();
    for (let i = copy.length - 1; i > 0; i--) {
      const j = Math.floor(rand() * (i + 1));
      [copy[i], copy[j]] = [copy[j], copy[i]];
    }
    return copy.slice(0, cap);
  };
  const dataset: PairDataset = { train: [], val: [], test: [], warnings };
  for (const list of [shuffled(similar), shuffled(dissimilar)]) {
    const nTrain = Math.floor(list.length * 0.7);
    const nVal = Math.floor(list.length * 0.15);
    dataset.train.push(...list.slice(0, nTrain));
    dataset.val.push(...list.slice(nTrain, nTrain + nVal));
    dataset.test.push(...list.slice(nTrain + nVal));
  }
  return dataset;
}
