/**
 * Corpus manifest: JSON Lines rows {id, path, platform, posted_at, url?}.
 *
 * Paths are resolved relative to the manifest file's directory, matching
 * the retrieval core's reader. Malformed rows are collected with their
 * line numbers instead of aborting the whole file.
 */

import { readFileSync } from 'fs';
import * as path from 'path';

export interface CorpusRow {
  id: string;
  path: string;
  platform: string;
  postedAt: string;
}

export interface ManifestResult {
  rows: CorpusRow[];
  issues: string[];
}

export function readCorpusManifest(manifestPath: string): ManifestResult {
  const text = readFileSync(manifestPath, 'utf-8');
  const base = path.dirname(path.resolve(manifestPath));
  const rows: CorpusRow[] = [];
  const issues: string[] = [];
  const seen = new Set<string>();
  text.split('\n').forEach((line, index) => {
    if (!line.trim()) return;
    let parsed: Record<string, unknown>;
    try {
      parsed = JSON.parse(line);
    } catch {
      issues.push(`line ${index + 1}: not valid JSON`);
      return;
    }
    const { id, path: p, platform, posted_at: postedAt } = parsed as {
      id?: unknown;
      path?: unknown;
      platform?: unknown;
      posted_at?: unknown;
    };
    if (typeof id !== 'string' || !id) {
      issues.push(`line ${index + 1}: missing id`);
      return;
    }
    if (seen.has(id)) {
      issues.push(`line ${index + 1}: duplicate id ${id}`);
      return;
    }
    if (typeof p !== 'string' || !p) {
      issues.push(`line ${index + 1}: missing path`);
      return;
    }
    if (typeof postedAt !== 'string' || Number.isNaN(Date.parse(postedAt))) {
      issues.push(`line ${index + 1}: bad posted_at`);
      return;
    }
    seen.add(id);
    rows.push({
      id,
      path: path.isAbsolute(p) ? p : path.join(base, p),
      platform: typeof platform === 'string' ? platform : 'other',
      postedAt,
    });
  });
  if (rows.length === 0) {
    throw new Error(`no valid rows in ${manifestPath}`);
  }
  return { rows, issues };
}
