import { mkdtempSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import * as path from 'node:path';

export const LABELS = ['lo', 'hi'];

/** Deterministic pseudo-noise so tests are stable without a dependency. */
export function lcg(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (Math.imul(state, 1664525) + 1013904223) >>> 0;
    return state / 2 ** 32;
  };
}

export interface ToyRow {
  id: string;
  payload: string;
  label: string;
}

/** Two well-separated Gaussian-ish blobs on the x+y axis. */
export function toyRows(n: number, seed: number, prefix = 'e'): ToyRow[] {
  const rand = lcg(seed);
  const rows: ToyRow[] = [];
  for (let i = 0; i < n; i++) {
    const hi = i % 2 === 1;
    const cx = hi ? 2 : -2;
    const x = cx + (rand() - 0.5);
    const y = cx + (rand() - 0.5);
    rows.push({
      id: `${prefix}${String(i).padStart(4, '0')}`,
      payload: `${x.toFixed(4)},${y.toFixed(4)}`,
      label: hi ? 'hi' : 'lo',
    });
  }
  return rows;
}

export function workdir(): string {
  return mkdtempSync(path.join(tmpdir(), 'adapter-test-'));
}

export function writeManifest(dir: string, rows: ToyRow[], name = 'manifest.jsonl'): string {
  const header = JSON.stringify({
    task: 'toy',
    variant: 'ea',
    label_space: LABELS,
    partition_hash: 'p'.repeat(64),
    plan_hash: 'q'.repeat(64),
  });
  const file = path.join(dir, name);
  const lines = [header, ...rows.map((r) => JSON.stringify(r))];
  writeFileSync(file, lines.join('\n') + '\n', 'utf-8');
  return file;
}

export function writeSplit(dir: string, rows: ToyRow[], name: string): string {
  const file = path.join(dir, name);
  writeFileSync(file, rows.map((r) => JSON.stringify(r)).join('\n') + '\n', 'utf-8');
  return file;
}
