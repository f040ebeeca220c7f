import { createHash } from 'node:crypto';
import { readFileSync } from 'node:fs';

import { SchemaViolation } from './errors';

export interface ManifestRow {
  id: string;
  payload: string;
  label: string;
}

export interface Manifest {
  task: string;
  variant: string;
  labels: string[];
  partitionHash: string;
  planHash: string;
  rows: ManifestRow[];
}

/** Provenance that ties a trained model back to its manifest: the sha256 of
 *  the manifest's header line. The core checks this at registration. */
export function headerProvenance(headerLine: string): string {
  return createHash('sha256').update(headerLine.trim(), 'utf-8').digest('hex');
}

export function loadManifest(path: string): { manifest: Manifest; provenance: string } {
  const lines = readFileSync(path, 'utf-8').split('\n');
  if (!lines[0] || !lines[0].trim()) {
    throw new SchemaViolation(`${path}: missing manifest header line`);
  }
  let header: any;
  try {
    header = JSON.parse(lines[0]);
  } catch {
    throw new SchemaViolation(`${path}: header line is not JSON`);
  }
  for (const key of ['task', 'variant', 'label_space', 'partition_hash', 'plan_hash']) {
    if (!(key in header)) throw new SchemaViolation(`${path}: header missing ${key}`);
  }
  const labels: string[] = header.label_space;
  if (!Array.isArray(labels) || labels.length < 2) {
    throw new SchemaViolation(`${path}: label_space needs at least 2 labels`);
  }

  const rows: ManifestRow[] = [];
  for (let i = 1; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    let row: any;
    try {
      row = JSON.parse(line);
    } catch {
      throw new SchemaViolation(`${path}:${i + 1}: row is not JSON`);
    }
    if (typeof row.id !== 'string' || typeof row.payload !== 'string' || typeof row.label !== 'string') {
      throw new SchemaViolation(`${path}:${i + 1}: row needs string id/payload/label`);
    }
    if (!labels.includes(row.label)) {
      throw new SchemaViolation(`${path}:${i + 1}: label ${row.label} not in label space`);
    }
    rows.push({ id: row.id, payload: row.payload, label: row.label });
  }

  return {
    manifest: {
      task: header.task,
      variant: header.variant,
      labels,
      partitionHash: header.partition_hash,
      planHash: header.plan_hash,
      rows,
    },
    provenance: headerProvenance(lines[0]),
  };
}

/** Dataset split rows share the manifest row shape. */
export function loadSplit(path: string): ManifestRow[] {
  const rows: ManifestRow[] = [];
  const lines = readFileSync(path, 'utf-8').split('\n');
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    let row: any;
    try {
      row = JSON.parse(line);
    } catch {
      throw new SchemaViolation(`${path}:${i + 1}: row is not JSON`);
    }
    if (typeof row.id !== 'string' || typeof row.payload !== 'string') {
      throw new SchemaViolation(`${path}:${i + 1}: row needs string id/payload`);
    }
    rows.push({ id: row.id, payload: row.payload, label: row.label ?? '' });
  }
  return rows;
}
