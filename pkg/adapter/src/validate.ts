import { SchemaViolation } from './errors';

const SIMPLEX_TOL = 1e-9;

export interface PredictionRow {
  backend_id: string;
  example_id: string;
  probs: number[];
}

/** Mirror of the core's offline-predictions row validator; every emitted row
 *  must survive this before it leaves the adapter. */
export function validatePredictionRow(obj: unknown, k?: number): PredictionRow {
  if (typeof obj !== 'object' || obj === null || Array.isArray(obj)) {
    throw new SchemaViolation('prediction row is not an object');
  }
  const row = obj as Record<string, unknown>;
  const keys = Object.keys(row).sort();
  if (keys.join(',') !== 'backend_id,example_id,probs') {
    throw new SchemaViolation(`prediction row keys [${keys}] are wrong`);
  }
  if (typeof row.backend_id !== 'string' || typeof row.example_id !== 'string') {
    throw new SchemaViolation('backend_id and example_id must be strings');
  }
  const probs = row.probs;
  if (!Array.isArray(probs) || probs.length < 2) {
    throw new SchemaViolation('probs must be a list of at least 2 numbers');
  }
  let total = 0;
  for (const p of probs) {
    if (typeof p !== 'number' || !Number.isFinite(p)) {
      throw new SchemaViolation(`probs entry ${p} is not a finite number`);
    }
    if (p < 0 || p > 1) throw new SchemaViolation(`probs entry ${p} outside [0, 1]`);
    total += p;
  }
  if (k !== undefined && probs.length !== k) {
    throw new SchemaViolation(`probs length ${probs.length} != label-space size ${k}`);
  }
  if (Math.abs(total - 1) > SIMPLEX_TOL) {
    throw new SchemaViolation(`probs sum ${total} deviates from 1`);
  }
  return { backend_id: row.backend_id, example_id: row.example_id, probs: probs as number[] };
}
