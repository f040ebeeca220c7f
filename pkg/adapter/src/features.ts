const HASH_DIM = 64;

function fnv1a(token: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < token.length; i++) {
    hash ^= token.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

/** Numeric payloads ("1.5, -0.3") become the numbers themselves; anything
 *  else becomes a hashed bag-of-words. The core treats payloads as opaque,
 *  so this is the adapter's own contract with its training data. */
export function featurize(payload: string): number[] {
  const trimmed = payload.trim();
  if (trimmed && /^[-+0-9.eE,;\s]+$/.test(trimmed)) {
    const parts = trimmed
      .split(/[,;\s]+/)
      .map(Number)
      .filter((v) => Number.isFinite(v));
    if (parts.length > 0) return parts;
  }
  const vec = new Array<number>(HASH_DIM).fill(0);
  for (const token of trimmed.toLowerCase().split(/[^a-z0-9]+/)) {
    if (!token) continue;
    vec[fnv1a(token) % HASH_DIM] += 1;
  }
  return vec;
}

/** Pad or truncate to the model's feature width. */
export function fitWidth(vec: number[], width: number): number[] {
  if (vec.length === width) return vec;
  const out = vec.slice(0, width);
  while (out.length < width) out.push(0);
  return out;
}

export interface Scaler {
  mean: number[];
  std: number[];
}

export function fitScaler(rows: number[][]): Scaler {
  const width = rows[0].length;
  const mean = new Array<number>(width).fill(0);
  const std = new Array<number>(width).fill(0);
  for (const row of rows) for (let j = 0; j < width; j++) mean[j] += row[j];
  for (let j = 0; j < width; j++) mean[j] /= rows.length;
  for (const row of rows) for (let j = 0; j < width; j++) std[j] += (row[j] - mean[j]) ** 2;
  for (let j = 0; j < width; j++) std[j] = Math.sqrt(std[j] / rows.length) || 1;
  return { mean, std };
}

export function applyScaler(scaler: Scaler, vec: number[]): number[] {
  return vec.map((v, j) => (v - scaler.mean[j]) / scaler.std[j]);
}
