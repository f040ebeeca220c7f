import { writeFileSync } from 'node:fs';

import { ManifestEmpty } from './errors';
import { loadManifest, loadSplit } from './manifest';
import { fitModel, Hyperparameters, ModelArtifact, predictProbs, saveModel } from './model';
import { validatePredictionRow } from './validate';

export interface AdapterJob {
  manifest: string;
  baseModel: string;
  backendId: string;
  hyperparameters: Hyperparameters;
  modelOut: string;
  predictionsOut: string;
  evalSplits: string[];
}

export const DEFAULT_HYPERPARAMETERS: Hyperparameters = {
  epochs: 300,
  learningRate: 0.5,
  batchSize: 32,
};

export interface TrainResult {
  provenance: string;
  model: ModelArtifact;
  rowsEmitted: number;
  predictionsPath: string;
}

/** Train on the manifest rows only, then emit a prediction row for every
 *  example of every requested eval split. */
export function trainAndEmit(job: AdapterJob): TrainResult {
  const { manifest, provenance } = loadManifest(job.manifest);
  if (manifest.rows.length === 0) throw new ManifestEmpty(job.manifest);

  const ys = manifest.rows.map((row) => manifest.labels.indexOf(row.label));
  const model = fitModel(
    job.baseModel,
    manifest.labels,
    manifest.rows.map((row) => row.payload),
    ys,
    job.hyperparameters,
    provenance,
  );
  saveModel(model, job.modelOut);

  const lines: string[] = [];
  let emitted = 0;
  for (const splitPath of job.evalSplits) {
    for (const row of loadSplit(splitPath)) {
      const probs = predictProbs(model, row.payload);
      const out = { backend_id: job.backendId, example_id: row.id, probs };
      validatePredictionRow(JSON.parse(JSON.stringify(out)), manifest.labels.length);
      lines.push(JSON.stringify(out));
      emitted += 1;
    }
  }
  writeFileSync(job.predictionsOut, lines.join('\n') + (lines.length ? '\n' : ''), 'utf-8');
  return { provenance, model, rowsEmitted: emitted, predictionsPath: job.predictionsOut };
}

export function loadJob(path: string): AdapterJob {
  const { readFileSync } = require('node:fs') as typeof import('node:fs');
  const raw = JSON.parse(readFileSync(path, 'utf-8'));
  for (const key of ['manifest', 'backendId', 'modelOut', 'predictionsOut']) {
    if (typeof raw[key] !== 'string') throw new Error(`job file: missing string field ${key}`);
  }
  return {
    manifest: raw.manifest,
    baseModel: raw.baseModel ?? 'softmax-regression',
    backendId: raw.backendId,
    hyperparameters: { ...DEFAULT_HYPERPARAMETERS, ...(raw.hyperparameters ?? {}) },
    modelOut: raw.modelOut,
    predictionsOut: raw.predictionsOut,
    evalSplits: raw.evalSplits ?? [],
  };
}
