import { readFileSync, writeFileSync } from 'node:fs';

import { applyScaler, featurize, fitScaler, fitWidth, Scaler } from './features';
import { ModelNotFound, TrainingDiverged } from './errors';

export interface Hyperparameters {
  epochs: number;
  learningRate: number;
  batchSize: number;
}

export interface ModelArtifact {
  baseModel: string;
  labels: string[];
  featWidth: number;
  scaler: Scaler;
  weights: number[][]; // k x (featWidth + 1), bias last
  provenance: string;
}

export function softmax(logits: number[]): number[] {
  const m = Math.max(...logits);
  const exps = logits.map((v) => Math.exp(v - m));
  const total = exps.reduce((a, b) => a + b, 0);
  return exps.map((e) => e / total);
}

function logitsOf(weights: number[][], x: number[]): number[] {
  return weights.map((row) => {
    let z = row[row.length - 1]; // bias
    for (let j = 0; j < x.length; j++) z += row[j] * x[j];
    return z;
  });
}

/** Multinomial logistic regression trained with mini-batch gradient descent.
 *  Zero init and in-order batches keep training fully deterministic. */
export function trainSoftmaxRegression(
  xs: number[][],
  ys: number[],
  k: number,
  hp: Hyperparameters,
): number[][] {
  const width = xs[0].length;
  const weights: number[][] = Array.from({ length: k }, () => new Array<number>(width + 1).fill(0));
  const batch = Math.max(1, Math.min(hp.batchSize, xs.length));

  for (let epoch = 0; epoch < hp.epochs; epoch++) {
    let loss = 0;
    for (let start = 0; start < xs.length; start += batch) {
      const end = Math.min(start + batch, xs.length);
      const grad: number[][] = Array.from({ length: k }, () => new Array<number>(width + 1).fill(0));
      for (let i = start; i < end; i++) {
        const probs = softmax(logitsOf(weights, xs[i]));
        loss += -Math.log(probs[ys[i]]); // unclamped: underflow to 0 means divergence
        for (let c = 0; c < k; c++) {
          const delta = probs[c] - (c === ys[i] ? 1 : 0);
          for (let j = 0; j < width; j++) grad[c][j] += delta * xs[i][j];
          grad[c][width] += delta;
        }
      }
      const scale = hp.learningRate / (end - start);
      for (let c = 0; c < k; c++) {
        for (let j = 0; j <= width; j++) weights[c][j] -= scale * grad[c][j];
      }
    }
    if (!Number.isFinite(loss)) throw new TrainingDiverged(epoch, loss);
  }
  return weights;
}

export function predictProbs(model: ModelArtifact, payload: string): number[] {
  const x = applyScaler(model.scaler, fitWidth(featurize(payload), model.featWidth));
  const probs = softmax(logitsOf(model.weights, x));
  const total = probs.reduce((a, b) => a + b, 0);
  return probs.map((p) => p / total);
}

export function fitModel(
  baseModel: string,
  labels: string[],
  payloads: string[],
  ys: number[],
  hp: Hyperparameters,
  provenance: string,
): ModelArtifact {
  const raw = payloads.map(featurize);
  const featWidth = Math.max(...raw.map((r) => r.length));
  const fitted = raw.map((r) => fitWidth(r, featWidth));
  const scaler = fitScaler(fitted);
  const xs = fitted.map((r) => applyScaler(scaler, r));
  const weights = trainSoftmaxRegression(xs, ys, labels.length, hp);
  return { baseModel, labels, featWidth, scaler, weights, provenance };
}

export function saveModel(model: ModelArtifact, path: string): void {
  writeFileSync(path, JSON.stringify(model) + '\n', 'utf-8');
}

export function loadModel(path: string): ModelArtifact {
  let raw: string;
  try {
    raw = readFileSync(path, 'utf-8');
  } catch {
    throw new ModelNotFound(path);
  }
  return JSON.parse(raw) as ModelArtifact;
}
