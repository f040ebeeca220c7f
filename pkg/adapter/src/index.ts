export { ManifestEmpty, ModelNotFound, PortInUse, SchemaViolation, TrainingDiverged } from './errors';
export { featurize } from './features';
export { headerProvenance, loadManifest, loadSplit } from './manifest';
export { fitModel, loadModel, predictProbs, saveModel, softmax, trainSoftmaxRegression } from './model';
export { serveHttp, serveStdio } from './serve';
export { DEFAULT_HYPERPARAMETERS, loadJob, trainAndEmit } from './train';
export { validatePredictionRow } from './validate';
