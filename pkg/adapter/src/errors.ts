export class ManifestEmpty extends Error {
  constructor(path: string) {
    super(`manifest ${path} has no training rows`);
    this.name = 'ManifestEmpty';
  }
}

export class TrainingDiverged extends Error {
  constructor(epoch: number, loss: number) {
    super(`loss became ${loss} at epoch ${epoch}; lower the learning rate`);
    this.name = 'TrainingDiverged';
  }
}

export class ModelNotFound extends Error {
  constructor(path: string) {
    super(`no model artifact at ${path}; run train first`);
    this.name = 'ModelNotFound';
  }
}

export class PortInUse extends Error {
  constructor(port: number) {
    super(`port ${port} is already in use`);
    this.name = 'PortInUse';
  }
}

export class SchemaViolation extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'SchemaViolation';
  }
}
