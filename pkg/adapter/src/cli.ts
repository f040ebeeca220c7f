#!/usr/bin/env node
import { loadModel } from './model';
import { serveHttp, serveStdio } from './serve';
import { loadJob, trainAndEmit } from './train';

function usage(): never {
  console.error(
    'usage:\n' +
      '  cascade-adapter train --job job.json\n' +
      '  cascade-adapter serve --job job.json --stdio\n' +
      '  cascade-adapter serve --job job.json --port 8791',
  );
  process.exit(2);
}

function flagValue(argv: string[], flag: string): string | undefined {
  const at = argv.indexOf(flag);
  return at >= 0 ? argv[at + 1] : undefined;
}

async function main(argv: string[]): Promise<number> {
  const [command] = argv;
  const jobPath = flagValue(argv, '--job');
  if (!command || !jobPath) usage();
  const job = loadJob(jobPath);

  if (command === 'train') {
    const result = trainAndEmit(job);
    console.log(
      JSON.stringify({
        ok: true,
        provenance: result.provenance,
        rows: result.rowsEmitted,
        predictions: result.predictionsPath,
        model: job.modelOut,
      }),
    );
    return 0;
  }

  if (command === 'serve') {
    const model = loadModel(job.modelOut);
    if (argv.includes('--stdio')) {
      console.error(`serving ${job.backendId} on stdio`);
      serveStdio(model, job.backendId);
      return new Promise<number>(() => undefined); // runs until stdin closes
    }
    const port = Number(flagValue(argv, '--port'));
    if (!Number.isFinite(port)) usage();
    await serveHttp(model, port);
    console.error(`serving ${job.backendId} on http://127.0.0.1:${port}`);
    return new Promise<number>(() => undefined);
  }

  usage();
}

main(process.argv.slice(2))
  .then((code) => {
    if (code !== undefined) process.exitCode = code;
  })
  .catch((err) => {
    console.error(`error: ${err.name ?? 'Error'}: ${err.message}`);
    process.exitCode = 1;
  });
