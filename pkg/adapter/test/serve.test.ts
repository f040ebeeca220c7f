import assert from 'node:assert/strict';
import { spawn } from 'node:child_process';
import { readFileSync } from 'node:fs';
import * as path from 'node:path';
import * as readline from 'node:readline';
import { test } from 'node:test';

import { PortInUse } from '../src/errors';
import { loadModel } from '../src/model';
import { serveHttp } from '../src/serve';
import { trainAndEmit } from '../src/train';
import { LABELS, toyRows, workdir, writeManifest, writeSplit } from './helpers';

const CLI = path.join(__dirname, '..', 'src', 'cli.js');
const HP = { epochs: 200, learningRate: 0.5, batchSize: 16 };

function trainedJob() {
  const dir = workdir();
  const rows = toyRows(80, 13);
  const manifest = writeManifest(dir, rows);
  const split = writeSplit(dir, rows, 'rows.jsonl');
  const job = {
    manifest,
    baseModel: 'softmax-regression',
    backendId: 'assm1',
    hyperparameters: HP,
    modelOut: path.join(dir, 'model.json'),
    predictionsOut: path.join(dir, 'predictions.jsonl'),
    evalSplits: [split],
  };
  trainAndEmit(job);
  return { dir, rows, job };
}

function writeJobFile(dir: string, job: object): string {
  const file = path.join(dir, 'job.json');
  require('node:fs').writeFileSync(file, JSON.stringify(job), 'utf-8');
  return file;
}

test('stdio server answers with the same probs as the emitted file', async () => {
  const { dir, rows, job } = trainedJob();
  const jobFile = writeJobFile(dir, job);
  const emitted = new Map(
    readFileSync(job.predictionsOut, 'utf-8')
      .trim()
      .split('\n')
      .map((line) => {
        const row = JSON.parse(line);
        return [row.example_id, row.probs] as const;
      }),
  );

  const child = spawn(process.execPath, [CLI, 'serve', '--job', jobFile, '--stdio'], {
    stdio: ['pipe', 'pipe', 'ignore'],
  });
  const answers = readline.createInterface({ input: child.stdout });
  const pending: ((line: string) => void)[] = [];
  answers.on('line', (line) => pending.shift()?.(line));
  const ask = (req: object) =>
    new Promise<string>((resolve) => {
      pending.push(resolve);
      child.stdin.write(JSON.stringify(req) + '\n');
    });

  try {
    for (const row of rows.slice(0, 10)) {
      const reply = JSON.parse(await ask({ id: row.id, payload: row.payload, labels: LABELS }));
      assert.equal(reply.example_id, row.id);
      assert.deepEqual(reply.probs, emitted.get(row.id));
    }
    // malformed request: error response, server stays up
    const err = JSON.parse(await ask({ nope: true }));
    assert.ok(err.error);
    const again = JSON.parse(
      await ask({ id: rows[0].id, payload: rows[0].payload, labels: LABELS }),
    );
    assert.equal(again.example_id, rows[0].id);
  } finally {
    child.stdin.end();
    child.kill();
  }
});

test('stdio server rejects a mismatched label space but keeps serving', async () => {
  const { dir, rows, job } = trainedJob();
  const jobFile = writeJobFile(dir, job);
  const child = spawn(process.execPath, [CLI, 'serve', '--job', jobFile, '--stdio'], {
    stdio: ['pipe', 'pipe', 'ignore'],
  });
  const answers = readline.createInterface({ input: child.stdout });
  const pending: ((line: string) => void)[] = [];
  answers.on('line', (line) => pending.shift()?.(line));
  const ask = (req: object) =>
    new Promise<string>((resolve) => {
      pending.push(resolve);
      child.stdin.write(JSON.stringify(req) + '\n');
    });
  try {
    const bad = JSON.parse(await ask({ id: 'x', payload: '1,1', labels: ['other', 'labels'] }));
    assert.ok(bad.error);
    const good = JSON.parse(await ask({ id: rows[0].id, payload: rows[0].payload, labels: LABELS }));
    assert.equal(good.example_id, rows[0].id);
  } finally {
    child.stdin.end();
    child.kill();
  }
});

test('http server speaks the chat-completion schema with logprobs', async () => {
  const { job } = trainedJob();
  const model = loadModel(job.modelOut);
  const server = await serveHttp(model, 0);
  const address = server.address();
  assert.ok(address && typeof address === 'object');
  const url = `http://127.0.0.1:${address.port}/v1/chat/completions`;
  try {
    const res = await fetch(url, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({
        model: 'assm1',
        messages: [{ role: 'user', content: '2.1,1.9' }],
        max_tokens: 8,
        logprobs: true,
      }),
    });
    assert.equal(res.status, 200);
    const doc: any = await res.json();
    assert.equal(doc.choices[0].message.content, 'hi');
    const top = doc.choices[0].logprobs.content[0].top_logprobs;
    assert.equal(top.length, 2);
    const total = top.reduce((a: number, t: any) => a + Math.exp(t.logprob), 0);
    assert.ok(Math.abs(total - 1) <= 1e-6);

    // malformed body: error response, server stays up
    const bad = await fetch(url, { method: 'POST', body: '{"messages": []}' });
    assert.equal(bad.status, 400);
    const okAgain = await fetch(url, {
      method: 'POST',
      body: JSON.stringify({ messages: [{ role: 'user', content: '-2,-2' }] }),
    });
    assert.equal(okAgain.status, 200);
  } finally {
    server.close();
  }
});

test('100 concurrent http requests answer bijectively', async () => {
  const { rows, job } = trainedJob();
  const model = loadModel(job.modelOut);
  const server = await serveHttp(model, 0);
  const address = server.address();
  assert.ok(address && typeof address === 'object');
  const url = `http://127.0.0.1:${address.port}/`;
  try {
    const picks = Array.from({ length: 100 }, (_, i) => rows[i % rows.length]);
    const replies = await Promise.all(
      picks.map(async (row) => {
        const res = await fetch(url, {
          method: 'POST',
          body: JSON.stringify({ messages: [{ role: 'user', content: row.payload }] }),
        });
        const doc: any = await res.json();
        return { label: doc.choices[0].message.content, want: row.label };
      }),
    );
    assert.equal(replies.length, 100);
    const agreement = replies.filter((r) => r.label === r.want).length;
    assert.ok(agreement >= 95, `only ${agreement}/100 matched`);
  } finally {
    server.close();
  }
});

test('second server on the same port reports PortInUse', async () => {
  const { job } = trainedJob();
  const model = loadModel(job.modelOut);
  const server = await serveHttp(model, 0);
  const address = server.address();
  assert.ok(address && typeof address === 'object');
  try {
    await assert.rejects(serveHttp(model, address.port), PortInUse);
  } finally {
    server.close();
  }
});

test('serving an untrained job reports ModelNotFound', () => {
  const { ModelNotFound } = require('../src/errors');
  assert.throws(() => loadModel(path.join(workdir(), 'absent.json')), ModelNotFound);
});

test('cli without arguments exits with usage code 2', async () => {
  const child = spawn(process.execPath, [CLI], { stdio: ['ignore', 'ignore', 'ignore'] });
  const code = await new Promise<number | null>((resolve) => child.on('exit', resolve));
  assert.equal(code, 2);
});
