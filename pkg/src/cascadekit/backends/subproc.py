"""Subprocess backend: one worker process speaking JSONL over stdio.

Request line:  {"id": str, "payload": str, "labels": [str, ...]}
Response line: {"backend_id": str, "example_id": str, "probs": [float, ...]}

Calls are serialized per process instance; the process is spawned on first
use and kept alive across calls.
"""

from __future__ import annotations

import json
import subprocess
import threading

from ..dataset import LabeledExample, LabelSpace
from ..errors import BackendUnavailable, InvalidConfig, ParseFailure, SchemaError
from .base import BackendDescriptor, PredictionRecord, record_from_probs, validate_prediction_row


class SubprocessBackend:
    def __init__(self, descriptor: BackendDescriptor, label_space: LabelSpace):
        self.descriptor = descriptor
        command = descriptor.config.get("command")
        if not command or not isinstance(command, (list, tuple)):
            raise InvalidConfig(
                f"subprocess backend {descriptor.id!r} needs config key 'command' (argv list)"
            )
        self.command = [str(c) for c in command]
        self.labels = label_space.labels
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    bufsize=1,
                )
            except OSError as exc:
                raise BackendUnavailable(f"cannot start {self.command}: {exc}") from None
        return self._proc

    def predict(self, example: LabeledExample) -> PredictionRecord:
        request = json.dumps(
            {"id": example.id, "payload": example.payload, "labels": list(self.labels)},
            sort_keys=True,
        )
        with self._lock:
            proc = self._ensure_proc()
            try:
                proc.stdin.write(request + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise BackendUnavailable(f"{self.descriptor.id}: worker died ({exc})") from None
        if not line:
            raise BackendUnavailable(f"{self.descriptor.id}: worker closed stdout")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            raise ParseFailure("worker response is not JSON", raw=line) from None
        if isinstance(obj, dict) and "error" in obj:
            raise ParseFailure(f"worker error: {obj['error']}", raw=line)
        try:
            _, ex_id, probs = validate_prediction_row(obj, k=len(self.labels))
        except SchemaError as exc:
            raise ParseFailure(f"worker response violates the wire schema: {exc}", raw=line) from None
        if ex_id != example.id:
            raise ParseFailure(
                f"worker answered for {ex_id!r}, expected {example.id!r}", raw=line
            )
        return record_from_probs(self.descriptor.id, example.id, probs)

    def close(self) -> None:
        with self._lock:
            if self._proc is not None and self._proc.poll() is None:
                self._proc.stdin.close()
                self._proc.terminate()
                try:
                    self._proc.wait(timeout=5)
                except subprocess.TimeoutExpired:
                    self._proc.kill()
            self._proc = None
