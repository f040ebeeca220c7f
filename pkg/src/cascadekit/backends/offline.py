"""Offline backend: predictions precomputed into a JSONL matrix on disk."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from ..dataset import LabeledExample
from ..errors import MissingPrediction, SchemaError
from .base import (
    BackendDescriptor,
    PredictionRecord,
    prediction_row,
    record_from_probs,
    validate_prediction_row,
)


def load_prediction_matrix(path: str | Path, backend_id: str, k: int | None = None) -> dict[str, tuple[float, ...]]:
    """Read the rows of `path` belonging to `backend_id`. Files may mix rows
    from several backends; rows for other ids are skipped, but every row must
    be schema-valid."""
    matrix: dict[str, tuple[float, ...]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{line_no}: invalid JSON ({exc.msg})") from None
            try:
                bid, ex_id, probs = validate_prediction_row(obj, k=k)
            except SchemaError as exc:
                raise SchemaError(f"{path}:{line_no}: {exc}") from None
            if bid != backend_id:
                continue
            if ex_id in matrix:
                raise SchemaError(f"{path}:{line_no}: duplicate prediction for {ex_id!r}")
            matrix[ex_id] = probs
    if not matrix:
        raise SchemaError(f"{path}: no prediction rows for backend {backend_id!r}")
    return matrix


def write_prediction_matrix(path: str | Path, records: Iterable[PredictionRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(prediction_row(record) + "\n")
    return path


class OfflineBackend:
    def __init__(self, descriptor: BackendDescriptor, k: int | None = None):
        self.descriptor = descriptor
        path = descriptor.config.get("path")
        if not path:
            raise SchemaError(f"offline backend {descriptor.id!r} needs config key 'path'")
        self._matrix = load_prediction_matrix(path, descriptor.id, k=k)

    def predict(self, example: LabeledExample) -> PredictionRecord:
        probs = self._matrix.get(example.id)
        if probs is None:
            raise MissingPrediction(
                f"backend {self.descriptor.id!r} has no prediction for {example.id!r}"
            )
        return record_from_probs(self.descriptor.id, example.id, probs)
