from __future__ import annotations

import json

import pytest

from cascadekit.backends import BackendDescriptor, BackendRegistry, record_from_probs
from cascadekit.dataset import load_dataset


def write_jsonl(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(json.dumps(r, sort_keys=True) for r in rows) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def tiny_bundle(tmp_path):
    """Two labels, three splits, six examples."""
    data = tmp_path / "data"
    write_jsonl(data / "train.jsonl", [
        {"id": "t1", "payload": "aa", "label": "pos"},
        {"id": "t2", "payload": "bb", "label": "neg"},
        {"id": "t3", "payload": "cc", "label": "pos"},
    ])
    write_jsonl(data / "val.jsonl", [
        {"id": "v1", "payload": "dd", "label": "neg"},
        {"id": "v2", "payload": "ee", "label": "pos"},
    ])
    write_jsonl(data / "test.jsonl", [
        {"id": "x1", "payload": "ff", "label": "neg"},
    ])
    return load_dataset(data)


class TableBackend:
    """In-memory offline-style backend for handcrafted fixtures."""

    def __init__(self, backend_id, probs_by_id, layer="specific", cost=None, opaque=False):
        from cascadekit.backends import CostProfile

        self.descriptor = BackendDescriptor(
            id=backend_id,
            kind="offline",
            layer=layer,
            config={},
            cost=cost or CostProfile(),
            opaque_confidence=opaque,
        )
        self._probs = dict(probs_by_id)

    def predict(self, example):
        from cascadekit.errors import MissingPrediction

        if example.id not in self._probs:
            raise MissingPrediction(example.id)
        return record_from_probs(self.descriptor.id, example.id, self._probs[example.id])


def make_registry(*backends):
    registry = BackendRegistry()
    for backend in backends:
        registry.register(backend)
    return registry
