"""Shared backend machinery: probability-vector math, the prediction record
every backend kind emits, descriptors, and the registry."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping, Protocol, Sequence

import numpy as np

from ..dataset import LabeledExample
from ..errors import (
    DuplicateBackend,
    InvalidConfig,
    InvalidDistribution,
    NonFiniteInput,
    SchemaError,
)

KINDS = ("offline", "http", "subprocess", "synthetic")
LAYERS = ("specific", "large", "augmented")

SIMPLEX_TOL = 1e-9


def softmax(logits: Sequence[float]) -> list[float]:
    """Numerically stable softmax: shift by the max before exponentiating."""
    arr = np.asarray(logits, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError("softmax needs a flat vector of at least 2 logits")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"non-finite logits: {logits!r}")
    shifted = np.exp(arr - arr.max())
    return list(shifted / shifted.sum())


def confidence(probs: Sequence[float]) -> float:
    """Max entry of a probability vector; validates the vector first."""
    arr = np.asarray(probs, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise InvalidDistribution("need a flat vector of at least 2 probabilities")
    if not np.all(np.isfinite(arr)):
        raise InvalidDistribution(f"non-finite entries: {probs!r}")
    if np.any(arr < 0):
        raise InvalidDistribution(f"negative entry in {probs!r}")
    if abs(float(arr.sum()) - 1.0) > 1e-6:
        raise InvalidDistribution(f"probabilities sum to {arr.sum()!r}, not 1")
    return float(arr.max())


def argmax_lowest(probs: Sequence[float]) -> int:
    """Index of the max entry; ties go to the lowest index."""
    best, best_p = 0, probs[0]
    for i, p in enumerate(probs):
        if p > best_p:
            best, best_p = i, p
    return best


@dataclass(frozen=True)
class PredictionRecord:
    backend_id: str
    example_id: str
    probs: tuple[float, ...]
    confidence: float
    predicted: int


def record_from_probs(backend_id: str, example_id: str, probs: Sequence[float]) -> PredictionRecord:
    """Build a PredictionRecord, deriving confidence and the tie-broken argmax."""
    tup = tuple(float(p) for p in probs)
    conf = confidence(tup)
    return PredictionRecord(
        backend_id=backend_id,
        example_id=example_id,
        probs=tup,
        confidence=conf,
        predicted=argmax_lowest(tup),
    )


@dataclass(frozen=True)
class CostProfile:
    latency_ms_per_call: float = 0.0
    memory_mb: float = 0.0
    dollars_per_1k_calls: float = 0.0

    @property
    def dollars_per_call(self) -> float:
        return self.dollars_per_1k_calls / 1000.0


@dataclass(frozen=True)
class BackendDescriptor:
    """A model the router can consult. `config` is kind-specific and opaque
    to everything except the backend implementation for that kind."""

    id: str
    kind: str
    layer: str
    config: Mapping[str, Any] = field(default_factory=dict)
    cost: CostProfile = field(default_factory=CostProfile)
    opaque_confidence: bool = False
    capacity: int | None = None  # max concurrent calls; None = unlimited

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfig(f"unknown backend kind {self.kind!r}")
        if self.layer not in LAYERS:
            raise InvalidConfig(f"unknown backend layer {self.layer!r}")


class Backend(Protocol):
    descriptor: BackendDescriptor

    def predict(self, example: LabeledExample) -> PredictionRecord: ...


class BackendRegistry:
    """Insertion-ordered backend store; registration order is the tie-break
    authority for ranking."""

    def __init__(self):
        self._backends: dict[str, Backend] = {}

    def register(self, backend: Backend) -> None:
        bid = backend.descriptor.id
        if bid in self._backends:
            raise DuplicateBackend(bid)
        self._backends[bid] = backend

    def get(self, backend_id: str) -> Backend:
        try:
            return self._backends[backend_id]
        except KeyError:
            raise InvalidConfig(f"backend {backend_id!r} is not registered") from None

    def __contains__(self, backend_id: str) -> bool:
        return backend_id in self._backends

    def __iter__(self) -> Iterator[Backend]:
        return iter(self._backends.values())

    def ids(self) -> list[str]:
        return list(self._backends)

    def registration_index(self, backend_id: str) -> int:
        try:
            return list(self._backends).index(backend_id)
        except ValueError:
            raise InvalidConfig(f"backend {backend_id!r} is not registered") from None

    def close(self) -> None:
        for backend in self._backends.values():
            closer = getattr(backend, "close", None)
            if closer is not None:
                closer()


def validate_prediction_row(obj: Any, k: int | None = None) -> tuple[str, str, tuple[float, ...]]:
    """Validate one offline-predictions wire row:
    {"backend_id": str, "example_id": str, "probs": [float, ...]}."""
    if not isinstance(obj, dict):
        raise SchemaError("prediction row is not a JSON object")
    expected = {"backend_id", "example_id", "probs"}
    if set(obj) != expected:
        raise SchemaError(f"prediction row keys {sorted(obj)} != {sorted(expected)}")
    if not isinstance(obj["backend_id"], str) or not isinstance(obj["example_id"], str):
        raise SchemaError("backend_id and example_id must be strings")
    probs = obj["probs"]
    if not isinstance(probs, list) or len(probs) < 2:
        raise SchemaError("probs must be a list of at least 2 numbers")
    out = []
    for p in probs:
        if isinstance(p, bool) or not isinstance(p, (int, float)) or not math.isfinite(p):
            raise SchemaError(f"probs entry {p!r} is not a finite number")
        if p < 0.0 or p > 1.0:
            raise SchemaError(f"probs entry {p!r} outside [0, 1]")
        out.append(float(p))
    if k is not None and len(out) != k:
        raise SchemaError(f"probs length {len(out)} != label-space size {k}")
    if abs(sum(out) - 1.0) > SIMPLEX_TOL:
        raise SchemaError(f"probs sum {sum(out)!r} deviates from 1 by more than {SIMPLEX_TOL}")
    return obj["backend_id"], obj["example_id"], tuple(out)


def prediction_row(record: PredictionRecord) -> str:
    """Serialize a record to the offline-predictions wire row."""
    return json.dumps(
        {
            "backend_id": record.backend_id,
            "example_id": record.example_id,
            "probs": list(record.probs),
        },
        sort_keys=True,
    )
