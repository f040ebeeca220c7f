"""Uniform prediction interface over offline matrices, HTTP APIs,
subprocess workers, and synthetic oracles."""

from __future__ import annotations

from pathlib import Path

from ..dataset import LabelSpace
from ..errors import InvalidConfig
from .base import (
    Backend,
    BackendDescriptor,
    BackendRegistry,
    CostProfile,
    PredictionRecord,
    argmax_lowest,
    confidence,
    prediction_row,
    record_from_probs,
    softmax,
    validate_prediction_row,
)
from .http import HttpBackend
from .offline import OfflineBackend, load_prediction_matrix, write_prediction_matrix
from .subproc import SubprocessBackend
from .synthetic import SyntheticBackend, SyntheticProfile, region_of, synthetic_predict

__all__ = [
    "Backend",
    "BackendDescriptor",
    "BackendRegistry",
    "CostProfile",
    "HttpBackend",
    "OfflineBackend",
    "PredictionRecord",
    "SubprocessBackend",
    "SyntheticBackend",
    "SyntheticProfile",
    "argmax_lowest",
    "build_backend",
    "confidence",
    "load_prediction_matrix",
    "prediction_row",
    "record_from_probs",
    "region_of",
    "softmax",
    "synthetic_predict",
    "validate_prediction_row",
    "write_prediction_matrix",
]


def build_backend(
    descriptor: BackendDescriptor,
    label_space: LabelSpace,
    cache_dir: str | Path | None = None,
) -> Backend:
    """Instantiate the runtime for a descriptor."""
    if descriptor.kind == "offline":
        return OfflineBackend(descriptor, k=label_space.k)
    if descriptor.kind == "http":
        return HttpBackend(descriptor, label_space, cache_dir=cache_dir)
    if descriptor.kind == "subprocess":
        return SubprocessBackend(descriptor, label_space)
    if descriptor.kind == "synthetic":
        cfg = descriptor.config
        try:
            profile = SyntheticProfile(
                covered_regions=frozenset(str(r) for r in cfg["covered_regions"]),
                in_region_accuracy=float(cfg["in_region_accuracy"]),
                out_region_accuracy=float(cfg["out_region_accuracy"]),
                sharpness=float(cfg.get("sharpness", 4.0)),
            )
            seed = int(cfg["seed"])
        except KeyError as exc:
            raise InvalidConfig(
                f"synthetic backend {descriptor.id!r} missing config key {exc}"
            ) from None
        return SyntheticBackend(descriptor, profile, k=label_space.k, seed=seed)
    raise InvalidConfig(f"unknown backend kind {descriptor.kind!r}")
