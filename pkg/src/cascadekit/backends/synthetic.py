"""Synthetic oracle backend: a model whose per-region accuracy and confidence
behavior are dialed in by a profile, with counter-based draws so prediction
streams are identical across runs and thread schedules."""

from __future__ import annotations

from dataclasses import dataclass

from .. import _rng
from ..dataset import LabeledExample
from ..errors import InvalidConfig, MissingRegionTag
from .base import BackendDescriptor, PredictionRecord, record_from_probs

REGION_PREFIX = "region:"


def region_of(payload: str) -> str:
    """Region tag carried in the payload, e.g. "region:2" or "region:2|...".
    Only synthetic backends interpret payloads this way."""
    if not payload.startswith(REGION_PREFIX):
        raise MissingRegionTag(f"payload {payload!r} carries no region tag")
    return payload[len(REGION_PREFIX):].split("|", 1)[0]


@dataclass(frozen=True)
class SyntheticProfile:
    """Accuracy inside/outside the regions this model covers, plus a
    sharpness controlling how peaked its confidences are."""

    covered_regions: frozenset[str]
    in_region_accuracy: float
    out_region_accuracy: float
    sharpness: float

    def __post_init__(self):
        for name in ("in_region_accuracy", "out_region_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{name}={v} outside [0, 1]")
        if self.in_region_accuracy < self.out_region_accuracy:
            raise InvalidConfig("in_region_accuracy must be >= out_region_accuracy")
        if self.sharpness <= 0:
            raise InvalidConfig("sharpness must be positive")


def synthetic_predict(
    profile: SyntheticProfile,
    backend_id: str,
    example: LabeledExample,
    k: int,
    seed: int,
) -> PredictionRecord:
    """Draw a prediction: correct with the region-appropriate accuracy,
    otherwise a uniformly wrong label; confidence peaks harder in covered
    regions. Pure function of (profile, backend_id, example.id, seed)."""
    region = region_of(example.payload)
    acc = (
        profile.in_region_accuracy
        if region in profile.covered_regions
        else profile.out_region_accuracy
    )
    if _rng.unit(seed, backend_id, example.id, "correct") < acc:
        predicted = example.gold
    else:
        slot = _rng.integer(seed, k - 1, backend_id, example.id, "wrong")
        predicted = slot if slot < example.gold else slot + 1

    # Peak mass grows with both the regional accuracy and the sharpness;
    # the floor keeps the argmax strict so the record's tie-break never
    # disagrees with the drawn label.
    g = _rng.unit(seed, backend_id, example.id, "conf") ** (1.0 / profile.sharpness)
    peak = 1.0 / k + (1.0 - 1.0 / k) * max(acc, 1e-6) * g
    rest = (1.0 - peak) / (k - 1)
    probs = [rest] * k
    probs[predicted] = peak
    return record_from_probs(backend_id, example.id, probs)


class SyntheticBackend:
    def __init__(self, descriptor: BackendDescriptor, profile: SyntheticProfile, k: int, seed: int):
        self.descriptor = descriptor
        self.profile = profile
        self.k = k
        self.seed = seed

    def predict(self, example: LabeledExample) -> PredictionRecord:
        return synthetic_predict(self.profile, self.descriptor.id, example, self.k, self.seed)
