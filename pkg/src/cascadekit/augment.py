"""Train-set partitioning for targeted augmentation.

The underfitted set is the exact intersection of the specific stages' errors
with the large model's errors; everything else is fitted. The large model
only has to be re-evaluated on the specific stages' errors, which is what
keeps the targeted variant cheap. The full variant instead takes every
example the large model gets wrong.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .backends import (
    BackendDescriptor,
    BackendRegistry,
    CostProfile,
    OfflineBackend,
    PredictionRecord,
    SubprocessBackend,
)
from .dataset import DatasetBundle, LabeledExample, LabelSpace
from .errors import (
    InconsistentLabelSpace,
    InvalidConfig,
    MissingPrediction,
    ProvenanceMismatch,
    SchemaError,
)

VARIANTS = ("ea", "ea_full")


class EmptyManifestWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PartitionResult:
    underfitted_ids: frozenset[str]
    fitted_ids: frozenset[str]
    ssm_error_ids: frozenset[str]
    lm_error_ids: frozenset[str]


@dataclass(frozen=True)
class TrainingManifest:
    task: str
    variant: str
    label_space: LabelSpace
    examples: tuple[LabeledExample, ...]
    partition_hash: str
    plan_hash: str


def _check_record(record: PredictionRecord, k: int) -> None:
    if len(record.probs) != k:
        raise InconsistentLabelSpace(
            f"prediction for {record.example_id!r} has {len(record.probs)} classes, expected {k}"
        )


def _partition_from_errors(
    ssm_errors: set[str],
    lm_records: Mapping[str, PredictionRecord],
    bundle: DatasetBundle,
    split: str,
) -> PartitionResult:
    k = bundle.label_space.k
    gold = bundle.gold_by_id(split)
    missing = ssm_errors - set(lm_records)
    if missing:
        raise MissingPrediction(
            f"large model must be re-evaluated on {len(missing)} specific-stage errors, "
            f"e.g. {sorted(missing)[:3]}"
        )
    lm_errors: set[str] = set()
    for ex_id, record in lm_records.items():
        if ex_id not in gold:
            continue
        _check_record(record, k)
        if record.predicted != gold[ex_id]:
            lm_errors.add(ex_id)
    underfitted = frozenset(ssm_errors & lm_errors)
    return PartitionResult(
        underfitted_ids=underfitted,
        fitted_ids=frozenset(gold) - underfitted,
        ssm_error_ids=frozenset(ssm_errors),
        lm_error_ids=frozenset(lm_errors),
    )


def partition_training_data(
    ssm_records: Mapping[str, PredictionRecord],
    lm_records: Mapping[str, PredictionRecord],
    bundle: DatasetBundle,
    split: str = "train",
) -> PartitionResult:
    """Split `split` into underfitted (both the specific-stage label and the
    large model wrong) and fitted (either right). `lm_records` must cover the
    specific stages' errors; any further large-model predictions are scored
    into lm_error_ids but cannot change the underfitted set."""
    k = bundle.label_space.k
    gold = bundle.gold_by_id(split)
    if not gold:
        raise InvalidConfig(f"split {split!r} is empty")
    ssm_errors: set[str] = set()
    for ex_id, y in gold.items():
        record = ssm_records.get(ex_id)
        if record is None:
            raise MissingPrediction(f"no specific-stage label for {ex_id!r}")
        _check_record(record, k)
        if record.predicted != y:
            ssm_errors.add(ex_id)
    return _partition_from_errors(ssm_errors, lm_records, bundle, split)


def partition_conjunctive(
    records_by_backend: Mapping[str, Mapping[str, PredictionRecord]],
    lm_records: Mapping[str, PredictionRecord],
    bundle: DatasetBundle,
    split: str = "train",
) -> PartitionResult:
    """Variant behind the `all_wrong` flag: an example counts as a
    specific-stage error only when every specific model gets it wrong."""
    if not records_by_backend:
        raise InvalidConfig("need predictions from at least one specific model")
    k = bundle.label_space.k
    gold = bundle.gold_by_id(split)
    if not gold:
        raise InvalidConfig(f"split {split!r} is empty")
    ssm_errors: set[str] = set()
    for ex_id, y in gold.items():
        wrong_everywhere = True
        for backend_id, records in records_by_backend.items():
            record = records.get(ex_id)
            if record is None:
                raise MissingPrediction(f"backend {backend_id!r} lacks {ex_id!r}")
            _check_record(record, k)
            if record.predicted == y:
                wrong_everywhere = False
        if wrong_everywhere:
            ssm_errors.add(ex_id)
    return _partition_from_errors(ssm_errors, lm_records, bundle, split)


def partition_full(
    lm_records: Mapping[str, PredictionRecord],
    bundle: DatasetBundle,
    split: str = "train",
) -> frozenset[str]:
    """Every example of the split the large model labels incorrectly."""
    gold = bundle.gold_by_id(split)
    errors = set()
    for ex_id, y in gold.items():
        record = lm_records.get(ex_id)
        if record is None:
            raise MissingPrediction(f"no large-model prediction for {ex_id!r}")
        if record.predicted != y:
            errors.add(ex_id)
    return frozenset(errors)


def partition_hash(partition: PartitionResult, bundle: DatasetBundle) -> str:
    doc = {
        "underfitted": sorted(partition.underfitted_ids),
        "fitted": sorted(partition.fitted_ids),
        "dataset": bundle.provenance.content_hash,
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()


def _manifest_header(manifest: TrainingManifest) -> str:
    return json.dumps(
        {
            "task": manifest.task,
            "variant": manifest.variant,
            "label_space": list(manifest.label_space.labels),
            "partition_hash": manifest.partition_hash,
            "plan_hash": manifest.plan_hash,
        },
        sort_keys=True,
    )


def manifest_provenance(header_line: str) -> str:
    """Provenance hash that ties trained models back to the manifest that
    produced them: the hash of the header line."""
    return hashlib.sha256(header_line.strip().encode("utf-8")).hexdigest()


def build_manifest(
    partition: PartitionResult,
    bundle: DatasetBundle,
    variant: str,
    task: str,
    plan_hash_value: str,
    split: str = "train",
    lm_full_error_ids: frozenset[str] | None = None,
) -> TrainingManifest:
    if variant not in VARIANTS:
        raise InvalidConfig(f"variant must be one of {VARIANTS}, got {variant!r}")
    if variant == "ea":
        ids = partition.underfitted_ids
    else:
        ids = lm_full_error_ids if lm_full_error_ids is not None else partition.lm_error_ids
    by_id = {ex.id: ex for ex in bundle.split(split)}
    examples = tuple(by_id[i] for i in sorted(ids))
    return TrainingManifest(
        task=task,
        variant=variant,
        label_space=bundle.label_space,
        examples=examples,
        partition_hash=partition_hash(partition, bundle),
        plan_hash=plan_hash_value,
    )


def export_training_manifest(manifest: TrainingManifest, path: str | Path) -> tuple[Path, str]:
    """Write header line + one example row per line (ascending id, which
    build_manifest already guarantees). Returns (path, provenance hash).
    An empty manifest is legitimate — a perfectly fitted task — so it is
    still written, with a warning."""
    if not manifest.examples:
        warnings.warn(
            f"manifest for task {manifest.task!r} ({manifest.variant}) is empty",
            EmptyManifestWarning,
        )
    header = _manifest_header(manifest)
    rows = [
        json.dumps(
            {
                "id": ex.id,
                "payload": ex.payload,
                "label": manifest.label_space.labels[ex.gold],
            },
            sort_keys=True,
        )
        for ex in manifest.examples
    ]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")
    return path, manifest_provenance(header)


def load_manifest(path: str | Path) -> tuple[TrainingManifest, str]:
    """Read a manifest file back; returns (manifest, provenance hash)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty manifest file")
    try:
        header = json.loads(lines[0])
        labels = LabelSpace(tuple(header["label_space"]))
        examples = []
        for line in lines[1:]:
            if not line.strip():
                continue
            row = json.loads(line)
            examples.append(
                LabeledExample(row["id"], row["payload"], labels.index(row["label"]))
            )
        manifest = TrainingManifest(
            task=header["task"],
            variant=header["variant"],
            label_space=labels,
            examples=tuple(examples),
            partition_hash=header["partition_hash"],
            plan_hash=header["plan_hash"],
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: bad manifest ({exc})") from None
    return manifest, manifest_provenance(lines[0])


def register_augmented_model(
    registry: BackendRegistry,
    backend_id: str,
    provenance: str,
    manifest_path: str | Path,
    label_space: LabelSpace,
    predictions_path: str | Path | None = None,
    command: list[str] | None = None,
    cost: CostProfile | None = None,
) -> BackendDescriptor:
    """Attach a trained augmented model to the registry, either as an offline
    prediction matrix or a subprocess worker. The provenance hash must match
    the manifest the model was trained from."""
    _, expected = load_manifest(manifest_path)
    if provenance != expected:
        raise ProvenanceMismatch(
            f"provenance {provenance[:12]}... does not match manifest {expected[:12]}..."
        )
    if (predictions_path is None) == (command is None):
        raise InvalidConfig("give exactly one of predictions_path or command")
    if predictions_path is not None:
        descriptor = BackendDescriptor(
            id=backend_id,
            kind="offline",
            layer="augmented",
            config={"path": str(predictions_path)},
            cost=cost or CostProfile(),
        )
        registry.register(OfflineBackend(descriptor, k=label_space.k))
    else:
        descriptor = BackendDescriptor(
            id=backend_id,
            kind="subprocess",
            layer="augmented",
            config={"command": command},
            cost=cost or CostProfile(),
        )
        registry.register(SubprocessBackend(descriptor, label_space))
    return descriptor
