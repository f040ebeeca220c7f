"""Labeled classification datasets: JSONL ingestion, split management, and
head/medium/tail class slicing by training-sample count."""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import (
    DuplicateId,
    EmptySplit,
    EmptyTrainSplit,
    InvalidConfig,
    MalformedRecord,
    UnknownLabel,
)

DEFAULT_SCHEMA = {"train": "train.jsonl", "val": "val.jsonl", "test": "test.jsonl"}

SLICES = ("head", "medium", "tail")


@dataclass(frozen=True)
class LabelSpace:
    """Ordered label strings; the position of a label is the integer class
    encoding used by every probability vector in the system."""

    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) < 2:
            raise InvalidConfig(f"need at least 2 labels, got {len(self.labels)}")
        if len(set(self.labels)) != len(self.labels):
            raise InvalidConfig("labels must be unique")

    @property
    def k(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownLabel(label) from None


@dataclass(frozen=True)
class LabeledExample:
    id: str
    payload: str
    gold: int


@dataclass(frozen=True)
class Provenance:
    source: str
    content_hash: str


@dataclass(frozen=True)
class DatasetBundle:
    label_space: LabelSpace
    splits: Mapping[str, tuple[LabeledExample, ...]]
    provenance: Provenance

    def split(self, name: str) -> tuple[LabeledExample, ...]:
        try:
            return self.splits[name]
        except KeyError:
            raise EmptySplit(f"no split named {name!r}") from None

    def example_ids(self, name: str) -> list[str]:
        return [ex.id for ex in self.split(name)]

    def gold_by_id(self, name: str) -> dict[str, int]:
        return {ex.id: ex.gold for ex in self.split(name)}


@dataclass(frozen=True)
class SliceAssignment:
    """head/medium/tail per class index, plus the count cutoffs that produced it."""

    modes: tuple[str, ...]
    t_head: int
    t_tail: int

    def slice_of(self, class_index: int) -> str:
        return self.modes[class_index]


def _parse_record(line: str, line_no: int) -> tuple[str, str, str]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(line_no, f"invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise MalformedRecord(line_no, "record is not a JSON object")
    for key in ("id", "payload", "label"):
        if key not in obj:
            raise MalformedRecord(line_no, f"missing field {key!r}")
        if not isinstance(obj[key], str):
            raise MalformedRecord(line_no, f"field {key!r} must be a string")
    extra = set(obj) - {"id", "payload", "label"}
    if extra:
        raise MalformedRecord(line_no, f"unknown fields {sorted(extra)}")
    return obj["id"], obj["payload"], obj["label"]


def _read_label_file(path: Path) -> tuple[str, ...]:
    labels = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    return tuple(labels)


def load_dataset(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    label_file: str | Path | None = None,
) -> DatasetBundle:
    """Load a JSONL dataset rooted at `path`.

    `schema` maps split names to file names under `path` (defaults to
    train/val/test .jsonl). An optional sidecar label file fixes the label
    order; otherwise labels are indexed in order of first appearance,
    scanning splits in schema order.
    """
    root = Path(path)
    schema = dict(schema or DEFAULT_SCHEMA)
    if not schema:
        raise InvalidConfig("split schema is empty")

    declared: tuple[str, ...] | None = None
    if label_file is not None:
        lf = Path(label_file)
        if not lf.is_absolute():
            lf = root / lf
        declared = _read_label_file(lf)

    hasher = hashlib.sha256()
    raw_splits: dict[str, list[tuple[str, str, str]]] = {}
    seen_ids: dict[str, str] = {}
    inferred: list[str] = []
    inferred_set: set[str] = set()

    if root.is_file() and len(schema) != 1:
        raise InvalidConfig("a single-file dataset path needs a one-split schema")
    if not root.exists():
        raise InvalidConfig(f"dataset path {root} does not exist")

    for split_name, file_name in schema.items():
        fpath = root if root.is_file() else root / file_name
        if not fpath.exists():
            raise EmptySplit(f"{split_name}: {fpath} does not exist")
        data = fpath.read_bytes()
        hasher.update(data)
        records: list[tuple[str, str, str]] = []
        for line_no, line in enumerate(data.decode("utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            ex_id, payload, label = _parse_record(line, line_no)
            if ex_id in seen_ids:
                raise DuplicateId(
                    f"id {ex_id!r} appears in {split_name!r} and {seen_ids[ex_id]!r}"
                )
            seen_ids[ex_id] = split_name
            if declared is None and label not in inferred_set:
                inferred.append(label)
                inferred_set.add(label)
            records.append((ex_id, payload, label))
        if not records:
            raise EmptySplit(f"{split_name}: {fpath} holds no records")
        raw_splits[split_name] = records

    if declared is not None:
        hasher.update("\n".join(declared).encode("utf-8"))
    label_space = LabelSpace(declared if declared is not None else tuple(inferred))

    splits = {
        name: tuple(
            LabeledExample(ex_id, payload, label_space.index(label))
            for ex_id, payload, label in records
        )
        for name, records in raw_splits.items()
    }
    provenance = Provenance(source=str(path), content_hash=hasher.hexdigest())
    return DatasetBundle(label_space=label_space, splits=splits, provenance=provenance)


def save_dataset(
    bundle: DatasetBundle,
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    label_file: str = "labels.txt",
) -> Path:
    """Write `bundle` under directory `path` in the load_dataset layout.
    The sidecar label file is always written so the label order survives."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    schema = dict(schema or DEFAULT_SCHEMA)
    for split_name, file_name in schema.items():
        rows = [
            json.dumps(
                {"id": ex.id, "payload": ex.payload, "label": bundle.label_space.labels[ex.gold]},
                sort_keys=True,
            )
            for ex in bundle.splits.get(split_name, ())
        ]
        (root / file_name).write_text("\n".join(rows) + ("\n" if rows else ""), encoding="utf-8")
    (root / label_file).write_text("\n".join(bundle.label_space.labels) + "\n", encoding="utf-8")
    return root


def class_counts(bundle: DatasetBundle, split: str = "train") -> list[int]:
    counts = Counter(ex.gold for ex in bundle.split(split))
    return [counts.get(i, 0) for i in range(bundle.label_space.k)]


def assign_slices(bundle: DatasetBundle, t_head: int, t_tail: int) -> SliceAssignment:
    """Classify every class as head/medium/tail by its train-split count:
    head if count >= t_head, tail if count <= t_tail, else medium."""
    if not (t_head > t_tail >= 0):
        raise InvalidConfig(f"need t_head > t_tail >= 0, got t_head={t_head} t_tail={t_tail}")
    if "train" not in bundle.splits or not bundle.splits["train"]:
        raise EmptyTrainSplit("slice assignment needs a non-empty train split")
    modes = []
    for count in class_counts(bundle, "train"):
        if count >= t_head:
            modes.append("head")
        elif count <= t_tail:
            modes.append("tail")
        else:
            modes.append("medium")
    return SliceAssignment(modes=tuple(modes), t_head=t_head, t_tail=t_tail)


def tertile_boundaries(bundle: DatasetBundle) -> tuple[int, int]:
    """Default slice cutoffs: tertiles of the sorted class-count sequence.
    Degenerate count distributions need explicit cutoffs instead."""
    counts = sorted(class_counts(bundle, "train"))
    k = len(counts)
    third = max(1, math.ceil(k / 3))
    t_tail = counts[third - 1]
    t_head = counts[k - third]
    if not t_head > t_tail:
        raise InvalidConfig(
            "class counts too uniform for tertile cutoffs; pass explicit t_head/t_tail"
        )
    return t_head, t_tail
