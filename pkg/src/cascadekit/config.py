"""Run configuration: one strict TOML document wiring datasets, backends,
plan, slices, calibration, caching, and output together.

Unknown keys are rejected rather than ignored — a typo in a threshold name
must not silently change an experiment. All relative paths resolve against
the config file's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .backends import BackendDescriptor, BackendRegistry, CostProfile, build_backend
from .backends.http import CACHE_ENV_VAR
from .dataset import DEFAULT_SCHEMA, DatasetBundle, LabelSpace, load_dataset
from .errors import InvalidConfig

_DATASET_KEYS = {"path", "train", "val", "test", "labels"}
_SLICES_KEYS = {"t_head", "t_tail"}
_BACKEND_KEYS = {
    "id", "kind", "layer", "cost",
    # offline
    "path",
    # http
    "endpoint", "model", "template", "max_tokens", "use_logprobs", "max_in_flight",
    # subprocess
    "command",
    # synthetic
    "covered_regions", "in_region_accuracy", "out_region_accuracy", "sharpness", "seed",
}
_COST_KEYS = {"latency_ms_per_call", "memory_mb", "dollars_per_1k_calls"}
_PLAN_KEYS = {"file"}
_CALIBRATION_KEYS = {"grid", "budget"}
_AUGMENT_KEYS = {"task", "variant", "ssm_error_mode"}
_ASSM_KEYS = {"id", "predictions", "command", "provenance", "manifest", "cost"}
_CACHE_KEYS = {"dir"}
_OUTPUT_KEYS = {"dir"}
_RUN_KEYS = {"seed", "split", "jobs", "tau"}
_TOP_KEYS = {
    "dataset", "slices", "backend", "plan", "calibration",
    "augment", "assm", "cache", "output", "run",
}


def _check_keys(table: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise InvalidConfig(f"unknown keys {sorted(unknown)} in {where}")


@dataclass(frozen=True)
class AssmEntry:
    id: str
    provenance: str
    manifest: Path
    predictions: Path | None
    command: list[str] | None
    cost: CostProfile


@dataclass(frozen=True)
class RunConfig:
    base_dir: Path
    dataset_path: Path | None
    dataset_schema: dict[str, str]
    label_file: str | None
    slice_bounds: tuple[int, int] | None
    backends: tuple[BackendDescriptor, ...]
    plan_file: Path | None
    calibration_grid: tuple[float, ...]
    calibration_budget: float | None
    augment_task: str
    augment_variant: str
    ssm_error_mode: str
    assm_entries: tuple[AssmEntry, ...] = ()
    cache_dir: Path | None = None
    output_dir: Path = Path("out")
    seed: int = 0
    split: str = "test"
    jobs: int = 1
    tau: float | None = None


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def _cost_from(table: Mapping[str, Any], where: str) -> CostProfile:
    cost_tbl = table.get("cost", {})
    _check_keys(cost_tbl, _COST_KEYS, f"{where}.cost")
    return CostProfile(
        latency_ms_per_call=float(cost_tbl.get("latency_ms_per_call", 0.0)),
        memory_mb=float(cost_tbl.get("memory_mb", 0.0)),
        dollars_per_1k_calls=float(cost_tbl.get("dollars_per_1k_calls", 0.0)),
    )


def _backend_from(table: Mapping[str, Any], base: Path, default_seed: int) -> BackendDescriptor:
    _check_keys(table, _BACKEND_KEYS, "[[backend]]")
    for key in ("id", "kind", "layer"):
        if key not in table:
            raise InvalidConfig(f"[[backend]] entry missing {key!r}")
    kind = table["kind"]
    cfg: dict[str, Any] = {}
    if kind == "offline":
        if "path" not in table:
            raise InvalidConfig(f"offline backend {table['id']!r} needs 'path'")
        cfg["path"] = str(_resolve(base, table["path"]))
    elif kind == "http":
        for key in ("endpoint", "model", "template"):
            if key not in table:
                raise InvalidConfig(f"http backend {table['id']!r} needs {key!r}")
            cfg[key] = table[key]
        cfg["max_tokens"] = int(table.get("max_tokens", 16))
        cfg["use_logprobs"] = bool(table.get("use_logprobs", False))
    elif kind == "subprocess":
        if "command" not in table:
            raise InvalidConfig(f"subprocess backend {table['id']!r} needs 'command'")
        cfg["command"] = [str(c) for c in table["command"]]
    elif kind == "synthetic":
        for key in ("covered_regions", "in_region_accuracy", "out_region_accuracy"):
            if key not in table:
                raise InvalidConfig(f"synthetic backend {table['id']!r} needs {key!r}")
        cfg["covered_regions"] = [str(r) for r in table["covered_regions"]]
        cfg["in_region_accuracy"] = float(table["in_region_accuracy"])
        cfg["out_region_accuracy"] = float(table["out_region_accuracy"])
        cfg["sharpness"] = float(table.get("sharpness", 4.0))
        cfg["seed"] = int(table.get("seed", default_seed))
    else:
        raise InvalidConfig(f"backend {table['id']!r}: unknown kind {kind!r}")

    capacity = None
    if kind == "http":
        capacity = int(table.get("max_in_flight", 4))
    elif kind == "subprocess":
        capacity = 1
    return BackendDescriptor(
        id=table["id"],
        kind=kind,
        layer=table["layer"],
        config=cfg,
        cost=_cost_from(table, f"backend {table['id']!r}"),
        opaque_confidence=(kind == "http" and not cfg.get("use_logprobs", False)),
        capacity=capacity,
    )


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Parse a run config. `overrides` replaces [run] values (tau, seed,
    split, jobs) before anything that depends on them is built — CLI flags
    go through here."""
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    base = path.parent.resolve()
    _check_keys(doc, _TOP_KEYS, "config")

    run_tbl = dict(doc.get("run", {}))
    if overrides:
        unknown = set(overrides) - _RUN_KEYS
        if unknown:
            raise InvalidConfig(f"unknown run overrides {sorted(unknown)}")
        run_tbl.update(overrides)
    _check_keys(run_tbl, _RUN_KEYS, "[run]")
    seed = int(run_tbl.get("seed", 0))

    dataset_tbl = doc.get("dataset", {})
    _check_keys(dataset_tbl, _DATASET_KEYS, "[dataset]")
    dataset_path = _resolve(base, dataset_tbl["path"]) if "path" in dataset_tbl else None
    schema = {
        split: dataset_tbl.get(split, DEFAULT_SCHEMA[split])
        for split in ("train", "val", "test")
    }

    slices_tbl = doc.get("slices", {})
    _check_keys(slices_tbl, _SLICES_KEYS, "[slices]")
    slice_bounds = None
    if slices_tbl:
        if set(slices_tbl) != _SLICES_KEYS:
            raise InvalidConfig("[slices] needs both t_head and t_tail")
        slice_bounds = (int(slices_tbl["t_head"]), int(slices_tbl["t_tail"]))

    backends = tuple(
        _backend_from(tbl, base, seed) for tbl in doc.get("backend", [])
    )
    ids = [b.id for b in backends]
    if len(set(ids)) != len(ids):
        raise InvalidConfig(f"duplicate backend ids in config: {ids}")

    plan_tbl = doc.get("plan", {})
    _check_keys(plan_tbl, _PLAN_KEYS, "[plan]")
    plan_file = _resolve(base, plan_tbl["file"]) if "file" in plan_tbl else None

    cal_tbl = doc.get("calibration", {})
    _check_keys(cal_tbl, _CALIBRATION_KEYS, "[calibration]")
    grid = tuple(float(t) for t in cal_tbl.get("grid", ()))
    budget = float(cal_tbl["budget"]) if "budget" in cal_tbl else None

    aug_tbl = doc.get("augment", {})
    _check_keys(aug_tbl, _AUGMENT_KEYS, "[augment]")
    mode = aug_tbl.get("ssm_error_mode", "routed")
    if mode not in ("routed", "all_wrong"):
        raise InvalidConfig(f"[augment] ssm_error_mode must be routed|all_wrong, got {mode!r}")
    variant = aug_tbl.get("variant", "ea")
    if variant not in ("ea", "ea_full"):
        raise InvalidConfig(f"[augment] variant must be ea|ea_full, got {variant!r}")

    assm_entries = []
    for tbl in doc.get("assm", []):
        _check_keys(tbl, _ASSM_KEYS, "[[assm]]")
        for key in ("id", "provenance", "manifest"):
            if key not in tbl:
                raise InvalidConfig(f"[[assm]] entry missing {key!r}")
        if ("predictions" in tbl) == ("command" in tbl):
            raise InvalidConfig("[[assm]] needs exactly one of 'predictions' or 'command'")
        assm_entries.append(
            AssmEntry(
                id=tbl["id"],
                provenance=tbl["provenance"],
                manifest=_resolve(base, tbl["manifest"]),
                predictions=_resolve(base, tbl["predictions"]) if "predictions" in tbl else None,
                command=[str(c) for c in tbl["command"]] if "command" in tbl else None,
                cost=_cost_from(tbl, "[[assm]]"),
            )
        )

    output_tbl = doc.get("output", {})
    _check_keys(output_tbl, _OUTPUT_KEYS, "[output]")
    output_dir = _resolve(base, output_tbl.get("dir", "out"))

    # caching is always on for HTTP backends: reruns must be free and
    # offline-reproducible
    cache_tbl = doc.get("cache", {})
    _check_keys(cache_tbl, _CACHE_KEYS, "[cache]")
    if "dir" in cache_tbl:
        cache_dir = _resolve(base, cache_tbl["dir"])
    elif os.environ.get(CACHE_ENV_VAR):
        cache_dir = Path(os.environ[CACHE_ENV_VAR])
    else:
        cache_dir = output_dir / "cache"

    return RunConfig(
        base_dir=base,
        dataset_path=dataset_path,
        dataset_schema=schema,
        label_file=dataset_tbl.get("labels"),
        slice_bounds=slice_bounds,
        backends=backends,
        plan_file=plan_file,
        calibration_grid=grid,
        calibration_budget=budget,
        augment_task=aug_tbl.get("task", "task"),
        augment_variant=variant,
        ssm_error_mode=mode,
        assm_entries=tuple(assm_entries),
        cache_dir=cache_dir,
        output_dir=output_dir,
        seed=seed,
        split=run_tbl.get("split", "test"),
        jobs=int(run_tbl.get("jobs", 1)),
        tau=float(run_tbl["tau"]) if "tau" in run_tbl else None,
    )


def load_bundle(config: RunConfig) -> DatasetBundle:
    if config.dataset_path is None:
        raise InvalidConfig("config has no [dataset] path")
    return load_dataset(config.dataset_path, config.dataset_schema, config.label_file)


def build_registry(config: RunConfig, label_space: LabelSpace) -> BackendRegistry:
    """Instantiate every configured backend (declared order = registration
    order), then attach validated augmented models."""
    from .augment import register_augmented_model

    registry = BackendRegistry()
    for descriptor in config.backends:
        registry.register(build_backend(descriptor, label_space, cache_dir=config.cache_dir))
    for entry in config.assm_entries:
        register_augmented_model(
            registry,
            backend_id=entry.id,
            provenance=entry.provenance,
            manifest_path=entry.manifest,
            label_space=label_space,
            predictions_path=entry.predictions,
            command=entry.command,
            cost=entry.cost,
        )
    return registry
