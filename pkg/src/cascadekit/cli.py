"""Single entry point driving the whole workflow: ingest, eval-backend,
rank, calibrate, route, partition, export-manifest, register-assm, report,
simulate. Every subcommand writes its artifacts under the configured output
directory, prints a one-line summary (or JSON with --json), and is
idempotent given identical inputs and caches.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import augment as aug
from . import metrics as met
from . import router as rt
from .backends import BackendRegistry, write_prediction_matrix
from .config import RunConfig, build_registry, load_bundle, load_config
from .dataset import assign_slices, save_dataset, tertile_boundaries
from .errors import CascadeError, InvalidConfig
from .simulator import (
    PRESETS,
    generate_world,
    preset_config,
    world_config_from_dict,
    world_config_to_toml,
)


def _write_json(path: Path, doc: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def _summary(args, text: str, **fields) -> None:
    if args.json:
        print(json.dumps({"ok": True, **fields}, sort_keys=True))
    else:
        print(text)


def _load(args) -> RunConfig:
    overrides = {}
    for key in ("seed", "split", "jobs", "tau"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides=overrides)


def _slices_for(config: RunConfig, bundle):
    if config.slice_bounds is None:
        return None
    t_head, t_tail = config.slice_bounds
    return assign_slices(bundle, t_head, t_tail)


def _plan_for(args, config: RunConfig) -> rt.CascadePlan:
    plan_file = getattr(args, "plan", None) or config.plan_file
    if plan_file is None:
        raise InvalidConfig("no plan: pass --plan or set [plan] file in the config")
    plan = rt.load_plan_toml(plan_file)
    if config.tau is not None:
        plan = plan.with_global_tau(config.tau)
    return plan


def _evaluate_layer(config: RunConfig, registry: BackendRegistry, bundle, split: str, layer: str):
    evals = []
    for descriptor in config.backends:
        if descriptor.layer != layer:
            continue
        evals.append(rt.evaluate_backend(registry.get(descriptor.id), bundle, split))
    return evals


def _unique_large(config: RunConfig) -> str:
    large = [b.id for b in config.backends if b.layer == "large"]
    if len(large) != 1:
        raise InvalidConfig(f"need exactly one large-layer backend, found {large}")
    return large[0]


# -- subcommands -------------------------------------------------------------

def cmd_ingest(args) -> None:
    config = _load(args)
    bundle = load_bundle(config)
    doc = {
        "k": bundle.label_space.k,
        "labels": list(bundle.label_space.labels),
        "splits": {name: len(exs) for name, exs in bundle.splits.items()},
        "dataset_hash": bundle.provenance.content_hash,
        "source": str(config.dataset_path),
    }
    path = _write_json(config.output_dir / "ingest.json", doc)
    _summary(
        args,
        f"ingested {sum(doc['splits'].values())} examples, K={doc['k']} -> {path}",
        artifact=str(path),
        **doc,
    )


def cmd_eval_backend(args) -> None:
    config = _load(args)
    bundle = load_bundle(config)
    registry = build_registry(config, bundle.label_space)
    evaluation = rt.evaluate_backend(registry.get(args.backend), bundle, config.split)
    doc = {
        "backend_id": evaluation.backend_id,
        "split": evaluation.split,
        "accuracy": evaluation.accuracy,
        "n": evaluation.n,
        "provenance": {"dataset_hash": bundle.provenance.content_hash, "seed": config.seed},
    }
    path = _write_json(config.output_dir / f"eval_{args.backend}_{config.split}.json", doc)
    registry.close()
    _summary(
        args,
        f"{evaluation.backend_id} accuracy {evaluation.accuracy:.4f} on {evaluation.n} "
        f"{config.split} examples -> {path}",
        artifact=str(path),
        accuracy=evaluation.accuracy,
    )


def cmd_rank(args) -> None:
    config = _load(args)
    bundle = load_bundle(config)
    registry = build_registry(config, bundle.label_space)
    evals = _evaluate_layer(config, registry, bundle, config.split, "specific")
    if not evals:
        raise InvalidConfig("no specific-layer backends to rank")
    ranking = rt.rank_models(evals, registry)
    doc = {
        "split": config.split,
        "evaluations": {e.backend_id: e.accuracy for e in evals},
        "ranking": ranking,
        "provenance": {"dataset_hash": bundle.provenance.content_hash, "seed": config.seed},
    }
    path = _write_json(config.output_dir / f"ranking_{config.split}.json", doc)
    registry.close()
    _summary(args, f"ranking {ranking} -> {path}", artifact=str(path), ranking=ranking)


def cmd_calibrate(args) -> None:
    config = _load(args)
    if not config.calibration_grid:
        raise InvalidConfig("config has no [calibration] grid")
    bundle = load_bundle(config)
    registry = build_registry(config, bundle.label_space)
    terminal_id = _unique_large(config)

    if config.plan_file is not None and Path(config.plan_file).exists():
        skeleton = rt.load_plan_toml(config.plan_file)
    else:
        ssm_evals = _evaluate_layer(config, registry, bundle, "val", "specific")
        if not ssm_evals:
            raise InvalidConfig("no specific-layer backends to calibrate")
        assm_evals = []
        if args.tau2 is not None:
            # augmented stages only make sense with a terminal gate
            assm_ids = [b.id for b in config.backends if b.layer == "augmented"] + [
                e.id for e in config.assm_entries
            ]
            assm_evals = [
                rt.evaluate_backend(registry.get(bid), bundle, "val") for bid in assm_ids
            ]
        skeleton = rt.build_plan(
            ssm_evals,
            tau=0.0,
            terminal_id=terminal_id,
            registry=registry,
            assm_evals=assm_evals,
            assm_tau=args.assm_tau,
            lm_threshold=args.tau2,
        )

    plan = rt.calibrate_thresholds(
        skeleton,
        registry,
        bundle,
        grid=config.calibration_grid,
        budget=config.calibration_budget,
        split="val",
    )
    plan_path = rt.write_plan_toml(plan, config.output_dir / "plan.toml")
    tau = plan.stages[0].threshold if plan.stages else None
    doc = {
        "tau": tau,
        "grid": list(config.calibration_grid),
        "budget": config.calibration_budget,
        "plan": str(plan_path),
        "plan_hash": rt.plan_hash(plan),
        "provenance": {"dataset_hash": bundle.provenance.content_hash, "seed": config.seed},
    }
    path = _write_json(config.output_dir / "calibrate.json", doc)
    registry.close()
    _summary(args, f"selected tau={tau} -> {plan_path}", artifact=str(path), tau=tau)


def cmd_route(args) -> None:
    config = _load(args)
    bundle = load_bundle(config)
    registry = build_registry(config, bundle.label_space)
    plan = _plan_for(args, config)
    slices = _slices_for(config, bundle)
    traces, report, failures = rt.route_dataset(
        plan,
        registry,
        bundle,
        config.split,
        slices=slices,
        jobs=config.jobs,
        skip_errors=args.skip_errors,
    )
    out = config.output_dir
    traces_path = rt.write_traces(traces, out / f"traces_{config.split}.jsonl")
    report_json = out / f"report_{config.split}.json"
    report_json.parent.mkdir(parents=True, exist_ok=True)
    report_json.write_bytes(met.render_report(report, "json"))
    report_md = out / f"report_{config.split}.md"
    report_md.write_bytes(met.render_report(report, "markdown"))
    summary_doc = {
        "traces": str(traces_path),
        "report_json": str(report_json),
        "report_markdown": str(report_md),
        "overall_accuracy": report.overall_accuracy,
        "n": report.n,
        "failures": [
            {"example_id": f.example_id, "backend": f.backend_id, "error": f.error}
            for f in failures
        ],
        "provenance": {
            "dataset_hash": bundle.provenance.content_hash,
            "plan_hash": rt.plan_hash(plan),
            "seed": config.seed,
        },
    }
    path = _write_json(out / f"route_summary_{config.split}.json", summary_doc)
    registry.close()
    _summary(
        args,
        f"routed {report.n} {config.split} examples, accuracy {report.overall_accuracy:.4f} "
        f"-> {report_json}",
        artifact=str(path),
        accuracy=report.overall_accuracy,
        n=report.n,
    )


def _lazy_lm_records(registry, bundle, terminal_id, ids):
    backend = registry.get(terminal_id)
    by_id = {ex.id: ex for ex in bundle.split("train")}
    return {ex_id: backend.predict(by_id[ex_id]) for ex_id in sorted(ids)}


def _compute_partition(config: RunConfig, registry, bundle, plan, full_lm: bool):
    if config.ssm_error_mode == "all_wrong":
        records_by_backend = {
            stage.backend_id: {
                ex.id: registry.get(stage.backend_id).predict(ex)
                for ex in bundle.split("train")
            }
            for stage in plan.stages
        }
        ssm_error_ids = {
            ex.id
            for ex in bundle.split("train")
            if all(
                records_by_backend[s.backend_id][ex.id].predicted != ex.gold
                for s in plan.stages
            )
        }
        lm_ids = (
            [ex.id for ex in bundle.split("train")] if full_lm else sorted(ssm_error_ids)
        )
        lm_records = _lazy_lm_records(registry, bundle, plan.terminal_id, lm_ids)
        return aug.partition_conjunctive(records_by_backend, lm_records, bundle)
    ssm_records = rt.specific_layer_records(plan, registry, bundle, "train")
    ssm_error_ids = {
        ex.id for ex in bundle.split("train") if ssm_records[ex.id].predicted != ex.gold
    }
    lm_ids = [ex.id for ex in bundle.split("train")] if full_lm else sorted(ssm_error_ids)
    lm_records = _lazy_lm_records(registry, bundle, plan.terminal_id, lm_ids)
    return aug.partition_training_data(ssm_records, lm_records, bundle)


def cmd_partition(args) -> None:
    config = _load(args)
    bundle = load_bundle(config)
    registry = build_registry(config, bundle.label_space)
    plan = _plan_for(args, config)
    partition = _compute_partition(config, registry, bundle, plan, full_lm=False)
    doc = {
        "underfitted_ids": sorted(partition.underfitted_ids),
        "fitted_ids": sorted(partition.fitted_ids),
        "ssm_error_ids": sorted(partition.ssm_error_ids),
        "lm_error_ids": sorted(partition.lm_error_ids),
        "partition_hash": aug.partition_hash(partition, bundle),
        "provenance": {
            "dataset_hash": bundle.provenance.content_hash,
            "plan_hash": rt.plan_hash(plan),
            "seed": config.seed,
        },
    }
    path = _write_json(config.output_dir / "partition.json", doc)
    registry.close()
    _summary(
        args,
        f"underfitted {len(partition.underfitted_ids)} / fitted {len(partition.fitted_ids)} "
        f"-> {path}",
        artifact=str(path),
        underfitted=len(partition.underfitted_ids),
    )


def cmd_export_manifest(args) -> None:
    config = _load(args)
    variant = args.variant or config.augment_variant
    bundle = load_bundle(config)
    registry = build_registry(config, bundle.label_space)
    plan = _plan_for(args, config)
    partition = _compute_partition(
        config, registry, bundle, plan, full_lm=(variant == "ea_full")
    )
    manifest = aug.build_manifest(
        partition,
        bundle,
        variant=variant,
        task=config.augment_task,
        plan_hash_value=rt.plan_hash(plan),
    )
    manifest_path, provenance = aug.export_training_manifest(
        manifest, config.output_dir / f"manifest_{variant}.jsonl"
    )
    doc = {
        "manifest": str(manifest_path),
        "variant": variant,
        "rows": len(manifest.examples),
        "provenance_hash": provenance,
        "provenance": {
            "dataset_hash": bundle.provenance.content_hash,
            "plan_hash": manifest.plan_hash,
            "seed": config.seed,
        },
    }
    path = _write_json(config.output_dir / f"export_{variant}.json", doc)
    registry.close()
    _summary(
        args,
        f"wrote {len(manifest.examples)} rows ({variant}) -> {manifest_path} "
        f"[provenance {provenance[:12]}]",
        artifact=str(path),
        rows=len(manifest.examples),
        provenance_hash=provenance,
    )


def cmd_register_assm(args) -> None:
    config = _load(args)
    bundle = load_bundle(config)
    registry = build_registry(config, bundle.label_space)
    provenance = args.provenance
    if provenance is None:
        _, provenance = aug.load_manifest(args.manifest)
    descriptor = aug.register_augmented_model(
        registry,
        backend_id=args.backend,
        provenance=provenance,
        manifest_path=args.manifest,
        label_space=bundle.label_space,
        predictions_path=args.predictions,
    )
    lines = [
        "[[assm]]",
        f'id = "{descriptor.id}"',
        f'predictions = "{Path(args.predictions).as_posix()}"',
        f'provenance = "{provenance}"',
        f'manifest = "{Path(args.manifest).as_posix()}"',
        "",
    ]
    path = config.output_dir / f"registration_{descriptor.id}.toml"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines), encoding="utf-8")
    registry.close()
    _summary(
        args,
        f"registered {descriptor.id} (augmented layer) -> {path}",
        artifact=str(path),
        backend=descriptor.id,
    )


def cmd_report(args) -> None:
    config = _load(args)
    bundle = load_bundle(config)
    traces = rt.load_traces(args.traces)
    slices = _slices_for(config, bundle)
    plan = None
    plan_file = getattr(args, "plan", None) or config.plan_file
    if plan_file is not None:
        plan = rt.load_plan_toml(plan_file)
    cost_profiles = {b.id: b.cost for b in config.backends}
    report = met.compute_report(
        traces,
        bundle,
        config.split,
        slices=slices,
        cost_profiles=cost_profiles,
        terminal_id=plan.terminal_id if plan else None,
        expected_ids=[t.example_id for t in traces],
    )
    out = config.output_dir
    report_json = out / f"report_{config.split}.json"
    report_json.parent.mkdir(parents=True, exist_ok=True)
    report_json.write_bytes(met.render_report(report, "json"))
    report_md = out / f"report_{config.split}.md"
    report_md.write_bytes(met.render_report(report, "markdown"))
    _summary(
        args,
        f"report over {report.n} traces, accuracy {report.overall_accuracy:.4f} -> {report_json}",
        artifact=str(report_json),
        accuracy=report.overall_accuracy,
    )


def cmd_simulate(args) -> None:
    if (args.preset is None) == (args.world is None):
        raise InvalidConfig("give exactly one of --preset or --world")
    if args.preset is not None:
        world_config = preset_config(args.preset, seed=args.seed)
    else:
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(args.world, "rb") as fh:
            world_config = world_config_from_dict(tomllib.load(fh))
        if args.seed is not None:
            from dataclasses import replace

            world_config = replace(world_config, seed=args.seed)

    world = generate_world(world_config)
    out = Path(args.out)
    dataset_dir = save_dataset(world.bundle, out / "dataset")

    records = []
    for backend in world.registry:
        for split in ("train", "val", "test"):
            for ex in world.bundle.split(split):
                records.append(backend.predict(ex))
    predictions_path = write_prediction_matrix(out / "predictions.jsonl", records)

    (out / "world.toml").write_text(world_config_to_toml(world_config), encoding="utf-8")
    run_toml = _run_toml_for_world(world)
    (out / "run.toml").write_text(run_toml, encoding="utf-8")

    from .dataset import load_dataset

    reloaded = load_dataset(dataset_dir, label_file="labels.txt")
    doc = {
        "preset": args.preset,
        "seed": world_config.seed,
        "dataset": str(dataset_dir),
        "dataset_hash": reloaded.provenance.content_hash,
        "predictions": str(predictions_path),
        "run_config": str(out / "run.toml"),
        "n": {
            "train": world_config.n_train,
            "val": world_config.n_val,
            "test": world_config.n_test,
        },
    }
    path = _write_json(out / "simulate.json", doc)
    _summary(
        args,
        f"simulated world seed={world_config.seed} -> {out} "
        f"[dataset_hash {doc['dataset_hash'][:12]}]",
        artifact=str(path),
        dataset_hash=doc["dataset_hash"],
    )


def _run_toml_for_world(world) -> str:
    """A ready-to-run config next to the emitted artifacts, using offline
    backends over the emitted prediction matrix."""
    config = world.config
    lines = [
        "[dataset]",
        'path = "dataset"',
        'labels = "labels.txt"',
        "",
    ]
    try:
        t_head, t_tail = tertile_boundaries(world.bundle)
        lines += ["[slices]", f"t_head = {t_head}", f"t_tail = {t_tail}", ""]
    except CascadeError:
        pass
    for descriptor in world.descriptors:
        lines += [
            "[[backend]]",
            f'id = "{descriptor.id}"',
            'kind = "offline"',
            f'layer = "{descriptor.layer}"',
            'path = "predictions.jsonl"',
            "[backend.cost]",
            f"latency_ms_per_call = {descriptor.cost.latency_ms_per_call!r}",
            f"memory_mb = {descriptor.cost.memory_mb!r}",
            f"dollars_per_1k_calls = {descriptor.cost.dollars_per_1k_calls!r}",
            "",
        ]
    grid = [round(0.1 * i, 1) for i in range(11)]
    lines += [
        "[calibration]",
        f"grid = {grid!r}",
        "budget = 0.35",
        "",
        "[augment]",
        f'task = "world-seed{config.seed}"',
        'variant = "ea"',
        "",
        "[plan]",
        'file = "plan.toml"',
        "",
        "[run]",
        f"seed = {config.seed}",
        'split = "test"',
        "",
        "[output]",
        'dir = "."',
        "",
    ]
    return "\n".join(lines)


# -- parser ------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser, config_required: bool = True) -> None:
    parser.add_argument("--config", required=config_required, help="run config TOML")
    parser.add_argument("--json", action="store_true", help="machine-readable summary")
    parser.add_argument("--seed", type=int, default=None, help="override [run] seed")
    parser.add_argument("--split", default=None, help="override [run] split")
    parser.add_argument("--jobs", type=int, default=None, help="override [run] jobs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascadekit",
        description="Confidence-gated model cascades with underfitted-data selection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and summarize a dataset")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("eval-backend", help="accuracy of one backend on a split")
    _add_common(p)
    p.add_argument("--backend", required=True)
    p.set_defaults(func=cmd_eval_backend)

    p = sub.add_parser("rank", help="rank specific-layer backends by accuracy")
    _add_common(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("calibrate", help="grid-search the shared gate threshold")
    _add_common(p)
    p.add_argument("--tau2", type=float, default=None, help="terminal gate for augmented stages")
    p.add_argument("--assm-tau", type=float, default=None, help="gate for augmented stages")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("route", help="route a split through a plan")
    _add_common(p)
    p.add_argument("--plan", default=None, help="plan TOML (defaults to [plan] file)")
    p.add_argument("--tau", dest="tau", type=float, default=None, help="override every stage gate")
    p.add_argument("--skip-errors", action="store_true")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("partition", help="split train into fitted/underfitted")
    _add_common(p)
    p.add_argument("--plan", default=None)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("export-manifest", help="write the augmentation training manifest")
    _add_common(p)
    p.add_argument("--plan", default=None)
    p.add_argument("--variant", choices=["ea", "ea_full"], default=None)
    p.set_defaults(func=cmd_export_manifest)

    p = sub.add_parser("register-assm", help="validate and register a trained augmented model")
    _add_common(p)
    p.add_argument("--backend", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--provenance", default=None, help="expected manifest hash (default: recompute)")
    p.set_defaults(func=cmd_register_assm)

    p = sub.add_parser("report", help="recompute a report from a traces file")
    _add_common(p)
    p.add_argument("--traces", required=True)
    p.add_argument("--plan", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("simulate", help="generate a synthetic world")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--world", default=None, help="world config TOML")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except CascadeError as exc:
        message = f"error: {type(exc).__name__}: {exc}"
        if getattr(args, "json", False):
            print(json.dumps({"ok": False, "error": type(exc).__name__, "message": str(exc)}))
        else:
            print(message, file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
