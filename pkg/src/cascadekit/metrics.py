"""Measurement surfaces: overall accuracy, per-backend invocation shares,
per-slice accuracy, and declarative cost aggregation over routing traces.

Time and memory are modeled from per-backend cost profiles, never measured;
rendered tables label them accordingly. Memory aggregates as the max over
invoked backends since concurrent residency is out of scope.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .backends.base import CostProfile
from .dataset import DatasetBundle, SliceAssignment, SLICES
from .errors import TraceDatasetMismatch
from .router import RoutingTrace


@dataclass(frozen=True)
class BackendStats:
    invocations: int  # traces that FINISHED at this backend
    proportion: float  # percent of all traces
    accuracy_when_final: float | None
    visits: int  # traces that consulted this backend at all
    modeled_time_ms: float = 0.0  # visits x per-call latency from the profile
    modeled_memory_mb: float = 0.0


@dataclass(frozen=True)
class CostSummary:
    total_latency_ms: float
    peak_memory_mb: float
    total_dollars: float


@dataclass(frozen=True)
class MetricsReport:
    overall_accuracy: float
    specific_layer_accuracy: float | None
    per_backend: Mapping[str, BackendStats]
    per_slice: Mapping[str, float | None]
    cost: CostSummary
    n: int


def _label_at_terminal_boundary(trace: RoutingTrace, terminal_id: str) -> int | None:
    """The label the cascade would have emitted with augmented stages
    disabled: cut the trace at the terminal backend. None when the cut step's
    label was not recorded (wire-loaded traces that went past the terminal)."""
    for i, step in enumerate(trace.steps):
        if step.backend_id == terminal_id:
            if i == len(trace.steps) - 1:
                return trace.final_label
            return step.predicted
    return trace.final_label


def compute_report(
    traces: Sequence[RoutingTrace],
    bundle: DatasetBundle,
    split: str,
    slices: SliceAssignment | None = None,
    cost_profiles: Mapping[str, CostProfile] | None = None,
    terminal_id: str | None = None,
    expected_ids: Sequence[str] | None = None,
) -> MetricsReport:
    """Aggregate traces against the gold labels of `split`."""
    gold = bundle.gold_by_id(split)
    expected = set(expected_ids) if expected_ids is not None else set(gold)
    traced = {t.example_id for t in traces}
    foreign = traced - set(gold)
    if foreign:
        raise TraceDatasetMismatch(
            f"traces carry ids outside split {split!r}, e.g. {sorted(foreign)[:3]}"
        )
    if traced != expected:
        missing = sorted(expected - traced)[:3]
        extra = sorted(traced - expected)[:3]
        raise TraceDatasetMismatch(
            f"traces do not match the split (missing={missing}, unexpected={extra})"
        )
    if len(traces) != len(traced):
        raise TraceDatasetMismatch("duplicate example ids among traces")

    n = len(traces)
    cost_profiles = cost_profiles or {}

    finals: dict[str, int] = {}
    final_correct: dict[str, int] = {}
    visits: dict[str, int] = {}
    correct = 0
    boundary_correct = 0
    boundary_known = True
    latency = 0.0
    dollars = 0.0
    invoked: set[str] = set()
    slice_total = {s: 0 for s in SLICES}
    slice_correct = {s: 0 for s in SLICES}

    for trace in traces:
        y = gold[trace.example_id]
        ok = trace.final_label == y
        correct += ok
        finals[trace.final_backend] = finals.get(trace.final_backend, 0) + 1
        final_correct[trace.final_backend] = final_correct.get(trace.final_backend, 0) + ok
        for step in trace.steps:
            visits[step.backend_id] = visits.get(step.backend_id, 0) + 1
            invoked.add(step.backend_id)
            profile = cost_profiles.get(step.backend_id, CostProfile())
            latency += profile.latency_ms_per_call
            dollars += profile.dollars_per_call
        if terminal_id is not None and boundary_known:
            label = _label_at_terminal_boundary(trace, terminal_id)
            if label is None:
                boundary_known = False
            else:
                boundary_correct += label == y
        if slices is not None:
            mode = slices.slice_of(y)
            slice_total[mode] += 1
            slice_correct[mode] += ok

    per_backend = {
        bid: BackendStats(
            invocations=finals.get(bid, 0),
            proportion=100.0 * finals.get(bid, 0) / n,
            accuracy_when_final=(
                final_correct.get(bid, 0) / finals[bid] if finals.get(bid) else None
            ),
            visits=count,
            modeled_time_ms=count * cost_profiles.get(bid, CostProfile()).latency_ms_per_call,
            modeled_memory_mb=cost_profiles.get(bid, CostProfile()).memory_mb,
        )
        for bid, count in sorted(visits.items())
    }

    per_slice: dict[str, float | None] = {}
    if slices is not None:
        for mode in SLICES:
            per_slice[mode] = (
                slice_correct[mode] / slice_total[mode] if slice_total[mode] else None
            )

    peak_memory = max(
        (cost_profiles.get(bid, CostProfile()).memory_mb for bid in invoked), default=0.0
    )
    specific_layer_accuracy = (
        boundary_correct / n if terminal_id is not None and boundary_known else None
    )
    return MetricsReport(
        overall_accuracy=correct / n,
        specific_layer_accuracy=specific_layer_accuracy,
        per_backend=per_backend,
        per_slice=per_slice,
        cost=CostSummary(
            total_latency_ms=latency, peak_memory_mb=peak_memory, total_dollars=dollars
        ),
        n=n,
    )


def _round_floats(value, places: int):
    if isinstance(value, float):
        return round(value, places)
    if isinstance(value, dict):
        return {k: _round_floats(v, places) for k, v in value.items()}
    if isinstance(value, list):
        return [_round_floats(v, places) for v in value]
    return value


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "overall_accuracy": report.overall_accuracy,
        "specific_layer_accuracy": report.specific_layer_accuracy,
        "per_backend": {
            bid: {
                "invocations": stats.invocations,
                "proportion": stats.proportion,
                "accuracy_when_final": stats.accuracy_when_final,
            }
            for bid, stats in report.per_backend.items()
        },
        "per_slice": dict(report.per_slice),
        "cost": {
            "total_latency_ms": report.cost.total_latency_ms,
            "peak_memory_mb": report.cost.peak_memory_mb,
            "total_dollars": report.cost.total_dollars,
        },
        "n": report.n,
    }


def render_report(report: MetricsReport, fmt: str = "json") -> bytes:
    """Canonical JSON (sorted keys, 4-decimal floats) or a markdown summary
    (2-decimal percentages). Rendering is deterministic: same report, same
    bytes."""
    if fmt == "json":
        doc = _round_floats(report_to_dict(report), 4)
        return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")
    if fmt == "markdown":
        return _render_markdown(report).encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")


def _pct(x: float | None) -> str:
    return "-" if x is None else f"{100.0 * x:.2f}%"


def _render_markdown(report: MetricsReport) -> str:
    lines = [
        "| Method | Time (ms, modeled) | Memory (MB, modeled) | Accuracy |",
        "| --- | --- | --- | --- |",
    ]
    for bid, stats in report.per_backend.items():
        lines.append(
            f"| {bid} | {stats.modeled_time_ms:.2f} | {stats.modeled_memory_mb:.2f} "
            f"| {_pct(stats.accuracy_when_final)} |"
        )
    lines.append(
        f"| cascade (overall) | {report.cost.total_latency_ms:.2f} "
        f"| {report.cost.peak_memory_mb:.2f} | {_pct(report.overall_accuracy)} |"
    )
    lines += [
        "",
        "| Backend | Invocations | Proportion |",
        "| --- | --- | --- |",
    ]
    for bid, stats in report.per_backend.items():
        lines.append(f"| {bid} | {stats.invocations} | {stats.proportion:.2f}% |")
    if report.per_slice:
        lines += [
            "",
            "| Slice | Accuracy |",
            "| --- | --- |",
        ]
        for mode, acc in report.per_slice.items():
            lines.append(f"| {mode} | {_pct(acc)} |")
    if report.specific_layer_accuracy is not None:
        lines += [
            "",
            f"Specific-layer accuracy (augmented stages disabled): "
            f"{_pct(report.specific_layer_accuracy)}",
        ]
    lines.append("")
    return "\n".join(lines)
