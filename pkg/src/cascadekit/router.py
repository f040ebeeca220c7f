"""Cascade plans and their execution.

A plan is an accuracy-ranked sequence of gated stages in front of a terminal
large model, optionally followed by gated augmented stages consulted only
when the large model itself declines. Acceptance is `confidence >= threshold`
at every gate; the terminal accepts unconditionally when it has no augmented
stages behind it or when its confidence is opaque, and the last augmented
stage accepts unconditionally so every input gets an answer.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .backends.base import BackendRegistry, PredictionRecord
from .dataset import DatasetBundle, LabeledExample, SliceAssignment
from .errors import (
    DuplicateBackend,
    EmptySplit,
    InfeasibleBudget,
    InvalidConfig,
    SchemaError,
)


@dataclass(frozen=True)
class BackendEvaluation:
    backend_id: str
    split: str
    accuracy: float
    n: int


@dataclass(frozen=True)
class Stage:
    backend_id: str
    threshold: float


@dataclass(frozen=True)
class CascadePlan:
    stages: tuple[Stage, ...]
    terminal_id: str
    augmented_stages: tuple[Stage, ...] = ()
    lm_threshold: float | None = None

    def __post_init__(self):
        for stage in (*self.stages, *self.augmented_stages):
            if not 0.0 <= stage.threshold <= 1.0:
                raise InvalidConfig(f"threshold {stage.threshold} outside [0, 1]")
        if self.lm_threshold is not None and not 0.0 <= self.lm_threshold <= 1.0:
            raise InvalidConfig(f"lm_threshold {self.lm_threshold} outside [0, 1]")
        ids = [s.backend_id for s in self.stages] + [self.terminal_id] + [
            s.backend_id for s in self.augmented_stages
        ]
        if len(set(ids)) != len(ids):
            raise DuplicateBackend(f"plan mentions a backend twice: {ids}")

    def with_global_tau(self, tau: float) -> "CascadePlan":
        """Same plan with `tau` on every specific stage (augmented gates kept)."""
        return replace(self, stages=tuple(Stage(s.backend_id, tau) for s in self.stages))

    def backend_ids(self) -> list[str]:
        return [s.backend_id for s in self.stages] + [self.terminal_id] + [
            s.backend_id for s in self.augmented_stages
        ]


@dataclass(frozen=True)
class TraceStep:
    backend_id: str
    confidence: float
    accepted: bool
    predicted: int | None = None  # carried in memory; not part of the wire schema


@dataclass(frozen=True)
class RoutingTrace:
    example_id: str
    steps: tuple[TraceStep, ...]
    final_backend: str
    final_label: int


def validate_plan(plan: CascadePlan, registry: BackendRegistry) -> None:
    for backend_id in plan.backend_ids():
        registry.get(backend_id)
    terminal = registry.get(plan.terminal_id).descriptor
    if terminal.layer != "large":
        raise InvalidConfig(f"terminal backend {plan.terminal_id!r} has layer {terminal.layer!r}")
    for stage in plan.stages:
        layer = registry.get(stage.backend_id).descriptor.layer
        if layer == "large":
            raise InvalidConfig(f"stage {stage.backend_id!r} must not be a large-layer backend")
    for stage in plan.augmented_stages:
        layer = registry.get(stage.backend_id).descriptor.layer
        if layer != "augmented":
            raise InvalidConfig(f"augmented stage {stage.backend_id!r} has layer {layer!r}")
    if plan.augmented_stages and plan.lm_threshold is None and not terminal.opaque_confidence:
        raise InvalidConfig(
            "augmented stages need lm_threshold unless the terminal is opaque-confidence"
        )


def evaluate_backend(backend, bundle: DatasetBundle, split: str) -> BackendEvaluation:
    """Fraction of the split the backend labels correctly."""
    examples = bundle.split(split)
    if not examples:
        raise EmptySplit(f"split {split!r} is empty")
    correct = sum(1 for ex in examples if backend.predict(ex).predicted == ex.gold)
    return BackendEvaluation(
        backend_id=backend.descriptor.id,
        split=split,
        accuracy=correct / len(examples),
        n=len(examples),
    )


def rank_models(
    evals: Sequence[BackendEvaluation], registry: BackendRegistry | None = None
) -> list[str]:
    """Backend ids in descending accuracy order; ties keep registration order."""
    if not evals:
        raise InvalidConfig("rank_models needs at least one evaluation")
    ids = [e.backend_id for e in evals]
    if len(set(ids)) != len(ids):
        raise DuplicateBackend(f"duplicate evaluations in {ids}")
    if registry is not None:
        order = {e.backend_id: registry.registration_index(e.backend_id) for e in evals}
    else:
        order = {e.backend_id: i for i, e in enumerate(evals)}
    return [
        e.backend_id
        for e in sorted(evals, key=lambda e: (-e.accuracy, order[e.backend_id]))
    ]


def build_plan(
    ssm_evals: Sequence[BackendEvaluation],
    tau: float,
    terminal_id: str,
    registry: BackendRegistry | None = None,
    *,
    assm_evals: Sequence[BackendEvaluation] = (),
    assm_tau: float | None = None,
    lm_threshold: float | None = None,
) -> CascadePlan:
    """Rank specific (and augmented) backends by validation accuracy and gate
    each with the given threshold."""
    stages = tuple(Stage(bid, tau) for bid in rank_models(ssm_evals, registry))
    augmented: tuple[Stage, ...] = ()
    if assm_evals:
        gate = tau if assm_tau is None else assm_tau
        augmented = tuple(Stage(bid, gate) for bid in rank_models(assm_evals, registry))
    return CascadePlan(
        stages=stages,
        terminal_id=terminal_id,
        augmented_stages=augmented,
        lm_threshold=lm_threshold,
    )


def _predict(registry, backend_id: str, example: LabeledExample) -> PredictionRecord:
    """Predict and tag any failure with the backend that raised it, so
    callers can report the failing step."""
    try:
        return registry.get(backend_id).predict(example)
    except Exception as exc:
        if not hasattr(exc, "backend_id"):
            exc.backend_id = backend_id
        raise


def route_example(plan: CascadePlan, registry: BackendRegistry, example: LabeledExample) -> RoutingTrace:
    """Walk the plan for one example; see the module docstring for the rule."""
    steps: list[TraceStep] = []

    def finish(record: PredictionRecord) -> RoutingTrace:
        steps.append(TraceStep(record.backend_id, record.confidence, True, record.predicted))
        return RoutingTrace(
            example_id=example.id,
            steps=tuple(steps),
            final_backend=record.backend_id,
            final_label=record.predicted,
        )

    for stage in plan.stages:
        record = _predict(registry, stage.backend_id, example)
        if record.confidence >= stage.threshold:
            return finish(record)
        steps.append(TraceStep(record.backend_id, record.confidence, False, record.predicted))

    terminal = registry.get(plan.terminal_id)
    record = _predict(registry, plan.terminal_id, example)
    router2_active = (
        bool(plan.augmented_stages)
        and not terminal.descriptor.opaque_confidence
        and plan.lm_threshold is not None
    )
    if not router2_active or record.confidence >= plan.lm_threshold:
        return finish(record)
    steps.append(TraceStep(record.backend_id, record.confidence, False, record.predicted))

    for i, stage in enumerate(plan.augmented_stages):
        record = _predict(registry, stage.backend_id, example)
        last = i == len(plan.augmented_stages) - 1
        if last or record.confidence >= stage.threshold:
            return finish(record)
        steps.append(TraceStep(record.backend_id, record.confidence, False, record.predicted))

    raise AssertionError("unreachable: the last augmented stage accepts unconditionally")


@dataclass(frozen=True)
class RoutingFailure:
    example_id: str
    backend_id: str
    error: str


class _CapacityView:
    """Registry view that throttles each backend to its declared capacity.
    Offline/synthetic backends declare no bound; subprocess backends already
    serialize internally; HTTP backends set a max-in-flight count."""

    def __init__(self, registry: BackendRegistry):
        import threading

        self._registry = registry
        self._gates = {
            b.descriptor.id: threading.BoundedSemaphore(b.descriptor.capacity)
            for b in registry
            if b.descriptor.capacity is not None
        }

    def get(self, backend_id: str):
        backend = self._registry.get(backend_id)
        gate = self._gates.get(backend_id)
        if gate is None:
            return backend
        return _ThrottledBackend(backend, gate)


class _ThrottledBackend:
    def __init__(self, backend, gate):
        self._backend = backend
        self._gate = gate
        self.descriptor = backend.descriptor

    def predict(self, example: LabeledExample) -> PredictionRecord:
        with self._gate:
            return self._backend.predict(example)


def route_dataset(
    plan: CascadePlan,
    registry: BackendRegistry,
    bundle: DatasetBundle,
    split: str,
    slices: SliceAssignment | None = None,
    jobs: int = 1,
    skip_errors: bool = False,
):
    """Route every example of a split. Returns (traces, report, failures);
    failures is empty unless skip_errors is set. Output order follows the
    split regardless of worker scheduling."""
    from .metrics import compute_report  # local import to avoid a cycle

    examples = bundle.split(split)
    if not examples:
        raise EmptySplit(f"split {split!r} is empty")
    validate_plan(plan, registry)

    failures: list[RoutingFailure] = []
    traces: list[RoutingTrace] = []
    view = _CapacityView(registry) if jobs > 1 else registry

    def run(example: LabeledExample) -> RoutingTrace | RoutingFailure:
        try:
            return route_example(plan, view, example)
        except Exception as exc:
            if not skip_errors:
                raise
            backend_id = getattr(exc, "backend_id", "<unknown>")
            return RoutingFailure(example.id, backend_id, f"{type(exc).__name__}: {exc}")

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run, examples))
    else:
        outcomes = [run(ex) for ex in examples]

    for outcome in outcomes:
        (failures if isinstance(outcome, RoutingFailure) else traces).append(outcome)

    routed_ids = {t.example_id for t in traces}
    routed = [ex for ex in examples if ex.id in routed_ids]
    report = compute_report(
        traces,
        bundle,
        split,
        slices=slices,
        cost_profiles={b.descriptor.id: b.descriptor.cost for b in registry},
        terminal_id=plan.terminal_id,
        expected_ids=[ex.id for ex in routed],
    )
    return traces, report, failures


def specific_layer_records(
    plan: CascadePlan,
    registry: BackendRegistry,
    bundle: DatasetBundle,
    split: str = "train",
) -> dict[str, PredictionRecord]:
    """The label the specific stages alone would emit per example: first gate
    that accepts, else the last stage. Used to find the stage pool's errors."""
    if not plan.stages:
        raise InvalidConfig("plan has no specific stages")
    out: dict[str, PredictionRecord] = {}
    for ex in bundle.split(split):
        chosen: PredictionRecord | None = None
        for stage in plan.stages:
            record = registry.get(stage.backend_id).predict(ex)
            if record.confidence >= stage.threshold:
                chosen = record
                break
            chosen = record  # falls through: last stage answers
        out[ex.id] = chosen
    return out


def lm_proportion(traces: Sequence[RoutingTrace], terminal_id: str) -> float:
    """Percent of traces whose final answer came from the terminal backend."""
    if not traces:
        return 0.0
    finals = sum(1 for t in traces if t.final_backend == terminal_id)
    return 100.0 * finals / len(traces)


def calibrate_thresholds(
    plan: CascadePlan,
    registry: BackendRegistry,
    bundle: DatasetBundle,
    grid: Sequence[float],
    budget: float | None = None,
    split: str = "val",
) -> CascadePlan:
    """Grid-search one shared gate threshold for the specific stages on the
    validation split: maximize accuracy subject to the terminal's invocation
    share staying within `budget` (a fraction); ties prefer a lower terminal
    share, then a lower threshold."""
    if not grid:
        raise InvalidConfig("calibration grid is empty")
    for tau in grid:
        if not 0.0 <= tau <= 1.0:
            raise InvalidConfig(f"grid value {tau} outside [0, 1]")

    best: tuple[float, float, float] | None = None  # (-accuracy, lm_share, tau)
    best_tau: float | None = None
    for tau in sorted(set(float(t) for t in grid)):
        candidate = plan.with_global_tau(tau)
        traces, report, _ = route_dataset(candidate, registry, bundle, split)
        share = lm_proportion(traces, plan.terminal_id)
        if budget is not None and share > 100.0 * budget + 1e-9:
            continue
        key = (-report.overall_accuracy, share, tau)
        if best is None or key < best:
            best, best_tau = key, tau
    if best_tau is None:
        raise InfeasibleBudget(
            f"no grid threshold keeps the terminal share within {budget:.2%}"
        )
    return plan.with_global_tau(best_tau)


# ---------------------------------------------------------------------------
# plan and trace files

def plan_hash(plan: CascadePlan) -> str:
    doc = {
        "stages": [[s.backend_id, s.threshold] for s in plan.stages],
        "terminal": plan.terminal_id,
        "lm_threshold": plan.lm_threshold,
        "augmented": [[s.backend_id, s.threshold] for s in plan.augmented_stages],
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()


def write_plan_toml(plan: CascadePlan, path: str | Path) -> Path:
    lines: list[str] = []
    for stage in plan.stages:
        lines += ["[[stage]]", f'backend = "{stage.backend_id}"', f"tau = {stage.threshold!r}", ""]
    lines += ["[terminal]", f'backend = "{plan.terminal_id}"']
    if plan.lm_threshold is not None:
        lines.append(f"tau2 = {plan.lm_threshold!r}")
    lines.append("")
    for stage in plan.augmented_stages:
        lines += ["[[augmented]]", f'backend = "{stage.backend_id}"', f"tau = {stage.threshold!r}", ""]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines), encoding="utf-8")
    return path


def load_plan_toml(path: str | Path) -> CascadePlan:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python 3.10
        import tomli as tomllib
    if not Path(path).exists():
        raise InvalidConfig(f"plan file {path} does not exist (run calibrate, or pass --plan)")
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    unknown = set(doc) - {"stage", "terminal", "augmented"}
    if unknown:
        raise InvalidConfig(f"plan file has unknown tables {sorted(unknown)}")
    if "terminal" not in doc:
        raise InvalidConfig("plan file needs a [terminal] table")
    stages = tuple(Stage(s["backend"], float(s["tau"])) for s in doc.get("stage", []))
    augmented = tuple(Stage(s["backend"], float(s["tau"])) for s in doc.get("augmented", []))
    terminal = doc["terminal"]
    tau2 = terminal.get("tau2")
    return CascadePlan(
        stages=stages,
        terminal_id=terminal["backend"],
        augmented_stages=augmented,
        lm_threshold=float(tau2) if tau2 is not None else None,
    )


def write_traces(traces: Sequence[RoutingTrace], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(
                json.dumps(
                    {
                        "example_id": trace.example_id,
                        "steps": [
                            {"backend": s.backend_id, "confidence": s.confidence, "accepted": s.accepted}
                            for s in trace.steps
                        ],
                        "final_backend": trace.final_backend,
                        "final_label": trace.final_label,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return path


def load_traces(path: str | Path) -> list[RoutingTrace]:
    traces: list[RoutingTrace] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                steps = tuple(
                    TraceStep(s["backend"], float(s["confidence"]), bool(s["accepted"]))
                    for s in obj["steps"]
                )
                traces.append(
                    RoutingTrace(
                        example_id=obj["example_id"],
                        steps=steps,
                        final_backend=obj["final_backend"],
                        final_label=int(obj["final_label"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{line_no}: bad trace row ({exc})") from None
    return traces
