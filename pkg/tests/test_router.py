from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from cascadekit.dataset import LabeledExample
from cascadekit.errors import DuplicateBackend, InfeasibleBudget, InvalidConfig
from cascadekit.router import (
    BackendEvaluation,
    CascadePlan,
    Stage,
    build_plan,
    calibrate_thresholds,
    evaluate_backend,
    lm_proportion,
    load_plan_toml,
    plan_hash,
    rank_models,
    route_dataset,
    route_example,
    specific_layer_records,
    write_plan_toml,
)
from cascadekit.simulator import generate_world, staggered_config

from .conftest import TableBackend, make_registry


# --- reference walker: an independent re-derivation of the acceptance rule,
# kept deliberately naive. It shares only the prediction records.

def reference_walk(plan, registry, example):
    def predict(bid):
        return registry.get(bid).predict(example)

    visited = []
    for stage in plan.stages:
        rec = predict(stage.backend_id)
        ok = rec.confidence >= stage.threshold
        visited.append((stage.backend_id, rec.confidence, ok))
        if ok:
            return visited, stage.backend_id, rec.predicted
    rec = predict(plan.terminal_id)
    opaque = registry.get(plan.terminal_id).descriptor.opaque_confidence
    router2 = bool(plan.augmented_stages) and not opaque and plan.lm_threshold is not None
    if not router2 or rec.confidence >= plan.lm_threshold:
        visited.append((plan.terminal_id, rec.confidence, True))
        return visited, plan.terminal_id, rec.predicted
    visited.append((plan.terminal_id, rec.confidence, False))
    for j, stage in enumerate(plan.augmented_stages):
        rec = predict(stage.backend_id)
        ok = j == len(plan.augmented_stages) - 1 or rec.confidence >= stage.threshold
        visited.append((stage.backend_id, rec.confidence, ok))
        if ok:
            return visited, stage.backend_id, rec.predicted
    raise AssertionError("walk must have terminated")


def trace_tuple(trace):
    return (
        [(s.backend_id, s.confidence, s.accepted) for s in trace.steps],
        trace.final_backend,
        trace.final_label,
    )


def conf_probs(c, k=2, peak=0):
    """Probability vector with confidence exactly c at index `peak`."""
    rest = (1.0 - c) / (k - 1)
    probs = [rest] * k
    probs[peak] = c
    return probs


def example(i, gold=0):
    return LabeledExample(f"e{i}", "payload", gold)


def test_evaluate_backend_all_correct(tiny_bundle):
    backend = TableBackend("b", {ex.id: conf_probs(0.9, 2, ex.gold) for ex in tiny_bundle.split("train")})
    ev = evaluate_backend(backend, tiny_bundle, "train")
    assert ev.accuracy == 1.0 and ev.n == 3
    assert abs(ev.accuracy * ev.n - round(ev.accuracy * ev.n)) < 1e-9


def test_evaluate_backend_constant_predictor_on_balanced_split(tmp_path):
    from .conftest import write_jsonl
    from cascadekit.dataset import load_dataset

    data = tmp_path / "d"
    rows = [
        {"id": f"e{i}", "payload": "p", "label": "a" if i % 2 else "b"} for i in range(100)
    ]
    write_jsonl(data / "train.jsonl", rows)
    write_jsonl(data / "val.jsonl", [{"id": "v", "payload": "p", "label": "a"}])
    write_jsonl(data / "test.jsonl", [{"id": "t", "payload": "p", "label": "b"}])
    bundle = load_dataset(data)
    constant = TableBackend("c", {f"e{i}": conf_probs(0.8, 2, 0) for i in range(100)})
    ev = evaluate_backend(constant, bundle, "train")
    assert ev.accuracy == pytest.approx(0.5)


def test_evaluate_synthetic_matches_closed_form():
    # in 0.85 / out 0.55 with 70% covered mass: expect .85*.7 + .55*.3 = 0.76
    from cascadekit.simulator import ProfileSpec, RegionSpec, WorldConfig

    config = WorldConfig(
        labels=("a", "b", "c", "d"),
        regions=(
            RegionSpec("in", 0.7, (0.25, 0.25, 0.25, 0.25)),
            RegionSpec("out", 0.3, (0.25, 0.25, 0.25, 0.25)),
        ),
        n_train=10,
        n_val=5000,
        n_test=10,
        profiles=(
            ProfileSpec("ssm", "specific", frozenset({"in"}), 0.85, 0.55),
            ProfileSpec("lm", "large", frozenset({"in", "out"}), 0.8, 0.8),
        ),
        seed=21,
    )
    world = generate_world(config)
    ev = evaluate_backend(world.registry.get("ssm"), world.bundle, "val")
    assert ev.accuracy == pytest.approx(0.76, abs=0.02)


def test_rank_models_direct_sort():
    evals = [
        BackendEvaluation("A", "val", 0.85, 100),
        BackendEvaluation("B", "val", 0.82, 100),
        BackendEvaluation("C", "val", 0.83, 100),
    ]
    assert rank_models(evals) == ["A", "C", "B"]


def test_rank_models_stable_tie_break():
    evals = [BackendEvaluation("A", "val", 0.8, 10), BackendEvaluation("B", "val", 0.8, 10)]
    assert rank_models(evals) == ["A", "B"]


def test_rank_models_tie_break_uses_registration_order_not_input_order():
    a = TableBackend("A", {})
    b = TableBackend("B", {})
    registry = make_registry(a, b)
    evals = [BackendEvaluation("B", "val", 0.8, 10), BackendEvaluation("A", "val", 0.8, 10)]
    assert rank_models(evals, registry) == ["A", "B"]


def test_rank_models_published_nli_accuracies():
    # individual accuracies 85.51 / 82.40 / 82.63 rank as [first, third, second]
    evals = [
        BackendEvaluation("roberta", "val", 0.8551, 10000),
        BackendEvaluation("distilbert", "val", 0.8240, 10000),
        BackendEvaluation("albert", "val", 0.8263, 10000),
    ]
    assert rank_models(evals) == ["roberta", "albert", "distilbert"]


def test_rank_models_duplicate_backend():
    evals = [BackendEvaluation("A", "val", 0.8, 10), BackendEvaluation("A", "val", 0.7, 10)]
    with pytest.raises(DuplicateBackend):
        rank_models(evals)


def test_zero_threshold_first_stage_takes_everything(tiny_bundle):
    train = tiny_bundle.split("train")
    ssm = TableBackend("ssm", {ex.id: conf_probs(0.5, 2, ex.gold) for ex in train})
    lm = TableBackend("lm", {ex.id: conf_probs(0.9, 2, ex.gold) for ex in train}, layer="large")
    registry = make_registry(ssm, lm)
    plan = CascadePlan(stages=(Stage("ssm", 0.0),), terminal_id="lm")
    for ex in train:
        trace = route_example(plan, registry, ex)
        assert trace.final_backend == "ssm"
        assert len(trace.steps) == 1 and trace.steps[0].accepted


def test_unreachable_threshold_falls_through_to_terminal(tiny_bundle):
    train = tiny_bundle.split("train")
    ssm = TableBackend("ssm", {ex.id: conf_probs(0.99, 2, ex.gold) for ex in train})
    lm = TableBackend("lm", {ex.id: conf_probs(0.9, 2, ex.gold) for ex in train}, layer="large")
    registry = make_registry(ssm, lm)
    plan = CascadePlan(stages=(Stage("ssm", 1.0),), terminal_id="lm")
    for ex in train:
        trace = route_example(plan, registry, ex)
        assert trace.final_backend == "lm"
        assert [s.accepted for s in trace.steps] == [False, True]
        assert trace.steps[0].confidence < 1.0


def test_opaque_terminal_makes_augmented_stages_inert(tiny_bundle):
    train = tiny_bundle.split("train")
    ssm = TableBackend("ssm", {ex.id: conf_probs(0.6, 2, ex.gold) for ex in train})
    lm = TableBackend("lm", {ex.id: conf_probs(1.0, 2, ex.gold) for ex in train}, layer="large", opaque=True)
    assm = TableBackend("assm", {ex.id: conf_probs(0.9, 2, ex.gold) for ex in train}, layer="augmented")
    registry = make_registry(ssm, lm, assm)
    plan = CascadePlan(
        stages=(Stage("ssm", 0.95),),
        terminal_id="lm",
        augmented_stages=(Stage("assm", 0.5),),
        lm_threshold=0.99,
    )
    for ex in train:
        trace = route_example(plan, registry, ex)
        assert trace.final_backend == "lm"


def test_router2_consults_augmented_when_terminal_unsure(tiny_bundle):
    train = tiny_bundle.split("train")
    ssm = TableBackend("ssm", {ex.id: conf_probs(0.6, 2, ex.gold) for ex in train})
    lm = TableBackend("lm", {ex.id: conf_probs(0.7, 2, ex.gold) for ex in train}, layer="large")
    assm = TableBackend("assm", {ex.id: conf_probs(0.9, 2, ex.gold) for ex in train}, layer="augmented")
    registry = make_registry(ssm, lm, assm)
    plan = CascadePlan(
        stages=(Stage("ssm", 0.95),),
        terminal_id="lm",
        augmented_stages=(Stage("assm", 0.5),),
        lm_threshold=0.8,
    )
    trace = route_example(plan, registry, train[0])
    assert [s.backend_id for s in trace.steps] == ["ssm", "lm", "assm"]
    assert trace.final_backend == "assm"


def test_last_augmented_stage_accepts_unconditionally(tiny_bundle):
    train = tiny_bundle.split("train")
    ssm = TableBackend("ssm", {ex.id: conf_probs(0.6, 2, ex.gold) for ex in train})
    lm = TableBackend("lm", {ex.id: conf_probs(0.7, 2, ex.gold) for ex in train}, layer="large")
    assm = TableBackend("assm", {ex.id: conf_probs(0.55, 2, ex.gold) for ex in train}, layer="augmented")
    registry = make_registry(ssm, lm, assm)
    plan = CascadePlan(
        stages=(Stage("ssm", 0.95),),
        terminal_id="lm",
        augmented_stages=(Stage("assm", 0.99),),
        lm_threshold=0.8,
    )
    trace = route_example(plan, registry, train[0])
    assert trace.final_backend == "assm"
    assert trace.steps[-1].accepted


def test_plan_requires_lm_threshold_with_augmented_stages(tiny_bundle):
    train = tiny_bundle.split("train")
    ssm = TableBackend("ssm", {ex.id: conf_probs(0.6, 2) for ex in train})
    lm = TableBackend("lm", {ex.id: conf_probs(0.7, 2) for ex in train}, layer="large")
    assm = TableBackend("assm", {ex.id: conf_probs(0.9, 2) for ex in train}, layer="augmented")
    registry = make_registry(ssm, lm, assm)
    plan = CascadePlan(
        stages=(Stage("ssm", 0.5),),
        terminal_id="lm",
        augmented_stages=(Stage("assm", 0.5),),
    )
    with pytest.raises(InvalidConfig):
        route_dataset(plan, registry, tiny_bundle, "train")


@pytest.fixture(scope="module")
def small_world():
    world = generate_world(staggered_config(seed=7, n_train=200, n_val=200, n_test=200))
    ssm_evals = [
        evaluate_backend(world.registry.get(bid), world.bundle, "val")
        for bid in ("ssm_alpha", "ssm_beta", "ssm_gamma")
    ]
    assm_evals = [evaluate_backend(world.registry.get("assm_delta"), world.bundle, "val")]
    plan = build_plan(
        ssm_evals, 0.7, "lm_omni", world.registry,
        assm_evals=assm_evals, assm_tau=0.75, lm_threshold=0.8,
    )
    return world, plan


def test_traces_match_reference_walker(small_world):
    world, plan = small_world
    for ex in world.bundle.split("test"):
        trace = route_example(plan, world.registry, ex)
        visited, final_backend, final_label = reference_walk(plan, world.registry, ex)
        assert trace_tuple(trace) == (visited, final_backend, final_label)


def test_route_dataset_equals_per_example_routing(small_world):
    world, plan = small_world
    traces, report, failures = route_dataset(plan, world.registry, world.bundle, "test")
    assert failures == []
    singles = [route_example(plan, world.registry, ex) for ex in world.bundle.split("test")]
    assert traces == singles
    assert report.n == len(singles)
    rounded = sum(round(s.proportion, 2) for s in report.per_backend.values())
    assert abs(rounded - 100.0) <= 0.02  # the 99.99-after-rounding pattern


def test_route_dataset_parallel_agrees_with_serial(small_world):
    world, plan = small_world
    serial, report_s, _ = route_dataset(plan, world.registry, world.bundle, "test")
    parallel, report_p, _ = route_dataset(plan, world.registry, world.bundle, "test", jobs=4)
    assert serial == parallel
    assert report_s == report_p


def test_trace_invariants_on_simulated_world(small_world):
    world, plan = small_world
    order = plan.backend_ids()
    for ex in world.bundle.split("val"):
        trace = route_example(plan, world.registry, ex)
        assert len(trace.steps) <= len(plan.stages) + 1 + len(plan.augmented_stages)
        # visited prefix of plan order
        visited = [s.backend_id for s in trace.steps]
        assert visited == order[: len(visited)]
        # exactly the last step accepted
        assert [s.accepted for s in trace.steps] == [False] * (len(visited) - 1) + [True]
        # every non-final step is below its gate
        gates = {s.backend_id: s.threshold for s in plan.stages}
        gates[plan.terminal_id] = plan.lm_threshold
        gates.update({s.backend_id: s.threshold for s in plan.augmented_stages})
        for step in trace.steps[:-1]:
            assert step.confidence < gates[step.backend_id]


def test_monotone_terminal_share(small_world):
    world, plan = small_world
    bare = CascadePlan(stages=plan.stages, terminal_id=plan.terminal_id)
    shares = []
    for tau in [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]:
        traces, _, _ = route_dataset(bare.with_global_tau(tau), world.registry, world.bundle, "test")
        shares.append(lm_proportion(traces, "lm_omni"))
    assert shares == sorted(shares)
    assert shares[0] == 0.0
    assert shares[-1] == 100.0  # synthetic confidences are strictly below 1


def test_calibrate_matches_exhaustive_re_evaluation(small_world):
    world, plan = small_world
    grid = [0.5, 0.7, 0.9]
    budget = 0.5
    chosen = calibrate_thresholds(plan, world.registry, world.bundle, grid, budget=budget)

    # oracle: evaluate every grid point from scratch and apply the rule
    candidates = []
    for tau in grid:
        candidate = plan.with_global_tau(tau)
        traces, report, _ = route_dataset(candidate, world.registry, world.bundle, "val")
        share = lm_proportion(traces, plan.terminal_id)
        if share <= 100.0 * budget:
            candidates.append((-report.overall_accuracy, share, tau))
    expected_tau = min(candidates)[2]
    assert chosen.stages[0].threshold == expected_tau
    assert all(s.threshold == expected_tau for s in chosen.stages)


def test_calibrate_grid_of_zero_forces_first_stage():
    world = generate_world(staggered_config(seed=5, n_train=50, n_val=100, n_test=50))
    ev = [evaluate_backend(world.registry.get("ssm_alpha"), world.bundle, "val")]
    plan = build_plan(ev, 0.5, "lm_omni", world.registry)
    chosen = calibrate_thresholds(plan, world.registry, world.bundle, [0.0])
    traces, _, _ = route_dataset(chosen, world.registry, world.bundle, "val")
    assert lm_proportion(traces, "lm_omni") == 0.0


def test_calibrate_infeasible_budget(small_world):
    world, plan = small_world
    with pytest.raises(InfeasibleBudget):
        calibrate_thresholds(plan, world.registry, world.bundle, [1.0], budget=0.01)


def test_specific_layer_records_last_stage_answers(small_world):
    world, plan = small_world
    records = specific_layer_records(plan, world.registry, world.bundle, "val")
    stage_ids = [s.backend_id for s in plan.stages]
    for ex in world.bundle.split("val"):
        record = records[ex.id]
        assert record.backend_id in stage_ids
        # reference: first accepting stage, else last
        expected = None
        for stage in plan.stages:
            rec = world.registry.get(stage.backend_id).predict(ex)
            expected = rec
            if rec.confidence >= stage.threshold:
                break
        assert record == expected


def test_route_dataset_fail_fast_and_skip_errors(tiny_bundle):
    from cascadekit.errors import MissingPrediction

    train = tiny_bundle.split("train")
    table = {ex.id: conf_probs(0.9, 2, ex.gold) for ex in train}
    del table["t2"]  # ssm has no prediction for t2
    ssm = TableBackend("ssm", table)
    lm = TableBackend("lm", {ex.id: conf_probs(0.9, 2, ex.gold) for ex in train}, layer="large")
    registry = make_registry(ssm, lm)
    plan = CascadePlan(stages=(Stage("ssm", 0.5),), terminal_id="lm")

    with pytest.raises(MissingPrediction):
        route_dataset(plan, registry, tiny_bundle, "train")

    traces, report, failures = route_dataset(
        plan, registry, tiny_bundle, "train", skip_errors=True
    )
    assert [f.example_id for f in failures] == ["t2"]
    assert failures[0].backend_id == "ssm"
    assert {t.example_id for t in traces} == {"t1", "t3"}
    assert report.n == 2


def test_plan_toml_round_trip(tmp_path, small_world):
    _, plan = small_world
    path = write_plan_toml(plan, tmp_path / "plan.toml")
    again = load_plan_toml(path)
    assert again == plan
    assert plan_hash(again) == plan_hash(plan)


@st.composite
def plan_and_confidences(draw):
    n_stages = draw(st.integers(min_value=1, max_value=3))
    n_aug = draw(st.integers(min_value=0, max_value=2))
    unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
    thresholds = [draw(unit) for _ in range(n_stages)]
    aug_thresholds = [draw(unit) for _ in range(n_aug)]
    tau2 = draw(unit) if n_aug else None
    conf = st.floats(min_value=0.5, max_value=0.999)  # binary world: conf = max prob
    n_examples = draw(st.integers(min_value=1, max_value=6))
    table = {
        name: {f"e{i}": conf_probs(draw(conf), 2, draw(st.integers(0, 1))) for i in range(n_examples)}
        for name in [f"s{j}" for j in range(n_stages)] + ["lm"] + [f"a{j}" for j in range(n_aug)]
    }
    return thresholds, aug_thresholds, tau2, table, n_examples


@given(plan_and_confidences())
@settings(max_examples=60, deadline=None)
def test_route_example_always_matches_reference(data):
    thresholds, aug_thresholds, tau2, table, n_examples = data
    backends = []
    for name, probs in table.items():
        layer = "large" if name == "lm" else ("augmented" if name.startswith("a") else "specific")
        backends.append(TableBackend(name, probs, layer=layer))
    registry = make_registry(*backends)
    plan = CascadePlan(
        stages=tuple(Stage(f"s{j}", t) for j, t in enumerate(thresholds)),
        terminal_id="lm",
        augmented_stages=tuple(Stage(f"a{j}", t) for j, t in enumerate(aug_thresholds)),
        lm_threshold=tau2,
    )
    for i in range(n_examples):
        ex = example(i)
        trace = route_example(plan, registry, ex)
        assert trace_tuple(trace) == reference_walk(plan, registry, ex)
        # prefix property
        visited = [s.backend_id for s in trace.steps]
        assert visited == plan.backend_ids()[: len(visited)]
