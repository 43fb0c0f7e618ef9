import csv
import io
import json

import numpy as np
import pytest

from spnperf import Arc, HlfParams, PetriNet, Place, SpecError, Transition, evaluate_exact
from spnperf.experiments import (
    BUNDLED, DoeSpec, EvalOptions, ExperimentError, SweepSpec, bundled_spec_path, cells_csv, doe_2k,
    effects_csv, effects_from_responses, interaction_profile, load_experiment, metric_name, plot_csv,
    point_seed, run_sweep, run_sweeps, sign_table, sweep_csv, worker_count,
)
from spnperf.hlf import evaluate
from spnperf.net import EXPONENTIAL, OUTPUT

SIM = {"warmup_time_ms": 5000.0, "batch_count": 5, "batch_length_ms": 5000.0}
FAST = EvalOptions(sim=SIM)


def test_two_factor_effects_example():
    t = effects_from_responses(["A", "B"], [4, 8, 6, 18])
    assert t.q0 == pytest.approx(9)
    assert t.effects == pytest.approx({"A": 4, "B": 3, "A*B": 2})
    assert sum(t.percent.values()) == pytest.approx(100)
    assert t.rank_of("A") == 1 and t.rank_of("A*B") == 3
    assert set(t.main_effects()) == {"A", "B"} and set(t.interactions()) == {"A*B"}


def test_sign_table_standard_order():
    assert sign_table(2).tolist() == [[-1, -1], [1, -1], [-1, 1], [1, 1]]


@pytest.mark.parametrize("k", [2, 3, 4, 5, 6])
def test_constant_response_has_no_effects(k):
    t = effects_from_responses([f"f{i}" for i in range(k)], [7.5] * 2**k)
    assert t.q0 == 7.5
    assert all(v == 0 for v in t.effects.values())
    assert len(t.effects) == 2**k - 1


@pytest.mark.parametrize("seed", range(20))
def test_percent_variation_sums_to_100(seed):
    y = np.random.default_rng(seed).normal(size=8)
    assert sum(effects_from_responses(["a", "b", "c"], y).percent.values()) == pytest.approx(100)


def test_effects_size_mismatch():
    with pytest.raises(SpecError):
        effects_from_responses(["a", "b"], [1, 2, 3])


def test_additive_model_has_no_interactions_exactly():
    # two independent two-state loops; each factor tunes one loop, response adds them
    def response(cell):
        places = [Place("X1", 1), Place("Y1"), Place("X2", 1), Place("Y2")]
        trans = [Transition("a1", EXPONENTIAL, delay=cell["A"]), Transition("b1", EXPONENTIAL, delay=1.0),
                 Transition("a2", EXPONENTIAL, delay=cell["B"]), Transition("b2", EXPONENTIAL, delay=1.0),]
        arcs = [Arc("X1", "a1"), Arc("a1", "Y1", 1, OUTPUT), Arc("Y1", "b1"), Arc("b1", "X1", 1, OUTPUT),
                Arc("X2", "a2"), Arc("a2", "Y2", 1, OUTPUT), Arc("Y2", "b2"), Arc("b2", "X2", 1, OUTPUT)]
        r = evaluate_exact(PetriNet(places, trans, arcs), tol=1e-13)
        return r.mean("X1") + r.mean("X2")

    t = doe_2k(DoeSpec((("A", 1.0, 3.0), ("B", 1.0, 2.0))), evaluate=response)
    assert abs(t.effects["A*B"]) < 1e-9
    # E(X) = d / (d + 1): half the high-low difference
    assert t.effects["A"] == pytest.approx((0.75 - 0.5) / 2, abs=1e-9)
    assert t.effects["B"] == pytest.approx((2 / 3 - 0.5) / 2, abs=1e-9)


def test_doe_spec_validation():
    with pytest.raises(SpecError):
        DoeSpec((("a", 0, 1),))
    with pytest.raises(SpecError):
        DoeSpec((("a", 0, 1), ("a", 0, 1)))
    with pytest.raises(SpecError):
        doe_2k(DoeSpec((("nope", 0, 1), ("cp", 2, 6))))
    with pytest.raises(ExperimentError):
        doe_2k(DoeSpec((("cp", 2, 6), ("block_size", 0, 1)), options=FAST))


def test_doe_on_model_is_deterministic():
    spec = DoeSpec((("cp", 2, 6), ("block_size", 1, 3)), replications=2, options=FAST)
    a, b = doe_2k(spec, seed=5), doe_2k(spec, seed=5)
    assert effects_csv(a) == effects_csv(b)
    rows = list(csv.reader(io.StringIO(cells_csv(spec, a))))
    assert len(rows) == 5


def test_single_point_sweep_equals_direct_evaluation():
    base = HlfParams(block_size=2)
    spec = SweepSpec(base, (("cp", (4,)),), FAST)
    (row,) = run_sweep(spec, seed=9)
    _, direct = evaluate(base.with_(cp=4), sim_config=FAST.sim_config(point_seed(9, 0)))
    assert row.error is None
    assert row.metrics == direct.to_dict()


def test_sweep_order_and_concurrency(monkeypatch):
    spec = SweepSpec(HlfParams(), (("cp", (2, 6)), ("block_size", (1, 2, 3))), FAST, label="grid")
    assert [(p.cp, p.block_size) for p in spec.points()] == [(2, 1), (2, 2), (2, 3), (6, 1), (6, 2), (6, 3)]
    serial = sweep_csv(run_sweep(spec, seed=4, workers=1))
    monkeypatch.setenv("SPNPERF_WORKERS", "2")
    assert worker_count() == 2
    parallel = sweep_csv(run_sweep(spec, seed=4))
    assert serial == parallel
    rows = list(csv.DictReader(io.StringIO(serial)))
    assert [int(r["index"]) for r in rows] == list(range(6))
    assert all(r["label"] == "grid" for r in rows)
    assert float(rows[0]["arrival_rate"]) == pytest.approx(0.1)


def test_sweep_validation():
    with pytest.raises(SpecError):
        SweepSpec(HlfParams(), ())
    with pytest.raises(SpecError):
        SweepSpec(HlfParams(), (("cp", ()),))
    with pytest.raises(SpecError):
        SweepSpec(HlfParams(), (("warp", (1,)),))
    with pytest.raises(SpecError):
        SweepSpec(HlfParams(), (("cp", (1,)), ("cp", (2,))))
    with pytest.raises(SpecError):
        metric_name("speed")


def test_invalid_point_rejected_up_front():
    with pytest.raises(SpecError):
        run_sweep(SweepSpec(HlfParams(), (("cp", (0, 2)),), FAST))


def test_failed_point_reports_error_row():
    opts = EvalOptions(backend="solver", erlang_k=1, max_states=50)
    rows = run_sweep(SweepSpec(HlfParams(), (("cp", (1, 2)),), opts))
    assert all(r.error and r.metrics is None for r in rows)
    assert "error" in sweep_csv(rows).splitlines()[0]


def test_multi_part_sweeps_and_plot():
    a = SweepSpec(HlfParams(), (("block_size", (1, 2)),), FAST, label="block")
    b = SweepSpec(HlfParams(block_size=2), (("timeout_ms", (10, 100)),), FAST, label="timeout")
    rows = run_sweeps([a, b], seed=1)
    assert [r.label for r in rows] == ["block", "block", "timeout", "timeout"]
    plot = list(csv.reader(io.StringIO(plot_csv(rows, "timeout_ms", ["mrt", "throughput"]))))
    assert plot[0][:2] == ["timeout_ms", "series"]
    assert len(plot) == 5


def test_profile_crossing():
    prof = interaction_profile(HlfParams(block_size=6), [10, 10000], FAST, seed=3)
    assert prof.timeout_call_rate[0] > prof.block_call_rate[0]
    assert prof.block_call_rate[1] > prof.timeout_call_rate[1]
    assert prof.crossing == 10000


def test_point_seed_is_stable_and_distinct():
    assert point_seed(1, 0) == point_seed(1, 0)
    assert len({point_seed(1, i) for i in range(100)}) == 100
    assert point_seed(1, 0, 1) != point_seed(1, 1, 0)


def test_bundled_specs_load():
    for name in BUNDLED:
        exp = load_experiment(json.loads(bundled_spec_path(name).read_text()))
        assert exp.name
    case01 = load_experiment(json.loads(bundled_spec_path("case01").read_text()))
    points = case01.sweeps[0].points()
    assert len(points) == 60
    rates = sorted({round(p.arrival_rate, 12) for p in points})
    assert rates[0] == pytest.approx(0.0025) and rates[-1] == pytest.approx(0.3, abs=2e-3)
    assert np.diff(rates) == pytest.approx(0.01565)
    case02 = load_experiment(json.loads(bundled_spec_path("case02").read_text()))
    assert [s.label for s in case02.sweeps] == ["block", "timeout"]
    case04 = load_experiment(json.loads(bundled_spec_path("case04").read_text()))
    assert case04.doe.names == ("timeout_ms", "block_size", "arrival_delay_ms", "cp")
    with pytest.raises(SpecError):
        bundled_spec_path("case99")


@pytest.mark.parametrize(
    "data",
    [[], {"kind": "map"}, {"kind": "sweep", "axes": []}, {"kind": "sweep", "axes": [{"values": [1]}]},
     {"kind": "sweep", "sweeps": []}, {"kind": "profile"}, {"kind": "doe"},
     {"kind": "doe", "factors": [{"param": "cp"}]}, {"kind": "sweep", "base": {"zz": 1}, "axes": [{"param": "cp", "values": [1]}]},
     {"kind": "sweep", "backend": "mercury", "axes": [{"param": "cp", "values": [1]}]}],
)
def test_experiment_validation(data):
    with pytest.raises(SpecError):
        load_experiment(data)


def test_overrides():
    data = {"kind": "profile", "seed": 1, "timeouts": [10], "sim": {"batch_count": 4}}
    exp = load_experiment(data, {"seed": 8, "backend": "solver", "sim": {"batch_length_ms": 50.0}})
    assert exp.seed == 8 and exp.options.backend == "solver"
    assert exp.options.sim == {"batch_count": 4, "batch_length_ms": 50.0}


def test_conservation_recorded_per_point():
    rows = run_sweep(SweepSpec(HlfParams(), (("block_size", (1, 4)),), FAST))
    assert all(r.residual is not None and r.residual < 1e-6 for r in rows)
    parsed = list(csv.DictReader(io.StringIO(sweep_csv(rows))))
    assert all(float(r["conservation_residual"]) < 1e-6 for r in parsed)
    spec = DoeSpec((("cp", 2, 6), ("block_size", 1, 3)), replications=2, options=FAST)
    table = doe_2k(spec, seed=1)
    assert len(table.residuals) == 4 and max(table.residuals) < 1e-6
