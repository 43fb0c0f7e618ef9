import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spnperf import (
    Arc, NetValidationError, PetriNet, Place, Transition, TransitionNotEnabledError,
    UnknownPlaceError, UnknownTransitionError, enabled, fire,
)
from spnperf.net import (
    DETERMINISTIC, EXPONENTIAL, IMMEDIATE, INHIBITOR, OUTPUT, enabled_indices, enabling_degree, is_vanishing,
)


def pt_net():
    return PetriNet([Place("P"), Place("Q")], [Transition("t", EXPONENTIAL, delay=1.0)],
                    [Arc("P", "t"), Arc("t", "Q", 1, OUTPUT)])


def test_enabled_needs_tokens():
    net = pt_net()
    assert enabled(net, {"P": 0}) == []
    assert enabled(net, {"P": 2}) == ["t"]


def test_immediate_preempts_timed():
    net = PetriNet(
        [Place("A", 1), Place("B", 1), Place("C")],
        [Transition("te", EXPONENTIAL, delay=1.0), Transition("ti", IMMEDIATE)],
        [Arc("A", "te"), Arc("te", "C", 1, OUTPUT), Arc("B", "ti"), Arc("ti", "C", 1, OUTPUT)],
    )
    assert enabled(net, net.initial_marking) == ["ti"]
    assert is_vanishing(net, net.initial_marking)
    assert enabled(net, {"A": 1}) == ["te"]


def test_highest_priority_only():
    net = PetriNet(
        [Place("A", 1)],
        [Transition("lo", IMMEDIATE, priority=1), Transition("hi", IMMEDIATE, priority=3)],
        [Arc("A", "lo"), Arc("A", "hi")],
    )
    assert enabled(net, net.initial_marking) == ["hi"]


def test_fire_moves_tokens_and_keeps_input():
    net = pt_net()
    m = net.marking({"P": 1})
    assert net.as_dict(fire(net, m, "t")) == {"P": 0, "Q": 1}
    assert m == (1, 0)


def test_fire_block_collapse():
    net = PetriNet(
        [Place("OPF3_1", 6), Place("OPF4_1_1")],
        [Transition("TI6", IMMEDIATE, guard="#OPF3_1>0")],
        [Arc("OPF3_1", "TI6", 6), Arc("TI6", "OPF4_1_1", 1, OUTPUT)],
    )
    after = net.as_dict(fire(net, net.initial_marking, "TI6"))
    assert after == {"OPF3_1": 0, "OPF4_1_1": 1}
    assert enabled(net, {"OPF3_1": 5}) == []


def test_fire_disabled_raises():
    with pytest.raises(TransitionNotEnabledError):
        fire(pt_net(), {"P": 0}, "t")
    with pytest.raises(UnknownTransitionError):
        fire(pt_net(), {"P": 1}, "nope")


def test_inhibitor_and_guard():
    net = PetriNet(
        [Place("P", 1), Place("H"), Place("G")],
        [Transition("t", EXPONENTIAL, delay=1.0, guard="#G=0")],
        [Arc("P", "t"), Arc("H", "t", 2, INHIBITOR)],
    )
    assert enabled(net, {"P": 1, "H": 1}) == ["t"]
    assert enabled(net, {"P": 1, "H": 2}) == []
    assert enabled(net, {"P": 1, "G": 1}) == []
    # inhibitor arcs move no tokens
    assert net.as_dict(fire(net, {"P": 1, "H": 1}, "t")) == {"P": 0, "H": 1, "G": 0}


def test_infinite_server_degree():
    net = PetriNet([Place("P", 7)], [Transition("t", EXPONENTIAL, delay=1.0, server="infinite")], [Arc("P", "t", 2)])
    assert enabling_degree(net, net.initial_marking, 0) == 3


@pytest.mark.parametrize(
    "places, transitions, arcs, err",
    [
        ([Place("P"), Place("P")], [], [], NetValidationError),
        ([Place("P")], [Transition("P", IMMEDIATE)], [], NetValidationError),
        ([Place("P"), Place("Q")], [], [Arc("P", "Q")], NetValidationError),
        ([Place("P")], [Transition("t", IMMEDIATE), Transition("u", IMMEDIATE)], [Arc("t", "u", 1, OUTPUT)],
         NetValidationError),
        ([Place("P")], [Transition("t", IMMEDIATE)], [Arc("t", "Q", 1, OUTPUT)], UnknownPlaceError),
        ([Place("P")], [Transition("t", IMMEDIATE)], [Arc("P", "x")], UnknownTransitionError),
        ([Place("P")], [Transition("t", IMMEDIATE, guard="#Z>0")], [], UnknownPlaceError),
    ],
)
def test_structural_validation(places, transitions, arcs, err):
    with pytest.raises(err):
        PetriNet(places, transitions, arcs)


@pytest.mark.parametrize(
    "make",
    [
        lambda: Place("P", -1),
        lambda: Transition("t", EXPONENTIAL, delay=0.0),
        lambda: Transition("t", DETERMINISTIC),
        lambda: Transition("t", IMMEDIATE, weight=0.0),
        lambda: Transition("t", IMMEDIATE, priority=0),
        lambda: Transition("t", "weird", delay=1.0),
        lambda: Transition("t", DETERMINISTIC, delay=1.0, server="infinite"),
        lambda: Arc("P", "t", 0),
    ],
)
def test_element_invariants(make):
    with pytest.raises(NetValidationError):
        make()


def test_json_round_trip():
    net = PetriNet(
        [Place("A", 2), Place("B")],
        [Transition("x", IMMEDIATE, weight=2.0, priority=3, guard="#A>1"),
         Transition("y", DETERMINISTIC, delay=4.0),
         Transition("z", EXPONENTIAL, delay=2.5, server="infinite")],
        [Arc("A", "x", 2), Arc("x", "B", 1, OUTPUT), Arc("B", "y"), Arc("B", "z", 1, INHIBITOR), Arc("z", "A", 1, OUTPUT)],
        name="rt",
    )
    back = PetriNet.from_json(net.to_json())
    assert back.to_dict() == net.to_dict()
    assert json.loads(net.to_json())["arcs"][0] == {"from": "A", "to": "x", "mult": 2, "kind": "input"}


def test_from_dict_missing_key():
    with pytest.raises(NetValidationError, match="places"):
        PetriNet.from_dict({"transitions": [], "arcs": []})


# -- randomized nets ----------------------------------------------------


@st.composite
def nets_and_markings(draw):
    n_p = draw(st.integers(1, 5))
    n_t = draw(st.integers(1, 5))
    places = [Place(f"p{i}", draw(st.integers(0, 4))) for i in range(n_p)]
    transitions = []
    for j in range(n_t):
        kind = draw(st.sampled_from([IMMEDIATE, EXPONENTIAL, DETERMINISTIC]))
        guard = None
        if draw(st.booleans()):
            guard = f"#p{draw(st.integers(0, n_p - 1))}{draw(st.sampled_from(['>', '<', '=', '>=']))}{draw(st.integers(0, 3))}"
        if kind == IMMEDIATE:
            transitions.append(Transition(f"t{j}", kind, priority=draw(st.integers(1, 3)), guard=guard))
        else:
            transitions.append(Transition(f"t{j}", kind, delay=1.0, guard=guard))
    arcs = []
    seen = set()
    for _ in range(draw(st.integers(0, 10))):
        p = f"p{draw(st.integers(0, n_p - 1))}"
        t = f"t{draw(st.integers(0, n_t - 1))}"
        kind = draw(st.sampled_from(["input", "output", "inhibitor"]))
        key = (p, t, kind)
        if key in seen:
            continue
        seen.add(key)
        w = draw(st.integers(1, 3))
        arcs.append(Arc(t, p, w, OUTPUT) if kind == "output" else Arc(p, t, w, kind))
    net = PetriNet(places, transitions, arcs)
    m = tuple(draw(st.integers(0, 6)) for _ in range(n_p))
    return net, m


@settings(max_examples=1000, deadline=None)
@given(nets_and_markings())
def test_firing_keeps_markings_non_negative(nm):
    net, m = nm
    for tid in enabled(net, m):
        after = fire(net, m, tid)
        assert all(v >= 0 for v in after)
        assert len(after) == len(m)


@settings(max_examples=1000, deadline=None)
@given(nets_and_markings())
def test_preemption_and_determinism(nm):
    net, m = nm
    on = enabled(net, m)
    assert on == enabled(net, m)
    kinds = {net.transition(t).kind for t in on}
    if is_vanishing(net, m):
        assert kinds == {IMMEDIATE}
        prios = {net.transition(t).priority for t in on}
        assert len(prios) == 1
    else:
        assert IMMEDIATE not in kinds
    for tid in on:
        assert fire(net, m, tid) == fire(net, m, tid)


@settings(max_examples=1000, deadline=None)
@given(nets_and_markings())
def test_enabling_rule(nm):
    net, m = nm
    c = net.compiled
    raw = [t for t in range(c.n_transitions) if enabling_degree(net, m, t) > 0]
    for t in range(c.n_transitions):
        tr = net.transitions[t]
        ok = all(m[p] >= w for p, w in c.inputs[t]) and all(m[p] < w for p, w in c.inhibitors[t])
        if tr.guard is not None:
            ok = ok and c.guard_fns[t](m)
        assert (t in raw) == ok
    assert set(enabled_indices(net, m)) <= set(raw)
