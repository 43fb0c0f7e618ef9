import pytest

from spnperf import Arc, PetriNet, Place, Transition
from spnperf.net import DETERMINISTIC, EXPONENTIAL, IMMEDIATE, INHIBITOR, OUTPUT


def queue_net(arrival, service, capacity=None, arrival_kind=EXPONENTIAL, service_kind=EXPONENTIAL):
    """Single-server queue; ``capacity`` bounds the number in system via a slot place."""
    places = [Place("N")]
    arcs = [Arc("arr", "N", 1, OUTPUT), Arc("N", "srv")]
    if capacity is not None:
        places.append(Place("free", capacity))
        arcs += [Arc("free", "arr"), Arc("srv", "free", 1, OUTPUT)]
    transitions = [
        Transition("arr", arrival_kind, delay=arrival),
        Transition("srv", service_kind, delay=service),
    ]
    return PetriNet(places, transitions, arcs, name="queue")


def ring(n=3, tokens=1, delays=None):
    delays = delays or [1.0] * n
    places = [Place(f"P{i + 1}", tokens if i == 0 else 0) for i in range(n)]
    transitions = [Transition(f"t{i + 1}", EXPONENTIAL, delay=delays[i]) for i in range(n)]
    arcs = []
    for i in range(n):
        arcs += [Arc(f"P{i + 1}", f"t{i + 1}"), Arc(f"t{i + 1}", f"P{(i + 1) % n + 1}", 1, OUTPUT)]
    return PetriNet(places, transitions, arcs, name="ring")


def fixture_nets():
    """Small exponential-only nets used for solver/simulator agreement."""
    nets = {}
    nets["mm1k"] = queue_net(10.0, 5.0, capacity=8)
    nets["ring"] = ring(4, tokens=3, delays=[1.0, 2.0, 0.5, 3.0])

    # two stations sharing a pool of servers, with an immediate routing choice
    places = [Place("src", 4), Place("choose"), Place("A"), Place("B"), Place("pool", 2), Place("busyB")]
    transitions = [
        Transition("go", EXPONENTIAL, delay=4.0, server="infinite"),
        Transition("toA", IMMEDIATE, weight=3.0),
        Transition("toB", IMMEDIATE, weight=1.0),
        Transition("doneA", EXPONENTIAL, delay=2.0, server="infinite"),
        Transition("startB", IMMEDIATE, priority=2),
        Transition("doneB", EXPONENTIAL, delay=3.0),
    ]
    arcs = [
        Arc("src", "go"), Arc("go", "choose", 1, OUTPUT),
        Arc("choose", "toA"), Arc("toA", "A", 1, OUTPUT),
        Arc("choose", "toB"), Arc("toB", "B", 1, OUTPUT),
        Arc("A", "doneA"), Arc("doneA", "src", 1, OUTPUT),
        Arc("B", "startB"), Arc("pool", "startB"), Arc("startB", "busyB", 1, OUTPUT),
        Arc("busyB", "doneB"), Arc("doneB", "pool", 1, OUTPUT), Arc("doneB", "src", 1, OUTPUT),
    ]
    nets["routing"] = PetriNet(places, transitions, arcs, name="routing")

    # guarded producer and an inhibitor-limited buffer
    places = [Place("buf"), Place("on", 1), Place("off")]
    transitions = [
        Transition("prod", EXPONENTIAL, delay=1.0, guard="#on=1"),
        Transition("cons", EXPONENTIAL, delay=1.5),
        Transition("stop", EXPONENTIAL, delay=10.0),
        Transition("start", EXPONENTIAL, delay=5.0),
    ]
    arcs = [
        Arc("prod", "buf", 1, OUTPUT), Arc("buf", "prod", 5, INHIBITOR),
        Arc("buf", "cons"),
        Arc("on", "stop"), Arc("stop", "off", 1, OUTPUT),
        Arc("off", "start"), Arc("start", "on", 1, OUTPUT),
    ]
    nets["guarded"] = PetriNet(places, transitions, arcs, name="guarded")

    # fork/join with two parallel branches
    places = [Place("idle", 3), Place("L"), Place("R"), Place("Ld"), Place("Rd")]
    transitions = [
        Transition("fork", EXPONENTIAL, delay=2.0),
        Transition("left", EXPONENTIAL, delay=1.0, server="infinite"),
        Transition("right", EXPONENTIAL, delay=3.0),
        Transition("join", IMMEDIATE),
    ]
    arcs = [
        Arc("idle", "fork"), Arc("fork", "L", 1, OUTPUT), Arc("fork", "R", 1, OUTPUT),
        Arc("L", "left"), Arc("left", "Ld", 1, OUTPUT),
        Arc("R", "right"), Arc("right", "Rd", 1, OUTPUT),
        Arc("Ld", "join"), Arc("Rd", "join"), Arc("join", "idle", 1, OUTPUT),
    ]
    nets["forkjoin"] = PetriNet(places, transitions, arcs, name="forkjoin")
    return nets


@pytest.fixture
def mm1():
    return queue_net(10.0, 5.0)


# acceptance outcomes, filled by test_acceptance and printed after the run
ACCEPTANCE: dict = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


__all__ = ["queue_net", "ring", "fixture_nets", "record", "ACCEPTANCE", "DETERMINISTIC", "EXPONENTIAL", "IMMEDIATE"]
