"""Stochastic Petri net structure, enabling and firing rules.

Markings are dense tuples of token counts in place-declaration order, so
they hash cheaply during state-space exploration.  All functions here are
pure; a :class:`PetriNet` never changes after construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import guards
from .errors import NetValidationError, TransitionNotEnabledError, UnknownPlaceError, UnknownTransitionError

IMMEDIATE = "immediate"
EXPONENTIAL = "exponential"
DETERMINISTIC = "deterministic"
KINDS = (IMMEDIATE, EXPONENTIAL, DETERMINISTIC)

SINGLE = "single"
INFINITE = "infinite"

INPUT = "input"
OUTPUT = "output"
INHIBITOR = "inhibitor"

Marking = tuple


@dataclass(frozen=True)
class Place:
    id: str
    initial_tokens: int = 0

    def __post_init__(self):
        if self.initial_tokens < 0:
            raise NetValidationError(f"place {self.id!r}: negative initial tokens")


@dataclass(frozen=True)
class Transition:
    """A transition.

    ``delay`` is the mean delay in ms for exponential transitions and the
    fixed delay for deterministic ones; immediate transitions use
    ``weight`` and ``priority`` instead.  ``server`` selects single- or
    infinite-server semantics for exponential transitions.
    """

    id: str
    kind: str
    delay: Optional[float] = None
    weight: float = 1.0
    priority: int = 1
    guard: Optional[str] = None
    server: str = SINGLE

    def __post_init__(self):
        if self.kind not in KINDS:
            raise NetValidationError(f"transition {self.id!r}: unknown kind {self.kind!r}")
        if self.kind == IMMEDIATE:
            if not self.weight > 0:
                raise NetValidationError(f"transition {self.id!r}: weight must be > 0")
            if self.priority < 1:
                raise NetValidationError(f"transition {self.id!r}: priority must be >= 1")
        else:
            if self.delay is None or not self.delay > 0:
                raise NetValidationError(f"transition {self.id!r}: delay must be > 0")
        if self.server not in (SINGLE, INFINITE):
            raise NetValidationError(f"transition {self.id!r}: unknown server {self.server!r}")
        if self.server == INFINITE and self.kind != EXPONENTIAL:
            raise NetValidationError(
                f"transition {self.id!r}: infinite-server semantics only for exponential transitions"
            )

    @property
    def timed(self) -> bool:
        return self.kind != IMMEDIATE

    @property
    def rate(self) -> float:
        return 1.0 / self.delay


@dataclass(frozen=True)
class Arc:
    source: str
    target: str
    multiplicity: int = 1
    kind: str = INPUT

    def __post_init__(self):
        if self.kind not in (INPUT, OUTPUT, INHIBITOR):
            raise NetValidationError(f"arc {self.source}->{self.target}: unknown kind {self.kind!r}")
        if self.multiplicity < 1:
            raise NetValidationError(f"arc {self.source}->{self.target}: multiplicity must be >= 1")


@dataclass(frozen=True)
class CompiledNet:
    """Index-based view of a net used by the simulator and the explorer."""

    n_places: int
    n_transitions: int
    kind: np.ndarray  # 0 immediate, 1 exponential, 2 deterministic
    param: np.ndarray  # weight, rate (1/mean) or fixed delay
    priority: np.ndarray
    infinite: np.ndarray
    inputs: tuple  # per transition: tuple of (place, mult)
    outputs: tuple
    inhibitors: tuple
    delta: tuple  # per transition: tuple of (place, net change)
    guard_fns: tuple  # per transition: predicate or None
    guard_progs: tuple  # per transition: postfix program (possibly empty)
    dependents: tuple  # per transition: transitions to re-check after it fires


class PetriNet:
    """Immutable SPN: places, transitions, arcs and the initial marking."""

    def __init__(
        self,
        places: Iterable[Place],
        transitions: Iterable[Transition],
        arcs: Iterable[Arc],
        name: str = "net",
    ):
        self.name = name
        self.places = tuple(places)
        self.transitions = tuple(transitions)
        self.arcs = tuple(arcs)
        self.place_ids = tuple(p.id for p in self.places)
        self.transition_ids = tuple(t.id for t in self.transitions)
        self.place_index = {pid: i for i, pid in enumerate(self.place_ids)}
        self.transition_index = {tid: i for i, tid in enumerate(self.transition_ids)}
        self._validate()
        self.guard_trees = tuple(
            None if t.guard is None else guards.parse_guard(t.guard, self) for t in self.transitions
        )

    def _validate(self):
        if len(self.place_index) != len(self.places):
            raise NetValidationError("duplicate place id")
        if len(self.transition_index) != len(self.transitions):
            raise NetValidationError("duplicate transition id")
        clash = set(self.place_index) & set(self.transition_index)
        if clash:
            raise NetValidationError(f"ids used for both a place and a transition: {sorted(clash)}")
        for a in self.arcs:
            if a.kind == OUTPUT:
                t_id, p_id = a.source, a.target
            else:
                p_id, t_id = a.source, a.target
            known = self.place_index.keys() | self.transition_index.keys()
            if p_id not in known:
                raise UnknownPlaceError(p_id)
            if t_id not in known:
                raise UnknownTransitionError(t_id)
            if p_id not in self.place_index or t_id not in self.transition_index:
                raise NetValidationError(
                    f"arc {a.source}->{a.target} ({a.kind}) must connect a place and a transition"
                )

    # -- markings -----------------------------------------------------

    @property
    def initial_marking(self) -> Marking:
        return tuple(p.initial_tokens for p in self.places)

    def marking(self, tokens: Mapping[str, int] | Sequence[int] | None = None, **kw) -> Marking:
        """Build a dense marking from a mapping (missing places are 0)."""
        if tokens is not None and not isinstance(tokens, Mapping):
            m = tuple(int(x) for x in tokens)
            if len(m) != len(self.places):
                raise NetValidationError("marking length does not match the number of places")
            return m
        values = dict(tokens or {}, **kw)
        m = [0] * len(self.places)
        for pid, n in values.items():
            if pid not in self.place_index:
                raise UnknownPlaceError(pid)
            m[self.place_index[pid]] = int(n)
        return tuple(m)

    def as_dict(self, m: Sequence[int]) -> dict[str, int]:
        return dict(zip(self.place_ids, (int(x) for x in m)))

    # -- structure ----------------------------------------------------

    @cached_property
    def compiled(self) -> CompiledNet:
        n_t = len(self.transitions)
        ins = [[] for _ in range(n_t)]
        outs = [[] for _ in range(n_t)]
        inhs = [[] for _ in range(n_t)]
        for a in self.arcs:
            if a.kind == OUTPUT:
                outs[self.transition_index[a.source]].append((self.place_index[a.target], a.multiplicity))
            else:
                t = self.transition_index[a.target]
                table = ins if a.kind == INPUT else inhs
                table[t].append((self.place_index[a.source], a.multiplicity))
        deltas = []
        for t in range(n_t):
            d: dict[int, int] = {}
            for p, w in ins[t]:
                d[p] = d.get(p, 0) - w
            for p, w in outs[t]:
                d[p] = d.get(p, 0) + w
            deltas.append(tuple((p, c) for p, c in sorted(d.items()) if c != 0))
        # transitions whose enabling reads each place
        readers: dict[int, set[int]] = {}
        for t in range(n_t):
            read = {p for p, _ in ins[t]} | {p for p, _ in inhs[t]}
            g = self.guard_trees[t]
            if g is not None:
                read |= {self.place_index[x] for x in guards.places_of(g)}
            for p in read:
                readers.setdefault(p, set()).add(t)
        dependents = []
        for t in range(n_t):
            touched = {p for p, _ in ins[t]} | {p for p, _ in outs[t]}
            dep = {t}
            for p in touched:
                dep |= readers.get(p, set())
            dependents.append(tuple(sorted(dep)))
        kind = np.array([KINDS.index(t.kind) for t in self.transitions], dtype=np.int64)
        param = np.array(
            [
                t.weight if t.kind == IMMEDIATE else (t.rate if t.kind == EXPONENTIAL else t.delay)
                for t in self.transitions
            ],
            dtype=np.float64,
        )
        return CompiledNet(
            n_places=len(self.places),
            n_transitions=n_t,
            kind=kind,
            param=param,
            priority=np.array([t.priority for t in self.transitions], dtype=np.int64),
            infinite=np.array([t.server == INFINITE for t in self.transitions], dtype=np.bool_),
            inputs=tuple(tuple(x) for x in ins),
            outputs=tuple(tuple(x) for x in outs),
            inhibitors=tuple(tuple(x) for x in inhs),
            delta=tuple(deltas),
            guard_fns=tuple(
                None if g is None else guards.compile_guard(g, self.place_index) for g in self.guard_trees
            ),
            guard_progs=tuple(
                np.zeros((0, 3), dtype=np.int64) if g is None else guards.to_postfix(g, self.place_index)
                for g in self.guard_trees
            ),
            dependents=tuple(dependents),
        )

    def transition(self, tid: str) -> Transition:
        try:
            return self.transitions[self.transition_index[tid]]
        except KeyError:
            raise UnknownTransitionError(tid) from None

    @property
    def has_deterministic(self) -> bool:
        return any(t.kind == DETERMINISTIC for t in self.transitions)

    def __repr__(self):
        return f"PetriNet({self.name!r}, {len(self.places)} places, {len(self.transitions)} transitions)"

    # -- interchange --------------------------------------------------

    def to_dict(self) -> dict:
        trans = []
        for t in self.transitions:
            d = {"id": t.id, "kind": t.kind}
            if t.kind == IMMEDIATE:
                d["weight"] = t.weight
                d["priority"] = t.priority
            else:
                d["delay_ms"] = t.delay
            if t.server != SINGLE:
                d["server"] = t.server
            if t.guard is not None:
                d["guard"] = t.guard
            trans.append(d)
        return {
            "name": self.name,
            "places": [{"id": p.id, "tokens": p.initial_tokens} for p in self.places],
            "transitions": trans,
            "arcs": [
                {"from": a.source, "to": a.target, "mult": a.multiplicity, "kind": a.kind} for a in self.arcs
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PetriNet":
        try:
            places = [Place(p["id"], int(p.get("tokens", 0))) for p in data["places"]]
            transitions = []
            for t in data["transitions"]:
                kind = t["kind"]
                transitions.append(
                    Transition(
                        id=t["id"],
                        kind=kind,
                        delay=None if kind == IMMEDIATE else float(t["delay_ms"]),
                        weight=float(t.get("weight", 1.0)),
                        priority=int(t.get("priority", 1)),
                        guard=t.get("guard"),
                        server=t.get("server", SINGLE),
                    )
                )
            arcs = [Arc(a["from"], a["to"], int(a.get("mult", 1)), a.get("kind", INPUT)) for a in data["arcs"]]
        except KeyError as exc:
            raise NetValidationError(f"missing key {exc.args[0]!r} in net description") from None
        return cls(places, transitions, arcs, name=data.get("name", "net"))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "PetriNet":
        return cls.from_dict(json.loads(text))


# -- enabling and firing ----------------------------------------------


def _as_marking(net: PetriNet, m) -> Marking:
    if isinstance(m, Mapping):
        return net.marking(m)
    if len(m) != len(net.places):
        raise NetValidationError("marking length does not match the number of places")
    return tuple(m)


def enabling_degree(net: PetriNet, m: Sequence[int], t: int) -> int:
    """How many times transition index ``t`` is concurrently enabled.

    Zero when disabled.  Single-server and immediate transitions report 1
    when enabled; infinite-server transitions report min(m(p) // mult)
    over input arcs.
    """
    c = net.compiled
    for p, w in c.inhibitors[t]:
        if m[p] >= w:
            return 0
    deg = None
    for p, w in c.inputs[t]:
        q = m[p] // w
        if q == 0:
            return 0
        deg = q if deg is None or q < deg else deg
    fn = c.guard_fns[t]
    if fn is not None and not fn(m):
        return 0
    if deg is None or not c.infinite[t]:
        return 1
    return deg


def enabled_indices(net: PetriNet, m: Sequence[int]) -> list[int]:
    c = net.compiled
    on = [t for t in range(c.n_transitions) if enabling_degree(net, m, t) > 0]
    imm = [t for t in on if c.kind[t] == 0]
    if imm:
        top = max(c.priority[t] for t in imm)
        return [t for t in imm if c.priority[t] == top]
    return on


def enabled(net: PetriNet, m) -> list[str]:
    """Ids of transitions enabled in ``m``.

    If any immediate transition is enabled, only immediate transitions of
    the highest enabled priority are returned (the marking is vanishing).
    """
    m = _as_marking(net, m)
    return [net.transition_ids[t] for t in enabled_indices(net, m)]


def is_vanishing(net: PetriNet, m) -> bool:
    m = _as_marking(net, m)
    c = net.compiled
    return any(c.kind[t] == 0 and enabling_degree(net, m, t) > 0 for t in range(c.n_transitions))


def fire_index(net: PetriNet, m: Sequence[int], t: int) -> Marking:
    out = list(m)
    for p, d in net.compiled.delta[t]:
        out[p] += d
    return tuple(out)


def fire(net: PetriNet, m, t: str) -> Marking:
    """Fire transition ``t`` in ``m`` and return the successor marking."""
    m = _as_marking(net, m)
    idx = net.transition_index.get(t)
    if idx is None:
        raise UnknownTransitionError(t)
    if idx not in enabled_indices(net, m):
        raise TransitionNotEnabledError(f"transition {t!r} is not enabled")
    return fire_index(net, m, idx)
