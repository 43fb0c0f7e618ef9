"""Hyperledger Fabric transaction pipeline as an SPN, and its metric suite.

The net follows the endorsement -> ordering -> commit structure with two
endorsers, one orderer and two committers.  Capacity places hold free
queue/processing slots; a transaction (or block) holds a slot for as long
as it occupies the corresponding queue or server.

Flow, in brief::

    AD -> P_GT -> TI1|TI3 -> EQ_n -> TI2|TI4 -> EP_n -> TE1|TE2 -> OQ_1
       -> TI5 -> OP_1 -> TE3 -> OPF3_1 -> TI6 (B tx) -> OPF4_1_1 -> TE4
                                   \\-> TI7 + drain loop -> OPF4_1_2 -> TE5
       -> OPF5_1 -> TE6 -> CQ_1 + CQ_2 -> TI8|TI9 -> CPF_n -> TE7|TE8
       -> CPD_n -> TI_COMMIT (both committers done)

``OPF3_1`` keeps its ``op_1`` slots until the block is cut, so complete
blocks need ``block_size <= op``.  The block-size path (TI6) and the
timeout path (TE9 -> TO_FINISH -> TI7) compete for the accumulated
transactions.  The clock is not touched by complete blocks: once it has
expired (or been spent on a partial block) it is restored by TI10 while a
block sits in ``OPF5_1``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Mapping

from .errors import NetValidationError, SpecError
from .net import DETERMINISTIC, EXPONENTIAL, IMMEDIATE, INFINITE, INPUT, OUTPUT, Arc, PetriNet, Place, Transition
from .results import EvaluationResult, MissingPlaceError, firing_rate

GUARDS = {
    "g01": "#OPF3_1>0",
    "g02": "(#TO_FINISH=1)AND(#OPF3_1>0)",
    "g03": "#OPF4_1_1>0",
    "g04": "#OPF4_1_2>0",
    "g05": "#OPF5_1>0",
    "g06": "#OPF5_1>0",
}
DISCARD_CONDITION = "(#eq1_1=0) AND (#eq1_2=0)"
CONDITIONS = {"discard": DISCARD_CONDITION}

PHASES = ("endorsement", "ordering", "commit")


@dataclass(frozen=True)
class HlfParams:
    arrival_delay_ms: float = 10.0
    block_size: int = 1
    timeout_ms: float = 10_000.0
    eq: int = 100
    ep: int = 6
    oq: int = 100
    op: int = 6
    cq: int = 100
    cp: int = 6
    te1_ms: float = 5.0
    te2_ms: float = 5.0
    te3_ms: float = 5.0
    te4_ms: float = 2.0
    te5_ms: float = 2.0
    te6_ms: float = 10.0
    te7_ms: float = 80.0
    te8_ms: float = 80.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type in ("int",) or f.name in ("block_size", "eq", "ep", "oq", "op", "cq", "cp"):
                if int(v) != v or v < 1:
                    raise SpecError(f"{f.name} must be an integer >= 1, got {v!r}")
                object.__setattr__(self, f.name, int(v))
            elif not float(v) > 0:
                raise SpecError(f"{f.name} must be > 0, got {v!r}")

    @property
    def arrival_rate(self) -> float:
        return 1.0 / self.arrival_delay_ms

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "HlfParams":
        unknown = set(data) - set(cls.field_names())
        if unknown:
            raise SpecError(f"unknown HlfParams keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in fields(cls))

    def with_(self, **changes) -> "HlfParams":
        return replace(self, **changes)


def build_hlf_net(p: HlfParams) -> PetriNet:
    """Construct the Fabric SPN for parameters ``p``."""
    if not isinstance(p, HlfParams):
        raise NetValidationError("build_hlf_net expects HlfParams")
    B = p.block_size
    places = [
        Place("P_GT"),
        Place("eq1_1", p.eq), Place("eq1_2", p.eq),
        Place("EQ_1"), Place("EQ_2"),
        Place("ep1_1", p.ep), Place("ep1_2", p.ep),
        Place("EP_1"), Place("EP_2"),
        Place("oq_1", p.oq), Place("OQ_1"),
        Place("op_1", p.op), Place("OP_1"),
        Place("OPF3_1"), Place("DRAIN"),
        Place("OPF4_1_1"), Place("OPF4_1_2"),
        Place("OPF5_1"),
        Place("Clock", 1), Place("TO_FINISH"), Place("CLK_IDLE"),
        Place("cq1_1", p.cq), Place("cq1_2", p.cq),
        Place("CQ_1"), Place("CQ_2"),
        Place("cp1_1", p.cp), Place("cp1_2", p.cp),
        Place("CPF_1"), Place("CPF_2"),
        Place("CPD_1"), Place("CPD_2"),
    ]

    def imm(tid, priority=1, guard=None):
        return Transition(tid, IMMEDIATE, priority=priority, guard=guard)

    def exp(tid, mean, guard=None):
        return Transition(tid, EXPONENTIAL, delay=mean, guard=guard, server=INFINITE)

    transitions = [
        Transition("AD", DETERMINISTIC, delay=p.arrival_delay_ms),
        imm("TI1", 3), imm("TI3", 3),
        imm("TI_DISCARD", 1, DISCARD_CONDITION),
        imm("TI2"), imm("TI4"),
        exp("TE1", p.te1_ms), exp("TE2", p.te2_ms),
        imm("TI5"),
        exp("TE3", p.te3_ms),
        imm("TI6", 3, GUARDS["g01"]),
        imm("TI7", 2, GUARDS["g02"]),
        imm("TI7_drain"),
        imm("TI7_close", 1, "#OPF3_1=0"),
        Transition("TE9", DETERMINISTIC, delay=p.timeout_ms),
        exp("TE4", p.te4_ms, GUARDS["g03"]),
        exp("TE5", p.te5_ms, GUARDS["g04"]),
        imm("TI10", 1, GUARDS["g06"]),
        imm("TI10_idle", 1, GUARDS["g06"]),
        exp("TE6", p.te6_ms, GUARDS["g05"]),
        imm("TI8"), imm("TI9"),
        exp("TE7", p.te7_ms), exp("TE8", p.te8_ms),
        imm("TI_COMMIT"),
    ]

    arcs: list[Arc] = []

    def t(tid, ins=(), outs=()):
        for item in ins:
            place, mult = item if isinstance(item, tuple) else (item, 1)
            arcs.append(Arc(place, tid, mult, INPUT))
        for item in outs:
            place, mult = item if isinstance(item, tuple) else (item, 1)
            arcs.append(Arc(tid, place, mult, OUTPUT))

    t("AD", outs=["P_GT"])
    # endorsement
    t("TI1", ["P_GT", "eq1_1"], ["EQ_1"])
    t("TI3", ["P_GT", "eq1_2"], ["EQ_2"])
    t("TI_DISCARD", ["P_GT"])
    t("TI2", ["EQ_1", "ep1_1"], ["EP_1", "eq1_1"])
    t("TI4", ["EQ_2", "ep1_2"], ["EP_2", "eq1_2"])
    t("TE1", ["EP_1", "oq_1"], ["ep1_1", "OQ_1"])
    t("TE2", ["EP_2", "oq_1"], ["ep1_2", "OQ_1"])
    # ordering
    t("TI5", ["OQ_1", "op_1"], ["OP_1", "oq_1"])
    t("TE3", ["OP_1"], ["OPF3_1"])
    t("TI6", [("OPF3_1", B), "cq1_1", "cq1_2"], ["OPF4_1_1", ("op_1", B)])
    t("TI7", ["TO_FINISH", "cq1_1", "cq1_2"], ["DRAIN"])
    t("TI7_drain", ["DRAIN", "OPF3_1"], ["DRAIN", "op_1"])
    t("TI7_close", ["DRAIN"], ["OPF4_1_2", "CLK_IDLE"])
    t("TE9", ["Clock"], ["TO_FINISH"])
    t("TE4", ["OPF4_1_1"], ["OPF5_1"])
    t("TE5", ["OPF4_1_2"], ["OPF5_1"])
    # an expired or spent clock comes back once a block is handed to commit
    t("TI10", ["TO_FINISH"], ["Clock"])
    t("TI10_idle", ["CLK_IDLE"], ["Clock"])
    # commit: broadcast to both committers, leave when both are done
    t("TE6", ["OPF5_1"], ["CQ_1", "CQ_2"])
    t("TI8", ["CQ_1", "cp1_1"], ["CPF_1", "cq1_1"])
    t("TI9", ["CQ_2", "cp1_2"], ["CPF_2", "cq1_2"])
    t("TE7", ["CPF_1"], ["CPD_1"])
    t("TE8", ["CPF_2"], ["CPD_2"])
    t("TI_COMMIT", ["CPD_1", "CPD_2"], ["cp1_1", "cp1_2"])

    return PetriNet(places, transitions, arcs, name="hlf")


# -- metrics ----------------------------------------------------------


@dataclass(frozen=True)
class HlfMetrics:
    mrt_ms: float
    throughput_per_ms: float
    utilization_endorsement: float
    utilization_ordering: float
    utilization_commit: float
    discard_probability: float
    block_call_rate_per_ms: float
    timeout_call_rate_per_ms: float
    transactions_in_progress: float

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def utilization(self) -> dict:
        return {
            "endorsement": self.utilization_endorsement,
            "ordering": self.utilization_ordering,
            "commit": self.utilization_commit,
        }


METRIC_NAMES = tuple(f.name for f in fields(HlfMetrics))


def _rate(r: EvaluationResult, tid: str) -> float:
    return firing_rate(r, tid)


def partial_block_size(r: EvaluationResult) -> float:
    """Mean number of transactions flushed by a timeout-triggered block."""
    closes = _rate(r, "TI7_close")
    return _rate(r, "TI7_drain") / closes if closes > 0 else 0.0


def transactions_per_block(r: EvaluationResult, p: HlfParams) -> float:
    """Mean transactions carried by a block leaving ordering."""
    full = _rate(r, "TI6")
    partial = _rate(r, "TI7_close")
    if full + partial <= 0:
        return float(p.block_size)
    return (full * p.block_size + _rate(r, "TI7_drain")) / (full + partial)


def transactions_in_progress(r: EvaluationResult, p: HlfParams) -> float:
    """Expected number of transactions inside the pipeline."""
    tx = sum(r.mean(x) for x in ("P_GT", "EQ_1", "EQ_2", "EP_1", "EP_2", "OQ_1", "OP_1", "OPF3_1"))
    tx += p.block_size * r.mean("OPF4_1_1") + partial_block_size(r) * r.mean("OPF4_1_2")
    in_commit = r.mean("OPF5_1") + r.mean("CQ_1") + r.mean("CPF_1") + r.mean("CPD_1")
    return tx + transactions_per_block(r, p) * in_commit


def mrt(r: EvaluationResult, p: HlfParams) -> float:
    """Mean response time (ms) by Little's law against the offered arrival rate."""
    return transactions_in_progress(r, p) / p.arrival_rate


def utilization(r: EvaluationResult, p: HlfParams, phase: str) -> float:
    """Mean busy fraction of the phase's processing slots."""
    if phase == "endorsement":
        nodes = (("ep1_1", p.ep), ("ep1_2", p.ep))
    elif phase == "ordering":
        nodes = (("op_1", p.op),)
    elif phase == "commit":
        nodes = (("cp1_1", p.cp), ("cp1_2", p.cp))
    else:
        raise ValueError(f"unknown phase {phase!r}; expected one of {PHASES}")
    u = sum((cap - r.mean(free)) / cap for free, cap in nodes) / len(nodes)
    return min(max(u, 0.0), 1.0)


def discard_probability(r: EvaluationResult) -> float:
    """Probability that both endorsement queues are full at the same time."""
    try:
        return r.condition_probabilities["discard"]
    except KeyError:
        raise MissingPlaceError("discard") from None


def block_call_rate(r: EvaluationResult, p: HlfParams) -> float:
    return r.mean("OPF4_1_1") / p.te4_ms


def timeout_call_rate(r: EvaluationResult, p: HlfParams) -> float:
    return r.mean("OPF4_1_2") / p.te5_ms


def throughput(r: EvaluationResult, p: HlfParams) -> float:
    """Committed transactions per ms (mean exit rate over the committers)."""
    blocks = (r.mean("CPF_1") / p.te7_ms + r.mean("CPF_2") / p.te8_ms) / 2
    return blocks * transactions_per_block(r, p)


def compute_metrics(r: EvaluationResult, p: HlfParams) -> HlfMetrics:
    tip = transactions_in_progress(r, p)
    return HlfMetrics(
        mrt_ms=tip / p.arrival_rate,
        throughput_per_ms=throughput(r, p),
        utilization_endorsement=utilization(r, p, "endorsement"),
        utilization_ordering=utilization(r, p, "ordering"),
        utilization_commit=utilization(r, p, "commit"),
        discard_probability=discard_probability(r),
        block_call_rate_per_ms=block_call_rate(r, p),
        timeout_call_rate_per_ms=timeout_call_rate(r, p),
        transactions_in_progress=tip,
    )


def conservation_residuals(r: EvaluationResult, p: HlfParams) -> dict[str, float]:
    """Deviation of each token invariant from its constant (should be ~0)."""
    res = {}
    for n in (1, 2):
        res[f"endorsement_queue_{n}"] = r.mean(f"eq1_{n}") + r.mean(f"EQ_{n}") - p.eq
        res[f"endorsement_proc_{n}"] = r.mean(f"ep1_{n}") + r.mean(f"EP_{n}") - p.ep
        res[f"commit_queue_{n}"] = (
            r.mean(f"cq1_{n}") + r.mean("OPF4_1_1") + r.mean("OPF4_1_2") + r.mean("OPF5_1")
            + r.mean(f"CQ_{n}") + r.mean("DRAIN") - p.cq
        )
        res[f"commit_proc_{n}"] = r.mean(f"cp1_{n}") + r.mean(f"CPF_{n}") + r.mean(f"CPD_{n}") - p.cp
    res["ordering_queue"] = r.mean("oq_1") + r.mean("OQ_1") - p.oq
    res["ordering_proc"] = r.mean("op_1") + r.mean("OP_1") + r.mean("OPF3_1") - p.op
    clock = sum(r.mean(x) for x in ("Clock", "TO_FINISH", "CLK_IDLE", "DRAIN"))
    res["clock"] = clock - 1.0
    return res


# -- evaluation -------------------------------------------------------


def evaluate(
    p: HlfParams,
    backend: str = "simulation",
    sim_config=None,
    erlang_k: int = 20,
    max_states: int | None = None,
    tol: float = 1e-10,
) -> tuple[EvaluationResult, HlfMetrics]:
    """Build the net for ``p``, evaluate it and compute the metric suite."""
    net = build_hlf_net(p)
    if backend in ("simulation", "sim"):
        from .sim import SimConfig, simulate

        cfg = sim_config or SimConfig()
        cfg = replace(cfg, conditions={**CONDITIONS, **dict(cfg.conditions)})
        result = simulate(net, cfg)
    elif backend == "solver":
        from .solver import DEFAULT_MAX_STATES, erlang_expand, evaluate_exact

        result = evaluate_exact(
            erlang_expand(net, erlang_k),
            max_states=max_states or DEFAULT_MAX_STATES,
            tol=tol,
            conditions=CONDITIONS,
        )
    else:
        raise SpecError(f"unknown backend {backend!r}")
    return result, compute_metrics(result, p)
