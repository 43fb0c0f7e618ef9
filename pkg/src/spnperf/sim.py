"""Discrete-event simulation of SPNs with batch-means output analysis."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from . import _kernel, guards
from .errors import NetValidationError, VanishingLoopError
from .net import PetriNet
from .results import SIMULATION, EvaluationResult

MAX_VANISHING = 10**6


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    warmup_time_ms: float = 10_000.0
    batch_count: int = 30
    batch_length_ms: float = 10_000.0
    max_time_ms: Optional[float] = None
    confidence_level: float = 0.95
    tracked_places: Optional[tuple] = None
    max_tracked_tokens: int = 200
    # named marking predicates whose time-fraction is estimated jointly
    conditions: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.warmup_time_ms < 0:
            raise NetValidationError("warmup_time_ms must be >= 0")
        if self.batch_count < 2:
            raise NetValidationError("batch_count must be >= 2")
        if not self.batch_length_ms > 0:
            raise NetValidationError("batch_length_ms must be > 0")
        if not 0 < self.confidence_level < 1:
            raise NetValidationError("confidence_level must lie in (0, 1)")
        if self.max_tracked_tokens < 1:
            raise NetValidationError("max_tracked_tokens must be >= 1")
        if self.max_time_ms is not None and self.horizon > self.max_time_ms * (1 + 1e-12):
            raise NetValidationError("warmup + batch_count * batch_length exceeds max_time_ms")

    @property
    def horizon(self) -> float:
        return self.warmup_time_ms + self.batch_count * self.batch_length_ms


def _csr(rows: Sequence[Sequence[tuple]], width: int):
    ptr = np.zeros(len(rows) + 1, dtype=np.int64)
    cols = [np.zeros(sum(len(r) for r in rows), dtype=np.int64) for _ in range(width)]
    k = 0
    for i, row in enumerate(rows):
        for entry in row:
            for j in range(width):
                cols[j][k] = entry[j]
            k += 1
        ptr[i + 1] = k
    return (ptr, *cols)


def _progs(progs):
    ptr = np.zeros(len(progs) + 1, dtype=np.int64)
    for i, p in enumerate(progs):
        ptr[i + 1] = ptr[i] + len(p)
    flat = np.concatenate(progs) if progs and ptr[-1] else np.zeros((0, 3), dtype=np.int64)
    return ptr, np.ascontiguousarray(flat, dtype=np.int64)


@functools.lru_cache(maxsize=64)
def _flatten(net: PetriNet):
    c = net.compiled
    in_ptr, in_p, in_w = _csr(c.inputs, 2)
    inh_ptr, inh_p, inh_w = _csr(c.inhibitors, 2)
    d_ptr, d_p, d_c = _csr(c.delta, 2)
    g_ptr, g_prog = _progs(list(c.guard_progs))
    dep_ptr, dep_t = _csr([[(u,) for u in deps] for deps in c.dependents], 1)
    return (
        c.kind, c.param, c.priority, c.infinite,
        in_ptr, in_p, in_w, inh_ptr, inh_p, inh_w,
        d_ptr, d_p, d_c, g_ptr, g_prog, dep_ptr, dep_t,
    )


def kernel_seed(seed: int) -> int:
    """Map an arbitrary (64-bit) seed onto the kernel's 32-bit seed."""
    return int(np.random.SeedSequence(int(seed)).generate_state(1, dtype=np.uint32)[0])


def _half_width(samples: np.ndarray, level: float) -> np.ndarray:
    n = samples.shape[0]
    sd = samples.std(axis=0, ddof=1)
    return stats.t.ppf(0.5 + level / 2, n - 1) * sd / np.sqrt(n)


def simulate(net: PetriNet, cfg: SimConfig = SimConfig()) -> EvaluationResult:
    """Estimate steady-state measures of ``net`` by simulation.

    Immediate transitions fire in zero time by priority then weight;
    exponential delays are memoryless; deterministic delays keep their
    remaining time while continuously enabled and restart after any
    disabling, even a zero-time one.
    """
    tracked = cfg.tracked_places
    if tracked is None:
        tracked = net.place_ids
    track = np.zeros(len(net.places), dtype=np.bool_)
    for pid in tracked:
        if pid not in net.place_index:
            raise NetValidationError(f"tracked place {pid!r} is not in the net")
        track[net.place_index[pid]] = True
    cond_names = list(cfg.conditions)
    cond_progs = [
        guards.to_postfix(guards.parse_guard(cfg.conditions[name], net), net.place_index) for name in cond_names
    ]
    c_ptr, c_prog = _progs(cond_progs)

    arrays = _flatten(net)
    m0 = np.asarray(net.initial_marking, dtype=np.int64)
    tok, fire, cond, hist, truncated, status, t_end, _ = _kernel.run(
        *arrays, c_ptr, c_prog, track, m0,
        kernel_seed(cfg.seed), float(cfg.warmup_time_ms), float(cfg.batch_length_ms),
        int(cfg.batch_count), int(cfg.max_tracked_tokens), MAX_VANISHING,
    )
    if status == _kernel.STATUS_VANISHING_LOOP:
        raise VanishingLoopError(
            f"more than {MAX_VANISHING} consecutive zero-time firings at t={t_end:.6g} ms"
        )

    L = cfg.batch_length_ms
    level = cfg.confidence_level
    tok_b = tok / L
    fire_b = fire / L
    cond_b = cond[:, : len(cond_names)] / L
    means = tok_b.mean(axis=0)
    hw = _half_width(tok_b, level)
    rates = fire_b.mean(axis=0)
    rate_hw = _half_width(fire_b, level)
    total = cfg.batch_count * L

    histograms = {}
    for pid in tracked:
        h = hist[net.place_index[pid]] / total
        histograms[pid] = h / h.sum() if h.sum() > 0 else h

    warnings = []
    if truncated:
        warnings.append(f"histogram truncated at {cfg.max_tracked_tokens} tokens")
    rel = [hw[i] / means[i] for i in range(len(means)) if track[i] and means[i] > 0]
    nonconvergent = bool(rel) and all(r > 0.5 for r in rel)
    if nonconvergent:
        warnings.append("batch-means relative half-width above 50% for every tracked place")

    return EvaluationResult(
        backend=SIMULATION,
        place_means={p: float(means[i]) for i, p in enumerate(net.place_ids)},
        place_half_widths={p: float(hw[i]) for i, p in enumerate(net.place_ids)},
        histograms=histograms,
        firing_rates={t: float(rates[i]) for i, t in enumerate(net.transition_ids)},
        firing_half_widths={t: float(rate_hw[i]) for i, t in enumerate(net.transition_ids)},
        condition_probabilities={n: float(cond_b[:, i].mean()) for i, n in enumerate(cond_names)},
        condition_half_widths={n: float(_half_width(cond_b[:, i : i + 1], level)[0]) for i, n in enumerate(cond_names)},
        total_time=float(total),
        warnings=warnings,
        nonconvergent=nonconvergent,
    )
