"""Exact steady-state analysis of exponential-only SPNs.

Pipeline: :func:`explore` builds the reachability graph,
:func:`eliminate_vanishing` folds zero-time markings into a CTMC over
tangible markings, :func:`steady_state` solves pi Q = 0 by Gauss-Seidel.
Deterministic transitions must first go through :func:`erlang_expand`.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from . import guards
from .errors import NetValidationError, NonConvergenceError, StateSpaceExceededError, VanishingLoopError
from .net import (
    DETERMINISTIC,
    EXPONENTIAL,
    IMMEDIATE,
    INHIBITOR,
    INPUT,
    OUTPUT,
    Arc,
    PetriNet,
    Place,
    Transition,
    enabling_degree,
    fire_index,
)
from .results import SOLVER, EvaluationResult

log = logging.getLogger(__name__)

DEFAULT_MAX_STATES = 2_000_000
MAX_ABSORB_STEPS = 100_000
ABSORB_TOL = 1e-16


@dataclass
class ReachabilityGraph:
    net: PetriNet
    markings: list  # state index -> marking tuple
    tangible: np.ndarray  # bool per state
    src: np.ndarray
    dst: np.ndarray
    trans: np.ndarray  # transition index per edge
    value: np.ndarray  # rate (tangible source) or branching probability (vanishing source)
    initial: int = 0

    @property
    def n_states(self) -> int:
        return len(self.markings)

    @property
    def n_tangible(self) -> int:
        return int(self.tangible.sum())


@dataclass
class Ctmc:
    """CTMC over tangible markings, off-diagonal generator in COO form."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    rates: np.ndarray
    markings: list
    initial: np.ndarray  # initial probability vector over tangible states
    self_rates: np.ndarray  # rate folded back onto the same state (dropped from Q)
    tangible_of: np.ndarray  # graph state -> ctmc state (-1 for vanishing)
    warnings: list = field(default_factory=list)

    def generator(self) -> sp.csr_matrix:
        Q = sp.csr_matrix((self.rates, (self.rows, self.cols)), shape=(self.n, self.n))
        Q.sum_duplicates()
        out = np.asarray(Q.sum(axis=1)).ravel()
        return (Q - sp.diags(out)).tocsr()


def explore(net: PetriNet, max_states: int = DEFAULT_MAX_STATES) -> ReachabilityGraph:
    """Breadth-first reachability graph of an exponential/immediate net."""
    if net.has_deterministic:
        raise NetValidationError("explore requires exponential timed transitions; apply erlang_expand first")
    c = net.compiled
    n_t = c.n_transitions
    imm = [t for t in range(n_t) if c.kind[t] == 0]
    timed = [t for t in range(n_t) if c.kind[t] != 0]

    index: dict = {}
    markings: list = []
    tangible: list = []
    src: list = []
    dst: list = []
    trans: list = []
    value: list = []

    def visit(m):
        i = index.get(m)
        if i is None:
            i = len(markings)
            if i >= max_states:
                raise StateSpaceExceededError(max_states)
            index[m] = i
            markings.append(m)
            queue.append(i)
        return i

    queue: deque = deque()
    initial = visit(net.initial_marking)
    tangible_flags: dict[int, bool] = {}
    while queue:
        i = queue.popleft()
        m = markings[i]
        on_imm = [t for t in imm if enabling_degree(net, m, t) > 0]
        if on_imm:
            top = max(c.priority[t] for t in on_imm)
            on_imm = [t for t in on_imm if c.priority[t] == top]
            wsum = sum(c.param[t] for t in on_imm)
            tangible_flags[i] = False
            for t in on_imm:
                j = visit(fire_index(net, m, t))
                src.append(i)
                dst.append(j)
                trans.append(t)
                value.append(c.param[t] / wsum)
        else:
            tangible_flags[i] = True
            for t in timed:
                d = enabling_degree(net, m, t)
                if d:
                    j = visit(fire_index(net, m, t))
                    src.append(i)
                    dst.append(j)
                    trans.append(t)
                    value.append(c.param[t] * d)
    tangible = np.array([tangible_flags[i] for i in range(len(markings))], dtype=bool)
    g = ReachabilityGraph(
        net=net,
        markings=markings,
        tangible=tangible,
        src=np.array(src, dtype=np.int64),
        dst=np.array(dst, dtype=np.int64),
        trans=np.array(trans, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
        initial=initial,
    )
    _check_vanishing_exits(g)
    return g


def _check_vanishing_exits(g: ReachabilityGraph):
    """Every vanishing state must reach a tangible one through immediate edges."""
    n = g.n_states
    if g.tangible.all():
        return
    vsrc = ~g.tangible[g.src]
    # reverse reachability from tangible states over vanishing-source edges
    A = sp.csr_matrix((np.ones(int(vsrc.sum())), (g.dst[vsrc], g.src[vsrc])), shape=(n, n))
    seen = g.tangible.copy()
    frontier = np.flatnonzero(seen)
    while frontier.size:
        nxt = np.unique(A[frontier].indices)
        nxt = nxt[~seen[nxt]]
        seen[nxt] = True
        frontier = nxt
    if not seen.all():
        bad = int(np.flatnonzero(~seen)[0])
        raise VanishingLoopError(
            f"vanishing marking {g.net.as_dict(g.markings[bad])} cannot reach a tangible marking"
        )


def _vanishing_split(g: ReachabilityGraph):
    """Matrices R_TT, R_TV, P_VV, P_VT and index maps."""
    tang = np.flatnonzero(g.tangible)
    van = np.flatnonzero(~g.tangible)
    t_of = np.full(g.n_states, -1, dtype=np.int64)
    v_of = np.full(g.n_states, -1, dtype=np.int64)
    t_of[tang] = np.arange(tang.size)
    v_of[van] = np.arange(van.size)
    nT, nV = tang.size, van.size
    from_t = g.tangible[g.src]
    to_t = g.tangible[g.dst]

    def block(mask, rmap, cmap, nr, nc):
        return sp.csr_matrix(
            (g.value[mask], (rmap[g.src[mask]], cmap[g.dst[mask]])), shape=(nr, nc)
        )

    R_TT = block(from_t & to_t, t_of, t_of, nT, nT)
    R_TV = block(from_t & ~to_t, t_of, v_of, nT, nV)
    P_VV = block(~from_t & ~to_t, v_of, v_of, nV, nV)
    P_VT = block(~from_t & to_t, v_of, t_of, nV, nT)
    return tang, van, t_of, v_of, R_TT, R_TV, P_VV, P_VT


def _absorb(P_VV, P_VT):
    """X = (I - P_VV)^-1 P_VT: where each vanishing state ends up."""
    nV = P_VV.shape[0]
    if nV == 0:
        return sp.csr_matrix(P_VT.shape)
    # Neumann series sum_k P_VV^k P_VT.  Immediate chains are short, so the
    # series terminates (or decays geometrically through random loops) fast;
    # a multi-RHS sparse LU would be far slower on large vanishing sets.
    P_VV = P_VV.tocsr()
    X = P_VT.tocsr().copy()
    term = X
    for _ in range(MAX_ABSORB_STEPS):
        term = P_VV @ term
        term.eliminate_zeros()
        if term.nnz == 0:
            break
        X = X + term
        if term.data.max() < ABSORB_TOL:
            break
    else:
        raise VanishingLoopError("vanishing states do not drain to tangible states")
    if not np.all(np.isfinite(X.data)):
        raise VanishingLoopError("vanishing loop without exit")
    return X


def eliminate_vanishing(g: ReachabilityGraph) -> Ctmc:
    """Fold vanishing states into rates between tangible states."""
    _check_vanishing_exits(g)
    tang, van, t_of, v_of, R_TT, R_TV, P_VV, P_VT = _vanishing_split(g)
    nT = tang.size
    if nT == 0:
        raise VanishingLoopError("net has no tangible marking")
    X = _absorb(P_VV, P_VT)
    Q = (R_TT + R_TV @ X).tocoo()
    Q.sum_duplicates()
    diag = Q.row == Q.col
    self_rates = np.zeros(nT)
    np.add.at(self_rates, Q.row[diag], Q.data[diag])
    keep = ~diag & (Q.data > 0)
    if g.tangible[g.initial]:
        init = np.zeros(nT)
        init[t_of[g.initial]] = 1.0
    else:
        init = np.asarray(X[v_of[g.initial]].todense()).ravel()
    return Ctmc(
        n=nT,
        rows=Q.row[keep].astype(np.int64),
        cols=Q.col[keep].astype(np.int64),
        rates=Q.data[keep],
        markings=[g.markings[i] for i in tang],
        initial=init,
        self_rates=self_rates,
        tangible_of=t_of,
    )


@njit(cache=True)
def _gauss_seidel(indptr, indices, data, out_rate, pi, tol, max_iter, check_every):
    # column-wise (incoming) storage: for state j, entries i -> j with rate data
    n = pi.shape[0]
    resid = np.inf
    for it in range(max_iter):
        for j in range(n):
            if out_rate[j] <= 0.0:
                continue
            s = 0.0
            for k in range(indptr[j], indptr[j + 1]):
                s += pi[indices[k]] * data[k]
            pi[j] = s / out_rate[j]
        total = pi.sum()
        if total <= 0.0:
            return -1.0, it + 1
        pi /= total
        if (it + 1) % check_every == 0 or it == max_iter - 1:
            resid = 0.0
            for j in range(n):
                s = -pi[j] * out_rate[j]
                for k in range(indptr[j], indptr[j + 1]):
                    s += pi[indices[k]] * data[k]
                if abs(s) > resid:
                    resid = abs(s)
            if resid <= tol:
                return resid, it + 1
    return resid, max_iter


def _solve_irreducible(rows, cols, rates, n, tol, max_iter, method):
    if n == 1:
        return np.ones(1)
    Qin = sp.csc_matrix((rates, (rows, cols)), shape=(n, n))
    Qin.sum_duplicates()
    out_rate = np.asarray(Qin.sum(axis=1)).ravel()
    if method == "direct":
        Q = (Qin - sp.diags(out_rate)).tocsc()
        A = Q.T.tolil()
        A[0, :] = np.ones(n)
        b = np.zeros(n)
        b[0] = 1.0
        pi = spsolve(A.tocsc(), b)
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
        return pi
    pi = np.full(n, 1.0 / n)
    resid, iters = _gauss_seidel(
        Qin.indptr.astype(np.int64), Qin.indices.astype(np.int64), Qin.data.astype(np.float64),
        out_rate, pi, tol, max_iter, 10,
    )
    if not resid <= tol:
        raise NonConvergenceError(f"Gauss-Seidel residual {resid:.3g} > {tol:g} after {iters} sweeps")
    return pi


def steady_state(
    c: Ctmc, tol: float = 1e-10, max_iter: int = 100_000, method: str = "gauss-seidel"
) -> np.ndarray:
    """Stationary distribution of ``c``.

    For a reducible chain the mass lives on the closed classes reachable
    from the initial distribution, weighted by absorption probability; a
    warning is logged and appended to ``c.warnings``.
    """
    n = c.n
    A = sp.csr_matrix((np.ones_like(c.rates), (c.rows, c.cols)), shape=(n, n))
    n_comp, label = csgraph.connected_components(A, directed=True, connection="strong")
    if n_comp == 1:
        return _solve_irreducible(c.rows, c.cols, c.rates, n, tol, max_iter, method)

    # closed (bottom) classes: no edge leaves the class
    leaving = label[c.rows] != label[c.cols]
    open_class = np.zeros(n_comp, dtype=bool)
    open_class[label[c.rows[leaving]]] = True
    start = np.flatnonzero(c.initial > 0)
    reach_mask = np.zeros(n, dtype=bool)
    for s in start:
        reach_mask[csgraph.breadth_first_order(A, s, directed=True, return_predecessors=False)] = True
    bottoms = [k for k in range(n_comp) if not open_class[k] and reach_mask[label == k].any()]
    msg = f"reducible chain: {n_comp} classes, {len(bottoms)} recurrent class(es) reachable from the initial state"
    log.warning(msg)
    c.warnings.append(msg)

    # absorption probabilities into each bottom class via the embedded jump chain
    Qin = sp.csr_matrix((c.rates, (c.rows, c.cols)), shape=(n, n))
    Qin.sum_duplicates()
    out = np.asarray(Qin.sum(axis=1)).ravel()
    recurrent = np.isin(label, bottoms)
    transient = ~recurrent
    weights = {}
    if len(bottoms) == 1:
        weights[bottoms[0]] = 1.0
    else:
        tr = np.flatnonzero(transient)
        P = sp.diags(np.where(out > 0, 1.0 / np.where(out > 0, out, 1.0), 0.0)) @ Qin
        P = P.tocsr()
        P_tt = P[tr][:, tr]
        M = sp.identity(tr.size, format="csc") - P_tt.tocsc()
        for b in bottoms:
            cls = label == b
            hit = np.asarray(P[tr][:, np.flatnonzero(cls)].sum(axis=1)).ravel()
            h = spsolve(M, hit) if tr.size else np.zeros(0)
            h_full = np.zeros(n)
            h_full[tr] = h
            h_full[cls] = 1.0
            weights[b] = float(c.initial @ h_full)
    pi = np.zeros(n)
    for b in bottoms:
        states = np.flatnonzero(label == b)
        local = {s: i for i, s in enumerate(states)}
        mask = (label[c.rows] == b) & (label[c.cols] == b)
        r = np.array([local[s] for s in c.rows[mask]], dtype=np.int64)
        q = np.array([local[s] for s in c.cols[mask]], dtype=np.int64)
        sub = _solve_irreducible(r, q, c.rates[mask], states.size, tol, max_iter, method)
        pi[states] = weights[b] * sub
    return pi / pi.sum()


def residual(c: Ctmc, pi: np.ndarray) -> float:
    """max-norm of pi Q."""
    return float(np.abs(c.generator().T @ pi).max())


# -- deterministic delays --------------------------------------------


def _enabling_guard(t: Transition, ins, inhs) -> Optional[str]:
    parts = [f"#{p}>={w}" for p, w in ins] + [f"#{p}<{w}" for p, w in inhs]
    if t.guard is not None:
        parts.append(f"({t.guard})")
    if not parts:
        return None
    return " AND ".join(f"({x})" if not x.startswith("(") else x for x in parts)


def erlang_expand(net: PetriNet, phases: int = 20) -> PetriNet:
    """Replace each deterministic transition by an Erlang-``phases`` chain.

    A deterministic transition ``t`` with delay ``d`` becomes a phase
    counter place ``t__phase`` plus two exponential transitions of mean
    ``d/phases``: ``t__advance`` (bumps the counter while ``t``'s
    enabling condition holds) and ``t`` itself (fires on the last phase
    with the original arcs).  If ``t`` can be disabled, a top-priority
    immediate ``t__reset`` empties the counter whenever the condition
    fails, which mirrors enabling-memory semantics.
    """
    if phases < 1:
        raise ValueError("phases must be >= 1")
    if not net.has_deterministic:
        return net
    places = list(net.places)
    transitions: list[Transition] = []
    arcs = [a for a in net.arcs]
    top = max([t.priority for t in net.transitions if t.kind == IMMEDIATE], default=0) + 1
    for t in net.transitions:
        if t.kind != DETERMINISTIC:
            transitions.append(t)
            continue
        mean = t.delay / phases
        if phases == 1:
            transitions.append(Transition(t.id, EXPONENTIAL, delay=mean, guard=t.guard))
            continue
        ins = [(a.source, a.multiplicity) for a in net.arcs if a.target == t.id and a.kind == INPUT]
        inhs = [(a.source, a.multiplicity) for a in net.arcs if a.target == t.id and a.kind == INHIBITOR]
        ph = f"{t.id}__phase"
        adv = f"{t.id}__advance"
        places.append(Place(ph, 0))
        transitions.append(Transition(adv, EXPONENTIAL, delay=mean, guard=t.guard))
        arcs += [Arc(p, adv, w, INPUT) for p, w in ins]
        arcs += [Arc(adv, p, w, OUTPUT) for p, w in ins]
        arcs += [Arc(p, adv, w, INHIBITOR) for p, w in inhs]
        arcs += [Arc(ph, adv, phases - 1, INHIBITOR), Arc(adv, ph, 1, OUTPUT)]
        transitions.append(Transition(t.id, EXPONENTIAL, delay=mean, guard=t.guard))
        arcs.append(Arc(ph, t.id, phases - 1, INPUT))
        cond = _enabling_guard(t, ins, inhs)
        if cond is not None:
            rst = f"{t.id}__reset"
            transitions.append(Transition(rst, IMMEDIATE, priority=top, guard=f"NOT ({cond})"))
            arcs.append(Arc(ph, rst, 1, INPUT))
    return PetriNet(places, transitions, arcs, name=f"{net.name}+erlang{phases}")


# -- composition ------------------------------------------------------


def evaluate_exact(
    net: PetriNet,
    max_states: int = DEFAULT_MAX_STATES,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    conditions: Mapping[str, str] | None = None,
    max_tracked_tokens: int = 200,
    method: str = "gauss-seidel",
) -> EvaluationResult:
    """Exact steady-state measures of an exponential/immediate net."""
    g = explore(net, max_states)
    c = eliminate_vanishing(g)
    pi = steady_state(c, tol=tol, max_iter=max_iter, method=method)
    if method != "direct":
        r = residual(c, pi)
        if r > tol:
            raise NonConvergenceError(f"global balance residual {r:.3g} > {tol:g}")

    M = np.asarray(c.markings, dtype=np.int64).reshape(c.n, len(net.places))
    means = pi @ M
    K = max_tracked_tokens
    histograms = {}
    truncated = False
    for i, pid in enumerate(net.place_ids):
        col = M[:, i]
        if col.max(initial=0) > K:
            truncated = True
        h = np.bincount(np.minimum(col, K), weights=pi, minlength=K + 1)
        histograms[pid] = h

    # timed transitions: pi-weighted rate * degree over tangible states
    comp = net.compiled
    rates = np.zeros(comp.n_transitions)
    t_state = c.tangible_of[g.src]
    from_t = g.tangible[g.src]
    np.add.at(rates, g.trans[from_t], pi[t_state[from_t]] * g.value[from_t])
    # immediate transitions: visit rate of each vanishing state times branch probability
    tang, van, t_of, v_of, R_TT, R_TV, P_VV, P_VT = _vanishing_split(g)
    if van.size:
        inflow = R_TV.T @ pi
        A = (sp.identity(van.size, format="csc") - P_VV.tocsc()).T.tocsc()
        visits = spsolve(A, inflow)
        visits = np.atleast_1d(visits)
        vsrc = ~from_t
        np.add.at(rates, g.trans[vsrc], visits[v_of[g.src[vsrc]]] * g.value[vsrc])

    cond_probs = {}
    for name, text in (conditions or {}).items():
        fn = guards.compile_guard(guards.parse_guard(text, net), net.place_index)
        cond_probs[name] = float(sum(pi[s] for s in range(c.n) if fn(c.markings[s])))

    warnings = list(c.warnings)
    if truncated:
        warnings.append(f"histogram truncated at {K} tokens")
    zeros_p = {p: 0.0 for p in net.place_ids}
    return EvaluationResult(
        backend=SOLVER,
        place_means={p: float(means[i]) for i, p in enumerate(net.place_ids)},
        place_half_widths=zeros_p,
        histograms=histograms,
        firing_rates={t: float(rates[i]) for i, t in enumerate(net.transition_ids)},
        firing_half_widths={t: 0.0 for t in net.transition_ids},
        condition_probabilities=cond_probs,
        condition_half_widths={n: 0.0 for n in cond_probs},
        total_time=0.0,
        warnings=warnings,
        n_states=c.n,
    )
