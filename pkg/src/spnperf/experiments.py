"""Parameter sweeps, timeout/block interaction profiles and 2^k factorial designs.

Every grid point or design cell is an independent evaluation of the
Fabric net.  Points get their own seed derived from the master seed and
the point's position, so results do not depend on how many worker
processes ran them or in which order they finished.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import SpecError, SpnError
from .hlf import METRIC_NAMES, HlfParams, conservation_residuals, evaluate
from .sim import SimConfig

BACKENDS = ("simulation", "solver")
ALIASES = {
    "mrt": "mrt_ms",
    "throughput": "throughput_per_ms",
    "discard": "discard_probability",
    "block_call_rate": "block_call_rate_per_ms",
    "timeout_call_rate": "timeout_call_rate_per_ms",
    "tip": "transactions_in_progress",
}
SIM_KEYS = ("warmup_time_ms", "batch_count", "batch_length_ms", "confidence_level", "max_tracked_tokens")


class ExperimentError(SpnError):
    pass


def metric_name(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in METRIC_NAMES:
        raise SpecError(f"unknown metric {name!r}; expected one of {METRIC_NAMES}")
    return name


def _backend(name: str) -> str:
    name = {"sim": "simulation"}.get(name, name)
    if name not in BACKENDS:
        raise SpecError(f"unknown backend {name!r}")
    return name


def _check_sim(sim: Mapping) -> dict:
    bad = set(sim) - set(SIM_KEYS)
    if bad:
        raise SpecError(f"unknown simulation settings: {sorted(bad)}")
    return dict(sim)


def point_seed(master: int, *index: int) -> int:
    """Seed for one evaluation, a pure function of the master seed and its position."""
    ss = np.random.SeedSequence([int(master) & (2**64 - 1), *map(int, index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def worker_count(requested: Optional[int] = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("SPNPERF_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise SpecError(f"SPNPERF_WORKERS must be an integer, got {env!r}") from None
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1


@dataclass(frozen=True)
class EvalOptions:
    """How a single HlfParams point is evaluated."""

    backend: str = "simulation"
    sim: Mapping = field(default_factory=dict)
    erlang_k: int = 20
    max_states: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "backend", _backend(self.backend))
        object.__setattr__(self, "sim", _check_sim(self.sim))
        if self.erlang_k < 1:
            raise SpecError("erlang_k must be >= 1")

    def sim_config(self, seed: int) -> SimConfig:
        return SimConfig(seed=seed, **self.sim)


def _evaluate_point(task):
    params, opts, seed = task
    try:
        r, m = evaluate(
            params, backend=opts.backend, sim_config=opts.sim_config(seed),
            erlang_k=opts.erlang_k, max_states=opts.max_states,
        )
        residual = max(abs(v) for v in conservation_residuals(r, params).values())
        return m.to_dict(), None, residual
    except SpnError as e:
        return None, f"{type(e).__name__}: {e}", None


def _map(fn, tasks: list, workers: Optional[int]):
    n = min(worker_count(workers), len(tasks))
    if n <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, tasks))


# -- sweeps -----------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    base: HlfParams
    axes: tuple  # ((param, (v1, v2, ...)), ...), cartesian, first axis outermost
    options: EvalOptions = EvalOptions()
    metrics: tuple = METRIC_NAMES
    label: str = ""

    def __post_init__(self):
        if not self.axes:
            raise SpecError("a sweep needs at least one axis")
        valid = HlfParams.field_names()
        axes = []
        for name, values in self.axes:
            if name not in valid:
                raise SpecError(f"unknown sweep parameter {name!r}")
            values = tuple(values)
            if not values:
                raise SpecError(f"axis {name!r} has no values")
            axes.append((name, values))
        names = [a[0] for a in axes]
        if len(set(names)) != len(names):
            raise SpecError("duplicate sweep axis")
        object.__setattr__(self, "axes", tuple(axes))
        object.__setattr__(self, "metrics", tuple(metric_name(m) for m in self.metrics))

    def points(self) -> list[HlfParams]:
        names = [a[0] for a in self.axes]
        return [
            self.base.with_(**dict(zip(names, combo)))
            for combo in itertools.product(*(a[1] for a in self.axes))
        ]


@dataclass
class SweepRow:
    label: str
    index: int
    params: HlfParams
    metrics: Optional[dict]
    error: Optional[str] = None
    residual: Optional[float] = None  # largest token-conservation deviation


def run_sweep(spec: SweepSpec, seed: int = 0, workers: Optional[int] = None, part: int = 0) -> list[SweepRow]:
    """Evaluate every grid point; rows come back in cartesian order."""
    points = spec.points()
    tasks = [(p, spec.options, point_seed(seed, part, i)) for i, p in enumerate(points)]
    out = _map(_evaluate_point, tasks, workers)
    rows = []
    for i, (p, (metrics, err, residual)) in enumerate(zip(points, out)):
        if metrics is not None:
            metrics = {k: metrics[k] for k in spec.metrics}
        rows.append(SweepRow(spec.label, i, p, metrics, err, residual))
    return rows


def run_sweeps(specs: Sequence[SweepSpec], seed: int = 0, workers: Optional[int] = None) -> list[SweepRow]:
    rows = []
    for part, s in enumerate(specs):
        rows.extend(run_sweep(s, seed=seed, workers=workers, part=part))
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep_csv(rows: Sequence[SweepRow], metrics: Sequence[str] = METRIC_NAMES) -> str:
    """CSV text: label, index, parameters, arrival_rate, metrics, conservation residual, error."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    pnames = HlfParams.field_names()
    w.writerow(["label", "index", *pnames, "arrival_rate", *metrics, "conservation_residual", "error"])
    for r in rows:
        d = r.params.to_dict()
        vals = [r.metrics.get(m) if r.metrics else None for m in metrics]
        w.writerow([r.label, r.index, *(_cell(d[p]) for p in pnames), _cell(r.params.arrival_rate),
                    *map(_cell, vals), _cell(r.residual), r.error or ""])
    return buf.getvalue()


def plot_csv(rows: Sequence[SweepRow], x: str, metrics: Sequence[str] = METRIC_NAMES) -> str:
    """Plot-ready CSV: the x column, a series column naming the other swept values, then metrics."""
    pnames = HlfParams.field_names()
    if x != "arrival_rate" and x not in pnames:
        raise SpecError(f"unknown x column {x!r}")
    base = {}
    varying = []
    for r in rows:
        for k, v in r.params.to_dict().items():
            if k in base and base[k] != v and k not in varying and k != x:
                varying.append(k)
            base.setdefault(k, v)
    if x == "arrival_rate" and "arrival_delay_ms" in varying:
        varying.remove("arrival_delay_ms")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([x, "series", *metrics])
    for r in rows:
        d = r.params.to_dict()
        xv = r.params.arrival_rate if x == "arrival_rate" else d[x]
        series = " ".join(f"{k}={d[k]}" for k in varying)
        if r.label:
            series = f"{r.label} {series}".strip()
        w.writerow([_cell(xv), series, *(_cell(r.metrics.get(m)) if r.metrics else "" for m in metrics)])
    return buf.getvalue()


# -- interaction profile ----------------------------------------------


@dataclass
class Profile:
    timeouts: tuple
    block_call_rate: tuple
    timeout_call_rate: tuple
    rows: list

    @property
    def crossing(self) -> Optional[float]:
        """First timeout at which complete blocks are cut at least as often as partial ones."""
        for t, b, p in zip(self.timeouts, self.block_call_rate, self.timeout_call_rate):
            if b >= p:
                return t
        return None


def interaction_profile(
    base: HlfParams,
    timeouts: Iterable[float],
    options: EvalOptions = EvalOptions(),
    seed: int = 0,
    workers: Optional[int] = None,
) -> Profile:
    timeouts = tuple(timeouts)
    spec = SweepSpec(base, (("timeout_ms", timeouts),), options, label="profile")
    rows = run_sweep(spec, seed=seed, workers=workers)
    for r in rows:
        if r.error:
            raise ExperimentError(f"timeout {r.params.timeout_ms}: {r.error}")
    return Profile(
        timeouts,
        tuple(r.metrics["block_call_rate_per_ms"] for r in rows),
        tuple(r.metrics["timeout_call_rate_per_ms"] for r in rows),
        rows,
    )


# -- 2^k factorial designs --------------------------------------------


@dataclass(frozen=True)
class DoeSpec:
    factors: tuple  # ((name, low, high), ...)
    response: str = "mrt_ms"
    replications: int = 3
    base: HlfParams = HlfParams()
    options: EvalOptions = EvalOptions()

    def __post_init__(self):
        factors = tuple((str(n), lo, hi) for n, lo, hi in self.factors)
        if not 2 <= len(factors) <= 6:
            raise SpecError(f"a 2^k design needs 2..6 factors, got {len(factors)}")
        names = [f[0] for f in factors]
        if len(set(names)) != len(names):
            raise SpecError("duplicate factor")
        if self.replications < 1:
            raise SpecError("replications must be >= 1")
        object.__setattr__(self, "factors", factors)

    @property
    def names(self) -> tuple:
        return tuple(f[0] for f in self.factors)

    def cells(self) -> list[dict]:
        """Factor settings in standard order (first factor alternates fastest)."""
        k = len(self.factors)
        out = []
        for i in range(2**k):
            out.append({n: (hi if (i >> j) & 1 else lo) for j, (n, lo, hi) in enumerate(self.factors)})
        return out


def sign_table(k: int) -> np.ndarray:
    """(2^k, k) matrix of -1/+1 in standard order."""
    i = np.arange(2**k)[:, None]
    return np.where((i >> np.arange(k)) & 1, 1, -1)


@dataclass
class EffectsTable:
    q0: float
    effects: dict  # "A", "A*B", ... in standard order
    percent: dict
    responses: tuple
    cells: list
    residuals: tuple = ()  # per cell, largest conservation deviation over replications

    def ranked(self) -> list[tuple]:
        """(name, effect, percent) sorted by |effect|, largest first."""
        return sorted(((n, e, self.percent[n]) for n, e in self.effects.items()), key=lambda r: -abs(r[1]))

    def rank_of(self, name: str) -> int:
        return [r[0] for r in self.ranked()].index(name) + 1

    def main_effects(self) -> dict:
        return {n: e for n, e in self.effects.items() if "*" not in n}

    def interactions(self) -> dict:
        return {n: e for n, e in self.effects.items() if "*" in n}


def effects_from_responses(names: Sequence[str], y: Sequence[float], cells=None) -> EffectsTable:
    """Sign-table effects for responses given in standard order."""
    k = len(names)
    y = np.asarray(y, dtype=float)
    if y.shape != (2**k,):
        raise SpecError(f"expected {2**k} responses, got {y.size}")
    S = sign_table(k)
    n = 2**k
    effects = {}
    # standard order of columns: by bitmask 1..2^k-1 (A, B, AB, C, AC, ...)
    for mask in range(1, n):
        cols = [j for j in range(k) if (mask >> j) & 1]
        col = np.prod(S[:, cols], axis=1)
        effects["*".join(names[j] for j in cols)] = float(col @ y / n)
    ss = {e: n * v * v for e, v in effects.items()}
    total = sum(ss.values())
    percent = {e: (100.0 * s / total if total > 0 else 0.0) for e, s in ss.items()}
    return EffectsTable(float(y.mean()), effects, percent, tuple(map(float, y)), list(cells or []))


def _doe_task(task):
    params, opts, seed, response = task
    metrics, err, residual = _evaluate_point((params, opts, seed))
    return (metrics[response] if metrics else None), err, residual


def doe_2k(
    spec: DoeSpec,
    seed: int = 0,
    workers: Optional[int] = None,
    evaluate: Optional[Callable[[dict], float]] = None,
) -> EffectsTable:
    """Run all 2^k cells and allocate the variation among effects.

    ``evaluate`` replaces the Fabric model with any callable taking the
    cell's factor settings; replications are then skipped.
    """
    cells = spec.cells()
    if evaluate is not None:
        y = []
        for i, c in enumerate(cells):
            try:
                y.append(float(evaluate(c)))
            except Exception as e:
                raise ExperimentError(f"cell {i} {c}: {e}") from e
        return effects_from_responses(spec.names, y, cells)

    valid = HlfParams.field_names()
    for n in spec.names:
        if n not in valid:
            raise SpecError(f"unknown factor {n!r}")
    response = metric_name(spec.response)
    reps = 1 if spec.options.backend == "solver" else spec.replications
    tasks = []
    for i, c in enumerate(cells):
        try:
            params = spec.base.with_(**c)
        except SpecError as e:
            raise ExperimentError(f"cell {i} {c}: {e}") from e
        for r in range(reps):
            tasks.append((params, spec.options, point_seed(seed, i, r), response))
    out = _map(_doe_task, tasks, workers)
    y = []
    residuals = []
    for i, c in enumerate(cells):
        chunk = out[i * reps:(i + 1) * reps]
        for _, err, _ in chunk:
            if err:
                raise ExperimentError(f"cell {i} {c}: {err}")
        y.append(math.fsum(v for v, _, _ in chunk) / reps)
        residuals.append(max(r for _, _, r in chunk))
    table = effects_from_responses(spec.names, y, cells)
    table.residuals = tuple(residuals)
    return table


def effects_csv(table: EffectsTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["effect", "value", "percent_variation", "rank"])
    w.writerow(["q0", repr(table.q0), "", ""])
    for rank, (name, e, pct) in enumerate(table.ranked(), 1):
        w.writerow([name, repr(e), repr(pct), rank])
    return buf.getvalue()


def cells_csv(spec: DoeSpec, table: EffectsTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", *spec.names, metric_name(spec.response), "conservation_residual"])
    residuals = table.residuals or (None,) * len(table.cells)
    for i, (c, y, res) in enumerate(zip(table.cells, table.responses, residuals)):
        w.writerow([i, *(_cell(c[n]) for n in spec.names), repr(y), _cell(res)])
    return buf.getvalue()


# -- spec files --------------------------------------------------------


def _options(data: Mapping, defaults: Optional[EvalOptions] = None) -> EvalOptions:
    o = defaults or EvalOptions()
    return EvalOptions(
        backend=data.get("backend", o.backend),
        sim={**o.sim, **data.get("sim", {})},
        erlang_k=int(data.get("erlang_k", o.erlang_k)),
        max_states=data.get("max_states", o.max_states),
    )


def _axes(raw) -> tuple:
    if not isinstance(raw, list):
        raise SpecError("'axes' must be a list")
    out = []
    for a in raw:
        try:
            out.append((a["param"], tuple(a["values"])))
        except (KeyError, TypeError):
            raise SpecError("each axis needs 'param' and 'values'") from None
    return tuple(out)


@dataclass(frozen=True)
class ExperimentFile:
    """A parsed experiment configuration (sweep, profile or doe)."""

    kind: str
    name: str
    seed: int
    sweeps: tuple = ()
    doe: Optional[DoeSpec] = None
    profile_base: Optional[HlfParams] = None
    timeouts: tuple = ()
    options: EvalOptions = EvalOptions()
    plot_x: Optional[str] = None


def load_experiment(data: Mapping, overrides: Optional[Mapping] = None) -> ExperimentFile:
    """Parse an experiment mapping; ``overrides`` patch backend/sim/seed settings."""
    if not isinstance(data, Mapping):
        raise SpecError("experiment file must hold a JSON object")
    data = dict(data)
    overrides = dict(overrides or {})
    kind = data.get("kind")
    if kind not in ("sweep", "profile", "doe"):
        raise SpecError(f"'kind' must be sweep, profile or doe, got {kind!r}")
    try:
        base = HlfParams.from_dict(data.get("base", {}))
    except TypeError as e:
        raise SpecError(str(e)) from None
    opts = _options({**data, **{k: v for k, v in overrides.items() if k in ("backend", "erlang_k", "max_states")}})
    if "sim" in overrides:
        opts = replace(opts, sim={**opts.sim, **overrides["sim"]})
    seed = int(overrides.get("seed", data.get("seed", 0)))
    name = str(data.get("name", kind))
    plot_x = (data.get("plot") or {}).get("x")
    if kind == "sweep":
        parts = data.get("sweeps")
        if parts is None:
            parts = [{"label": data.get("label", ""), "axes": data.get("axes")}]
        if not parts:
            raise SpecError("sweep file has no sweeps")
        metrics = tuple(data.get("metrics", METRIC_NAMES))
        sweeps = []
        for part in parts:
            pbase = base.with_(**part.get("base", {})) if part.get("base") else base
            sweeps.append(SweepSpec(pbase, _axes(part.get("axes")), opts, metrics, str(part.get("label", ""))))
        return ExperimentFile(kind, name, seed, sweeps=tuple(sweeps), options=opts, plot_x=plot_x)
    if kind == "profile":
        timeouts = tuple(data.get("timeouts", ()))
        if not timeouts:
            raise SpecError("profile needs a non-empty 'timeouts' list")
        return ExperimentFile(kind, name, seed, profile_base=base, timeouts=timeouts, options=opts)
    factors = data.get("factors")
    if not isinstance(factors, list):
        raise SpecError("doe needs a 'factors' list")
    try:
        fac = tuple((f["param"], f["low"], f["high"]) for f in factors)
    except (KeyError, TypeError):
        raise SpecError("each factor needs 'param', 'low' and 'high'") from None
    doe = DoeSpec(fac, data.get("response", "mrt_ms"), int(data.get("replications", 3)), base, opts)
    return ExperimentFile(kind, name, seed, doe=doe, options=opts)


BUNDLED = ("case01", "case02", "case03", "case04")


def bundled_spec_path(name: str):
    from importlib import resources

    if name not in BUNDLED:
        raise SpecError(f"no bundled spec {name!r}; choose from {BUNDLED}")
    return resources.files("spnperf") / "specs" / f"{name}.spec"
