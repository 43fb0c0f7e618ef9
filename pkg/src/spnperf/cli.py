"""``spnperf`` command line: validate, evaluate, sweep, doe."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional

from . import __version__
from .errors import (
    NetValidationError,
    NonConvergenceError,
    SpecError,
    SpnError,
    StateSpaceExceededError,
    VanishingLoopError,
)
from .experiments import (
    BUNDLED,
    bundled_spec_path,
    cells_csv,
    doe_2k,
    effects_csv,
    interaction_profile,
    load_experiment,
    plot_csv,
    run_sweeps,
    sweep_csv,
)
from .hlf import HlfParams, evaluate
from .net import PetriNet
from .sim import SimConfig, simulate

log = logging.getLogger("spnperf")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 2
EXIT_STATE_SPACE = 3
EXIT_NONCONVERGENCE = 4
EXIT_VANISHING_LOOP = 5


class OutputConflict(SpnError):
    pass


def exit_code(err: BaseException) -> int:
    if isinstance(err, StateSpaceExceededError):
        return EXIT_STATE_SPACE
    if isinstance(err, NonConvergenceError):
        return EXIT_NONCONVERGENCE
    if isinstance(err, VanishingLoopError):
        return EXIT_VANISHING_LOOP
    if isinstance(err, (NetValidationError, SpecError, json.JSONDecodeError)):
        return EXIT_VALIDATION
    return EXIT_ERROR


# -- input -------------------------------------------------------------


def _read(path: str) -> tuple[bytes, str]:
    p = Path(path)
    if not p.exists() and path.removesuffix(".spec") in BUNDLED:
        p = bundled_spec_path(path.removesuffix(".spec"))
        return p.read_bytes(), str(path)
    return p.read_bytes(), str(p)


def _parse_json(raw: bytes, name: str):
    try:
        return json.loads(raw.decode("utf-8"))
    except json.JSONDecodeError as e:
        raise SpecError(f"{name}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    except UnicodeDecodeError as e:
        raise SpecError(f"{name}: not UTF-8 text ({e})") from None


def load_model(data) -> tuple[PetriNet, Optional[HlfParams]]:
    """A JSON object is either a net (has 'places') or a set of HlfParams."""
    if not isinstance(data, dict):
        raise SpecError("model file must hold a JSON object")
    if "places" in data:
        return PetriNet.from_dict(data), None
    from .hlf import build_hlf_net

    params = HlfParams.from_dict(data)
    return build_hlf_net(params), params


def digest(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


# -- output ------------------------------------------------------------


def _write(path: Path, text: str, force: bool) -> Path:
    data = text.encode("utf-8")
    if path.exists() and path.read_bytes() != data and not force:
        raise OutputConflict(f"{path} exists with different content; use --force to replace it")
    path.write_bytes(data)
    return path


class Run:
    """Collects outputs and writes the manifest that ties them together."""

    def __init__(self, args, command: str, raw: bytes, source: str, settings: dict):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        key = raw + json.dumps(settings, sort_keys=True).encode()
        self.stem = f"{command}-{digest(key)[:12]}"
        self.command = command
        self.inputs = {source: digest(raw)}
        self.settings = settings
        self.outputs: list[str] = []
        self.warnings: list[str] = []
        self.t0 = time.perf_counter()

    @property
    def manifest_name(self) -> str:
        return f"{self.stem}.manifest.json"

    def emit(self, suffix: str, text: str) -> Path:
        p = _write(self.out / f"{self.stem}{suffix}", text, self.args.force)
        self.outputs.append(p.name)
        return p

    def finish(self):
        manifest = {
            "tool": "spnperf",
            "version": __version__,
            "command": self.command,
            "inputs": self.inputs,
            "seed": self.settings.get("seed"),
            "backend": self.settings.get("backend"),
            "settings": self.settings,
            "runtime_s": round(time.perf_counter() - self.t0, 3),
            "warnings": self.warnings,
            "outputs": self.outputs,
        }
        # runtime differs between runs, so the manifest is always rewritten
        (self.out / self.manifest_name).write_text(json.dumps(manifest, indent=2) + "\n")
        print(f"wrote {', '.join(self.outputs)} (manifest {self.manifest_name})", file=sys.stderr)


def _sim_overrides(args) -> dict:
    sim = {}
    if args.warmup_ms is not None:
        sim["warmup_time_ms"] = args.warmup_ms
    if args.batches is not None:
        sim["batch_count"] = args.batches
    if args.batch_ms is not None:
        sim["batch_length_ms"] = args.batch_ms
    if args.confidence is not None:
        sim["confidence_level"] = args.confidence
    return sim


def _overrides(args) -> dict:
    o = {}
    if args.backend is not None:
        o["backend"] = {"sim": "simulation"}.get(args.backend, args.backend)
    if args.seed is not None:
        o["seed"] = args.seed
    if args.erlang_k is not None:
        o["erlang_k"] = args.erlang_k
    if args.max_states is not None:
        o["max_states"] = args.max_states
    sim = _sim_overrides(args)
    if sim:
        o["sim"] = sim
    return o


def _table(rows, headers) -> str:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h)) for i, h in enumerate(headers)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


# -- commands ----------------------------------------------------------


def cmd_validate(args) -> int:
    raw, name = _read(args.file)
    net, params = load_model(_parse_json(raw, name))
    kind = "hlf parameters" if params else "net"
    print(
        f"{name}: valid {kind} ({len(net.places)} places, {len(net.transitions)} transitions, {len(net.arcs)} arcs)",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    raw, name = _read(args.file)
    net, params = load_model(_parse_json(raw, name))
    backend = {"sim": "simulation", None: "simulation"}.get(args.backend, args.backend)
    seed = args.seed if args.seed is not None else 0
    sim = SimConfig(seed=seed, **_sim_overrides(args))
    settings = {"backend": backend, "seed": seed, "erlang_k": args.erlang_k or 20,
                "max_states": args.max_states, "sim": _sim_overrides(args)}
    run = Run(args, "evaluate", raw, name, settings)

    metrics = None
    if params is not None:
        result, m = evaluate(params, backend=backend, sim_config=sim,
                             erlang_k=settings["erlang_k"], max_states=args.max_states)
        metrics = m.to_dict()
    elif backend == "simulation":
        result = simulate(net, sim)
    else:
        from .solver import DEFAULT_MAX_STATES, erlang_expand, evaluate_exact

        result = evaluate_exact(erlang_expand(net, settings["erlang_k"]),
                                max_states=args.max_states or DEFAULT_MAX_STATES)
    run.warnings.extend(result.warnings)

    doc = {"manifest": run.manifest_name, "input": name, "backend": backend, "seed": seed,
           "metrics": metrics, "result": result.to_dict()}
    run.emit(".json", json.dumps(doc, indent=2) + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "name", "value", "half_width"])
    for p, v in result.place_means.items():
        w.writerow(["place_mean", p, repr(v), repr(result.place_half_widths.get(p, 0.0))])
    for t, v in result.firing_rates.items():
        w.writerow(["firing_rate", t, repr(v), repr(result.firing_half_widths.get(t, 0.0))])
    for c, v in result.condition_probabilities.items():
        w.writerow(["condition", c, repr(v), repr(result.condition_half_widths.get(c, 0.0))])
    for k, v in (metrics or {}).items():
        w.writerow(["metric", k, repr(v), ""])
    run.emit(".csv", buf.getvalue())

    if metrics:
        print(_table([(k, f"{v:.6g}") for k, v in metrics.items()], ("metric", "value")))
    else:
        rows = [(p, f"{v:.6g}", f"{result.place_half_widths.get(p, 0.0):.3g}") for p, v in result.place_means.items()]
        print(_table(rows, ("place", "E[tokens]", "half-width")))
    for wmsg in result.warnings:
        print(f"warning: {wmsg}", file=sys.stderr)
    run.finish()
    return EXIT_OK


def _experiment(args, kinds):
    raw, name = _read(args.file)
    exp = load_experiment(_parse_json(raw, name), _overrides(args))
    if exp.kind not in kinds:
        raise SpecError(f"{name} is a {exp.kind!r} experiment; use the matching command")
    settings = {"backend": exp.options.backend, "seed": exp.seed, "erlang_k": exp.options.erlang_k,
                "max_states": exp.options.max_states, "sim": dict(exp.options.sim)}
    run = Run(args, args.command, raw, name, settings)
    return exp, run


def cmd_sweep(args) -> int:
    exp, run = _experiment(args, ("sweep", "profile"))
    if exp.kind == "profile":
        prof = interaction_profile(exp.profile_base, exp.timeouts, exp.options, seed=exp.seed, workers=args.workers)
        rows = prof.rows
        run.emit(".csv", sweep_csv(rows))
        run.emit(".plot.csv", plot_csv(rows, "timeout_ms", ("block_call_rate_per_ms", "timeout_call_rate_per_ms")))
        print(_table(
            [(t, f"{b:.6g}", f"{p:.6g}") for t, b, p in zip(prof.timeouts, prof.block_call_rate, prof.timeout_call_rate)],
            ("timeout_ms", "block_call_rate", "timeout_call_rate"),
        ))
        cross = prof.crossing
        print(f"crossing: {'none' if cross is None else f'timeout {cross} ms'}")
    else:
        rows = run_sweeps(exp.sweeps, seed=exp.seed, workers=args.workers)
        metrics = exp.sweeps[0].metrics
        run.emit(".csv", sweep_csv(rows, metrics))
        if exp.plot_x:
            run.emit(".plot.csv", plot_csv(rows, exp.plot_x, metrics))
        failed = [r for r in rows if r.error]
        print(f"{len(rows)} points evaluated, {len(failed)} failed")
    for r in rows:
        if r.error:
            run.warnings.append(f"{r.label} point {r.index}: {r.error}")
    run.finish()
    return EXIT_OK


def cmd_doe(args) -> int:
    exp, run = _experiment(args, ("doe",))
    table = doe_2k(exp.doe, seed=exp.seed, workers=args.workers)
    run.emit(".csv", effects_csv(table))
    run.emit(".cells.csv", cells_csv(exp.doe, table))
    print(f"q0 = {table.q0:.6g}")
    print(_table([(n, f"{e:.6g}", f"{p:.2f}") for n, e, p in table.ranked()], ("effect", "value", "% variation")))
    run.finish()
    return EXIT_OK


# -- parser ------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("evaluation")
    g.add_argument("--backend", choices=("sim", "simulation", "solver"), default=None)
    g.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
    g.add_argument("--out", default=".", help="output directory (default: current directory)")
    g.add_argument("--max-states", type=int, default=None)
    g.add_argument("--erlang-k", type=int, default=None, help="Erlang phases per deterministic delay (solver)")
    g.add_argument("--warmup-ms", type=float, default=None)
    g.add_argument("--batches", type=int, default=None)
    g.add_argument("--batch-ms", type=float, default=None)
    g.add_argument("--confidence", type=float, default=None)
    g.add_argument("--workers", type=int, default=None, help="worker processes (default: $SPNPERF_WORKERS or CPU count)")
    g.add_argument("--force", action="store_true", help="replace existing result files with different content")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="spnperf", description="SPN performance models of a permissioned blockchain.")
    parser.add_argument("--version", action="version", version=f"spnperf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("validate", cmd_validate, "check a net or hlf parameter file"),
        ("evaluate", cmd_evaluate, "evaluate a net or hlf parameter file"),
        ("sweep", cmd_sweep, "run a parameter sweep or timeout profile"),
        ("doe", cmd_doe, "run a 2^k factorial design"),
    ):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("file", help=f"JSON file{' or bundled spec name ' + '/'.join(BUNDLED) if name in ('sweep', 'doe') else ''}")
        sp.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except (SpnError, json.JSONDecodeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return exit_code(e)


if __name__ == "__main__":
    sys.exit(main())
