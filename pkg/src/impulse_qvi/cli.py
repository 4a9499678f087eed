"""Command-line driver: ``impulse-qvi <command> [flags]``.

Every command that reads a problem file stamps its outputs with its hash and,
when ``--out`` is given, writes ``<out>.manifest.json`` next to them.
Exit codes: 0 when every asserted check passes, 1 on module errors or failed
assertions, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .cost import evaluate_cost
from .dynamics import ImpulseControl, check_trajectory_bounds, integrate
from .geometry import boundary_samples
from .grids import SpatialGrid
from .model import SamplePlan, SpecError, check_compatibility, load_spec, validate_spec
from .reachability import compute_reachable, make_partition
from .solver import (ValueGrid, SolverOptions, SynthesisIncomplete, solve, solve_unconstrained_compare,
                     synthesize_control)
from .verification import (compare_to_oracle, continuity_modulus, default_tol_acc, dpp_check, get_oracle,
                           growth_bound_check, viscosity_residual)

log = logging.getLogger("impulse_qvi")

COMMANDS = ("validate", "reach", "solve", "synthesize", "verify", "compare-unconstrained", "oracle", "trajectory")


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# argument helpers


def parse_point(text: str) -> dict:
    """Parse ``"t=0,x=-0.3,T=1"``; bare numbers extend the previous key (``x=1,2``)."""
    out: dict[str, list[float]] = {}
    key = None
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if "=" in tok:
            key, val = (p.strip() for p in tok.split("=", 1))
            out[key] = []
        elif key is None:
            raise UsageError(f"cannot parse {text!r}: expected key=value")
        else:
            val = tok
        try:
            out[key].append(float(val))
        except ValueError:
            raise UsageError(f"cannot parse {text!r}: {val!r} is not a number") from None
    return out


def _cells(text: str | None, spec) -> tuple[int, ...]:
    if text is None:
        if not spec.domain or "cells" not in spec.domain:
            raise UsageError("--grid is required when the problem file has no domain.cells")
        return tuple(int(c) for c in spec.domain["cells"])
    try:
        cells = tuple(int(c) for c in text.split(","))
    except ValueError:
        raise UsageError(f"--grid expects N[,N...], got {text!r}") from None
    if len(cells) == 1:
        cells = cells * spec.dimension
    if len(cells) != spec.dimension or min(cells) < 1:
        raise UsageError(f"--grid needs {spec.dimension} positive counts")
    return cells


def _bounds(text: str | None, spec) -> list[tuple[float, float]]:
    if text is None:
        if not spec.domain or "bounds" not in spec.domain:
            raise UsageError("--bounds is required when the problem file has no domain.bounds")
        return [tuple(map(float, b)) for b in spec.domain["bounds"]]
    try:
        out = [tuple(float(v) for v in part.split(":")) for part in text.split(",")]
    except ValueError:
        raise UsageError(f"--bounds expects lo:hi[,lo:hi...], got {text!r}") from None
    if len(out) == 1:
        out = out * spec.dimension
    if len(out) != spec.dimension or any(len(b) != 2 or not b[0] < b[1] for b in out):
        raise UsageError(f"--bounds needs {spec.dimension} increasing lo:hi pairs")
    return out


def make_grid(args, spec) -> SpatialGrid:
    b = _bounds(args.bounds, spec)
    return SpatialGrid(tuple(lo for lo, _ in b), tuple(hi for _, hi in b), _cells(args.grid, spec))


def _steps(args, grid: SpatialGrid) -> int:
    if args.steps is not None:
        if args.steps < 1:
            raise UsageError("--steps must be positive")
        return args.steps
    return max(grid.cells)


def _partition(args, spec):
    p = args.partition
    if p is None:
        return 20
    try:
        if "," not in p and "." not in p:
            return int(p)
        return [float(v) for v in p.split(",")]
    except ValueError:
        raise UsageError(f"--partition expects an integer or a comma list of times, got {p!r}") from None


def _state(point: dict, spec, need_t: bool = True) -> tuple[float, np.ndarray]:
    if "x" not in point or (need_t and "t" not in point):
        raise UsageError("--at needs t=... and x=...")
    x = np.asarray(point["x"], dtype=float)
    if x.size != spec.dimension:
        raise UsageError(f"--at: x needs {spec.dimension} coordinates")
    return float(point.get("t", [0.0])[0]), x


def _control(text: str | None, t: float, n: int) -> ImpulseControl:
    if text is None:
        return ImpulseControl.trivial(t)
    path = Path(text)
    data = json.loads(path.read_text() if path.exists() else text)
    taus = tuple(float(v) for v in data.get("tau", []))
    xis = tuple(np.asarray(v, dtype=float).reshape(n) for v in data.get("xi", []))
    return ImpulseControl(taus, xis, t)


def _control_dict(ctrl: ImpulseControl) -> dict:
    return {"tau": [float(v) for v in ctrl.tau], "xi": [list(map(float, v)) for v in ctrl.vectors]}


def _load_or_solve(args, spec, timings: dict) -> ValueGrid:
    if getattr(args, "load", None):
        vg = ValueGrid.load(args.load)
        stored = vg.meta.get("spec_hash")
        if stored and stored != spec.spec_hash():
            raise ValueError(f"{args.load} was solved for a different spec ({stored[:12]})")
        return vg
    grid = make_grid(args, spec)
    t0 = time.perf_counter()
    vg = solve(spec, grid, _steps(args, grid), args.mode)
    timings["solve"] = time.perf_counter() - t0
    return vg


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _finite(o):
    """JSON-safe copy: non-finite floats become strings."""
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(float(o)):
        return str(float(o))
    return o


def dump_json(obj) -> str:
    return json.dumps(_finite(obj), indent=2, sort_keys=True, default=_json_default)


# ---------------------------------------------------------------------------
# run context


class Run:
    """Collects outputs, timings and the summary of one command for the manifest."""

    def __init__(self, args, argv, spec=None):
        self.args, self.argv, self.spec = args, list(argv), spec
        self.hash = spec.spec_hash() if spec is not None else None
        self.outputs: list[str] = []
        self.timings: dict[str, float] = {}
        self.params: dict = {}
        self.summary: dict = {}
        self.asserted: dict[str, bool] = {}
        self.start = time.perf_counter()

    def header(self) -> str:
        return f"spec_hash={self.hash} command={self.args.command}"

    def write_json(self, path, payload: dict) -> None:
        payload = dict(payload, spec_hash=self.hash, command=self.args.command)
        Path(path).write_text(dump_json(payload) + "\n")
        self.outputs.append(str(path))

    def note(self, path) -> None:
        self.outputs.append(str(path))

    @property
    def ok(self) -> bool:
        return all(self.asserted.values())

    def manifest(self) -> None:
        if not self.args.out:
            return
        self.timings["total"] = time.perf_counter() - self.start
        m = {
            "spec_hash": self.hash,
            "command": self.args.command,
            "argv": self.argv,
            "seed": self.args.seed,
            "threads": self.args.threads,
            "parameters": self.params,
            "timings": self.timings,
            "outputs": self.outputs,
            "asserted": self.asserted,
            "passed": self.ok,
            "summary": self.summary,
        }
        Path(f"{self.args.out}.manifest.json").write_text(dump_json(m) + "\n")


def _report(run: Run, payload: dict) -> None:
    run.summary = payload
    print(dump_json(payload))


# ---------------------------------------------------------------------------
# commands


def cmd_validate(run: Run) -> None:
    spec, args = run.spec, run.args
    plan = SamplePlan(spec.validation.lattice, spec.validation.x_range, spec.validation.xi_range,
                      args.seed, spec.validation.tolerance)
    t0 = time.perf_counter()
    report = validate_spec(spec, plan)
    lo, hi = spec.validation.x_range
    compat = check_compatibility(spec, boundary_samples(spec, [lo] * spec.dimension, [hi] * spec.dimension))
    run.timings["validate"] = time.perf_counter() - t0
    print(report.summary(), file=sys.stderr)
    if not compat.passed:
        print(f"warning: compatibility of h with the impulse cost FAILS at {len(compat.violations)} "
              f"of {len(compat.entries)} boundary samples", file=sys.stderr)
    payload = {"hypotheses": report.to_dict(), "compatibility": compat.to_dict()}
    if args.out:
        run.write_json(args.out, payload)
    _report(run, {"ok": report.ok, "all_passed": report.all_passed, "compatibility_passed": compat.passed})


def cmd_reach(run: Run) -> None:
    spec, args = run.spec, run.args
    grid = make_grid(args, spec)
    times = make_partition(spec, _partition(args, spec), args.t0)
    run.params.update(grid=grid.to_dict(), partition=times.tolist())
    t0 = time.perf_counter()
    mask = compute_reachable(spec, grid, times, args.t0)
    run.timings["reach"] = time.perf_counter() - t0
    if args.out:
        mask.to_csv(args.out, run.header())
        run.note(args.out)
    cell = float(np.prod(grid.spacing))
    _report(run, {"times": times.tolist(),
                  "reachable_nodes": [int(s.sum()) for s in mask.slices],
                  "reachable_volume": [float(s.sum()) * cell for s in mask.slices]})


def _value_summary(vg: ValueGrid) -> dict:
    fin = np.isfinite(vg.values)
    return {"slices": vg.M + 1, "finite_nodes": int(fin.sum()), "infinite_nodes": int((~fin).sum()),
            "jump_nodes": int((vg.policy == 1).sum()), "max_finite": float(vg.values[fin].max()) if fin.any() else None,
            "flagged": bool(vg.flagged), "iterations_max": int(np.max(vg.iterations)) if len(vg.iterations) else 0}


def _save_values(run: Run, vg: ValueGrid, path: str) -> None:
    if path.endswith(".npz"):
        vg.save(path)
    else:
        vg.to_csv(path, run.header())
    run.note(path)


def cmd_solve(run: Run) -> None:
    spec, args = run.spec, run.args
    grid = make_grid(args, spec)
    steps = _steps(args, grid)
    run.params.update(grid=grid.to_dict(), steps=steps, mode=args.mode)
    t0 = time.perf_counter()
    vg = solve(spec, grid, steps, args.mode, SolverOptions(t0=args.t0))
    run.timings["solve"] = time.perf_counter() - t0
    run.params.update(tol_fp=vg.meta.get("tol_fp"), iteration_cap=vg.meta.get("iteration_cap"),
                      tol_acc=args.tol_acc if args.tol_acc is not None else default_tol_acc(vg))
    if args.out:
        _save_values(run, vg, args.out)
    _report(run, _value_summary(vg))


def cmd_synthesize(run: Run) -> None:
    spec, args = run.spec, run.args
    t, x = _state(parse_point(args.at or ""), spec)
    vg = _load_or_solve(args, spec, run.timings)
    run.params.update(grid=vg.grid.to_dict(), steps=vg.M, mode=vg.mode, at={"t": t, "x": x.tolist()})
    ctrl = synthesize_control(spec, vg, t, x)
    cost = evaluate_cost(spec, t, x, ctrl)
    payload = {"control": _control_dict(ctrl), "cost": cost.to_dict(),
               "value_at": float(vg.value_at(t, x)[0]) if vg.grid.contains(x[None])[0] else None}
    if args.out:
        run.write_json(args.out, payload)
    _report(run, payload)


def cmd_verify(run: Run) -> None:
    spec, args = run.spec, run.args
    vg = _load_or_solve(args, spec, run.timings)
    tol_acc = args.tol_acc if args.tol_acc is not None else default_tol_acc(vg)
    run.params.update(grid=vg.grid.to_dict(), steps=vg.M, mode=vg.mode, tol_acc=tol_acc)
    t0 = time.perf_counter()
    dpp = dpp_check(spec, vg, tol_acc=tol_acc)
    growth = growth_bound_check(spec, vg)
    residual = viscosity_residual(spec, vg)
    refined = None
    if args.refine:
        g = vg.grid
        fine = SpatialGrid(g.lower, g.upper, tuple(2 * c for c in g.cells))
        refined = solve(spec, fine, 2 * vg.M, vg.mode, SolverOptions(t0=float(vg.times[0])))
    modulus = continuity_modulus(vg, spec.holder.mu, spec.holder.delta, refined)
    payload = {"dpp": dpp.to_dict(), "growth": growth.to_dict(), "residual": residual.to_dict(),
               "modulus": modulus.to_dict()}
    run.asserted.update(dpp=dpp.passed, growth=growth.passed)
    if args.oracle:
        oracle = get_oracle(args.oracle)
        payload["oracle_self_check"] = oracle.self_check()
        table = compare_to_oracle(vg, oracle, tol_acc=tol_acc, exclude_outflow=args.exclude_outflow)
        payload["oracle"] = table.to_dict()
        run.asserted["oracle"] = table.passed
    run.timings["verify"] = time.perf_counter() - t0
    payload["asserted"] = run.asserted
    payload["passed"] = run.ok
    if args.out:
        run.write_json(args.out, payload)
    for name, ok in run.asserted.items():
        print(f"{name}: {'PASS' if ok else 'FAIL'}", file=sys.stderr)
    _report(run, payload)


def cmd_compare(run: Run) -> None:
    spec, args = run.spec, run.args
    grid = make_grid(args, spec)
    steps = _steps(args, grid)
    run.params.update(grid=grid.to_dict(), steps=steps)
    t0 = time.perf_counter()
    report, vc, vu = solve_unconstrained_compare(spec, grid, steps, SolverOptions(t0=args.t0))
    run.timings["solve_both"] = time.perf_counter() - t0
    run.asserted["terminal_identical"] = report.terminal_identical
    payload = report.to_dict()
    if args.out:
        run.write_json(args.out, payload)
    _report(run, payload)


def cmd_oracle(run: Run) -> None:
    args = run.args
    if not args.name:
        raise UsageError("oracle needs --name")
    oracle = get_oracle(args.name)
    oracle.self_check()
    p = parse_point(args.at or "")
    if "s" in p:
        t, T, x = 0.0, 0.0, np.asarray(p["s"])
    else:
        if "x" not in p:
            raise UsageError('--at needs "t=..,x=..,T=.." or "s=.."')
        t, T, x = p.get("t", [0.0])[0], p.get("T", [1.0])[0], np.asarray(p["x"])
    value = float(np.asarray(oracle.evaluate(t, x[None, :], T)).ravel()[0])
    payload = {"name": oracle.name, "kind": oracle.kind, "value": value}
    if args.out:
        run.write_json(args.out, payload)
    run.summary = payload
    print(repr(round(value, 12)) if math.isfinite(value) else str(value))


def cmd_trajectory(run: Run) -> None:
    spec, args = run.spec, run.args
    t, x = _state(parse_point(args.at or ""), spec)
    ctrl = _control(args.control, t, spec.dimension)
    ctrl.validate(spec, t)
    traj = integrate(spec, t, x, ctrl)
    cost = evaluate_cost(spec, t, x, ctrl)
    bounds = check_trajectory_bounds(spec, traj, t, x, ctrl, seed=args.seed)
    run.asserted["trajectory_bounds"] = bounds.passed
    if args.out:
        traj.to_csv(args.out, run.header())
        run.note(args.out)
    _report(run, {"control": _control_dict(ctrl), "terminal": traj.terminal.tolist(), "cost": cost.to_dict(),
                  "bounds": bounds.__dict__})


HANDLERS = {
    "validate": cmd_validate, "reach": cmd_reach, "solve": cmd_solve, "synthesize": cmd_synthesize,
    "verify": cmd_verify, "compare-unconstrained": cmd_compare, "oracle": cmd_oracle, "trajectory": cmd_trajectory,
}


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, spec: bool = True) -> None:
    if spec:
        p.add_argument("--spec", required=True, help="problem spec JSON")
        p.add_argument("--grid", help="cells per axis, N or N,N,...")
        p.add_argument("--bounds", help="box lo:hi per axis (default: spec domain)")
        p.add_argument("--steps", type=int, help="time steps")
        p.add_argument("--partition", help="impulse partition: step count or comma list of times")
        p.add_argument("--mode", choices=("constrained", "unconstrained"), default="constrained")
        p.add_argument("--t0", type=float, default=0.0, help="initial time of the time grid")
        p.add_argument("--tol-acc", type=float, dest="tol_acc", help="acceptance tolerance")
    p.add_argument("--out", help="output path; a manifest is written to <out>.manifest.json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker count (sweeps are vectorized; results do not depend on it)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impulse-qvi", description="Impulse-control QVI solver and checks.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "validate": "probe the standing hypotheses and terminal compatibility",
        "reach": "backward reachable sets on a partition",
        "solve": "value function on a grid",
        "synthesize": "feedback impulse control from a value grid",
        "verify": "post-hoc checks of a value grid",
        "compare-unconstrained": "constrained vs unconstrained solves",
        "oracle": "evaluate a closed-form oracle",
        "trajectory": "simulate a control and report its cost",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        _common(p, spec=name != "oracle")
        if name in ("synthesize", "verify"):
            p.add_argument("--load", help="value grid .npz written by solve")
        if name in ("synthesize", "trajectory", "oracle"):
            p.add_argument("--at", help='state, e.g. "t=0,x=-0.3" (oracle also takes T=.. or s=..)')
        if name == "trajectory":
            p.add_argument("--control", help='JSON file or string {"tau": [...], "xi": [[...], ...]}')
        if name == "verify":
            p.add_argument("--oracle", help="closed-form oracle to compare against")
            p.add_argument("--refine", action="store_true", help="also solve at twice the resolution for the modulus")
            p.add_argument("--exclude-outflow", action="store_true", dest="exclude_outflow",
                           help="skip nodes whose characteristic leaves the box")
        if name == "oracle":
            p.add_argument("--name", help="oracle name, e.g. V1")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("IMPULSE_QVI_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        level = "error"
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", force=True)
    logging.getLogger("impulse_qvi").setLevel(levels[level])


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging()
    try:
        spec = load_spec(args.spec) if getattr(args, "spec", None) else None
        run = Run(args, argv, spec)
        HANDLERS[args.command](run)
        run.manifest()
    except UsageError as exc:
        parser.error(str(exc))
    except SynthesisIncomplete as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(dump_json({"partial_control": _control_dict(exc.partial)}))
        return 1
    except (SpecError, ValueError, KeyError, OSError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0 if run.ok else 1


__all__ = ["build_parser", "main", "parse_point"]
