"""Command-line front end.

Every subcommand takes a config file, writes its outputs into ``--output``
and logs line-delimited JSON records to standard error, finishing with one
``run_report`` record.  Exit codes: 0 success, 2 non-convergence (partial
results are still written), 3 config or validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import boundary, gfun, oracle
from .errors import (AlgorithmError, ConfigError, EquilibriumError, IntegrationError,
                     InvalidBracket, NoBoundaryFound, NotRecovered, SafeMarginError,
                     StencilLeftRegion)
from .model import build_model, disturbance_eval, load_config
from .ode import integrate
from .parallel import default_jobs

logger = logging.getLogger("safemargin")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NONCONVERGED = 2
EXIT_CONFIG = 3


# ---------------------------------------------------------------------------
# serialisation

def fmt(x):
    """17 significant digits; empty for missing values."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return format(x, ".17g")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def to_json(obj):
    """JSON text with every float written at 17 significant digits."""
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return to_json(obj.tolist())
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {to_json(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(to_json(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, obj):
    Path(path).write_text(to_json(obj) + "\n")


class _JsonLines(logging.Formatter):
    def format(self, record):
        rec = {"level": record.levelname.lower(), "logger": record.name,
               "msg": record.getMessage()}
        extra = getattr(record, "payload", None)
        if extra:
            rec.update(extra)
        return json.dumps(rec, default=str)


def _setup_logging(verbose):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLines())
    root = logging.getLogger("safemargin")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


# ---------------------------------------------------------------------------
# argument helpers

def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")


def _point(model, values, what="--p"):
    if values is None:
        return model.p0.copy()
    if len(values) != model.m:
        raise ConfigError(f"{what} needs {model.m} values")
    return np.array(values, dtype=float)


def _axis(model, text):
    if text in model.params:
        return model.params.index(text)
    try:
        k = int(text)
    except ValueError:
        raise ConfigError(f"unknown axis {text!r}") from None
    if not 0 <= k < model.m:
        raise ConfigError(f"axis index {k} out of range")
    return k


def _box(model, args):
    if args.box is None:
        lo = model.p0 - 0.5 * np.maximum(1.0, np.abs(model.p0)) * 0.2
        hi = model.p0 + 0.5 * np.maximum(1.0, np.abs(model.p0)) * 0.2
        box = np.column_stack([lo, hi])
    else:
        if len(args.box) != 2 * model.m:
            raise ConfigError(f"--box needs {2 * model.m} values (lo,hi per parameter)")
        box = np.array(args.box).reshape(model.m, 2)
    res = args.res or [21] * model.m
    if len(res) != model.m:
        raise ConfigError(f"--res needs {model.m} values")
    return box, res


# ---------------------------------------------------------------------------
# subcommands; each returns (outputs, summary, exit code)

def cmd_simulate(model, args, out):
    p = _point(model, args.p)
    status = gfun.classify(model, p)
    ev = gfun.eval_G(model, p, keep_profile=False)
    if ev.sep is None:
        raise NotRecovered(f"no stable equilibrium at p={p.tolist()}", ev.status)
    y, _ = disturbance_eval(model, p, ev.sep)
    xs = ev.sep.x_star
    tol = model.recovery.conv_tol
    traj = integrate(lambda x: model.field(x, p), y, model.integrator,
                     stop=lambda t, x: np.abs(x - xs).max() <= tol)
    path = out / "simulate.csv"
    write_csv(path, ["t", *model.states],
              ([t, *x] for t, x in zip(traj.t, traj.x)))
    return [path], {"status": str(status), "samples": len(traj.t)}, EXIT_OK


def cmd_classify(model, args, out):
    p = _point(model, args.p)
    status = gfun.classify(model, p)
    print(str(status).split(" ")[0] if not args.long else str(status))
    return [], {"status": str(status), "kind": status.kind}, EXIT_OK


def cmd_profile(model, args, out):
    p = _point(model, args.p)
    ev = gfun.eval_G(model, p, keep_profile=True)
    gfun.require_recovered(ev, "profile point")
    path = out / "profile.csv"
    write_csv(path, ["t", "sens_norm"], ev.profile.tolist())
    return [path], {"g": ev.g, "t_hat": ev.t_hat, "sup_norm": ev.sup_norm}, EXIT_OK


def _grid_csv(model, grid, path):
    write_csv(path, [*model.params, "recovered", "G"],
              ([*p, rec, g] for p, rec, g in grid.rows()))


def cmd_gmap(model, args, out):
    box, res = _box(model, args)
    grid = oracle.classify_grid(model, box, res, with_g=True, jobs=args.jobs)
    path = out / "gmap.csv"
    _grid_csv(model, grid, path)
    return [path], {"points": int(grid.recovered.size),
                    "recovered": int(grid.recovered.sum())}, EXIT_OK


def cmd_oracle_grid(model, args, out):
    box, res = _box(model, args)
    grid = oracle.classify_grid(model, box, res, with_g=False, jobs=args.jobs)
    path = out / "oracle_grid.csv"
    _grid_csv(model, grid, path)
    return [path], {"points": int(grid.recovered.size),
                    "recovered": int(grid.recovered.sum())}, EXIT_OK


def _bp_doc(bp):
    return {"p": bp.p, "g": bp.g, "g_residual": bp.g_residual, "iterations": bp.iterations}


def cmd_boundary1d(model, args, out):
    p = _point(model, args.p)
    axis = _axis(model, args.axis)
    path = out / "boundary1d.json"
    try:
        bp = boundary.boundary_1d(model, p, axis=axis)
    except AlgorithmError as exc:
        if exc.partial is not None:
            write_json(path, {"converged": False, "axis": model.params[axis],
                              **_bp_doc(exc.partial)})
        raise
    write_json(path, {"converged": True, "axis": model.params[axis], **_bp_doc(bp)})
    return [path], {"iterations": bp.iterations, "g_residual": bp.g_residual}, EXIT_OK


def cmd_trace2d(model, args, out):
    opts = model.algorithm
    if args.kappa is not None:
        opts = opts.replace(kappa=args.kappa)
    if args.direction is not None:
        opts = opts.replace(direction=args.direction)
    if args.start is not None:
        start = _point(model, args.start, "--start")
    else:
        start = boundary.boundary_1d(model, model.p0, opts, axis=_axis(model, args.axis)).p
    path = out / "trace2d.csv"
    header = [*model.params, "g_residual"]
    try:
        pts = boundary.trace_2d(model, start, opts, args.n_points)
    except AlgorithmError as exc:
        write_csv(path, header, ([*bp.p, bp.g_residual] for bp in (exc.partial or [])))
        raise
    write_csv(path, header, ([*bp.p, bp.g_residual] for bp in pts))
    return [path], {"points": len(pts), "max_g_residual": max(b.g_residual for b in pts)}, EXIT_OK


def _margin_doc(model, res):
    return {
        "p0": model.p0 if res.history == [] else res.history[0][0],
        "p_star": res.p_star,
        "margin": res.margin,
        "epsilon": res.epsilon,
        "converged": res.converged,
        "iterations": res.iterations,
        "history": [{"p": h[0], "G": h[1], "m": h[2]} for h in res.history],
    }


def cmd_margin(model, args, out):
    opts = model.algorithm
    if args.epsilon is not None:
        opts = opts.replace(epsilon=args.epsilon)
    p0 = _point(model, args.p)
    path = out / "margin.json"
    try:
        res = boundary.margin_sqp(model, p0, opts)
    except AlgorithmError as exc:
        if exc.partial is not None:
            write_json(path, _margin_doc(model, exc.partial))
        raise
    write_json(path, _margin_doc(model, res))
    return [path], {"margin": res.margin, "iterations": res.iterations}, EXIT_OK


def cmd_oracle_margin(model, args, out):
    p0 = _point(model, args.p)
    p_b, margin = oracle.brute_margin(model, p0, n_rays=args.rays, tol=args.tol,
                                      max_radius=args.max_radius, jobs=args.jobs)
    path = out / "oracle_margin.json"
    write_json(path, {"p0": p0, "p_b": p_b, "margin": margin, "n_rays": args.rays,
                      "tol": args.tol})
    return [path], {"margin": margin}, EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "post-disturbance trajectory CSV"),
    "classify": (cmd_classify, "recovery status at a parameter value"),
    "profile": (cmd_profile, "sensitivity-norm profile CSV"),
    "gmap": (cmd_gmap, "grid of recovery flags and G values"),
    "boundary1d": (cmd_boundary1d, "boundary point along one parameter axis"),
    "trace2d": (cmd_trace2d, "trace the boundary in a 2-D parameter plane"),
    "margin": (cmd_margin, "closest boundary point and safety margin"),
    "oracle-grid": (cmd_oracle_grid, "brute-force recovery grid"),
    "oracle-margin": (cmd_oracle_margin, "brute-force margin from a fan of rays"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="safemargin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_fn, helptext) in COMMANDS.items():
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", help="YAML or JSON config file")
        sp.add_argument("--output", "-o", default=".", help="output directory")
        sp.add_argument("--jobs", "-j", type=int, default=default_jobs(),
                        help="worker processes for grid/ray evaluations")
        sp.add_argument("--verbose", "-v", action="store_true")
        sp.add_argument("--p", type=_floats, default=None,
                        help="parameter value (comma separated); default nominal")
        if name == "classify":
            sp.add_argument("--long", action="store_true", help="include status details")
        if name in ("gmap", "oracle-grid"):
            sp.add_argument("--box", type=_floats, default=None, help="lo1,hi1,lo2,hi2,...")
            sp.add_argument("--res", type=_ints, default=None, help="points per axis")
        if name in ("boundary1d", "trace2d"):
            sp.add_argument("--axis", default="0", help="parameter name or index")
        if name == "trace2d":
            sp.add_argument("--start", type=_floats, default=None,
                            help="boundary-adjacent start; default boundary1d from nominal")
            sp.add_argument("--n-points", type=int, default=20)
            sp.add_argument("--kappa", type=float, default=None)
            sp.add_argument("--direction", type=int, choices=(1, -1), default=None)
        if name == "margin":
            sp.add_argument("--epsilon", type=float, default=None)
        if name == "oracle-margin":
            sp.add_argument("--rays", type=int, default=720)
            sp.add_argument("--tol", type=float, default=1e-6)
            sp.add_argument("--max-radius", type=float, default=1.0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    _setup_logging(args.verbose)
    started = time.perf_counter()
    report = {"event": "run_report", "subcommand": args.command, "config": args.config,
              "config_digest": None, "outputs": [], "summary": {}}
    code = EXIT_ERROR
    try:
        cfg_path = Path(args.config)
        if cfg_path.is_file():
            report["config_digest"] = hashlib.sha256(cfg_path.read_bytes()).hexdigest()
        model = build_model(load_config(cfg_path))
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        outputs, summary, code = COMMANDS[args.command][0](model, args, out)
        report["outputs"] = [str(p) for p in outputs]
        report["summary"] = summary
    except (ConfigError, NotRecovered, InvalidBracket, EquilibriumError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        report["summary"] = {"error": type(exc).__name__, "detail": str(exc)}
        code = EXIT_CONFIG
    except (AlgorithmError, StencilLeftRegion, NoBoundaryFound, IntegrationError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        report["summary"] = {"error": type(exc).__name__, "detail": str(exc)}
        code = EXIT_NONCONVERGED
    except SafeMarginError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        report["summary"] = {"error": type(exc).__name__, "detail": str(exc)}
        code = EXIT_ERROR
    report["exit_code"] = code
    report["wall_time"] = round(time.perf_counter() - started, 6)
    logger.info("run_report", extra={"payload": report})
    return code


run = main

if __name__ == "__main__":
    sys.exit(main())
