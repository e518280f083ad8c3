"""Command-line front end.

``aerobat <subcommand> [--config PATH] [--out DIR] [--seed N] [--set key=value]...``

Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.
Every run writes ``manifest.json`` and the effective ``config.cfg`` into the
output directory so that it can be repeated exactly.
"""
from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .config import config_hash, dump_config, load_config


class UsageError(Exception):
    pass


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed out of range: {text}")
    return v


def _override(text):
    key, sep, value = text.partition("=")
    if not sep or "." not in key.strip():
        raise argparse.ArgumentTypeError(f"expected section.key=value, got {text!r}")
    return key.strip(), value.strip()


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text}")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (defaults to the shipped parameters)")
    common.add_argument("--out", default="aerobat_out",
                        help="output directory; the AEROBAT_OUT variable takes precedence")
    common.add_argument("--seed", type=_u64, default=None, help="random seed (u64)")
    common.add_argument("--set", dest="overrides", type=_override, action="append", default=[],
                        metavar="KEY=VALUE", help="override a config entry, e.g. aero.chord=0.2")

    p = argparse.ArgumentParser(prog="aerobat", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"aerobat {__version__}")
    sub = p.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True

    s = sub.add_parser("simulate", parents=[common], help="integrate the full model")
    s.add_argument("--t-end", type=_positive, help="horizon [s]")
    s.add_argument("--mode", choices=("open-loop", "pitch-stabilized"), default="open-loop")
    s.add_argument("--dt", type=_positive, help="integrator step [s]")
    s.add_argument("--decimation", type=int, help="record every n-th step")
    s.add_argument("--gait", help="optimize-gait result JSON supplying l_ref and initial pitch")
    s.add_argument("--gains", help="optimize-pitch result JSON supplying K_c")
    s.add_argument("--aero-dump", action="store_true",
                   help="also write per-segment aerodynamic diagnostics at the final state")

    g = sub.add_parser("optimize-gait", parents=[common], help="minimize the gait cost")
    g.add_argument("--max-evals", type=int)
    g.add_argument("--horizon", type=_positive, help="simulation horizon per evaluation [s]")

    q = sub.add_parser("optimize-pitch", parents=[common], help="tune the pitch outer-loop gains")
    q.add_argument("--max-evals", type=int)
    q.add_argument("--horizon", type=_positive)
    q.add_argument("--gait", help="optimize-gait result JSON supplying l_ref,zp and pitch")

    w = sub.add_parser("sensitivity", parents=[common], help="FDC one-at-a-time path sweep")
    w.add_argument("--n-crank", type=int, default=360, help="crank samples per revolution")

    v = sub.add_parser("validate", parents=[common], help="run the invariant suites")
    v.add_argument("--quick", action="store_true", help="shorter horizons and fewer samples")

    pl = sub.add_parser("plot", parents=[common], help="SVG figures from a trajectory or result")
    pl.add_argument("inputs", nargs="+", help="trajectory CSV and/or optimization result JSON")
    pl.add_argument("--no-reference", action="store_true", help="omit the pitch reference line")
    return p


# -- helpers ---------------------------------------------------------------

def _load_params(args):
    overrides = dict(args.overrides)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            return load_config(fh.read(), overrides)
    return load_config(None, overrides)


def _out_dir(args):
    d = Path(os.environ.get("AEROBAT_OUT") or args.out)
    d.mkdir(parents=True, exist_ok=True)
    if not os.access(d, os.W_OK):
        raise PermissionError(f"output directory {d} is not writable")
    return d


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_manifest(out, args, params, seed, files):
    (out / "config.cfg").write_text(dump_config(params), encoding="utf-8")
    _write_json({
        "artifact": "aerobat",
        "version": __version__,
        "subcommand": args.command,
        "config_hash": config_hash(params),
        "seed": seed,
        "overrides": [f"{k}={v}" for k, v in args.overrides],
        "outputs": sorted(files + ["config.cfg"]),
    }, out / "manifest.json")


def _gait_inputs(path):
    r = _read_json(path)
    if r.get("problem") != "gait" or len(r.get("x", [])) != 5:
        raise ValueError(f"{path} is not an optimize-gait result")
    return np.array(r["x"][:4]), float(r["x"][4])


# -- subcommands -----------------------------------------------------------

def cmd_simulate(args, params, out):
    from .sim import SimulationError, Simulator, simulate, summary, unpack_body

    mode = args.mode.replace("-", "_")
    l_ref, pitch, gains = None, None, None
    if args.gait:
        l_ref, pitch = _gait_inputs(args.gait)
    if args.gains:
        r = _read_json(args.gains)
        if r.get("problem") != "pitch":
            raise ValueError(f"{args.gains} is not an optimize-pitch result")
        gains = np.array(r["x"])
        if l_ref is None:
            l_ref = np.array(r["l_ref_zp"])
    files = ["trajectory.csv", "summary.json"]
    try:
        traj = simulate(params, mode, t_end=args.t_end, pitch=pitch, l_ref=l_ref,
                        pitch_gain=gains, dt=args.dt, decimation=args.decimation)
        failure = None
    except SimulationError as exc:
        traj, failure = exc.trajectory, exc
    period = 1.0 / params.control.flap_frequency_hz
    traj.to_csv(out / "trajectory.csv")
    extra = {"failed": failure is not None}
    if failure is not None:
        extra["failure"] = str(failure)
    _write_json(summary(traj, period, extra), out / "summary.json")
    if args.aero_dump and params.aero.enabled:
        sim = Simulator(params, mode, l_ref, gains)
        y = traj.states[-1]
        sim.aero.force(unpack_body(y)).to_csv(out / "aero_segments.csv")
        files.append("aero_segments.csv")
    _write_manifest(out, args, params, args.seed, files)
    if failure is not None:
        raise failure
    return 0


def cmd_optimize_gait(args, params, out):
    from .optim import optimize_gait

    res = optimize_gait(params, args.max_evals, args.seed, args.horizon)
    res.to_json(out / "gait_result.json")
    _write_manifest(out, args, params, res.seed, ["gait_result.json"])
    return 0


def cmd_optimize_pitch(args, params, out):
    from .optim import optimize_pitch_gains

    if args.gait:
        l_ref, pitch = _gait_inputs(args.gait)
    else:
        l_ref, pitch = params.control.l_ref, None
    res = optimize_pitch_gains(params, l_ref, args.max_evals, args.seed, args.horizon, pitch)
    res.to_json(out / "pitch_result.json")
    _write_manifest(out, args, params, res.seed, ["pitch_result.json"])
    return 0


def cmd_sensitivity(args, params, out):
    from .linkage import one_at_a_time_grid, sensitivity_sweep

    if args.n_crank < 4:
        raise UsageError("--n-crank must be at least 4")
    g = params.linkage
    lo, hi = g.fdc_min_scale, g.fdc_max_scale
    mid = 0.5 * (lo + hi)
    scales = (lo, 0.5 * (lo + mid), 0.5 * (mid + hi), hi)
    sweep = sensitivity_sweep(g, one_at_a_time_grid(g.l0, scales), args.n_crank)
    sweep.to_csv(out / "sensitivity.csv")
    d5, d16 = sweep.deviation(0)
    _write_json({
        "scales": list(scales),
        "grid": [[float(v) for v in r] for r in sweep.fdc],
        "p5_max_deviation": [float(v) for v in d5],
        "p16_max_deviation": [float(v) for v in d16],
        "failed": {str(k): v for k, v in sorted(sweep.errors.items())},
    }, out / "sensitivity.json")
    _write_manifest(out, args, params, args.seed, ["sensitivity.csv", "sensitivity.json"])
    return 1 if sweep.errors else 0


def cmd_validate(args, params, out):
    from .validation import run_suite

    results = run_suite(params, quick=args.quick)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.value:.3e} (limit {r.threshold:.0e})"
              + (f" [{r.detail}]" if r.detail else ""))
    _write_json({"checks": [r.to_dict() for r in results]}, out / "validation.json")
    _write_manifest(out, args, params, args.seed, ["validation.json"])
    return 0 if all(r.passed for r in results) else 1


def cmd_plot(args, params, out):
    from .plot import cost_trace_figure, trajectory_figures
    from .sim import read_trajectory_csv

    files = []
    for path in args.inputs:
        stem = Path(path).stem
        if path.endswith(".json"):
            figs = {"cost": cost_trace_figure(_read_json(path))}
        else:
            ref = None if args.no_reference else params.control.pitch_ref
            figs = trajectory_figures(read_trajectory_csv(path), ref)
        for name, svg in figs.items():
            fn = f"{stem}_{name}.svg"
            (out / fn).write_text(svg, encoding="utf-8")
            files.append(fn)
    _write_manifest(out, args, params, args.seed, files)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "optimize-gait": cmd_optimize_gait,
    "optimize-pitch": cmd_optimize_pitch,
    "sensitivity": cmd_sensitivity,
    "validate": cmd_validate,
    "plot": cmd_plot,
}


def _failing_module(exc):
    tb = traceback.extract_tb(exc.__traceback__)
    for frame in reversed(tb):
        parts = Path(frame.filename).parts
        if "aerobat" in parts:
            return Path(frame.filename).stem
    return "cli"


def run(argv=None):
    """Execute one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        params = _load_params(args)
        out = _out_dir(args)
        return COMMANDS[args.command](args, params, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"aerobat: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report module and time
        stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
        print(f"aerobat: {args.command} failed in module {_failing_module(exc)} at {stamp}: "
              f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
