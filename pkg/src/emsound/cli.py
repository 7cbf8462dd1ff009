"""Command line interface: ``emsound {forward,invert,synth,bench,jacobian}``.

Exit status is 0 on success, 2 for bad input (missing files, malformed
models, invalid options) and 3 when the numerics fail.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .forward import (
    InstrumentSetup,
    LayeredEarthModel,
    SoundingData,
    forward_map,
    load_data,
    load_model,
    save_data,
    save_model,
)
from .harness import PRESETS, NoiseSpec, TestProfile, make_heights, run_table, synthesize, write_report
from .jacobian import analytic_jacobian, fd_jacobian
from .solver import SolverConfig, solve

log = logging.getLogger("emsound")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    pass


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _setup_from_args(args) -> InstrumentSetup:
    if args.heights:
        heights = args.heights
    else:
        heights = make_heights(args.m, args.step)
    orient = tuple(o.strip().upper() for o in args.orientations.split(","))
    return InstrumentSetup(tuple(heights), args.r, args.frequency, orient)


def _add_setup_args(p):
    g = p.add_argument_group("instrument")
    g.add_argument("--heights", type=_floats, help="measurement heights in m, comma separated")
    g.add_argument("--m", type=int, default=10, help="number of equispaced heights (default 10)")
    g.add_argument("--step", type=float, help="height step in m (default: heights span 0..1.9 m)")
    g.add_argument("--orientations", default="V,H", help="V, H or V,H (default)")
    g.add_argument("--r", type=float, default=1.0, help="coil separation, m")
    g.add_argument("--frequency", type=float, default=14600.0, help="operating frequency, Hz")


def _write_json(obj, out):
    text = json.dumps(obj, indent=1)
    if out in (None, "-"):
        print(text)
    else:
        Path(out).write_text(text + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_forward(args) -> int:
    model = load_model(args.model, args.units)
    setup = _setup_from_args(args)
    data = SoundingData(forward_map(model, setup), setup)
    save_data(data, sys.stdout if args.out in (None, "-") else args.out, args.units)
    return EXIT_OK


def _config(args) -> SolverConfig:
    base = SolverConfig.from_json(args.config).to_dict() if args.config else {}
    for key, val in (("regularizer", args.L), ("rule", args.rule), ("jacobian", args.jacobian)):
        if val is not None:
            base[key] = val
    return SolverConfig(**base)


def _thickness(args, n_default=None):
    if args.model:
        return load_model(args.model, args.units).d
    n = args.layers or n_default
    if n is None or n < 2:
        raise InputError("give --model (for the layer geometry) or --layers >= 2")
    return np.full(n - 1, args.depth / (n - 1))


def cmd_invert(args) -> int:
    config = _config(args)
    data = load_data(args.data, args.r, args.frequency, args.units)
    if args.tau is not None:
        # --tau: relative noise level, ||e|| ~ tau ||b||
        config.noise_norm = args.tau * float(np.linalg.norm(data.b))
    d = _thickness(args)
    sigma_true = load_model(args.truth, args.units).sigma if args.truth else None
    result = solve(config, data.setup, data, d, sigma_true=sigma_true)
    out = result.to_dict()
    out["thickness"] = d.tolist()
    _write_json(out, args.out)
    if args.lcurve:
        with open(args.lcurve, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ell", "residual_norm", "seminorm", "iterations", "termination", "error"])
            for run in result.runs:
                w.writerow([run.ell, run.residual_norm, run.seminorm, run.iterations, run.reason,
                            "" if run.error is None else run.error])
    if args.model_out:
        save_model(LayeredEarthModel(result.best.sigma, d), args.model_out)
    chosen = result.chosen[config.rule]
    log.info("rule %s picked ell = %d (flags: %s)", config.rule, chosen, result.flags or "none")
    return EXIT_OK


def cmd_synth(args) -> int:
    profile = TestProfile(args.profile, xi=args.xi)
    setup = _setup_from_args(args)
    rng = np.random.default_rng(args.seed)
    model, data = synthesize(profile, args.layers, setup.m, NoiseSpec(args.tau, args.seed), setup, rng)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, f"{prefix}_model.json")
    save_data(data, f"{prefix}_data.csv", args.units)
    _write_json({"profile": profile.label, "n": args.layers, "m": setup.m, "tau": args.tau,
                 "seed": args.seed, "noise_norm": data.noise_norm,
                 "realized_noise": data.realized_noise}, f"{prefix}_meta.json")
    return EXIT_OK


def cmd_bench(args) -> int:
    overrides = {}
    for key in ("ms", "ns", "taus", "xis"):
        val = getattr(args, key)
        if val:
            overrides[key] = [int(v) for v in val] if key in ("ms", "ns") else val
    if args.profiles:
        overrides["profiles"] = args.profiles.split(",")
    if args.preset == "fig2":
        overrides["samples"] = args.samples
    if args.preset == "timing":
        overrides = {"iterations": args.iterations}
        if args.profiles:
            overrides["profile"] = args.profiles.split(",")[0]
    result = run_table(args.preset, args.realizations, args.seed, args.workers, **overrides)
    paths = write_report(result, args.out or f"{args.preset}", args.preset)
    for p in paths:
        print(p)
    if args.preset == "timing":
        print(f"exact {result['analytic']['seconds']:.3f} s, broyden {result['broyden']['seconds']:.3f} s, "
              f"speedup {result['speedup']:.2f}")
    elif args.preset != "fig2":
        for cell in result:
            e = cell["mean_e_opt"]
            print(f"{cell['profile']:>10} L={cell['L']:<2} m={cell['m']:<2} n={cell['n']:<2} "
                  f"{cell['orientation']:>4} {cell['jacobian']:>8}  "
                  f"e_opt={'failed' if e is None else f'{e:.2e}'}")
    return EXIT_OK


def cmd_jacobian(args) -> int:
    model = load_model(args.model, args.units)
    setup = _setup_from_args(args)
    if args.method == "fd":
        data = SoundingData(forward_map(model, setup), setup)
        J = fd_jacobian(model, setup, data).entries
    else:
        J = analytic_jacobian(model, setup).entries
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w", newline="")
    try:
        w = csv.writer(out)
        w.writerow(["row", "orientation", "height_m"] + [f"sigma_{j + 1}" for j in range(model.n)])
        i = 0
        for o in setup.orientations:
            for h in setup.heights:
                w.writerow([i, o, h] + [repr(float(x)) for x in J[i]])
                i += 1
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emsound", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--units", choices=("S/m", "mS/m"), default="S/m")
        p.add_argument("--out", help="output path ('-' or omitted: stdout)")

    p = sub.add_parser("forward", help="predicted readings for a model")
    p.add_argument("--model", required=True, help="model JSON")
    common(p)
    _add_setup_args(p)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("invert", help="invert a data CSV")
    p.add_argument("--data", required=True, help="readings CSV")
    p.add_argument("--config", help="solver config JSON")
    p.add_argument("--model", help="model JSON whose layer thicknesses define the grid")
    p.add_argument("--layers", type=int, help="number of layers (equal thickness down to --depth)")
    p.add_argument("--depth", type=float, default=2.0, help="depth of the half-space top, m")
    p.add_argument("--truth", help="true model JSON (enables the oracle rule and errors)")
    p.add_argument("--tau", type=float, help="relative noise level for the discrepancy rule")
    p.add_argument("--L", choices=("I", "D1", "D2"))
    p.add_argument("--rule", choices=("discrepancy", "corner", "resreg", "oracle"))
    p.add_argument("--jacobian", choices=("analytic", "fd", "broyden"))
    p.add_argument("--lcurve", help="write the per-ell residual/seminorm table to this CSV")
    p.add_argument("--model-out", help="write the chosen model as JSON")
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--frequency", type=float, default=14600.0)
    common(p)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("synth", help="synthetic data for a test profile")
    p.add_argument("--profile", choices=("f1", "f2", "f3"), required=True)
    p.add_argument("--xi", type=float, default=1.0, help="step length of f3, m")
    p.add_argument("--layers", type=int, default=20)
    p.add_argument("--tau", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    common(p)
    _add_setup_args(p)
    p.set_defaults(func=cmd_synth, out="synth")

    p = sub.add_parser("bench", help="run a reproduction preset")
    p.add_argument("preset", choices=PRESETS)
    p.add_argument("--realizations", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--profiles", help="comma separated subset of f1,f2,f3")
    p.add_argument("--ms", type=_floats)
    p.add_argument("--ns", type=_floats)
    p.add_argument("--taus", type=_floats)
    p.add_argument("--xis", type=_floats)
    p.add_argument("--samples", type=int, default=1000, help="fig2: random models per n")
    p.add_argument("--iterations", type=int, default=100, help="timing: fixed iteration count")
    p.add_argument("--out", help="output path prefix (default: preset name)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("jacobian", help="dump the Jacobian of a model as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--method", choices=("analytic", "fd"), default="analytic")
    common(p)
    _add_setup_args(p)
    p.set_defaults(func=cmd_jacobian)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    # LinAlgError subclasses ValueError, so numerical failures are caught first
    except (FloatingPointError, np.linalg.LinAlgError, ZeroDivisionError, RuntimeError) as exc:
        print(f"emsound: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ValueError, KeyError, OSError) as exc:
        print(f"emsound: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
