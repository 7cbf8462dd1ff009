"""Compare the numba and numpy kernel backends.

Each backend runs in its own interpreter (the choice is made at import
time through EMSOUND_DISABLE_NUMBA).  For every problem size the child
times the forward map, the analytic Jacobian and one fixed-length solver
run, and dumps its outputs so the parent can check the backends agree.

    python benchmarks/bench_backends.py [--sizes 10,20,40] [--repeats 20]
"""
import argparse
import json
import os
import subprocess
import sys
import tempfile
import time

import numpy as np


def best_of(fn, repeats):
    fn()  # warm-up: numba compiles on first call
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def child(sizes, repeats, out):
    import emsound
    from emsound import InstrumentSetup, SolverConfig, TestProfile, analytic_jacobian, discretize, forward_map
    from emsound import make_heights, solve_one_ell, synthesize
    from emsound.harness import NoiseSpec

    rows, arrays = [], {}
    for n in sizes:
        model = discretize(TestProfile("f1"), n)
        setup = InstrumentSetup(make_heights(10))
        _, data = synthesize(TestProfile("f1"), n, 10, NoiseSpec(1e-3), setup, np.random.default_rng(0))
        config = SolverConfig(regularizer="D2", max_iter=10, fixed_iterations=True)
        rows.append({
            "n": n,
            "forward": best_of(lambda: forward_map(model, setup), repeats),
            "jacobian": best_of(lambda: analytic_jacobian(model, setup), repeats),
            "solve10": best_of(lambda: solve_one_ell(config, setup, data, 4, model.d), max(repeats // 10, 1)),
        })
        arrays[f"m{n}"] = forward_map(model, setup).tolist()
        arrays[f"J{n}"] = analytic_jacobian(model, setup).entries.tolist()
    with open(out, "w") as fh:
        json.dump({"backend": emsound.BACKEND, "rows": rows, "arrays": arrays}, fh)


def run_backend(disable, sizes, repeats):
    env = dict(os.environ, EMSOUND_DISABLE_NUMBA="1" if disable else "0")
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "res.json")
        cmd = [sys.executable, __file__, "--child", out, "--sizes", ",".join(map(str, sizes)),
               "--repeats", str(repeats)]
        subprocess.run(cmd, env=env, check=True)
        with open(out) as fh:
            return json.load(fh)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="10,20,40")
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--child", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    sizes = [int(s) for s in args.sizes.split(",")]
    if args.child:
        child(sizes, args.repeats, args.child)
        return 0

    fast = run_backend(False, sizes, args.repeats)
    slow = run_backend(True, sizes, args.repeats)
    print(f"backends: {fast['backend']} vs {slow['backend']}")
    print(f"{'n':>4} {'kernel':>9} {'numba ms':>10} {'numpy ms':>10} {'ratio':>7}")
    for a, b in zip(fast["rows"], slow["rows"]):
        for key in ("forward", "jacobian", "solve10"):
            print(f"{a['n']:>4} {key:>9} {1e3 * a[key]:>10.3f} {1e3 * b[key]:>10.3f} {b[key] / a[key]:>7.2f}")
    worst = 0.0
    for key, va in fast["arrays"].items():
        va, vb = np.asarray(va), np.asarray(slow["arrays"][key])
        worst = max(worst, float(np.max(np.abs(va - vb)) / np.max(np.abs(va))))
    print(f"max relative difference between backends: {worst:.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
