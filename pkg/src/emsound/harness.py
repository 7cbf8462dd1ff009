"""Synthetic experiments: test profiles, data synthesis and table drivers.

The presets reproduce the experiment grids used to assess the inversion:

* ``table1``  optimal error for every (profile, L, m, n) cell;
* ``table2``  same, comparing both orientations with a single one;
* ``table3``  Broyden-updated Jacobian (k_B = 10);
* ``fig2``    singular values of J over random conductivity vectors;
* ``fig56``   f3 with a variable step length;
* ``timing``  wall clock of a fixed number of iterations, exact vs Broyden.

Every noise realization draws from its own generator, seeded from
(master seed, cell index, realization index), so any cell can be
recomputed alone and results do not depend on execution order.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .forward import InstrumentSetup, LayeredEarthModel, SoundingData, forward_map
from .jacobian import analytic_jacobian

log = logging.getLogger(__name__)

__all__ = [
    "TestProfile",
    "NoiseSpec",
    "discretize",
    "make_heights",
    "synthesize",
    "relative_error",
    "Cell",
    "preset_cells",
    "run_cell",
    "run_table",
    "singular_value_study",
    "time_fixed_iterations",
    "write_report",
    "PRESETS",
]

MAX_DEPTH = 2.0
MAX_HEIGHT = 1.9
MIN_HEIGHT_STEP = 0.1

_F2_NODES = ([0.0, 0.5, 1.0, 1.5, 2.0], [0.0, 1.0, 1.0, 0.0, 0.0])
# z values are products j*dbar; a closed support test needs a little slack
_STEP_SLACK = 1e-9


@dataclass(frozen=True)
class TestProfile:
    """Conductivity as a function of depth z (m), in S/m.

    f1: exp(-(z - 1)^2)
    f2: piecewise linear through (0,0), (0.5,1), (1,1), (1.5,0), (2,0)
    f3: unit step of length ``xi`` centred at ``center``
    """

    __test__ = False  # not a pytest class

    kind: str
    xi: float = 1.0
    center: float = 1.0

    def __post_init__(self):
        if self.kind not in ("f1", "f2", "f3"):
            raise ValueError(f"unknown profile {self.kind!r}")
        if self.kind == "f3" and not self.xi > 0:
            raise ValueError("step length must be positive")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "f1":
            return np.exp(-(z - 1.0) ** 2)
        if self.kind == "f2":
            return np.interp(z, *_F2_NODES)
        half = 0.5 * self.xi
        return (np.abs(z - self.center) <= half + _STEP_SLACK).astype(float)

    @property
    def label(self) -> str:
        return f"f3(xi={self.xi:g})" if self.kind == "f3" else self.kind


@dataclass(frozen=True)
class NoiseSpec:
    level: float = 1e-3
    seed: int = 0
    realizations: int = 20

    def __post_init__(self):
        if not self.level >= 0:
            raise ValueError("noise level must be non-negative")
        if self.realizations < 1:
            raise ValueError("need at least one realization")


def discretize(profile: TestProfile, n: int) -> LayeredEarthModel:
    """n layers of equal thickness 2/(n-1); sigma_j = profile(z_j) at the layer tops."""
    if n < 2:
        raise ValueError("need at least two layers")
    dbar = MAX_DEPTH / (n - 1)
    z = np.arange(n) * dbar
    return LayeredEarthModel(profile(z), np.full(n - 1, dbar), meta={"profile": profile.label})


def make_heights(m: int, step: float | None = None) -> tuple:
    """Heights (i - 1) * step, i = 1..m.

    Without ``step`` the heights are equispaced from 0 to 1.9 m.
    """
    if m < 1:
        raise ValueError("need at least one height")
    if step is None:
        step = MAX_HEIGHT / (m - 1) if m > 1 else 0.0
    elif step < 0:
        raise ValueError("height step must be non-negative")
    # 1.9 / 19 rounds to just under 0.1
    if m > 1 and step < MIN_HEIGHT_STEP * (1 - 1e-12):
        warnings.warn(f"height step {step:g} m is below {MIN_HEIGHT_STEP} m", stacklevel=2)
    return tuple(float(i * step) for i in range(m))


def _noisy(b_exact, level, rng):
    w = rng.standard_normal(b_exact.size)
    return b_exact + w * np.linalg.norm(b_exact) * level / math.sqrt(b_exact.size)


def synthesize(profile: TestProfile, n: int, m: int, noise: NoiseSpec,
               setup: InstrumentSetup | None = None, rng=None):
    """True model and one noisy data set.

    The noise is w * ||b_exact|| * level / sqrt(len(b)); the data carry
    ``noise_norm = level * ||b_exact||`` for the discrepancy rule and the
    realized perturbation norm in ``realized_noise``.
    """
    model = discretize(profile, n)
    setup = setup or InstrumentSetup(make_heights(m))
    if setup.m != m:
        raise ValueError("setup heights do not match m")
    rng = rng if rng is not None else np.random.default_rng(noise.seed)
    b_exact = forward_map(model, setup)
    b = _noisy(b_exact, noise.level, rng) if noise.level > 0 else b_exact.copy()
    data = SoundingData(b, setup, noise_norm=noise.level * float(np.linalg.norm(b_exact)),
                        b_exact=b_exact, realized_noise=float(np.linalg.norm(b - b_exact)))
    return model, data


def relative_error(sigma_true, sigma_est) -> float:
    sigma_true = np.asarray(sigma_true, dtype=float)
    sigma_est = np.asarray(sigma_est, dtype=float)
    if sigma_true.shape != sigma_est.shape:
        raise ValueError(f"length mismatch: {sigma_true.shape} vs {sigma_est.shape}")
    ref = np.linalg.norm(sigma_true)
    if ref == 0:
        raise ValueError("true profile is identically zero")
    return float(np.linalg.norm(sigma_true - sigma_est) / ref)


# ---------------------------------------------------------------------------
# experiment grids


@dataclass(frozen=True)
class Cell:
    """One grid cell: a profile/operator/setup combination."""

    profile: TestProfile
    L: str
    m: int
    n: int
    tau: float = 1e-3
    orientations: tuple = ("V", "H")
    jacobian: str = "analytic"
    broyden_period: int = 10

    def key(self) -> dict:
        return {
            "profile": self.profile.label,
            "L": self.L,
            "m": self.m,
            "n": self.n,
            "tau": self.tau,
            "orientation": "both" if len(self.orientations) == 2 else self.orientations[0],
            "jacobian": self.jacobian,
        }


_PAIRED = (("f1", "D2"), ("f2", "D1"), ("f3", "D1"))
_MS = (5, 10, 20)
_NS = (20, 40)


def preset_cells(preset: str, **overrides) -> list:
    """Cells of a preset.  ``overrides`` narrows the grid.

    Recognised keys: profiles, Ls, ms, ns, taus, orientations, xis,
    jacobian, broyden_period.
    """
    ms = tuple(overrides.get("ms", _MS))
    ns = tuple(overrides.get("ns", _NS))
    taus = tuple(overrides.get("taus", (1e-3,)))
    if preset == "table1":
        profiles = overrides.get("profiles", ("f1", "f2", "f3"))
        Ls = overrides.get("Ls", ("I", "D1", "D2"))
        return [Cell(TestProfile(p), L, m, n, tau)
                for p, m, L, n, tau in product(profiles, ms, Ls, ns, taus)]
    if preset in ("table2", "table3"):
        pairs = [pl for pl in _PAIRED if pl[0] in overrides.get("profiles", ("f1", "f2", "f3"))]
        if preset == "table2":
            orients = overrides.get("orientations", (("V", "H"), ("V",), ("H",)))
            jac = overrides.get("jacobian", "analytic")
        else:
            orients = overrides.get("orientations", (("V", "H"),))
            jac = overrides.get("jacobian", "broyden")
        kb = overrides.get("broyden_period", 10)
        return [Cell(TestProfile(p), L, m, n, tau, tuple(o), jac, kb)
                for o, (p, L), m, n, tau in product(orients, pairs, ms, ns, taus)]
    if preset == "fig56":
        xis = overrides.get("xis", (0.3, 0.5, 0.7, 1.0, 1.5))
        Ls = overrides.get("Ls", ("I", "D1", "D2"))
        taus = tuple(overrides.get("taus", (1e-3, 1e-2, 1e-1)))
        m = overrides.get("ms", (20,))[0]
        n = overrides.get("ns", (40,))[0]
        return [Cell(TestProfile("f3", xi), L, m, n, tau)
                for xi, L, tau in product(xis, Ls, taus)]
    raise ValueError(f"unknown preset {preset!r}")


def _seed(master: int, cell_index: int, realization: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master, cell_index, realization]))


def run_realization(cell: Cell, cell_index: int, realization: int, master_seed: int = 0,
                    keep_sigma: bool = False, options: dict | None = None) -> dict:
    """One noisy data set for ``cell``, inverted with the oracle rule.

    ``options`` are extra SolverConfig fields.
    """
    from .solver import SolverConfig, solve

    setup = InstrumentSetup(make_heights(cell.m), orientations=cell.orientations)
    model, data = synthesize(cell.profile, cell.n, cell.m, NoiseSpec(cell.tau),
                             setup, rng=_seed(master_seed, cell_index, realization))
    config = SolverConfig(jacobian=cell.jacobian, broyden_period=cell.broyden_period,
                          regularizer=cell.L, rule="oracle", **(options or {}))
    res = solve(config, setup, data, model.d, sigma_true=model.sigma)
    best = res.run_for(res.chosen["oracle"])
    rec = {
        **cell.key(),
        "cell": cell_index,
        "realization": realization,
        "e_opt": best.error,
        "ell_opt": best.ell,
        "termination": best.reason,
        "iterations": best.iterations,
        "picks": res.chosen,
        "pick_errors": {rule: res.run_for(ell).error for rule, ell in res.chosen.items()},
    }
    if keep_sigma:
        rec["sigma_true"] = model.sigma.tolist()
        rec["sigma_opt"] = best.sigma.tolist()
    return rec


def _job(args):
    cell, ci, k, seed, keep, options = args
    try:
        return run_realization(cell, ci, k, seed, keep, options)
    except Exception as exc:  # a failed job marks its cell, the grid goes on
        log.error("cell %d realization %d failed: %s", ci, k, exc)
        return {**cell.key(), "cell": ci, "realization": k, "e_opt": None, "failure": repr(exc)}


def run_cell(cell: Cell, realizations: int = 20, master_seed: int = 0, cell_index: int = 0,
             keep_sigma: bool = False, options: dict | None = None) -> dict:
    records = [_job((cell, cell_index, k, master_seed, keep_sigma, options)) for k in range(realizations)]
    return _summarize(cell, cell_index, records)


def _summarize(cell: Cell, cell_index: int, records: list) -> dict:
    errs = np.array([r["e_opt"] for r in records if r.get("e_opt") is not None])
    return {
        **cell.key(),
        "cell": cell_index,
        "mean_e_opt": float(errs.mean()) if errs.size else None,
        "std_e_opt": float(errs.std(ddof=1)) if errs.size > 1 else 0.0,
        "realizations": len(records),
        "failures": len(records) - errs.size,
        "records": records,
    }


def run_table(preset: str, realizations: int = 20, master_seed: int = 0, workers: int = 1,
              keep_sigma: bool = False, options: dict | None = None, **overrides):
    """Run a preset grid; returns one summary dict per cell (``fig2`` returns its study)."""
    if preset == "fig2":
        return singular_value_study(master_seed=master_seed, **overrides)
    if preset == "timing":
        return time_fixed_iterations(master_seed=master_seed, **overrides)
    cells = preset_cells(preset, **overrides)
    jobs = [(c, ci, k, master_seed, keep_sigma, options) for ci, c in enumerate(cells) for k in range(realizations)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_job, jobs, chunksize=1))
    else:
        records = [_job(j) for j in jobs]
    out = []
    for ci, c in enumerate(cells):
        out.append(_summarize(c, ci, records[ci * realizations:(ci + 1) * realizations]))
    return out


def singular_value_study(ns=(10, 20, 30, 40), samples: int = 1000, master_seed: int = 0,
                         m: int | None = None, sigma_max: float = 100.0, **_ignored) -> dict:
    """Singular values of J at random sigma in [0, sigma_max]^n.

    ``m`` defaults to n / 2 (square J with both orientations).
    """
    study = {}
    for n in ns:
        mm = m if m is not None else max(n // 2, 1)
        setup = InstrumentSetup(make_heights(mm))
        d = np.full(n - 1, MAX_DEPTH / (n - 1))
        rng = np.random.default_rng(np.random.SeedSequence([master_seed, n]))
        gam = np.empty((samples, min(setup.n_data, n)))
        for k in range(samples):
            model = LayeredEarthModel(rng.uniform(0.0, sigma_max, n), d)
            gam[k] = np.linalg.svd(analytic_jacobian(model, setup).entries, compute_uv=False)
        cond = gam[:, 0] / gam[:, -1]
        study[n] = {
            "m": mm,
            "mean": gam.mean(axis=0).tolist(),
            "min": gam.min(axis=0).tolist(),
            "max": gam.max(axis=0).tolist(),
            "cond_min": float(cond.min()),
            "cond_median": float(np.median(cond)),
        }
    return study


def time_fixed_iterations(profile: str = "f2", n: int = 40, m: int = 10, ell: int = 4, L: str = "D2",
                          tau: float = 1e-3, iterations: int = 100, broyden_period: int = 10,
                          master_seed: int = 0, repeats: int = 3, **_ignored) -> dict:
    """Wall clock of ``iterations`` fixed iterations, exact vs Broyden Jacobian.

    Both runs start from the same data and iterate; the best of
    ``repeats`` timings is kept.  Also reports the cost of one forward
    evaluation and one exact Jacobian, which bound the attainable ratio.
    """
    from .solver import SolverConfig, solve_one_ell

    setup = InstrumentSetup(make_heights(m))
    model, data = synthesize(TestProfile(profile), n, m, NoiseSpec(tau), setup,
                             rng=_seed(master_seed, 0, 0))
    out = {"profile": profile, "n": n, "m": m, "ell": ell, "L": L, "tau": tau,
           "iterations": iterations, "broyden_period": broyden_period}
    for jac in ("analytic", "broyden"):
        config = SolverConfig(jacobian=jac, broyden_period=broyden_period, regularizer=L,
                              max_iter=iterations, fixed_iterations=True)
        solve_one_ell(config, setup, data, ell, model.d)  # warm-up (compilation, caches)
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            run = solve_one_ell(config, setup, data, ell, model.d)
            best = min(best, time.perf_counter() - t0)
        out[jac] = {
            "seconds": best,
            "iterations": run.iterations,
            "jacobian_evals": run.jacobian_evals,
            "failed_searches": sum(1 for h in run.history if h[0] == 0.0),
            "residual_norm": run.residual_norm,
        }
    out["speedup"] = out["analytic"]["seconds"] / out["broyden"]["seconds"]
    out["forward_seconds"] = _best_time(lambda: forward_map(model, setup), repeats * 10)
    out["jacobian_seconds"] = _best_time(lambda: analytic_jacobian(model, setup), repeats * 10)
    return out


def _best_time(fn, repeats: int) -> float:
    fn()
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


PRESETS = ("table1", "table2", "table3", "fig2", "fig56", "timing")


def write_report(result, out, preset: str) -> list:
    """Write ``<out>.csv`` (per cell), ``<out>.jsonl`` (per realization) or ``<out>.json`` (fig2, timing)."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    written = []
    if preset == "timing":
        path = out.with_suffix(".json")
        path.write_text(json.dumps(result, indent=1))
        return [path]
    if preset == "fig2":
        path = out.with_suffix(".json")
        path.write_text(json.dumps({str(k): v for k, v in result.items()}, indent=1))
        xy = out.with_suffix(".xy.csv")
        with open(xy, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "index", "mean", "min", "max"])
            for n, s in result.items():
                for i, row in enumerate(zip(s["mean"], s["min"], s["max"]), 1):
                    w.writerow([n, i, *row])
        return [path, xy]
    cols = ["cell", "profile", "L", "m", "n", "tau", "orientation", "jacobian",
            "mean_e_opt", "std_e_opt", "realizations", "failures"]
    path = out.with_suffix(".csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, cols, extrasaction="ignore")
        w.writeheader()
        w.writerows(result)
    written.append(path)
    raw = out.with_suffix(".jsonl")
    with open(raw, "w") as fh:
        for cell in result:
            for rec in cell["records"]:
                fh.write(json.dumps(rec) + "\n")
    written.append(raw)
    return written
