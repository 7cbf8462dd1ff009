"""Regularized damped Gauss-Newton inversion.

For every truncation index ``ell`` the iteration

    sigma_{k+1} = sigma_k + alpha_k s_k(ell)

is run to convergence, with ``s_k(ell)`` the T(G)SVD-regularized
Gauss-Newton step and ``alpha_k`` from an Armijo-Goldstein search that
also keeps every conductivity positive.  A parameter-choice rule then
picks one index from the sweep.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .forward import InstrumentSetup, LayeredEarthModel, SoundingData, forward_map
from .hankel import DEFAULT_FILTERS
from .jacobian import JacobianMatrix, analytic_jacobian, broyden_update, fd_jacobian, fd_step
from .regularize import (
    RegularizationOperator,
    build_operator,
    discrepancy_pick,
    gsvd,
    lcurve_corner,
    resreg_pick,
    svd_factors,
    tgsvd_step,
    tsvd_step,
)

log = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "EllResult",
    "InversionResult",
    "armijo_step",
    "ell_range",
    "initial_sigma",
    "halfspace_fit",
    "solve_one_ell",
    "solve",
]

RULES = ("discrepancy", "corner", "resreg", "oracle")
JACOBIANS = ("analytic", "fd", "broyden")


@dataclass
class SolverConfig:
    jacobian: str = "analytic"
    fd_rel_step: float = 1e-7
    broyden_period: int = 10
    regularizer: str = "D1"
    ells: list | None = None
    stop_tol: float = 1e-4
    max_iter: int = 100
    alpha_min: float = 1e-5
    initial_sigma: float | list | str | None = "mean"
    positivity: str = "project"
    sigma_floor: float = 1e-6
    rule: str = "discrepancy"
    kappa: float = 1.5
    noise_norm: float | None = None
    filters: str = DEFAULT_FILTERS
    # run exactly max_iter iterations: no stop rule, a failed search keeps sigma
    fixed_iterations: bool = False

    def __post_init__(self):
        if self.jacobian not in JACOBIANS:
            raise ValueError(f"jacobian must be one of {JACOBIANS}")
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}")
        if not self.stop_tol > 0:
            raise ValueError("stop_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.alpha_min < 1:
            raise ValueError("alpha_min must lie in (0, 1)")
        if self.broyden_period < 1:
            raise ValueError("broyden_period must be at least 1")
        if isinstance(self.initial_sigma, str):
            if self.initial_sigma not in ("mean", "halfspace"):
                raise ValueError("initial_sigma must be a value, 'mean' or 'halfspace'")
        elif self.initial_sigma is not None and np.any(~(np.asarray(self.initial_sigma) > 0)):
            raise ValueError("initial conductivity must be strictly positive")
        if self.positivity not in ("backtrack", "project"):
            raise ValueError("positivity must be 'backtrack' or 'project'")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")

    @classmethod
    def from_json(cls, path) -> "SolverConfig":
        with open(path) as fh:
            obj = json.load(fh)
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EllResult:
    ell: int
    sigma: np.ndarray
    iterations: int
    reason: str
    residual_norm: float
    seminorm: float
    error: float | None = None
    # per iteration: (alpha, ||r|| after the step, ||s||); alpha = 0 marks a
    # failed search in fixed-iteration mode
    history: list = field(default_factory=list)
    jacobian_evals: int = 0


@dataclass
class InversionResult:
    runs: list
    chosen: dict
    flags: dict
    rule: str
    sigma0: np.ndarray
    config: dict

    @property
    def ells(self) -> np.ndarray:
        return np.array([run.ell for run in self.runs])

    @property
    def residual_norms(self) -> np.ndarray:
        return np.array([run.residual_norm for run in self.runs])

    @property
    def seminorms(self) -> np.ndarray:
        return np.array([run.seminorm for run in self.runs])

    @property
    def errors(self) -> np.ndarray:
        return np.array([np.nan if run.error is None else run.error for run in self.runs])

    def run_for(self, ell: int) -> EllResult:
        for run in self.runs:
            if run.ell == ell:
                return run
        raise KeyError(ell)

    @property
    def best(self) -> EllResult:
        """Run selected by the configured rule."""
        return self.run_for(self.chosen[self.rule])

    @property
    def e_opt(self) -> float:
        return float(np.nanmin(self.errors))

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "chosen": self.chosen,
            "flags": self.flags,
            "sigma0": self.sigma0.tolist(),
            "config": self.config,
            "sigma": self.best.sigma.tolist(),
            "runs": [
                {
                    "ell": run.ell,
                    "sigma": run.sigma.tolist(),
                    "iterations": run.iterations,
                    "termination": run.reason,
                    "residual_norm": run.residual_norm,
                    "seminorm": run.seminorm,
                    "error": run.error,
                    "jacobian_evals": run.jacobian_evals,
                    "history": [list(h) for h in run.history],
                }
                for run in self.runs
            ],
        }


def armijo_step(sigma, s, J, r_norm2: float, residual_fn: Callable, alpha_min: float = 1e-5,
                positivity: str = "project", floor: float = 1e-6):
    """Largest alpha in 1, 1/2, 1/4, ... (>= alpha_min) giving sufficient decrease.

    With ``positivity="backtrack"`` a trial point with a non-positive
    component is rejected like one failing the decrease test.  With
    ``"project"`` the trial point is clipped to ``floor`` instead.

    Returns ``(alpha, sigma_trial, r_trial)``, or ``(None, None, None)``
    when every admissible alpha is rejected.  For a projected trial the
    decrease is measured against the displacement actually taken.
    """
    J = np.asarray(J)
    Js = J @ s
    js2 = float(Js @ Js)
    alpha = 1.0
    while alpha >= alpha_min:
        trial = sigma + alpha * s
        need = 0.5 * alpha * js2
        if positivity == "project":
            trial = np.maximum(trial, floor)
            Jd = J @ (trial - sigma)
            need = 0.5 * float(Jd @ Jd) / alpha
        if np.all(trial > 0):
            try:
                r_trial = residual_fn(trial)
            except (FloatingPointError, ValueError, ZeroDivisionError):
                r_trial = None
            if r_trial is not None and np.all(np.isfinite(r_trial)):
                if r_norm2 - float(r_trial @ r_trial) >= need:
                    return alpha, trial, r_trial
        alpha *= 0.5
    return None, None, None


def ell_range(op: RegularizationOperator, n_data: int, n: int) -> list:
    """Default sweep: 1..min(2m, n) for TSVD, 0..pbar for TGSVD."""
    if op.is_identity:
        return list(range(1, min(n_data, n) + 1))
    pbar = op.t if n_data >= n else n_data - n + op.t
    return list(range(0, pbar + 1))


def initial_sigma(data: SoundingData, thickness, value=None, filters: str = DEFAULT_FILTERS) -> np.ndarray:
    """Starting iterate.

    ``value`` is a number or vector (used as given), ``"mean"`` (mean of
    the readings clamped to [1e-3, 1] S/m) or ``"halfspace"`` (the
    homogeneous conductivity that best fits the data).
    """
    n = np.size(thickness) + 1
    if value is None or isinstance(value, str):
        mode = value or "mean"
        if mode == "mean":
            value = float(np.clip(np.mean(data.b), 1e-3, 1.0))
        elif mode == "halfspace":
            value = halfspace_fit(data, thickness, filters)
        else:
            raise ValueError(f"unknown initial iterate {mode!r}")
    sigma0 = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    if np.any(~(sigma0 > 0)):
        raise ValueError("initial conductivity must be strictly positive")
    return sigma0


def halfspace_fit(data: SoundingData, thickness, filters: str = DEFAULT_FILTERS,
                  bounds=(1e-3, 10.0)) -> float:
    """Homogeneous conductivity minimizing the data misfit (bounded search in log sigma)."""
    d = np.asarray(thickness, dtype=float)
    ones = np.ones(d.size + 1)

    def misfit(x):
        m = forward_map(LayeredEarthModel(np.exp(x) * ones, d), data.setup, filters)
        return float(np.sum((data.b - m) ** 2))

    res = minimize_scalar(misfit, bounds=np.log(bounds), method="bounded", options={"xatol": 1e-6})
    return float(np.exp(res.x))


class _Problem:
    """Residual and Jacobian evaluations bound to one data set."""

    def __init__(self, thickness, setup, data, config):
        self.d = thickness
        self.setup = setup
        self.data = data
        self.config = config

    def model(self, sigma):
        return LayeredEarthModel(sigma, self.d)

    def residual(self, sigma):
        return self.data.b - forward_map(self.model(sigma), self.setup, self.config.filters)

    def jacobian(self, sigma) -> JacobianMatrix:
        if self.config.jacobian == "fd":
            return fd_jacobian(self.model(sigma), self.setup, self.data,
                               delta=fd_step(sigma, self.config.fd_rel_step),
                               filters=self.config.filters, residual_fn=self.residual)
        return analytic_jacobian(self.model(sigma), self.setup, self.config.filters)


def _regularized_step(J: np.ndarray, r, ell: int, op: RegularizationOperator):
    if op.is_identity:
        F = svd_factors(J)
        if F.p == 0:
            raise np.linalg.LinAlgError("Jacobian is numerically zero")
        return tsvd_step(F, r, min(ell, F.p))
    s = tgsvd_step(gsvd(J, op.matrix, compute_v=False, check=False), r, ell)
    if not np.all(np.isfinite(s)):
        raise np.linalg.LinAlgError("GSVD step is not finite; J and L share a null vector")
    return s


def solve_one_ell(config: SolverConfig, setup: InstrumentSetup, data: SoundingData, ell: int,
                  thickness, sigma0=None, op: RegularizationOperator | None = None,
                  sigma_true=None, _problem: _Problem | None = None) -> EllResult:
    """Run the regularized damped Gauss-Newton iteration for one truncation index."""
    thickness = np.asarray(thickness, dtype=float)
    n = thickness.size + 1
    op = op or build_operator(config.regularizer, n)
    prob = _problem or _Problem(thickness, setup, data, config)
    sigma = initial_sigma(data, thickness, config.initial_sigma, config.filters) if sigma0 is None else np.array(sigma0, dtype=float)
    broyden = config.jacobian == "broyden"

    r = prob.residual(sigma)
    J = prob.jacobian(sigma)
    jac_evals = 1
    history = []
    reason = "max_iter"
    k = 0
    short_steps = 0
    while k < config.max_iter:
        try:
            s = _regularized_step(J.entries, r, ell, op)
        except (np.linalg.LinAlgError, ValueError) as exc:
            log.warning("ell=%d: factorization failed at iteration %d: %s", ell, k, exc)
            reason = "failed"
            break
        if not np.any(s) and not config.fixed_iterations:
            reason = "converged"
            break
        alpha, sigma_new, r_new = armijo_step(sigma, s, J.entries, float(r @ r), prob.residual,
                                              config.alpha_min, config.positivity, config.sigma_floor)
        if alpha is None:
            if broyden and J.age > 0:
                J = prob.jacobian(sigma)
                jac_evals += 1
                short_steps = 0
                if not config.fixed_iterations:
                    continue
            if not config.fixed_iterations:
                reason = "alpha_floor"
                break
            k += 1
            history.append((0.0, float(np.linalg.norm(r)), float(np.linalg.norm(s))))
            continue
        k += 1
        step = sigma_new - sigma
        history.append((alpha, float(np.linalg.norm(r_new)), float(np.linalg.norm(s))))
        done = (not config.fixed_iterations
                and np.linalg.norm(step) < config.stop_tol * np.linalg.norm(sigma_new))
        if not done and k < config.max_iter:
            if broyden:
                short_steps = short_steps + 1 if alpha < 1.0 else 0
                if k % config.broyden_period == 0 or short_steps >= 2 or not np.any(step):
                    J = prob.jacobian(sigma_new)
                    jac_evals += 1
                    short_steps = 0
                else:
                    J = broyden_update(J, step, r_new - r)
            else:
                J = prob.jacobian(sigma_new)
                jac_evals += 1
        sigma, r = sigma_new, r_new
        if done:
            reason = "converged"
            break

    seminorm = float(np.linalg.norm(op.matrix @ sigma))
    err = None
    if sigma_true is not None:
        from .harness import relative_error
        err = relative_error(sigma_true, sigma)
    return EllResult(ell, sigma, k, reason, float(np.linalg.norm(r)), seminorm, err, history, jac_evals)


def solve(config: SolverConfig, setup: InstrumentSetup, data: SoundingData, thickness,
          sigma_true=None) -> InversionResult:
    """Sweep the truncation index and apply the parameter-choice rules."""
    thickness = np.asarray(thickness, dtype=float)
    n = thickness.size + 1
    op = build_operator(config.regularizer, n)
    ells = list(config.ells) if config.ells is not None else ell_range(op, setup.n_data, n)
    sigma0 = initial_sigma(data, thickness, config.initial_sigma, config.filters)
    prob = _Problem(thickness, setup, data, config)
    if config.rule == "oracle" and sigma_true is None:
        raise ValueError("the oracle rule needs the true conductivity profile")

    runs = []
    for ell in ells:
        run = solve_one_ell(config, setup, data, ell, thickness, sigma0, op, sigma_true, prob)
        if run.reason == "failed" and run.iterations == 0:
            continue
        runs.append(run)
    if not runs:
        raise RuntimeError("every truncation index failed")

    rho = np.array([run.residual_norm for run in runs])
    eta = np.array([run.seminorm for run in runs])
    labels = np.array([run.ell for run in runs])
    chosen, flags = {}, {}

    noise = config.noise_norm if config.noise_norm is not None else data.noise_norm
    if noise is not None:
        pick = discrepancy_pick(rho, noise, config.kappa, labels)
        chosen["discrepancy"] = pick.ell
        if pick.flag:
            flags["discrepancy"] = pick.flag
    elif config.rule == "discrepancy":
        raise ValueError("the discrepancy rule needs a noise norm")

    # L-curve indices start at 1; the ell = 0 point has zero seminorm for D1/D2
    curve = labels >= 1
    if np.count_nonzero(curve) >= 3:
        with np.errstate(divide="ignore"):
            pts = np.column_stack([np.log(rho[curve]), np.log(eta[curve])])
        pick = lcurve_corner(pts, labels[curve])
        chosen["corner"] = pick.ell
        if pick.flag:
            flags["corner"] = pick.flag
    if np.count_nonzero(curve) >= 2:
        pick = resreg_pick(rho[curve], eta[curve], labels[curve])
        chosen["resreg"] = pick.ell
        if pick.flag:
            flags["resreg"] = pick.flag
    if sigma_true is not None:
        errs = np.array([run.error for run in runs])
        chosen["oracle"] = int(labels[int(np.argmin(errs))])
    if config.rule not in chosen:
        raise ValueError(f"rule {config.rule!r} could not be applied to this sweep")
    return InversionResult(runs, chosen, flags, config.rule, sigma0, config.to_dict())
