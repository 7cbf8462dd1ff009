"""Jacobian of the residual r(sigma) = b - m(sigma) with respect to sigma.

Three sources are available: the analytic recursion (exact up to
quadrature), forward finite differences, and Broyden rank-one updates of
an earlier matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from ._kernels import LAMBDA_MAX
from .forward import (
    InstrumentSetup,
    LayeredEarthModel,
    SoundingData,
    _nonfinite_error,
    _quadrature,
    residual,
)
from .hankel import DEFAULT_FILTERS

__all__ = [
    "JacobianMatrix",
    "AdmittanceGradient",
    "admittance_gradient",
    "analytic_jacobian",
    "fd_jacobian",
    "fd_step",
    "broyden_update",
]


@dataclass
class JacobianMatrix:
    """Dense (n_data, n) matrix plus where it came from.

    provenance is ``"analytic"``, ``"finite_difference"`` or ``"broyden"``;
    ``age`` counts Broyden updates since the last exact evaluation.
    """

    entries: np.ndarray
    provenance: str = "analytic"
    age: int = 0
    delta: float | None = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        if not np.all(np.isfinite(self.entries)):
            raise FloatingPointError("Jacobian has non-finite entries")

    @property
    def shape(self):
        return self.entries.shape


@dataclass
class AdmittanceGradient:
    y1: complex
    dy1: np.ndarray


def admittance_gradient(lam: float, model: LayeredEarthModel, omega: float,
                        lam_max: float = LAMBDA_MAX) -> AdmittanceGradient:
    """Surface admittance Y_1 and dY_1/dsigma_j at one node.

    Runs the joint admittance/derivative recursion with a single length-n
    buffer; same arithmetic as the batched kernels.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    sigma, d, mu = model.sigma, model.d, model.mu
    n = model.n
    g = np.zeros(n, dtype=complex)
    imw = 1j * mu[-1] * omega
    u = np.sqrt(lam * lam + imw * sigma[-1])
    Y = u / imw
    g[-1] = 0.5 / u
    for k in range(n - 2, -1, -1):
        imw = 1j * mu[k] * omega
        u = np.sqrt(lam * lam + imw * sigma[k])
        N = u / imw
        x = d[k] * u
        if x.real > lam_max:
            t, b = 1.0, 0.0
            den = N + Y
        else:
            t = np.tanh(x)
            den = N + Y * t
            b = 1.0 / (den * den * np.cosh(x) ** 2)
        a = (Y + N * t) / den
        g[k + 1:] *= N * N * b
        g[k] = a / (2.0 * u) + 0.5 * b * (N * N * d[k] - Y * (d[k] * Y + 1.0 / imw))
        Y = N * a
        if not (np.isfinite(Y) and np.all(np.isfinite(g[k:]))):
            raise FloatingPointError(f"admittance gradient not finite at layer {k + 1}, lambda = {lam:g}")
    return AdmittanceGradient(complex(Y), g)


def analytic_jacobian(model: LayeredEarthModel, setup: InstrumentSetup,
                      filters: str = DEFAULT_FILTERS) -> JacobianMatrix:
    """Exact Jacobian of the residual, rows ordered like the data vector."""
    quad = _quadrature(setup, filters)
    J = np.empty((quad.n_data, model.n))
    for lam, K, rows in quad.groups:
        _, dR = _kernels.reflection_grad(lam, model.sigma, model.d, model.mu, quad.omega)
        if not np.all(np.isfinite(dR)):
            raise _nonfinite_error(lam, model, quad.omega)
        # r = b - m and m = -K Im R0, hence dr/dsigma = K Im dR0/dsigma
        J[rows] = K @ dR.imag
    return JacobianMatrix(J, "analytic")


def fd_step(sigma, rel: float = 1e-7) -> np.ndarray:
    """Default per-column step: rel * max(sigma_j, 1)."""
    return rel * np.maximum(np.asarray(sigma, dtype=float), 1.0)


def fd_jacobian(model: LayeredEarthModel, setup: InstrumentSetup, data: SoundingData,
                delta=None, filters: str = DEFAULT_FILTERS,
                residual_fn: Callable[[np.ndarray], np.ndarray] | None = None) -> JacobianMatrix:
    """Forward-difference Jacobian, one residual evaluation per column.

    ``delta`` may be a scalar or a per-column vector; by default
    ``fd_step(sigma)``.  ``residual_fn`` replaces the physical residual
    (used to check the differencing on known maps).
    """
    sigma = model.sigma
    if residual_fn is None:
        def residual_fn(s):
            return residual(model.with_sigma(s), setup, data, filters)
    steps = fd_step(sigma) if delta is None else np.broadcast_to(np.asarray(delta, dtype=float), sigma.shape)
    if np.any(~(steps > 0)):
        raise ValueError("finite-difference step must be positive")
    r0 = residual_fn(sigma)
    J = np.empty((r0.size, sigma.size))
    for j in range(sigma.size):
        s = sigma.copy()
        s[j] += steps[j]
        J[:, j] = (residual_fn(s) - r0) / steps[j]
    return JacobianMatrix(J, "finite_difference", delta=float(np.max(steps)))


def broyden_update(J_prev: JacobianMatrix, s, y) -> JacobianMatrix:
    """Rank-one secant update J + (y - J s) s^T / (s^T s)."""
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    ss = float(s @ s)
    if ss == 0.0:
        raise ZeroDivisionError("Broyden update needs a non-zero step")
    A = J_prev.entries
    J = A + np.outer(y - A @ s, s / ss)
    return JacobianMatrix(J, "broyden", J_prev.age + 1)
