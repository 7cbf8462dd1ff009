"""Layered-earth inversion of EM38 sounding data.

Forward model (Hankel-filter quadrature of the admittance recursion),
analytic / finite-difference / Broyden Jacobians, T(G)SVD-regularized
damped Gauss-Newton iteration and parameter-choice rules.

Set ``EMSOUND_DISABLE_NUMBA=1`` before import to run the numpy kernels.
"""
from ._kernels import BACKEND
from .forward import (
    InstrumentSetup,
    LayeredEarthModel,
    SoundingData,
    forward_map,
    load_data,
    load_model,
    residual,
    save_data,
    save_model,
)
from .harness import NoiseSpec, TestProfile, discretize, make_heights, relative_error, synthesize
from .jacobian import JacobianMatrix, analytic_jacobian, broyden_update, fd_jacobian
from .regularize import build_operator, gsvd, svd_factors, tgsvd_step, tsvd_step
from .solver import InversionResult, SolverConfig, solve, solve_one_ell

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "InstrumentSetup",
    "LayeredEarthModel",
    "SoundingData",
    "forward_map",
    "residual",
    "load_data",
    "load_model",
    "save_data",
    "save_model",
    "TestProfile",
    "NoiseSpec",
    "discretize",
    "make_heights",
    "synthesize",
    "relative_error",
    "JacobianMatrix",
    "analytic_jacobian",
    "fd_jacobian",
    "broyden_update",
    "build_operator",
    "svd_factors",
    "gsvd",
    "tsvd_step",
    "tgsvd_step",
    "SolverConfig",
    "InversionResult",
    "solve",
    "solve_one_ell",
]
