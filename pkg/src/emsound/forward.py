"""Layered-earth response of a two-coil ground conductivity meter.

The nonlinear model maps layer conductivities to the apparent conductivity
read by the instrument at height ``h`` in vertical (V) and horizontal (H)
dipole orientation::

    mV(h) = 4 r / (mu0 w) * H0[-lam exp(-2 h lam) Im R0(lam)](r)
    mH(h) = 4   / (mu0 w) * H1[-    exp(-2 h lam) Im R0(lam)](r)

where R0 is the reflection factor obtained from the surface admittance
recursion.  The McNeill cumulative-response model is provided as the
low-induction-number baseline.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import _kernels
from ._kernels import LAMBDA_MAX, MU0
from .hankel import DEFAULT_FILTERS, filter_pair

__all__ = [
    "MU0",
    "LAMBDA_MAX",
    "LayeredEarthModel",
    "InstrumentSetup",
    "SoundingData",
    "characteristic_admittance",
    "surface_admittance",
    "reflection_factor",
    "forward_map",
    "linear_forward",
    "residual",
    "load_model",
    "save_model",
    "load_data",
    "save_data",
]

ORIENTATIONS = ("V", "H")


@dataclass(frozen=True)
class LayeredEarthModel:
    """Stack of ``n`` layers; the last one is a half-space.

    sigma : conductivities, S/m (length n)
    d     : thicknesses, m (length n - 1)
    mu    : permeabilities, H/m (length n, default mu0)
    """

    sigma: np.ndarray
    d: np.ndarray
    mu: np.ndarray | None = None
    # free-form annotations (e.g. induction number); never read by the physics
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float, ndmin=1)
        d = np.array(self.d, dtype=float, ndmin=1)
        n = sigma.size
        mu = np.full(n, MU0) if self.mu is None else np.array(self.mu, dtype=float, ndmin=1)
        if n < 1 or sigma.ndim != 1:
            raise ValueError("sigma must be a non-empty vector")
        if d.size != n - 1:
            raise ValueError(f"expected {n - 1} thicknesses for {n} layers, got {d.size}")
        if mu.size != n:
            raise ValueError(f"expected {n} permeabilities, got {mu.size}")
        if np.any(~np.isfinite(sigma)) or np.any(sigma < 0):
            raise ValueError("conductivities must be finite and non-negative")
        if np.any(~(d > 0)) or np.any(~np.isfinite(d)):
            raise ValueError("thicknesses must be positive")
        if np.any(~(mu > 0)):
            raise ValueError("permeabilities must be positive")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "mu", mu)

    @property
    def n(self) -> int:
        return self.sigma.size

    @property
    def depths(self) -> np.ndarray:
        """Depth of the top of each layer."""
        return np.concatenate([[0.0], np.cumsum(self.d)])

    def with_sigma(self, sigma) -> "LayeredEarthModel":
        return LayeredEarthModel(sigma, self.d, self.mu)


@dataclass(frozen=True)
class InstrumentSetup:
    """Coil geometry, frequency and the measurement heights."""

    heights: tuple
    r: float = 1.0
    frequency: float = 14600.0
    orientations: tuple = ORIENTATIONS

    def __post_init__(self):
        h = tuple(float(x) for x in np.atleast_1d(self.heights))
        orient = tuple(str(o).upper() for o in self.orientations)
        if not h:
            raise ValueError("at least one measurement height is required")
        if any(x < 0 for x in h) or any(b <= a for a, b in zip(h, h[1:])):
            raise ValueError("heights must be non-negative and strictly increasing")
        if not self.r > 0 or not self.frequency > 0:
            raise ValueError("coil separation and frequency must be positive")
        if not orient or any(o not in ORIENTATIONS for o in orient) or len(set(orient)) != len(orient):
            raise ValueError(f"orientations must be a non-empty subset of {ORIENTATIONS}")
        # keep the canonical V-then-H block order
        orient = tuple(o for o in ORIENTATIONS if o in orient)
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "orientations", orient)

    @property
    def omega(self) -> float:
        return 2.0 * np.pi * self.frequency

    @property
    def m(self) -> int:
        return len(self.heights)

    @property
    def n_data(self) -> int:
        return self.m * len(self.orientations)

    def skin_depth(self, sigma: float) -> float:
        return float(np.sqrt(2.0 / (MU0 * self.omega * sigma)))

    def induction_number(self, sigma: float) -> float:
        """r / skin depth; the linear model needs this to be small."""
        return float(self.r * np.sqrt(MU0 * self.omega * sigma / 2.0))

    def with_orientations(self, orientations) -> "InstrumentSetup":
        return InstrumentSetup(self.heights, self.r, self.frequency, tuple(orientations))


@dataclass
class SoundingData:
    """Stacked readings: vertical block then horizontal block, S/m."""

    b: np.ndarray
    setup: InstrumentSetup
    noise_norm: float | None = None
    b_exact: np.ndarray | None = None
    realized_noise: float | None = None

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        if self.b.shape != (self.setup.n_data,):
            raise ValueError(
                f"data vector has shape {self.b.shape}, setup expects ({self.setup.n_data},)"
            )

    def block(self, orientation: str) -> np.ndarray:
        i = self.setup.orientations.index(orientation.upper())
        m = self.setup.m
        return self.b[i * m:(i + 1) * m]


# ---------------------------------------------------------------------------
# scalar primitives


def _layer_u(lam, sigma, mu, omega):
    return np.sqrt(lam * lam + 1j * sigma * mu * omega + 0j)


def characteristic_admittance(lam: float, model: LayeredEarthModel, k: int, omega: float) -> complex:
    """N_k(lam) = u_k / (i mu_k w), with the Re(u_k) > 0 branch. ``k`` is 0-based."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    u = _layer_u(lam, model.sigma[k], model.mu[k], omega)
    return complex(u / (1j * model.mu[k] * omega))


def surface_admittance(lam: float, model: LayeredEarthModel, omega: float,
                       lam_max: float = LAMBDA_MAX) -> complex:
    """Y_1(lam) by the upward recursion from Y_n = N_n."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    n = model.n
    Y = characteristic_admittance(lam, model, n - 1, omega)
    for k in range(n - 2, -1, -1):
        u = _layer_u(lam, model.sigma[k], model.mu[k], omega)
        N = u / (1j * model.mu[k] * omega)
        x = model.d[k] * u
        t = 1.0 if x.real > lam_max else np.tanh(x)
        Y = N * (Y + N * t) / (N + Y * t)
        if not np.isfinite(Y):
            raise FloatingPointError(f"surface admittance not finite at layer {k + 1} (lambda = {lam:g})")
    return complex(Y)


def reflection_factor(lam: float, model: LayeredEarthModel, omega: float) -> complex:
    """R0 = (N0 - Y1) / (N0 + Y1) with N0 the admittance of air."""
    N0 = lam / (1j * MU0 * omega)
    Y1 = surface_admittance(lam, model, omega)
    den = N0 + Y1
    if den == 0:
        raise ZeroDivisionError(f"reflection factor undefined at lambda = {lam:g}")
    return complex((N0 - Y1) / den)


# ---------------------------------------------------------------------------
# quadrature operators


class _Quadrature:
    """Node sets and filter matrices for one instrument setup.

    Each group is ``(lam, K)`` where ``K @ Im(R0(lam))`` gives ``-m`` for the
    rows of the group.  With a shared filter base both orientations form a
    single group and R0 is evaluated once.
    """

    def __init__(self, setup: InstrumentSetup, filters: str):
        pair = filter_pair(filters)
        r = setup.r
        h = np.asarray(setup.heights)
        scale = 4.0 / (MU0 * setup.omega)
        rows = {}
        for o in setup.orientations:
            filt = pair.j0 if o == "V" else pair.j1
            lam = filt.base / r
            decay = np.exp(-2.0 * np.outer(h, lam))
            if o == "V":
                # (4r/mu0 w) (1/r) sum w lam [lam e^{-2h lam} Im R0]
                K = scale * decay * (filt.weights * lam * lam)
            else:
                K = scale * decay * (filt.weights * lam) / r
            rows[o] = (lam, K)
        if pair.shared_base or len(rows) == 1:
            lam = next(iter(rows.values()))[0]
            K = np.vstack([rows[o][1] for o in setup.orientations])
            self.groups = [(lam, K, slice(0, setup.n_data))]
        else:
            m = setup.m
            self.groups = [
                (rows[o][0], rows[o][1], slice(i * m, (i + 1) * m))
                for i, o in enumerate(setup.orientations)
            ]
        self.n_data = setup.n_data
        self.omega = setup.omega


@lru_cache(maxsize=64)
def _quadrature(setup: InstrumentSetup, filters: str) -> _Quadrature:
    return _Quadrature(setup, filters)


def _nonfinite_error(lam, model, omega):
    for l in np.atleast_1d(lam):
        surface_admittance(float(l), model, omega)  # raises naming the layer
    return FloatingPointError("non-finite reflection factor")


def forward_map(model: LayeredEarthModel, setup: InstrumentSetup,
                filters: str = DEFAULT_FILTERS) -> np.ndarray:
    """Predicted apparent conductivities, S/m, stacked V block then H block."""
    quad = _quadrature(setup, filters)
    out = np.empty(quad.n_data)
    for lam, K, rows in quad.groups:
        R0 = _kernels.reflection(lam, model.sigma, model.d, model.mu, quad.omega)
        if not np.all(np.isfinite(R0)):
            raise _nonfinite_error(lam, model, quad.omega)
        out[rows] = -(K @ R0.imag)
    return out


def residual(model: LayeredEarthModel, setup: InstrumentSetup, data: SoundingData,
             filters: str = DEFAULT_FILTERS) -> np.ndarray:
    """r(sigma) = b - m(sigma)."""
    if data.b.shape != (setup.n_data,) or data.setup.orientations != setup.orientations:
        raise ValueError("data block structure does not match the instrument setup")
    return data.b - forward_map(model, setup, filters)


# ---------------------------------------------------------------------------
# McNeill linear model


def _cumulative_v(z):
    # antiderivative of phiV(z) = 4z / (4z^2+1)^{3/2}, equal to 0 at z = inf
    return -1.0 / np.sqrt(4.0 * z * z + 1.0)


def _cumulative_h(z):
    # antiderivative of phiH(z) = 2 - 4z / (4z^2+1)^{1/2}, equal to 0 at z = inf
    # written as 2z - sqrt(4z^2+1) = -1 / (2z + sqrt(4z^2+1)) to avoid cancellation
    return -1.0 / (2.0 * z + np.sqrt(4.0 * z * z + 1.0))


def linear_forward(model: LayeredEarthModel, setup: InstrumentSetup) -> np.ndarray:
    """McNeill response of a piecewise-constant profile, integrated exactly.

    Depths and heights are normalised by the coil separation, as the
    response functions are defined in units of ``r``.
    """
    tops = model.depths / setup.r
    bottoms = np.append(tops[1:], np.inf)
    h = np.asarray(setup.heights)[:, None] / setup.r
    out = []
    for o in setup.orientations:
        F = _cumulative_v if o == "V" else _cumulative_h
        with np.errstate(invalid="ignore"):
            upper = np.where(np.isinf(bottoms), 0.0, F(h + bottoms))
        weights = upper - F(h + tops)
        out.append(weights @ model.sigma)
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# file formats


def load_model(path, units: str = "S/m") -> LayeredEarthModel:
    """Model JSON: ``{"sigma": [...], "d": [...], "mu": [...]}`` (mu optional)."""
    with open(path) as fh:
        obj = json.load(fh)
    try:
        sigma = np.asarray(obj["sigma"], dtype=float) * _unit_scale(units)
        return LayeredEarthModel(sigma, obj.get("d", []), obj.get("mu"))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed model file ({exc})") from exc


def save_model(model: LayeredEarthModel, path) -> None:
    obj = {"sigma": model.sigma.tolist(), "d": model.d.tolist()}
    if not np.allclose(model.mu, MU0, rtol=0, atol=0):
        obj["mu"] = model.mu.tolist()
    Path(path).write_text(json.dumps(obj, indent=2))


def _unit_scale(units: str) -> float:
    if units == "S/m":
        return 1.0
    if units == "mS/m":
        return 1e-3
    raise ValueError(f"unknown conductivity unit {units!r}")


DATA_COLUMNS = ("height_m", "orientation", "apparent_conductivity_S_per_m")


def load_data(path, r: float = 1.0, frequency: float = 14600.0, units: str = "S/m",
              noise_norm: float | None = None) -> SoundingData:
    """Read a reading-per-row CSV into a SoundingData with its setup."""
    readings = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(DATA_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            o = row["orientation"].strip().upper()
            if o not in ORIENTATIONS:
                raise ValueError(f"{path}: bad orientation {row['orientation']!r}")
            h = float(row["height_m"])
            readings.setdefault(o, {})[h] = float(row["apparent_conductivity_S_per_m"])
    if not readings:
        raise ValueError(f"{path}: no readings")
    orientations = tuple(o for o in ORIENTATIONS if o in readings)
    heights = sorted(readings[orientations[0]])
    for o in orientations:
        if sorted(readings[o]) != heights:
            raise ValueError(f"{path}: orientations were measured at different heights")
    scale = _unit_scale(units)
    b = [readings[o][h] * scale for o in orientations for h in heights]
    setup = InstrumentSetup(tuple(heights), r, frequency, orientations)
    return SoundingData(np.array(b), setup, noise_norm)


def save_data(data: SoundingData, path, units: str = "S/m") -> None:
    """Write readings as CSV to a path or an open text stream."""
    scale = _unit_scale(units)
    m = data.setup.m
    rows = [[repr(h), o, repr(float(data.b[i * m + j] / scale))]
            for i, o in enumerate(data.setup.orientations)
            for j, h in enumerate(data.setup.heights)]
    if hasattr(path, "write"):
        _write_rows(path, rows)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(fh, rows)


def _write_rows(fh, rows):
    writer = csv.writer(fh)
    writer.writerow(DATA_COLUMNS)
    writer.writerows(rows)
