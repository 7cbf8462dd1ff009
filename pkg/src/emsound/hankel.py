"""Digital-filter evaluation of zeroth and first order Hankel transforms.

The transform computed here is

    H_nu[f](r) = int_0^inf f(lam) J_nu(r lam) lam dlam,   nu in {0, 1}

approximated by a linear filter,

    H_nu[f](r) ~= (1/r) sum_i w_i f(lam_i) lam_i,   lam_i = base_i / r.

Built-in tables are read from the ``filters`` directory shipped with the
package; each file holds one ``abscissa weight`` pair per line.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

__all__ = [
    "HankelFilter",
    "FilterPair",
    "load_filter",
    "builtin_filter",
    "filter_pair",
    "validate_filter",
    "nodes",
    "apply",
    "transform",
    "DEFAULT_FILTERS",
    "AVAILABLE_FILTERS",
]

_FILTER_DIR = Path(__file__).parent / "filters"

# name -> (J0 table, J1 table)
AVAILABLE_FILTERS = {
    "key_201_2009": ("key_201_2009_j0.txt", "key_201_2009_j1.txt"),
    "gupt_1997": ("gupt_120_1997_j0.txt", "gupt_140_1997_j1.txt"),
}
DEFAULT_FILTERS = "key_201_2009"


@dataclass(frozen=True)
class HankelFilter:
    """A digital filter for one Bessel order.

    ``base`` holds the dimensionless abscissas; the quadrature nodes for a
    transform evaluated at offset ``r`` are ``base / r``.
    """

    order: int
    base: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    source_id: str = ""

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if self.order not in (0, 1):
            raise ValueError(f"Hankel order must be 0 or 1, got {self.order}")
        if weights.ndim != 1 or weights.size == 0:
            raise ValueError("filter weights must be a non-empty 1-D array")
        if base.shape != weights.shape:
            raise ValueError("filter abscissas and weights differ in length")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(base))):
            raise ValueError("filter table contains non-finite values")
        if np.any(base <= 0):
            raise ValueError("filter abscissas must be positive")
        base.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def abscissa_spacing(self) -> float:
        """Mean log-domain step between consecutive abscissas."""
        if self.size < 2:
            return 0.0
        return float(np.log(self.base[-1] / self.base[0]) / (self.size - 1))

    @property
    def abscissa_offset(self) -> float:
        return float(np.log(self.base[0]))


@dataclass(frozen=True)
class FilterPair:
    j0: HankelFilter
    j1: HankelFilter
    name: str = ""

    @property
    def shared_base(self) -> bool:
        """True when both orders sample the kernel at the same nodes."""
        return self.j0.size == self.j1.size and np.array_equal(self.j0.base, self.j1.base)


def load_filter(path, order: int, source_id: str | None = None) -> HankelFilter:
    """Read a filter table: one ``abscissa weight`` pair per line, ``#`` comments."""
    path = Path(path)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'abscissa weight', got {line!r}")
            rows.append((float(parts[0]), float(parts[1])))
    if not rows:
        raise ValueError(f"{path}: no filter coefficients found")
    table = np.array(rows)
    return HankelFilter(order, table[:, 0], table[:, 1], source_id or path.stem)


@lru_cache(maxsize=None)
def builtin_filter(name: str, order: int) -> HankelFilter:
    try:
        files = AVAILABLE_FILTERS[name]
    except KeyError:
        raise ValueError(f"unknown filter {name!r}; choose from {sorted(AVAILABLE_FILTERS)}") from None
    fname = files[order]
    return load_filter(_FILTER_DIR / fname, order, source_id=Path(fname).stem)


@lru_cache(maxsize=None)
def filter_pair(name: str = DEFAULT_FILTERS) -> FilterPair:
    pair = FilterPair(builtin_filter(name, 0), builtin_filter(name, 1), name)
    for filt in (pair.j0, pair.j1):
        validate_filter(filt)
    return pair


def nodes(filt: HankelFilter, r: float) -> np.ndarray:
    """Quadrature nodes lam_i at which the kernel must be sampled."""
    if not r > 0:
        raise ValueError(f"Hankel offset r must be positive, got {r}")
    return filt.base / r


def apply(values, filt: HankelFilter, r: float):
    """Filter kernel samples taken at ``nodes(filt, r)``.

    ``values`` may carry leading batch dimensions; the last axis runs over
    the nodes. Complex samples give a complex result.
    """
    if not r > 0:
        raise ValueError(f"Hankel offset r must be positive, got {r}")
    values = np.asarray(values)
    lam = filt.base / r
    return (values * lam) @ filt.weights / r


def transform(f: Callable[[np.ndarray], np.ndarray], filt: HankelFilter, r: float) -> complex:
    """Approximate ``int_0^inf f(lam) J_nu(r lam) lam dlam`` for a callable kernel.

    ``f`` is called once with the full node vector and must return an
    array of the same length.
    """
    lam = nodes(filt, r)
    vals = np.asarray(f(lam), dtype=complex)
    if vals.shape != lam.shape:
        vals = np.broadcast_to(vals, lam.shape)
    bad = ~np.isfinite(vals)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise FloatingPointError(f"kernel is not finite at node {i} (lambda = {lam[i]:.6g})")
    return complex(apply(vals, filt, r))


# Lipschitz-Hankel pairs used to accept a filter before use.
_CHECK_A = (0.1, 0.5, 1.0, 2.0, 10.0)
_CHECK_R = (0.5, 1.0, 2.0)


def closed_form_exp(a: float, r: float, order: int) -> float:
    """int_0^inf exp(-a lam) J_nu(r lam) lam dlam."""
    num = a if order == 0 else r
    return num / (a * a + r * r) ** 1.5


def validate_filter(filt: HankelFilter, rtol: float = 1e-6) -> float:
    """Check a filter against the exponential closed forms; return the worst error."""
    worst = 0.0
    for a in _CHECK_A:
        for r in _CHECK_R:
            lam = nodes(filt, r)
            got = apply(np.exp(-a * lam), filt, r)
            exact = closed_form_exp(a, r, filt.order)
            worst = max(worst, abs(got / exact - 1.0))
    if worst >= rtol:
        raise ValueError(
            f"filter {filt.source_id!r} (J{filt.order}) fails closed-form check: "
            f"relative error {worst:.2e} >= {rtol:.0e}"
        )
    return worst
