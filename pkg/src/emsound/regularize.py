"""Truncated (G)SVD steps and truncation-index selection.

Index conventions follow the sweep used by the solver: TSVD indices run
``1..p`` (number of singular triplets kept) and TGSVD indices ``0..pbar``
(number of generalized triplets kept, the null space of L always included).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.linalg import qr, solve_triangular, svd

__all__ = [
    "RegularizationOperator",
    "build_operator",
    "SvdFactors",
    "svd_factors",
    "tsvd_step",
    "GsvdFactors",
    "gsvd",
    "tgsvd_step",
    "Pick",
    "discrepancy_pick",
    "lcurve_corner",
    "resreg_pick",
]

RANK_RTOL = 1e-14


@dataclass(frozen=True)
class RegularizationOperator:
    kind: str
    matrix: np.ndarray = field(repr=False)

    @property
    def is_identity(self) -> bool:
        return self.kind == "I"

    @property
    def t(self) -> int:
        return self.matrix.shape[0]


_ALIASES = {
    "i": "I", "identity": "I",
    "d1": "D1", "first_difference": "D1",
    "d2": "D2", "second_difference": "D2",
}


def build_operator(kind: str, n: int) -> RegularizationOperator:
    """Identity, first- or second-difference matrix for ``n`` unknowns."""
    try:
        kind = _ALIASES[str(kind).lower()]
    except KeyError:
        raise ValueError(f"unknown regularization operator {kind!r}") from None
    if kind == "I":
        if n < 1:
            raise ValueError("identity operator needs n >= 1")
        return RegularizationOperator(kind, np.eye(n))
    order = 1 if kind == "D1" else 2
    if n < order + 1:
        raise ValueError(f"{kind} needs n >= {order + 1}, got {n}")
    stencil = np.array([-1.0, 1.0]) if order == 1 else np.array([1.0, -2.0, 1.0])
    L = np.zeros((n - order, n))
    for i in range(n - order):
        L[i, i:i + order + 1] = stencil
    return RegularizationOperator(kind, L)


# ---------------------------------------------------------------------------
# TSVD


@dataclass
class SvdFactors:
    U: np.ndarray
    gamma: np.ndarray
    V: np.ndarray
    p: int


def svd_factors(J) -> SvdFactors:
    J = np.asarray(J, dtype=float)
    U, g, Vt = svd(J, full_matrices=True, lapack_driver="gesdd")
    p = int(np.count_nonzero(g > RANK_RTOL * g[0])) if g.size and g[0] > 0 else 0
    return SvdFactors(U, g, Vt.T, p)


def tsvd_step(factors: SvdFactors, r, ell: int) -> np.ndarray:
    """s = -sum_{i<=ell} (u_i.r / gamma_i) v_i."""
    if not 1 <= ell <= factors.p:
        raise ValueError(f"truncation index {ell} outside 1..{factors.p}")
    coef = factors.U[:, :ell].T @ r / factors.gamma[:ell]
    return -(factors.V[:, :ell] @ coef)


# ---------------------------------------------------------------------------
# GSVD


@dataclass
class GsvdFactors:
    """J = U Sigma_J Z^-1, L = V Sigma_L Z^-1.

    ``c`` and ``s`` hold the generalized pairs of the C/S block in
    increasing order of c/s. ``c_all`` lists one value per column of Z
    (0 for the null space of J, 1 for the null space of L).
    """

    U: np.ndarray
    V: np.ndarray | None
    Z: np.ndarray
    Zinv: np.ndarray
    c_all: np.ndarray
    s_all: np.ndarray
    case: str
    t: int
    pbar: int

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def n_data(self) -> int:
        return self.U.shape[0]

    @property
    def p(self) -> int:
        return min(self.n_data, self.n)

    @property
    def offset(self) -> int:
        """Columns of Z spanning the null space of J (wide case only)."""
        return self.n - self.p

    @property
    def c(self) -> np.ndarray:
        return self.c_all[self.offset:self.offset + self.pbar]

    @property
    def s(self) -> np.ndarray:
        return self.s_all[self.offset:self.offset + self.pbar]

    @property
    def gamma(self) -> np.ndarray:
        return self.c / self.s

    def sigma_j(self) -> np.ndarray:
        M, n = self.n_data, self.n
        S = np.zeros((M, n))
        for j in range(self.offset, n):
            S[M - n + j, j] = self.c_all[j]
        return S

    def sigma_l(self) -> np.ndarray:
        S = np.zeros((self.t, self.n))
        S[np.arange(self.t), np.arange(self.t)] = self.s_all[:self.t]
        return S


def gsvd(J, L, compute_v: bool = True, check: bool = True) -> GsvdFactors:
    """GSVD of the pair (J, L) via QR of [J; L] and a CS decomposition.

    Supports the two layouts used for the inversion: 2m >= n (``tall``)
    and 2m < n with 2m - n + t > 0 (``wide``).  L must have full row rank
    and share no null vector with J; ``check=False`` skips the two rank
    tests (callers that validated L once and screen the result).
    """
    J = np.asarray(J, dtype=float)
    L = np.asarray(L, dtype=float)
    M, n = J.shape
    t = L.shape[0]
    if L.shape[1] != n:
        raise ValueError(f"J has {n} columns but L has {L.shape[1]}")
    if t > n:
        raise ValueError("regularization operator must have at most n rows")
    if check:
        sl = svd(L, compute_uv=False)
        if sl.size < t or sl[-1] <= max(L.shape) * np.finfo(float).eps * sl[0]:
            raise ValueError("regularization operator is not of full row rank")
    if M >= n:
        case, pbar = "tall", t
    else:
        case, pbar = "wide", M - n + t
        if pbar <= 0:
            raise ValueError(
                f"wide GSVD needs 2m - n + t > 0 (2m={M}, n={n}, t={t}); use an operator with more rows"
            )
    A = np.vstack([J, L])
    Q, R = qr(A, mode="economic")
    if check:
        sa = svd(R, compute_uv=False)
        if sa[-1] <= max(A.shape) * np.finfo(float).eps * sa[0]:
            raise ValueError("null spaces of J and L intersect non-trivially; the GSVD is not defined")
    Q1, Q2 = Q[:M], Q[M:]
    Uq, cq, Wt = svd(Q1, full_matrices=True)
    W = Wt.T
    if case == "tall":
        U = np.hstack([Uq[:, n:], Uq[:, :n][:, ::-1]])
        W = W[:, ::-1]
        c_all = cq[::-1].copy()
    else:
        U = Uq[:, ::-1]
        W = np.hstack([W[:, M:], W[:, :M][:, ::-1]])
        c_all = np.concatenate([np.zeros(n - M), cq[::-1]])
    c_all = np.clip(c_all, 0.0, 1.0)
    QW = Q2 @ W
    s_col = np.linalg.norm(QW, axis=0)
    # small c: sqrt(1 - c^2) is exact to eps; large c: the column norm is
    small = c_all < np.sqrt(0.5)
    s_all = np.where(small, np.sqrt(1.0 - c_all * c_all), s_col)
    c_all = np.where(small, c_all, np.sqrt(np.maximum(1.0 - s_all * s_all, 0.0)))
    # columns t..n-1 span N(L)
    c_all[t:] = 1.0
    s_all[t:] = 0.0
    V = None
    if compute_v:
        Vraw = QW[:, :t] / s_all[:t]
        Pu, _, Pvt = svd(Vraw)
        V = Pu @ Pvt
    Zinv = W.T @ R
    Z = solve_triangular(R, W)
    return GsvdFactors(U, V, Z, Zinv, c_all, s_all, case, t, pbar)


def tgsvd_step(factors: GsvdFactors, r, ell: int) -> np.ndarray:
    """Truncated GSVD step keeping the ``ell`` largest generalized values."""
    if not 0 <= ell <= factors.pbar:
        raise ValueError(f"truncation index {ell} outside 0..{factors.pbar}")
    M, n = factors.n_data, factors.n
    lo = factors.offset + factors.pbar - ell
    cols = np.arange(lo, n)
    beta = factors.U[:, M - n + cols].T @ r
    beta[: ell] /= factors.c_all[lo:lo + ell]
    return -(factors.Z[:, cols] @ beta)


# ---------------------------------------------------------------------------
# parameter choice


class Pick(NamedTuple):
    ell: int
    flag: str | None = None


def _labels(k: int, ells):
    if ells is None:
        return np.arange(1, k + 1)
    ells = np.asarray(ells)
    if ells.size != k:
        raise ValueError("index labels and values differ in length")
    return ells


def discrepancy_pick(residual_norms: Sequence[float], noise_norm: float, kappa: float = 1.5,
                     ells=None) -> Pick:
    """Smallest index whose residual norm is within kappa * noise_norm."""
    rho = np.asarray(residual_norms, dtype=float)
    if rho.size == 0:
        raise ValueError("no residual norms given")
    if not kappa > 1:
        raise ValueError("kappa must exceed 1")
    ells = _labels(rho.size, ells)
    ok = np.flatnonzero(rho <= kappa * noise_norm)
    if ok.size:
        return Pick(int(ells[ok[0]]))
    finite = np.where(np.isfinite(rho), rho, np.inf)
    return Pick(int(ells[int(np.argmin(finite))]), "discrepancy_unsatisfied")


def _angles(W, kv):
    delta = W[:-1, 0] * W[1:, 1] - W[1:, 0] * W[:-1, 1]
    if delta.size == 0:
        return -1
    kk = int(np.argmin(delta))
    return int(kv[kk]) + 1 if delta[kk] < 0 else -1


def _global_behavior(P, vects, elmts):
    hwedge = np.abs(vects[:, 1])
    order = np.argsort(hwedge, kind="stable")
    ln = order.size
    c = 1
    mn, mx = order[0], order[-1]
    while mn >= mx and c < ln:
        mx = max(mx, order[ln - 1 - c])
        c += 1
        mn = min(mn, order[c - 1])
    I = Jv = None
    if c > 1:
        for i in range(c):
            for j in range(ln - 1, ln - c - 1, -1):
                if order[i] < order[j]:
                    I, Jv = order[i], order[j]
                    break
            if I is not None:
                break
    if I is None:
        I, Jv = order[0], order[-1]
    e = elmts[Jv]
    dy = P[e + 1, 1] - P[e, 1]
    y0 = P[elmts[I], 1]
    if dy == 0:
        x3 = P[e + 1, 0]
    else:
        x3 = P[e + 1, 0] + (y0 - P[e + 1, 1]) / dy * (P[e + 1, 0] - P[e, 0])
    dists = (x3 - P[:, 0]) ** 2 + (y0 - P[:, 1]) ** 2
    return int(np.argmin(dists))


def _max_curvature(P):
    """Index of the sharpest convex bend of a monotone spline through P, or None."""
    seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 0])
    P = P[keep]
    idx = np.flatnonzero(keep)
    if len(P) < 3:
        return None
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(P, axis=0), axis=1))])
    x, y = PchipInterpolator(arc, P[:, 0]), PchipInterpolator(arc, P[:, 1])
    dx, dy = x.derivative()(arc), y.derivative()(arc)
    ddx, ddy = x.derivative(2)(arc), y.derivative(2)(arc)
    # stationary spline points (zero speed) carry no curvature information
    speed3 = np.hypot(dx, dy) ** 3
    kappa = -np.divide(dx * ddy - dy * ddx, speed3, out=np.zeros_like(speed3), where=speed3 > 0)
    if not np.any(kappa > 1e-8):
        return None
    return int(idx[int(np.argmax(kappa))])


def lcurve_corner(points, ells=None) -> Pick:
    """Corner of a discrete L-curve by adaptive pruning.

    ``points`` is a (k, 2) array of (log residual norm, log seminorm) in
    order of increasing index.  Candidates come from two selection passes
    (largest turning angle and the global horizontal/vertical behaviour)
    over pruned versions of the curve that keep its longest segments.
    When no pruned curve is convex the maximum-curvature point of a
    monotone spline is used instead, flagged ``no_corner``.
    """
    P_all = np.asarray(points, dtype=float)
    if P_all.ndim != 2 or P_all.shape[0] < 3:
        raise ValueError("L-curve corner needs at least 3 points")
    ells = _labels(P_all.shape[0], ells)
    kept = np.flatnonzero(np.all(np.isfinite(P_all), axis=1))
    P = P_all[kept]
    nP = len(P)

    def fallback():
        i = _max_curvature(P) if nP >= 3 else None
        if i is None:
            return Pick(int(ells[kept[-1]]), "no_corner")
        return Pick(int(ells[kept[i]]), "no_corner")

    if nP < 3:
        return fallback()
    V = np.diff(P, axis=0)
    v = np.linalg.norm(V, axis=1)
    W = V / np.where(v > 0, v, 1.0)[:, None]
    longest = np.argsort(v, kind="stable")[::-1]
    clist = []
    convex = False
    p = min(5, nP - 1)
    while p < (nP - 1) * 2:
        elmts = np.sort(longest[:min(p, nP - 1)])
        cand = _angles(W[elmts], elmts)
        if cand >= 0:
            convex = True
            if cand not in clist:
                clist.append(cand)
        cand = _global_behavior(P, W[elmts], elmts)
        if cand not in clist:
            clist.append(cand)
        p *= 2
    if not convex:
        return fallback()
    if 0 not in clist:
        clist.append(0)
    clist = np.array(sorted(clist))
    dP = np.diff(P[clist], axis=0)
    vz = np.flatnonzero(dP[:, 1] >= np.abs(dP[:, 0]))
    if vz.size and vz[0] == 0:
        vz = vz[1:]
    if vz.size == 0:
        index = clist[-1]
    else:
        vects = dP / np.linalg.norm(dP, axis=1)[:, None]
        delta = vects[:-1, 0] * vects[1:, 1] - vects[1:, 0] * vects[:-1, 1]
        vv = np.flatnonzero(delta[vz - 1] <= 0)
        index = clist[vz[vv[0]]] if vv.size else clist[vz[-1]]
    return Pick(int(ells[kept[index]]))


def resreg_pick(residual_norms, seminorms, ells=None) -> Pick:
    """Regińska rule psi = ||r|| * ||L sigma|| restricted to a well-behaved range.

    The search is limited to the contiguous run of indices along which the
    residual norm does not increase and the seminorm does not decrease; of
    all such runs the one with the largest total residual decrease is used.
    Ties go to the smaller index.
    """
    rho = np.asarray(residual_norms, dtype=float)
    eta = np.asarray(seminorms, dtype=float)
    if rho.size < 2 or rho.shape != eta.shape:
        raise ValueError("restricted Reginska rule needs at least 2 matching points")
    ells = _labels(rho.size, ells)
    valid = np.isfinite(rho) & np.isfinite(eta) & (rho > 0) & (eta > 0)
    psi = np.where(valid, rho * eta, np.inf)
    good = valid[:-1] & valid[1:] & (np.diff(rho) <= 0) & (np.diff(eta) >= 0)
    best = None
    i = 0
    while i < good.size:
        if not good[i]:
            i += 1
            continue
        j = i
        while j < good.size and good[j]:
            j += 1
        lo, hi = i, j  # points lo..hi inclusive
        drop = np.log(rho[lo]) - np.log(rho[hi])
        if best is None or drop > best[0]:
            best = (drop, lo, hi)
        i = j
    if best is None:
        if not np.any(valid):
            raise ValueError("no finite positive points for the Reginska rule")
        return Pick(int(ells[int(np.argmin(psi))]), "unrestricted")
    _, lo, hi = best
    k = lo + int(np.argmin(psi[lo:hi + 1]))
    return Pick(int(ells[k]))
