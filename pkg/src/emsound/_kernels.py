"""Inner loops of the layered-earth response.

Two interchangeable backends compute the reflection factor R0(lam) at all
quadrature nodes, optionally with its gradient in the layer conductivities:

* a numba ``@njit`` version looping node by node;
* a pure numpy version vectorised over the nodes.

Set ``EMSOUND_DISABLE_NUMBA=1`` (before import) to force the numpy path.
Both share the same arithmetic so results agree to round-off.
"""
import cmath
import os

import numpy as np

MU0 = 4e-7 * np.pi
# Re(d_k u_k) above this: tanh -> 1 and the cosh^-2 factor -> 0 (cosh^2 overflows near 355).
LAMBDA_MAX = 300.0

try:
    if os.environ.get("EMSOUND_DISABLE_NUMBA", "").strip() not in ("", "0"):
        raise ImportError("numba disabled by EMSOUND_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy backend


def _tanh_guarded(x, lam_max):
    big = x.real > lam_max
    t = np.tanh(np.where(big, 0.0, x))
    t[big] = 1.0
    return t, big


def reflection_numpy(lam, sigma, d, mu, omega, lam_max=LAMBDA_MAX):
    n = sigma.shape[0]
    Y = np.sqrt(lam * lam + 1j * sigma[n - 1] * mu[n - 1] * omega) / (1j * mu[n - 1] * omega)
    for k in range(n - 2, -1, -1):
        u = np.sqrt(lam * lam + 1j * sigma[k] * mu[k] * omega)
        N = u / (1j * mu[k] * omega)
        t, _ = _tanh_guarded(d[k] * u, lam_max)
        Y = N * (Y + N * t) / (N + Y * t)
    N0 = lam / (1j * MU0 * omega)
    return (N0 - Y) / (N0 + Y)


def reflection_grad_numpy(lam, sigma, d, mu, omega, lam_max=LAMBDA_MAX):
    """R0 and dR0/dsigma_j, shape (q,) and (q, n).

    The gradient buffer holds dY_{k}/dsigma_j for the current k only and is
    overwritten as the recursion climbs towards the surface.
    """
    q = lam.shape[0]
    n = sigma.shape[0]
    lam2 = lam * lam
    grad = np.zeros((q, n), dtype=np.complex128)
    u = np.sqrt(lam2 + 1j * sigma[n - 1] * mu[n - 1] * omega)
    Y = u / (1j * mu[n - 1] * omega)
    grad[:, n - 1] = 0.5 / u
    for k in range(n - 2, -1, -1):
        imw = 1j * mu[k] * omega
        u = np.sqrt(lam2 + 1j * sigma[k] * mu[k] * omega)
        N = u / imw
        x = d[k] * u
        t, big = _tanh_guarded(x, lam_max)
        den = N + Y * t
        a = (Y + N * t) / den
        ch = np.cosh(np.where(big, 0.0, x))
        b = 1.0 / (den * den * ch * ch)
        b[big] = 0.0
        grad[:, k + 1:] *= (N * N * b)[:, None]
        grad[:, k] = a / (2.0 * u) + 0.5 * b * (N * N * d[k] - Y * (d[k] * Y + 1.0 / imw))
        Y = N * a
    iw0 = 1j * MU0 * omega
    N0 = lam / iw0
    R0 = (N0 - Y) / (N0 + Y)
    dR = (-2.0 * iw0 * lam / (lam + iw0 * Y) ** 2)[:, None] * grad
    return R0, dR


# ---------------------------------------------------------------------------
# numba backend

if HAVE_NUMBA:

    @njit(cache=True)
    def _reflection_nb(lam, sigma, d, mu, omega, lam_max):
        q = lam.shape[0]
        n = sigma.shape[0]
        out = np.empty(q, dtype=np.complex128)
        iw0 = 1j * MU0 * omega
        for i in range(q):
            l2 = lam[i] * lam[i]
            imw = 1j * mu[n - 1] * omega
            Y = cmath.sqrt(l2 + imw * sigma[n - 1]) / imw
            for k in range(n - 2, -1, -1):
                imw = 1j * mu[k] * omega
                u = cmath.sqrt(l2 + imw * sigma[k])
                N = u / imw
                x = d[k] * u
                if x.real > lam_max:
                    t = 1.0 + 0j
                else:
                    t = cmath.tanh(x)
                Y = N * (Y + N * t) / (N + Y * t)
            N0 = lam[i] / iw0
            out[i] = (N0 - Y) / (N0 + Y)
        return out

    @njit(cache=True)
    def _reflection_grad_nb(lam, sigma, d, mu, omega, lam_max):
        q = lam.shape[0]
        n = sigma.shape[0]
        R0 = np.empty(q, dtype=np.complex128)
        dR = np.zeros((q, n), dtype=np.complex128)
        iw0 = 1j * MU0 * omega
        for i in range(q):
            g = dR[i]
            l2 = lam[i] * lam[i]
            imw = 1j * mu[n - 1] * omega
            u = cmath.sqrt(l2 + imw * sigma[n - 1])
            Y = u / imw
            g[n - 1] = 0.5 / u
            for k in range(n - 2, -1, -1):
                imw = 1j * mu[k] * omega
                u = cmath.sqrt(l2 + imw * sigma[k])
                N = u / imw
                x = d[k] * u
                if x.real > lam_max:
                    t = 1.0 + 0j
                    b = 0j
                    den = N + Y
                else:
                    t = cmath.tanh(x)
                    ch = cmath.cosh(x)
                    den = N + Y * t
                    b = 1.0 / (den * den * ch * ch)
                a = (Y + N * t) / den
                fac = N * N * b
                for j in range(k + 1, n):
                    g[j] *= fac
                g[k] = a / (2.0 * u) + 0.5 * b * (N * N * d[k] - Y * (d[k] * Y + 1.0 / imw))
                Y = N * a
            N0 = lam[i] / iw0
            R0[i] = (N0 - Y) / (N0 + Y)
            c = -2.0 * iw0 * lam[i] / ((lam[i] + iw0 * Y) ** 2)
            for j in range(n):
                g[j] *= c
        return R0, dR

    def reflection_numba(lam, sigma, d, mu, omega, lam_max=LAMBDA_MAX):
        return _reflection_nb(lam, sigma, d, mu, float(omega), float(lam_max))

    def reflection_grad_numba(lam, sigma, d, mu, omega, lam_max=LAMBDA_MAX):
        return _reflection_grad_nb(lam, sigma, d, mu, float(omega), float(lam_max))

    reflection = reflection_numba
    reflection_grad = reflection_grad_numba
    BACKEND = "numba"
else:
    reflection = reflection_numpy
    reflection_grad = reflection_grad_numpy
    BACKEND = "numpy"

