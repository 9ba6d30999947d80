"""Compiled inner loops for the lattice solvers."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def circular_smooth(xi, weights, scale, ext, out):
    """``out[i] = scale * sum_j weights[j] * xi[i - (j - half)]`` with periodic wrap.

    ``ext`` is scratch space of length ``len(xi) + len(weights) - 1``.
    """
    n = xi.shape[0]
    m = weights.shape[0]
    half = m // 2
    for i in range(n):
        ext[half + i] = xi[i]
    for i in range(half):
        ext[i] = xi[n - half + i]
        ext[half + n + i] = xi[i]
    for i in range(n):
        acc = 0.0
        base = i + 2 * half
        for j in range(m):
            acc += weights[j] * ext[base - j]
        out[i] = scale * acc


@njit(cache=True, nogil=True)
def advance(U, xi, k0, k1, weights, smooth, a, b, c_lap, inv2dx, floor, scale, counts):
    """Run steps ``k0..k1-1`` of the noise block ``xi`` on every field in ``U``.

    Parameters
    ----------
    U : (R, S, n) array
        Fields, updated in place.  Replica ``r`` is driven by ``xi[r]``.
    xi : (R, K, n) array
        Standard normal draws per replica, step and cell.
    weights : (m,) array
        Odd-length smoothing kernel already multiplied by ``dx``.
    smooth : bool
        Whether to smooth the increments before use.
    a, b : (S,) arrays
        Per-field multiplicative and conservative-advective coefficients.
    c_lap : float
        ``dt / (2 dx^2)``.
    inv2dx : float
        ``1 / (2 dx)``.
    floor : float
        Lower bound on the multiplicative increment ``a * eta``.
    scale : float
        Standard deviation ``sqrt(dt/dx)`` of a raw increment.
    counts : (1,) int64 array
        Accumulates clipped cells.
    """
    R, S, n = U.shape
    m = weights.shape[0]
    eta = np.empty(n + 2)
    ext = np.empty(n + m)
    up = np.empty(n + 2)
    flux = np.empty(n + 2)
    tmp = np.empty(n)
    for r in range(R):
        for k in range(k0, k1):
            if smooth:
                circular_smooth(xi[r, k], weights, scale, ext, tmp)
                for i in range(n):
                    eta[i + 1] = tmp[i]
            else:
                for i in range(n):
                    eta[i + 1] = scale * xi[r, k, i]
            eta[0] = eta[n]
            eta[n + 1] = eta[1]
            for s in range(S):
                u = U[r, s]
                ak = a[s]
                bk = b[s] * inv2dx
                for i in range(n):
                    up[i + 1] = u[i]
                up[0] = u[n - 1]
                up[n + 1] = u[0]
                if bk != 0.0:
                    for i in range(n + 2):
                        flux[i] = up[i] * eta[i]
                    for i in range(n):
                        m_i = ak * eta[i + 1]
                        if m_i < floor:
                            m_i = floor
                            counts[0] += 1
                        u[i] = (up[i + 1] + c_lap * (up[i + 2] + up[i] - 2.0 * up[i + 1])
                                + up[i + 1] * m_i + bk * (flux[i + 2] - flux[i]))
                else:
                    for i in range(n):
                        m_i = ak * eta[i + 1]
                        if m_i < floor:
                            m_i = floor
                            counts[0] += 1
                        u[i] = up[i + 1] + c_lap * (up[i + 2] + up[i] - 2.0 * up[i + 1]) + up[i + 1] * m_i
