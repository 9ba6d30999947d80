"""Compiled engines for the particle systems.

Each engine consumes pre-drawn standard normals ``Z`` of shape
``(B, N, n)`` (replica, step, particle) and returns per-replica results, so
the random input is fixed by the caller's streams.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, inline="always")
def table_eval(u, table, left, inv_h):
    """Linear interpolation of ``table`` sampled at ``left + i h``; zero outside."""
    s = (u - left) * inv_h
    n = table.shape[0]
    if s <= 0.0 or s >= n - 1:
        return 0.0
    i = int(s)
    f = s - i
    return table[i] + f * (table[i + 1] - table[i])


@njit(cache=True, nogil=True)
def bm_local_times(x0, Z, sqdt, dt, band):
    """Brownian paths with pairwise Tanaka local times and band occupations.

    Returns final positions ``(B, n)``, Tanaka local times of ``W^i - W^j``
    and ``(1/2 band) int 1{|W^i - W^j| < band} ds`` per pair ``(B, P)``.
    """
    B, N, n = Z.shape
    P = n * (n - 1) // 2
    final = np.empty((B, n))
    tanaka = np.zeros((B, P))
    occ = np.zeros((B, P))
    x = np.empty(n)
    y0 = np.empty(P)
    ssum = np.zeros(P)
    for r in range(B):
        for i in range(n):
            x[i] = x0[i]
        q = 0
        for i in range(n):
            for j in range(i + 1, n):
                y0[q] = x[i] - x[j]
                ssum[q] = 0.0
                q += 1
        for k in range(N):
            q = 0
            for i in range(n):
                for j in range(i + 1, n):
                    y = x[i] - x[j]
                    dy = sqdt * (Z[r, k, i] - Z[r, k, j])
                    if y > 0.0:
                        ssum[q] += dy
                    elif y < 0.0:
                        ssum[q] -= dy
                    if band > 0.0 and abs(y) < band:
                        occ[r, q] += dt
                    q += 1
            for i in range(n):
                x[i] += sqdt * Z[r, k, i]
        q = 0
        for i in range(n):
            final[r, i] = x[i]
            for j in range(i + 1, n):
                tanaka[r, q] = abs(x[i] - x[j]) - abs(y0[q]) - ssum[q]
                if band > 0.0:
                    occ[r, q] /= 2.0 * band
                q += 1
    return final, tanaka, occ


@njit(cache=True, nogil=True)
def bm_kernel_exponent(x0, Z, sqdt, dt, table, left, inv_h, inv_eps, factor):
    """Brownian paths and ``factor * sum_{i<j} int K((W^i - W^j)/eps) ds`` (left Riemann sum)."""
    B, N, n = Z.shape
    final = np.empty((B, n))
    expo = np.zeros(B)
    x = np.empty(n)
    for r in range(B):
        for i in range(n):
            x[i] = x0[i]
        acc = 0.0
        for k in range(N):
            for i in range(n):
                for j in range(i + 1, n):
                    acc += table_eval((x[i] - x[j]) * inv_eps, table, left, inv_h)
            for i in range(n):
                x[i] += sqdt * Z[r, k, i]
        expo[r] = factor * dt * acc
        for i in range(n):
            final[r, i] = x[i]
    return final, expo


@njit(cache=True, nogil=True)
def diff_engine(x0, Z, sqdt, dt, tabF, tabG, left, inv_h, inv_eps, fF, fG, c_drift, c_bound, c_sq):
    """Drifted particles with the pair-kernel drift and their exponent.

    Drift of particle ``i`` is ``c_drift * sum_{j != i} F(X^i - X^j)`` with
    ``F(y) = fF * tabF(y/eps)``.  The exponent is

        sum_{i<j} [c_bound (G(Y_t) - G(Y_0)) + c_sq int F(Y)^2 ds]
        + c_sq sum_i sum_{j1<j2, j != i} int F(X^i - X^j1) F(X^i - X^j2) ds.
    """
    B, N, n = Z.shape
    final = np.empty((B, n))
    expo = np.zeros(B)
    x = np.empty(n)
    f = np.empty((n, n))
    drift = np.empty(n)
    for r in range(B):
        for i in range(n):
            x[i] = x0[i]
        g0 = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                g0 += fG * table_eval((x[i] - x[j]) * inv_eps, tabG, left, inv_h)
        sq = 0.0
        tri = 0.0
        for k in range(N):
            for i in range(n):
                f[i, i] = 0.0
                for j in range(i + 1, n):
                    v = fF * table_eval((x[i] - x[j]) * inv_eps, tabF, left, inv_h)
                    f[i, j] = v
                    f[j, i] = -v
                    sq += v * v
            for i in range(n):
                s = 0.0
                for j in range(n):
                    s += f[i, j]
                drift[i] = c_drift * s
                for j1 in range(n):
                    for j2 in range(j1 + 1, n):
                        if j1 != i and j2 != i:
                            tri += f[i, j1] * f[i, j2]
            for i in range(n):
                x[i] += drift[i] * dt + sqdt * Z[r, k, i]
        g1 = 0.0
        for i in range(n):
            final[r, i] = x[i]
            for j in range(i + 1, n):
                g1 += fG * table_eval((x[i] - x[j]) * inv_eps, tabG, left, inv_h)
        expo[r] = c_bound * (g1 - g0) + c_sq * dt * (sq + tri)
    return final, expo


@njit(cache=True, nogil=True)
def sym_sqrt(A, out):
    """Symmetric square root of a positive semidefinite matrix; returns the smallest eigenvalue."""
    n = A.shape[0]
    if n == 1:
        out[0, 0] = math.sqrt(A[0, 0])
        return A[0, 0]
    if n == 2:
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        tr = A[0, 0] + A[1, 1]
        disc = math.sqrt(max((A[0, 0] - A[1, 1]) ** 2 + 4 * A[0, 1] * A[1, 0], 0.0))
        lam_min = 0.5 * (tr - disc)
        if lam_min < 0.0:
            return lam_min
        s = math.sqrt(det)
        t = math.sqrt(tr + 2 * s)
        out[0, 0] = (A[0, 0] + s) / t
        out[1, 1] = (A[1, 1] + s) / t
        out[0, 1] = A[0, 1] / t
        out[1, 0] = A[1, 0] / t
        return lam_min
    w, V = np.linalg.eigh(A)
    if w[0] < 0.0:
        return w[0]
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += V[i, k] * math.sqrt(w[k]) * V[j, k]
            out[i, j] = acc
    return w[0]


@njit(cache=True, nogil=True)
def spd_solve(A, b, L, out):
    """Solve ``A x = b`` for a small symmetric positive definite ``A`` by Cholesky."""
    n = A.shape[0]
    for i in range(n):
        for j in range(i + 1):
            acc = A[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                L[i, i] = math.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    for i in range(n):
        acc = b[i]
        for k in range(i):
            acc -= L[i, k] * out[k]
        out[i] = acc / L[i, i]
    for i in range(n - 1, -1, -1):
        acc = out[i]
        for k in range(i + 1, n):
            acc -= L[k, i] * out[k]
        out[i] = acc / L[i, i]


@njit(cache=True, nogil=True)
def covariance(x, theta, tabPhi, left, inv_h, inv_eps, A):
    n = x.shape[0]
    for i in range(n):
        A[i, i] = theta + table_eval(0.0, tabPhi, left, inv_h)
        for j in range(i + 1, n):
            c = table_eval((x[i] - x[j]) * inv_eps, tabPhi, left, inv_h)
            A[i, j] = c
            A[j, i] = c


@njit(cache=True, nogil=True)
def cen_engine(x0, Z, sqdt, dt, theta, tabPhi, left, inv_h, inv_eps, drift_coef, exp_coef, girsanov,
               path):
    """Centered diffusion with covariance ``theta I + Phi((y_i - y_j)/eps)``.

    Parameters
    ----------
    drift_coef : float
        Drift of particle ``i`` is ``drift_coef * sum_{j != i} Phi((y_i - y_j)/eps)``.
        Zero gives the centered diffusion, ``-eps^(-1/2)`` the singular one.
    exp_coef : float
        Coefficient of ``sum_{i<j} int Phi((X^i - X^j)/eps) ds`` in the exponent.
    girsanov : bool
        Accumulate ``D = int lambda . dM`` and ``<D> = int lambda . b ds`` for
        ``b = -eps^(-1/2) sum_j Phi`` and ``A lambda = b``.
    path : (N + 1, n) array
        Receives the trajectory of replica 0 when it has ``N + 1`` rows.

    Returns
    -------
    final, exponent, D, bracket, min_eig
    """
    B, N, n = Z.shape
    final = np.empty((B, n))
    expo = np.zeros(B)
    dmart = np.zeros(B)
    brack = np.zeros(B)
    x = np.empty(n)
    A = np.empty((n, n))
    S = np.zeros((n, n))
    incr = np.empty(n)
    bvec = np.empty(n)
    rowsum = np.empty(n)
    lamv = np.empty(n)
    chol = np.zeros((n, n))
    keep = path.shape[0] == N + 1
    min_eig = np.inf
    # b_i = -eps^(1/2) sum Phi_eps = -eps^(-1/2) sum Phi(./eps)
    girs_coef = -math.sqrt(inv_eps)
    for r in range(B):
        for i in range(n):
            x[i] = x0[i]
            if keep and r == 0:
                path[0, i] = x[i]
        e_acc = 0.0
        for k in range(N):
            covariance(x, theta, tabPhi, left, inv_h, inv_eps, A)
            lam = sym_sqrt(A, S)
            if lam < min_eig:
                min_eig = lam
            if lam <= 0.0:
                return final, expo, dmart, brack, lam
            for i in range(n):
                s = 0.0
                for j in range(n):
                    if j != i:
                        s += A[i, j]
                rowsum[i] = s
            for i in range(n):
                for j in range(i + 1, n):
                    e_acc += A[i, j]
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += S[i, j] * Z[r, k, j]
                incr[i] = sqdt * acc
            if girsanov:
                for i in range(n):
                    bvec[i] = girs_coef * rowsum[i]
                spd_solve(A, bvec, chol, lamv)
                d = 0.0
                q = 0.0
                for i in range(n):
                    d += lamv[i] * incr[i]
                    q += lamv[i] * bvec[i]
                dmart[r] += d
                brack[r] += q * dt
            for i in range(n):
                x[i] += drift_coef * rowsum[i] * dt + incr[i]
                if keep and r == 0:
                    path[k + 1, i] = x[i]
        expo[r] = exp_coef * dt * e_acc
        for i in range(n):
            final[r, i] = x[i]
    return final, expo, dmart, brack, min_eig
