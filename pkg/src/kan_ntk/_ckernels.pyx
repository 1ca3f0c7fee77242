# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Summation order is fixed: the pre-activation sums run over (p, k) row-major,
outputs accumulate over units q ascending and gradients over samples i
ascending. Built without fast-math so results are reproducible.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, tanh, hypot

cnp.import_array()

cdef enum:
    MAXND = 64


cdef inline void _phi(int transform, double z, double* v, double* d1) noexcept nogil:
    cdef double t, s
    if transform == 0:
        t = tanh(z)
        v[0] = t
        d1[0] = 1.0 - t * t
    elif transform == 1:
        s = 0.5 * (1.0 + tanh(0.5 * z))
        v[0] = s
        d1[0] = s * (1.0 - s)
    else:
        v[0] = z
        d1[0] = 1.0


cdef inline void _basis(int family, int nd, double u, double* b, double* db) noexcept nogil:
    cdef int k
    b[0] = 1.0
    db[0] = 0.0
    if nd == 1:
        return
    if family == 0:
        b[1] = u
        db[1] = 1.0
        for k in range(1, nd - 1):
            b[k + 1] = 2.0 * u * b[k] - b[k - 1]
            db[k + 1] = 2.0 * b[k] + 2.0 * u * db[k] - db[k - 1]
    else:
        for k in range(1, nd):
            b[k] = b[k - 1] * u
            db[k] = k * b[k - 1]


def kan_forward(const double[:, :, ::1] a, const double[:, ::1] c,
                const double[:, :, ::1] B0, int family, int transform):
    """Network outputs f (N,) and pre-activations z (N, m)."""
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1], nd = a.shape[2]
    cdef Py_ssize_t N = B0.shape[0]
    if nd > MAXND:
        raise ValueError("n_d too large for the compiled kernel")
    f_arr = np.zeros(N)
    z_arr = np.empty((N, m))
    cdef double[::1] f = f_arr
    cdef double[:, ::1] zz = z_arr
    cdef double b[MAXND]
    cdef double db[MAXND]
    cdef double scale = 1.0 / sqrt(<double>m)
    cdef Py_ssize_t i, q, p, k
    cdef double z, u, d1, acc, unit
    with nogil:
        for i in range(N):
            acc = 0.0
            for q in range(m):
                z = 0.0
                for p in range(n):
                    for k in range(nd):
                        z = z + a[q, p, k] * B0[i, p, k]
                zz[i, q] = z
                _phi(transform, z, &u, &d1)
                _basis(family, <int>nd, u, b, db)
                unit = 0.0
                for k in range(nd):
                    unit = unit + c[q, k] * b[k]
                acc = acc + unit
            f[i] = acc * scale
    return f_arr, z_arr


def kan_vjp(const double[:, :, ::1] a, const double[:, ::1] c,
            const double[:, :, ::1] B0, const double[::1] w, int family, int transform):
    """sum_i w_i (df_i/da, df_i/dc)."""
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1], nd = a.shape[2]
    cdef Py_ssize_t N = B0.shape[0]
    if nd > MAXND:
        raise ValueError("n_d too large for the compiled kernel")
    ga_arr = np.zeros((m, n, nd))
    gc_arr = np.zeros((m, nd))
    cdef double[:, :, ::1] ga = ga_arr
    cdef double[:, ::1] gc = gc_arr
    cdef double b[MAXND]
    cdef double db[MAXND]
    cdef double scale = 1.0 / sqrt(<double>m)
    cdef Py_ssize_t i, q, p, k
    cdef double z, u, d1, slope, coef
    with nogil:
        for i in range(N):
            coef = w[i] * scale
            if coef == 0.0:
                continue
            for q in range(m):
                z = 0.0
                for p in range(n):
                    for k in range(nd):
                        z = z + a[q, p, k] * B0[i, p, k]
                _phi(transform, z, &u, &d1)
                _basis(family, <int>nd, u, b, db)
                slope = 0.0
                for k in range(nd):
                    slope = slope + c[q, k] * db[k]
                slope = slope * d1 * coef
                for p in range(n):
                    for k in range(nd):
                        ga[q, p, k] += slope * B0[i, p, k]
                for k in range(nd):
                    gc[q, k] += coef * b[k]
    return ga_arr, gc_arr


cdef double _off_norm(double[:, ::1] A, Py_ssize_t n) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(n):
            if i != j:
                s += A[i, j] * A[i, j]
    return sqrt(s)


def jacobi_eigenvalues(M, double tol=1e-12, int max_sweeps=64):
    """Cyclic-by-row Jacobi. Returns (eigenvalues ascending, off-norm, sweeps)."""
    A_arr = np.array(M, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] A = A_arr
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t p, q, l
    cdef double fro = 0.0, off, apq, tau, t, cs, sn, xp, xq
    cdef int sweeps = 0
    for p in range(n):
        for q in range(n):
            fro += A[p, q] * A[p, q]
    fro = sqrt(fro)
    with nogil:
        off = _off_norm(A, n)
        while off > tol * fro and sweeps < max_sweeps:
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = A[p, q]
                    if apq == 0.0:
                        continue
                    tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                    if tau >= 0:
                        t = 1.0 / (tau + hypot(tau, 1.0))
                    else:
                        t = -1.0 / (-tau + hypot(tau, 1.0))
                    cs = 1.0 / sqrt(1.0 + t * t)
                    sn = t * cs
                    for l in range(n):
                        xp = A[p, l]
                        xq = A[q, l]
                        A[p, l] = cs * xp - sn * xq
                        A[q, l] = sn * xp + cs * xq
                    for l in range(n):
                        xp = A[l, p]
                        xq = A[l, q]
                        A[l, p] = cs * xp - sn * xq
                        A[l, q] = sn * xp + cs * xq
                    A[p, q] = 0.0
                    A[q, p] = 0.0
            sweeps += 1
            off = _off_norm(A, n)
    return np.sort(np.diag(A_arr)), off, sweeps


cdef inline void _phi3(int transform, double z, double* d) noexcept nogil:
    """phi and its first three derivatives at z into d[0..3]."""
    cdef double t, s, s1
    if transform == 0:
        t = tanh(z)
        d[0] = t
        d[1] = 1.0 - t * t
        d[2] = -2.0 * t * d[1]
        d[3] = -2.0 * d[1] * (1.0 - 3.0 * t * t)
    elif transform == 1:
        s = 0.5 * (1.0 + tanh(0.5 * z))
        s1 = s * (1.0 - s)
        d[0] = s
        d[1] = s1
        d[2] = s1 * (1.0 - 2.0 * s)
        d[3] = s1 * (1.0 - 6.0 * s + 6.0 * s * s)
    else:
        d[0] = z
        d[1] = 1.0
        d[2] = 0.0
        d[3] = 0.0


cdef inline void _basis3(int family, int nd, double u, double* b0, double* b1,
                         double* b2, double* b3) noexcept nogil:
    """Outer basis and derivatives up to order 3 at u."""
    cdef int k
    cdef double pw
    b0[0] = 1.0
    b1[0] = 0.0
    b2[0] = 0.0
    b3[0] = 0.0
    if nd == 1:
        return
    if family == 0:
        b0[1] = u
        b1[1] = 1.0
        b2[1] = 0.0
        b3[1] = 0.0
        for k in range(1, nd - 1):
            b0[k + 1] = 2.0 * u * b0[k] - b0[k - 1]
            b1[k + 1] = 2.0 * b0[k] + 2.0 * u * b1[k] - b1[k - 1]
            b2[k + 1] = 4.0 * b1[k] + 2.0 * u * b2[k] - b2[k - 1]
            b3[k + 1] = 6.0 * b2[k] + 2.0 * u * b3[k] - b3[k - 1]
    else:
        for k in range(1, nd):
            b0[k] = b0[k - 1] * u
        for k in range(1, nd):
            b1[k] = k * b0[k - 1]
            b2[k] = k * (k - 1) * b0[k - 2] if k >= 2 else 0.0
            b3[k] = k * (k - 1) * (k - 2) * b0[k - 3] if k >= 3 else 0.0


cdef inline void _composed(int family, int transform, int nd, double z, double* P0,
                           double* P1, double* P2, double* P3) noexcept nogil:
    """Derivatives of b_k(phi(z)) up to order 3 (Faa di Bruno)."""
    cdef double d[4]
    cdef double b0[MAXND]
    cdef double b1[MAXND]
    cdef double b2[MAXND]
    cdef double b3[MAXND]
    cdef int k
    _phi3(transform, z, d)
    _basis3(family, nd, d[0], b0, b1, b2, b3)
    for k in range(nd):
        P0[k] = b0[k]
        P1[k] = b1[k] * d[1]
        P2[k] = b2[k] * d[1] * d[1] + b1[k] * d[2]
        P3[k] = b3[k] * d[1] * d[1] * d[1] + 3.0 * b2[k] * d[1] * d[2] + b1[k] * d[3]


def kan_operator_forward(const double[:, :, ::1] a, const double[:, ::1] c,
                         const double[:, :, :, ::1] B, const double[::1] e0,
                         const double[:, ::1] W, const double[:, :, ::1] M,
                         int family, int transform):
    """(L f)(x_i) for L f = e0 f + W . grad f + M : Hess f.

    B stacks the inner basis and its first two derivatives, shape (3, N, n, n_d).
    """
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1], nd = a.shape[2]
    cdef Py_ssize_t N = B.shape[1]
    if nd > MAXND or n > MAXND:
        raise ValueError("dimensions too large for the compiled kernel")
    out_arr = np.zeros(N)
    cdef double[::1] out = out_arr
    cdef double P0[MAXND]
    cdef double P1[MAXND]
    cdef double P2[MAXND]
    cdef double P3[MAXND]
    cdef double J[MAXND]
    cdef double K[MAXND]
    cdef double scale = 1.0 / sqrt(<double>m)
    cdef Py_ssize_t i, q, p, r, k
    cdef double z, alpha, beta, F0, F1, F2, acc, mj
    with nogil:
        for i in range(N):
            acc = 0.0
            for q in range(m):
                z = 0.0
                for p in range(n):
                    J[p] = 0.0
                    K[p] = 0.0
                    for k in range(nd):
                        z = z + a[q, p, k] * B[0, i, p, k]
                        J[p] = J[p] + a[q, p, k] * B[1, i, p, k]
                        K[p] = K[p] + a[q, p, k] * B[2, i, p, k]
                alpha = 0.0
                beta = 0.0
                for p in range(n):
                    alpha = alpha + W[i, p] * J[p] + M[i, p, p] * K[p]
                    mj = 0.0
                    for r in range(n):
                        mj = mj + M[i, p, r] * J[r]
                    beta = beta + J[p] * mj
                _composed(family, transform, <int>nd, z, P0, P1, P2, P3)
                F0 = 0.0
                F1 = 0.0
                F2 = 0.0
                for k in range(nd):
                    F0 = F0 + c[q, k] * P0[k]
                    F1 = F1 + c[q, k] * P1[k]
                    F2 = F2 + c[q, k] * P2[k]
                acc = acc + e0[i] * F0 + alpha * F1 + beta * F2
            out[i] = acc * scale
    return out_arr


def kan_operator_vjp(const double[:, :, ::1] a, const double[:, ::1] c,
                     const double[:, :, :, ::1] B, const double[::1] e0,
                     const double[:, ::1] W, const double[:, :, ::1] M,
                     const double[::1] w, int family, int transform):
    """sum_i w_i d(L f)(x_i)/d(a, c)."""
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1], nd = a.shape[2]
    cdef Py_ssize_t N = B.shape[1]
    if nd > MAXND or n > MAXND:
        raise ValueError("dimensions too large for the compiled kernel")
    ga_arr = np.zeros((m, n, nd))
    gc_arr = np.zeros((m, nd))
    cdef double[:, :, ::1] ga = ga_arr
    cdef double[:, ::1] gc = gc_arr
    cdef double P0[MAXND]
    cdef double P1[MAXND]
    cdef double P2[MAXND]
    cdef double P3[MAXND]
    cdef double J[MAXND]
    cdef double K[MAXND]
    cdef double MJ[MAXND]
    cdef double scale = 1.0 / sqrt(<double>m)
    cdef Py_ssize_t i, q, p, r, k
    cdef double z, alpha, beta, F1, F2, F3, gamma, coef, e
    with nogil:
        for i in range(N):
            coef = w[i] * scale
            if coef == 0.0:
                continue
            for q in range(m):
                z = 0.0
                for p in range(n):
                    J[p] = 0.0
                    K[p] = 0.0
                    for k in range(nd):
                        z = z + a[q, p, k] * B[0, i, p, k]
                        J[p] = J[p] + a[q, p, k] * B[1, i, p, k]
                        K[p] = K[p] + a[q, p, k] * B[2, i, p, k]
                alpha = 0.0
                beta = 0.0
                for p in range(n):
                    alpha = alpha + W[i, p] * J[p] + M[i, p, p] * K[p]
                    MJ[p] = 0.0
                    for r in range(n):
                        MJ[p] = MJ[p] + M[i, p, r] * J[r]
                    beta = beta + J[p] * MJ[p]
                _composed(family, transform, <int>nd, z, P0, P1, P2, P3)
                F1 = 0.0
                F2 = 0.0
                F3 = 0.0
                for k in range(nd):
                    F1 = F1 + c[q, k] * P1[k]
                    F2 = F2 + c[q, k] * P2[k]
                    F3 = F3 + c[q, k] * P3[k]
                    gc[q, k] += coef * (e0[i] * P0[k] + alpha * P1[k] + beta * P2[k])
                gamma = e0[i] * F1 + alpha * F2 + beta * F3
                for p in range(n):
                    for k in range(nd):
                        e = W[i, p] * B[1, i, p, k] + M[i, p, p] * B[2, i, p, k]
                        ga[q, p, k] += coef * (gamma * B[0, i, p, k] + F1 * e
                                               + 2.0 * F2 * MJ[p] * B[1, i, p, k])
    return ga_arr, gc_arr
