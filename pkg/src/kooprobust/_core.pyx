# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled monomial kernels.

Every routine takes a batch of points ``X`` of shape (P, n), an exponent
table ``E`` of shape (K, n) and a per-monomial coefficient vector. The
numpy twin lives in ``_core_py``; both must agree to rounding.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline void _powers(const double[:, ::1] X, Py_ssize_t p, Py_ssize_t n,
                         Py_ssize_t d, double* pw) noexcept nogil:
    # pw[i*(d+1)+e] = X[p, i]**e
    cdef Py_ssize_t i, e
    for i in range(n):
        pw[i * (d + 1)] = 1.0
        for e in range(1, d + 1):
            pw[i * (d + 1) + e] = pw[i * (d + 1) + e - 1] * X[p, i]


def monomials(const double[:, ::1] X, const long long[:, ::1] E,
              const double[::1] coef):
    cdef Py_ssize_t P = X.shape[0], n = X.shape[1], K = E.shape[0]
    cdef Py_ssize_t d = 0, p, k, i
    for k in range(K):
        for i in range(n):
            if E[k, i] > d:
                d = E[k, i]
    out = np.empty((P, K))
    cdef double[:, ::1] o = out
    cdef double[::1] pwbuf = np.empty(n * (d + 1))
    cdef double* pw = &pwbuf[0]
    cdef double v
    with nogil:
        for p in range(P):
            _powers(X, p, n, d, pw)
            for k in range(K):
                v = coef[k]
                for i in range(n):
                    v = v * pw[i * (d + 1) + E[k, i]]
                o[p, k] = v
    return out


def monomials_jacobian(const double[:, ::1] X, const long long[:, ::1] E,
                       const double[::1] coef):
    cdef Py_ssize_t P = X.shape[0], n = X.shape[1], K = E.shape[0]
    cdef Py_ssize_t d = 0, p, k, i, j
    for k in range(K):
        for i in range(n):
            if E[k, i] > d:
                d = E[k, i]
    out = np.zeros((P, K, n))
    cdef double[:, :, ::1] o = out
    cdef double[::1] pwbuf = np.empty(n * (d + 1))
    cdef double* pw = &pwbuf[0]
    cdef double v
    cdef long long ej
    with nogil:
        for p in range(P):
            _powers(X, p, n, d, pw)
            for k in range(K):
                for j in range(n):
                    ej = E[k, j]
                    if ej == 0:
                        continue
                    v = coef[k] * ej
                    for i in range(n):
                        if i == j:
                            v = v * pw[i * (d + 1) + ej - 1]
                        else:
                            v = v * pw[i * (d + 1) + E[k, i]]
                    o[p, k, j] = v
    return out


def monomials_laplacian(const double[:, ::1] X, const long long[:, ::1] E,
                        const double[::1] coef):
    cdef Py_ssize_t P = X.shape[0], n = X.shape[1], K = E.shape[0]
    cdef Py_ssize_t d = 0, p, k, i, j
    for k in range(K):
        for i in range(n):
            if E[k, i] > d:
                d = E[k, i]
    out = np.zeros((P, K))
    cdef double[:, ::1] o = out
    cdef double[::1] pwbuf = np.empty(n * (d + 1))
    cdef double* pw = &pwbuf[0]
    cdef double v, acc
    cdef long long ej
    with nogil:
        for p in range(P):
            _powers(X, p, n, d, pw)
            for k in range(K):
                acc = 0.0
                for j in range(n):
                    ej = E[k, j]
                    if ej < 2:
                        continue
                    v = coef[k] * ej * (ej - 1)
                    for i in range(n):
                        if i == j:
                            v = v * pw[i * (d + 1) + ej - 2]
                        else:
                            v = v * pw[i * (d + 1) + E[k, i]]
                    acc = acc + v
                o[p, k] = acc
    return out


def poly_gradient(const double[:, ::1] X, const long long[:, ::1] E,
                  const double[::1] coef):
    """Gradient of sum_k coef_k * x**E_k at every row of X, shape (P, n)."""
    cdef Py_ssize_t P = X.shape[0], n = X.shape[1], K = E.shape[0]
    cdef Py_ssize_t d = 0, p, k, i, j
    for k in range(K):
        for i in range(n):
            if E[k, i] > d:
                d = E[k, i]
    out = np.zeros((P, n))
    cdef double[:, ::1] o = out
    cdef double[::1] pwbuf = np.empty(n * (d + 1))
    cdef double* pw = &pwbuf[0]
    cdef double v
    cdef long long ej
    with nogil:
        for p in range(P):
            _powers(X, p, n, d, pw)
            for k in range(K):
                if coef[k] == 0.0:
                    continue
                for j in range(n):
                    ej = E[k, j]
                    if ej == 0:
                        continue
                    v = coef[k] * ej
                    for i in range(n):
                        if i == j:
                            v = v * pw[i * (d + 1) + ej - 1]
                        else:
                            v = v * pw[i * (d + 1) + E[k, i]]
                    o[p, j] = o[p, j] + v
    return out


from libc.math cimport sqrt, fabs


def robust_solve(const double[:, ::1] b, const double[::1] kappa, const double[::1] lam,
                 const double[:, ::1] V, double rho_prime):
    """Rows u of (R + kappa/||u|| I) u = -b with R = V diag(lam) V'.

    Dead zone (||b|| <= kappa): floor control -rho' R^-1 b/||R^-1 b||.
    Solutions shorter than rho' are stretched to norm rho'.
    """
    cdef Py_ssize_t P = b.shape[0], m = b.shape[1], p, i, j, it
    out = np.zeros((P, m))
    cdef double[:, ::1] o = out
    cdef double[::1] betabuf = np.empty(m)
    cdef double* beta = &betabuf[0]
    cdef double nb, s, g, dg, den, step, k, c, nu
    with nogil:
        for p in range(P):
            nb = 0.0
            for i in range(m):
                beta[i] = 0.0
                for j in range(m):
                    beta[i] += V[j, i] * b[p, j]
                nb += b[p, i] * b[p, i]
            nb = sqrt(nb)
            k = kappa[p]
            if nb == 0.0:
                continue
            if nb <= k:
                # floor control along -R^-1 b
                s = 0.0
                for i in range(m):
                    beta[i] = beta[i] / lam[i]
                    s += beta[i] * beta[i]
                s = sqrt(s)
                for j in range(m):
                    c = 0.0
                    for i in range(m):
                        c += V[j, i] * beta[i]
                    o[p, j] = -rho_prime * c / s
                continue
            if k == 0.0:
                s = 0.0
                for i in range(m):
                    s += (beta[i] / lam[i]) * (beta[i] / lam[i])
                s = sqrt(s)
            elif m == 1:
                s = (nb - k) / lam[0]
            else:
                s = 0.0
                for it in range(100):
                    g = -1.0
                    dg = 0.0
                    for i in range(m):
                        den = lam[i] * s + k
                        g += beta[i] * beta[i] / (den * den)
                        dg -= 2.0 * lam[i] * beta[i] * beta[i] / (den * den * den)
                    step = g / dg
                    s -= step
                    if fabs(step) <= 1e-15 * s:
                        break
            nu = 0.0
            for j in range(m):
                c = 0.0
                for i in range(m):
                    c += V[j, i] * beta[i] * s / (lam[i] * s + k)
                o[p, j] = -c
                nu += c * c
            nu = sqrt(nu)
            if nu > 0.0 and nu < rho_prime:
                for j in range(m):
                    o[p, j] *= rho_prime / nu
    return out
