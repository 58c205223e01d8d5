"""Backend selection for the monomial kernels.

The compiled extension is used when it imports; otherwise (or when
``KOOPROBUST_PURE_PYTHON=1`` is set) the numpy implementation is used.
All wrappers accept any array-like input and return fresh float arrays.
"""
import os

import numpy as np

from . import _core_py

_compiled = None
if not os.environ.get("KOOPROBUST_PURE_PYTHON"):
    try:
        from . import _core as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def _impl(backend):
    if backend is None:
        backend = BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    if backend == "python":
        return _core_py
    raise ValueError(f"unknown backend {backend!r}")


def _prep(X, E, coef):
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    E = np.ascontiguousarray(E, dtype=np.int64)
    coef = np.ascontiguousarray(coef, dtype=float)
    if X.shape[1] != E.shape[1]:
        raise ValueError(f"points have {X.shape[1]} coordinates, exponents {E.shape[1]}")
    if coef.shape != (E.shape[0],):
        raise ValueError("coefficient vector does not match exponent table")
    return X, E, coef


def monomials(X, E, coef, backend=None):
    """(P, K) matrix of coef_k * prod_i X[p, i]**E[k, i]."""
    return _impl(backend).monomials(*_prep(X, E, coef))


def monomials_jacobian(X, E, coef, backend=None):
    """(P, K, n) partial derivatives of each scaled monomial."""
    return _impl(backend).monomials_jacobian(*_prep(X, E, coef))


def monomials_laplacian(X, E, coef, backend=None):
    """(P, K) Laplacian of each scaled monomial."""
    return _impl(backend).monomials_laplacian(*_prep(X, E, coef))


def poly_gradient(X, E, coef, backend=None):
    """(P, n) gradient of the polynomial sum_k coef_k x**E_k."""
    return _impl(backend).poly_gradient(*_prep(X, E, coef))


def robust_solve(b, kappa, lam, V, rho_prime, backend=None):
    """Rows of the robust control law in the eigenbasis (lam, V) of R."""
    b = np.ascontiguousarray(np.atleast_2d(b), dtype=float)
    kappa = np.ascontiguousarray(np.broadcast_to(np.asarray(kappa, float), (len(b),)))
    lam = np.ascontiguousarray(lam, dtype=float)
    V = np.ascontiguousarray(V, dtype=float)
    return _impl(backend).robust_solve(b, kappa, lam, V, float(rho_prime))
