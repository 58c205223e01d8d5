"""Polynomial value functions on the lifted space and collocation sets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr
from scipy.stats import qmc

from .. import kernels
from ..lifting import lift, monomial_exponents


@dataclass
class GalerkinValueFn:
    """V(z) = sum_k theta_k z**E_k with no constant term, so V(0) = 0."""
    basis: np.ndarray            # (M, N) exponents
    theta: np.ndarray            # (M,)
    domain: np.ndarray | None = None
    _ones: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=np.int64)
        self.theta = np.asarray(self.theta, dtype=float).copy()
        if self.basis.ndim != 2 or self.theta.shape != (len(self.basis),):
            raise ValueError("theta must have one entry per basis function")
        if np.any(self.basis.sum(axis=1) == 0):
            raise ValueError("constant basis functions are not allowed")
        self._ones = np.ones(len(self.basis))

    @property
    def M(self):
        return len(self.basis)

    @property
    def N(self):
        return self.basis.shape[1]

    def with_theta(self, theta):
        return GalerkinValueFn(self.basis, theta, self.domain)

    # features
    def features(self, Z):
        return kernels.monomials(Z, self.basis, self._ones)

    def feature_gradients(self, Z):
        return kernels.monomials_jacobian(Z, self.basis, self._ones)

    def feature_laplacians(self, Z):
        return kernels.monomials_laplacian(Z, self.basis, self._ones)

    # evaluations; single vectors in, single values out
    def value(self, z):
        v = self.features(z) @ self.theta
        return float(v[0]) if np.ndim(z) == 1 else v

    def gradient(self, z):
        g = kernels.poly_gradient(z, self.basis, self.theta)
        return g[0] if np.ndim(z) == 1 else g

    def laplacian(self, z):
        v = self.feature_laplacians(z) @ self.theta
        return float(v[0]) if np.ndim(z) == 1 else v

    __call__ = value

    def to_dict(self):
        return {"basis": self.basis.tolist(), "theta": [float(t) for t in self.theta],
                "domain": None if self.domain is None else np.asarray(self.domain).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["basis"], d["theta"], d.get("domain"))


def quadratic_candidates(N):
    """All degree-two monomials in N variables (N(N+1)/2 of them)."""
    return np.array(monomial_exponents(N, 2, min_degree=2), dtype=np.int64)


def prune_basis(candidates, Z, tol=1e-8):
    """Drop candidates that are linearly dependent on the sample set ``Z``.

    QR with column pivoting on the evaluation matrix; columns whose pivot is
    below tol * (largest pivot) are removed. Kept columns stay in their
    original order.
    """
    Phi = kernels.monomials(Z, candidates, np.ones(len(candidates)))
    _, Rf, piv = qr(Phi, mode="economic", pivoting=True)
    d = np.abs(np.diag(Rf))
    keep = np.sort(piv[: int(np.sum(d > tol * d[0]))])
    return candidates[keep]


def fit_quadratic_form(basis, P, Z):
    """theta with sum theta_k z**E_k ~ z'Pz/2 in least squares over Z."""
    Phi = kernels.monomials(Z, basis, np.ones(len(basis)))
    target = 0.5 * np.einsum("pi,ij,pj->p", Z, P, Z)
    return np.linalg.lstsq(Phi, target, rcond=None)[0]


def sample_collocation(n_points, domain, rho, rng, dictionary=None, batch=None):
    """Uniform points in the punctured domain, ||z|| >= rho.

    With a dictionary, states are drawn uniformly in the state box ``domain``
    and lifted, so every point sits on the lifted manifold. Otherwise the box
    is taken directly in z.
    """
    domain = np.asarray(domain, float)
    lo, hi = domain[:, 0], domain[:, 1]
    batch = batch or max(64, n_points)
    out, have = [], 0
    for _ in range(1000):
        X = rng.uniform(lo, hi, (batch, len(lo)))
        Z = lift(dictionary, X) if dictionary is not None else X
        Z = Z[np.linalg.norm(Z, axis=1) >= rho]
        out.append(Z)
        have += len(Z)
        if have >= n_points:
            break
    else:
        raise RuntimeError("could not sample the punctured domain")
    return np.concatenate(out)[:n_points]


def probe_points(n_points, domain, rho, seed, dictionary=None):
    """Fixed scrambled-Sobol probe set in the punctured domain."""
    domain = np.asarray(domain, float)
    lo, hi = domain[:, 0], domain[:, 1]
    sob = qmc.Sobol(len(lo), scramble=True, seed=seed)
    k = int(np.ceil(np.log2(max(2 * n_points, 2))))
    X = qmc.scale(sob.random_base2(k), lo, hi)
    Z = lift(dictionary, X) if dictionary is not None else X
    Z = Z[np.linalg.norm(Z, axis=1) >= rho]
    if len(Z) < n_points:
        raise RuntimeError("probe set too small after puncturing")
    return Z[:n_points]
