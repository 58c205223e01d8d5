"""Monomial lifting dictionary.

The dictionary stacks every monomial of degree 1..max_degree in the state,
each scaled by one over the multi-index factorial, so the first ``n`` entries
are the state itself and ``C = [I 0]`` recovers it exactly.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels


def monomial_exponents(n, max_degree, min_degree=1):
    """Exponent tuples ordered by total degree, then lexicographically
    (higher powers of earlier variables first)."""
    out = []
    for d in range(min_degree, max_degree + 1):
        combos = [e for e in itertools.product(range(d + 1), repeat=n) if sum(e) == d]
        out.extend(sorted(combos, reverse=True))
    return out


@dataclass
class Dictionary:
    n: int
    max_degree: int
    multi_indices: list
    scale: np.ndarray
    domain: np.ndarray          # (n, 2) box, used for L_p and zmax
    L_p: float = float("nan")
    _E: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.multi_indices = [tuple(int(v) for v in e) for e in self.multi_indices]
        self.scale = np.asarray(self.scale, dtype=float)
        self.domain = np.asarray(self.domain, dtype=float).reshape(self.n, 2)
        self._E = np.asarray(self.multi_indices, dtype=np.int64).reshape(-1, self.n)
        if len(set(self.multi_indices)) != len(self.multi_indices):
            raise ValueError("duplicate multi-indices")
        if self.scale.shape != (self.N,) or np.any(self.scale <= 0):
            raise ValueError("scale must be a positive vector of length N")

    @property
    def N(self):
        return len(self.multi_indices)

    @property
    def exponents(self):
        return self._E

    @property
    def C(self):
        # degree-one entries carry scale 1, so C is a 0/1 selection
        C = np.zeros((self.n, self.N))
        for i in range(self.n):
            e = tuple(1 if j == i else 0 for j in range(self.n))
            k = self.multi_indices.index(e)
            C[i, k] = 1.0 / self.scale[k]
        return C

    def lift(self, x):
        return lift(self, x)

    def jacobian(self, x):
        return lift_jacobian(self, x)

    def to_dict(self):
        return {
            "n": self.n,
            "max_degree": self.max_degree,
            "multi_indices": [list(e) for e in self.multi_indices],
            "scale": [float(s) for s in self.scale],
            "domain": self.domain.tolist(),
            "L_p": float(self.L_p),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["n"], d["max_degree"], d["multi_indices"], d["scale"],
                   d["domain"], d.get("L_p", float("nan")))


def make_dictionary(n, max_degree=3, domain=None, grid_density=None):
    """Standard factorial-scaled monomial dictionary.

    If ``grid_density`` is given, L_p is estimated on ``domain`` right away.
    """
    idx = monomial_exponents(n, max_degree)
    scale = [1.0 / np.prod([math.factorial(k) for k in e]) for e in idx]
    if domain is None:
        domain = [[-1.0, 1.0]] * n
    d = Dictionary(n, max_degree, idx, scale, domain)
    if grid_density is not None:
        estimate_lipschitz(d, d.domain, grid_density)
    return d


def _points(dic, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != dic.n:
        raise ValueError(f"expected states of dimension {dic.n}, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite state passed to the lifting")
    return X, single


def lift(dic, x):
    """z = Psi(x); accepts one state (n,) or a batch (P, n)."""
    X, single = _points(dic, x)
    Z = kernels.monomials(X, dic.exponents, dic.scale)
    return Z[0] if single else Z


def lift_jacobian(dic, x):
    """dPsi/dx, shape (N, n) for one state or (P, N, n) for a batch."""
    X, single = _points(dic, x)
    J = kernels.monomials_jacobian(X, dic.exponents, dic.scale)
    return J[0] if single else J


def recover(dic, z):
    return np.asarray(z, float) @ dic.C.T


def _grid(domain, density):
    domain = np.asarray(domain, dtype=float)
    if domain.ndim != 2 or domain.shape[1] != 2:
        raise ValueError("domain must be a list of (low, high) pairs")
    if np.any(domain[:, 1] < domain[:, 0]):
        raise ValueError("empty domain")
    if density < 1:
        raise ValueError("grid density must be positive")
    axes = [np.linspace(lo, hi, density) for lo, hi in domain]
    return np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=1)


def estimate_lipschitz(dic, domain=None, grid_density=101):
    """Grid estimate of max ||dPsi/dx||_2 on a box; stored into ``dic.L_p``.

    This is a sampled maximum, not a certified bound.
    """
    X = _grid(dic.domain if domain is None else domain, grid_density)
    L = 0.0
    for chunk in np.array_split(X, max(1, len(X) // 20000)):
        J = lift_jacobian(dic, chunk)
        L = max(L, float(np.max(np.linalg.norm(J, ord=2, axis=(1, 2)))))
    dic.L_p = L
    return L


def max_lift_norm(dic, domain=None, grid_density=101):
    """Grid estimate of sup ||Psi(x)|| over the box (corners are on the grid)."""
    X = _grid(dic.domain if domain is None else domain, grid_density)
    return float(np.max(np.linalg.norm(lift(dic, X), axis=1)))
