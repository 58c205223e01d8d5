"""Control-affine plants and quadratic cost weights."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass
class Plant:
    """x' = f(x) + sum_i g_i(x) u_i, all maps vectorised over rows of X."""
    name: str
    n: int
    m: int
    drift: Callable
    input_maps: list
    optimal_value: Optional[Callable] = None     # analytic V*(X) when known
    optimal_policy: Optional[Callable] = None    # analytic u*(X) -> (P, m)
    meta: dict = field(default_factory=dict)

    def rhs(self, X, U):
        X = np.atleast_2d(X)
        U = U.reshape(len(X), self.m) if isinstance(U, np.ndarray) else \
            np.asarray(U, float).reshape(len(X), self.m)
        out = self.drift(X)
        for i, g in enumerate(self.input_maps):
            out = out + g(X) * U[:, i:i + 1]
        return out


def _bench_f(X):
    x1, x2 = X[:, 0], X[:, 1]
    out = np.empty_like(X)
    out[:, 0] = x2 - x1
    out[:, 1] = 0.5 * (x1 * x1 * x2 - x1 - x2)
    return out


def _bench_g(X):
    out = np.zeros_like(X)
    out[:, 1] = X[:, 0]
    return out


def _bench_value(X):
    X = np.atleast_2d(X)
    return 0.25 * X[:, 0] ** 2 + 0.5 * X[:, 1] ** 2


def _bench_policy(X):
    X = np.atleast_2d(X)
    return (-X[:, 0] * X[:, 1])[:, None]


def benchmark_plant():
    """Two-state polynomial benchmark with known optimal solution
    V*(x) = x1^2/4 + x2^2/2, u*(x) = -x1 x2 (Qbar = I, R = 1)."""
    return Plant(
        name="paper-benchmark", n=2, m=1,
        drift=_bench_f, input_maps=[_bench_g],
        optimal_value=_bench_value,
        optimal_policy=_bench_policy,
        meta={"Qbar": [[1.0, 0.0], [0.0, 1.0]], "R": [[1.0]]},
    )


def linear_plant(A, B, name="linear"):
    A = np.asarray(A, float)
    B = np.asarray(B, float).reshape(A.shape[0], -1)
    maps = [(lambda X, b=B[:, i]: np.tile(b, (len(np.atleast_2d(X)), 1))) for i in range(B.shape[1])]
    return Plant(name=name, n=A.shape[0], m=B.shape[1], drift=lambda X: np.atleast_2d(X) @ A.T,
                 input_maps=maps)


PLANTS = {"paper-benchmark": benchmark_plant}


def get_plant(name):
    try:
        return PLANTS[name]()
    except KeyError:
        raise KeyError(f"unknown plant {name!r}; registered: {sorted(PLANTS)}") from None


@dataclass
class CostWeights:
    Qbar: np.ndarray
    R: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        self.Qbar = np.atleast_2d(np.asarray(self.Qbar, float))
        self.R = np.atleast_2d(np.asarray(self.R, float))
        self.Q = np.atleast_2d(np.asarray(self.Q, float))
        for nm, M in (("Qbar", self.Qbar), ("R", self.R), ("Q", self.Q)):
            if np.max(np.abs(M - M.T), initial=0.0) > 1e-12:
                raise ValueError(f"{nm} is not symmetric")
        if self.lam_min_Qbar <= 0 or self.lam_min_R <= 0:
            raise ValueError("Qbar and R must be positive definite")
        self.Rinv = np.linalg.inv(self.R)

    @property
    def lam_min_Qbar(self):
        return float(np.linalg.eigvalsh(self.Qbar)[0])

    @property
    def lam_min_R(self):
        return float(np.linalg.eigvalsh(self.R)[0])

    @classmethod
    def from_state_weights(cls, Qbar, R, C):
        Qbar = np.atleast_2d(np.asarray(Qbar, float))
        C = np.asarray(C, float)
        return cls(Qbar, R, C.T @ Qbar @ C)
