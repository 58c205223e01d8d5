"""Feedback policies, the Hamiltonian and the robust control law.

Policies act on lifted states ``Z`` (rows) through ``lifted``; ``on_state``
lifts plant states first, except for analytic policies which use x directly.
"""
from __future__ import annotations

import logging

import numpy as np

from .. import kernels
from ..lifting import lift

log = logging.getLogger(__name__)


def _rows(a):
    return np.atleast_2d(np.asarray(a, float))


def hamiltonian(z, p, model, weights):
    """H = p'Az + z'Qz/2 - p'B(z) R^-1 B(z)'p / 2 (batched over rows)."""
    Z, Pm = _rows(z), _rows(p)
    b = model.input_gain(Z, Pm)
    H = np.einsum("pn,pn->p", Pm, Z @ model.A.T) + 0.5 * np.einsum("pi,ij,pj->p", Z, weights.Q, Z) \
        - 0.5 * np.einsum("pi,ij,pj->p", b, weights.Rinv, b)
    return float(H[0]) if np.ndim(z) == 1 else H


def delta_term(z, u, p, eb, weights, rho_prime=0.0):
    """-(c1||z|| + c2||u||)||p|| - c2^2 ||p||^2 u'R^-1 u / (2||u||^2).

    ||u|| is floored at ``rho_prime`` inside the normalised term.
    """
    Z, U, Pm = _rows(z), _rows(u), _rows(p)
    pn = np.linalg.norm(Pm, axis=1)
    un = np.linalg.norm(U, axis=1)
    d = -(eb.c1 * np.linalg.norm(Z, axis=1) + eb.c2 * un) * pn
    if eb.c2 != 0.0:
        uf = np.maximum(un, rho_prime)
        quad = np.einsum("pi,ij,pj->p", U, weights.Rinv, U)
        with np.errstate(invalid="ignore", divide="ignore"):
            d = d - np.where(uf > 0, eb.c2 ** 2 * pn ** 2 * quad / (2 * uf ** 2), 0.0)
    return float(d[0]) if np.ndim(z) == 1 else d


def _floor_control(b, Rinv, rho_prime):
    # -rho' R^-1 b / ||R^-1 b||, or 0 where b = 0
    rb = b @ Rinv.T
    nr = np.linalg.norm(rb, axis=1)
    safe = np.where(nr > 0, nr, 1.0)
    return np.where((nr > 0)[:, None], -rho_prime * rb / safe[:, None], 0.0)


def improve_values(Z, gradV, u_prev, model, weights, c2, rho_prime):
    """Policy update u = -R^-1 B'p - c2||p||/||u_prev|| R^-1 u_prev at rows.

    ||u_prev|| is floored at rho_prime. Where ||B'p|| <= c2||p|| the min-max
    optimal input is zero and the update would only flip sign between
    iterations, so the floor control is used there. With c2 > 0 the result
    is kept at norm >= rho_prime.
    """
    Rinv = weights.Rinv
    b = model.input_gain(Z, gradV)
    u = -(b @ Rinv.T)
    if c2 == 0.0:
        return u
    kap = c2 * np.linalg.norm(gradV, axis=1)
    un = np.maximum(np.linalg.norm(u_prev, axis=1), rho_prime)
    u = u - (kap / un)[:, None] * (u_prev @ Rinv.T)
    dead = np.linalg.norm(b, axis=1) <= kap
    u = np.where(dead[:, None], _floor_control(b, Rinv, rho_prime), u)
    nu = np.linalg.norm(u, axis=1)
    small = (nu > 0) & (nu < rho_prime)
    u[small] *= (rho_prime / nu[small])[:, None]
    return u


def robust_control_batch(b, kappa, R, rho_prime, eig=None):
    """Rows of the solution of (R + kappa/||u|| I) u = -b.

    In the eigenbasis R = V diag(l) V', s = ||u|| is the root of
    sum_i beta_i^2 / (l_i s + kappa)^2 = 1, beta = V'b; the left side is
    convex and decreasing in s, so Newton from s = 0 climbs monotonically
    (closed form when m = 1). No root exists when ||b|| <= kappa; the floor
    control is returned there.
    """
    lam, V = eig if eig is not None else np.linalg.eigh(R)
    return kernels.robust_solve(b, kappa, lam, V, rho_prime)


def implicit_robust_control(z, gradV, model, weights, eb, rho_prime=1e-3, tol=1e-10,
                            max_iter=100, info=False):
    """u = -(R + c2||gradV||/s I)^-1 B(z)'gradV with s = ||u|| (one point).

    Fixed point on s from s0 = ||R^-1 B(z)'gradV||; if it stalls, bisection
    on [rho_prime, s0]. Inside the dead zone ||B'gradV|| <= c2||gradV|| the
    floor control of norm rho_prime is returned.
    """
    z = np.asarray(z, float)
    p = np.asarray(gradV, float)
    R, Rinv = weights.R, weights.Rinv
    b = model.B(z).T @ p
    kap = eb.c2 * np.linalg.norm(p)
    m = len(b)
    rep = {"iterations": 0, "method": "closed", "dead_zone": False}
    u0 = -Rinv @ b
    s0 = float(np.linalg.norm(u0))
    if kap == 0.0 or s0 == 0.0:
        return (u0, rep) if info else u0
    if np.linalg.norm(b) <= kap:
        rep["dead_zone"] = True
        u = _floor_control(b[None], Rinv, rho_prime)[0]
        return (u, rep) if info else u

    def u_of(s):
        return -np.linalg.solve(R + (kap / s) * np.eye(m), b)

    s = s0
    rep["method"] = "fixed-point"
    for k in range(max_iter):
        s_new = float(np.linalg.norm(u_of(s)))
        rep["iterations"] = k + 1
        if abs(s_new - s) < tol:
            s = s_new
            break
        s = s_new
    else:
        # h(s) = ||u(s)|| - s is positive at small s and negative at s0
        rep["method"] = "bisection"
        lo, hi = rho_prime, s0
        if float(np.linalg.norm(u_of(lo))) - lo < 0:
            log.warning("robust control: bracket failed, returning floor-norm solution")
            s = lo
        else:
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if float(np.linalg.norm(u_of(mid))) - mid > 0:
                    lo = mid
                else:
                    hi = mid
                if hi - lo < tol:
                    break
            s = 0.5 * (lo + hi)
    u = u_of(max(s, 1e-300))
    nu = np.linalg.norm(u)
    if 0 < nu < rho_prime:
        u = u * (rho_prime / nu)
    return (u, rep) if info else u


# ------------------------------------------------------------ policies ---

class Policy:
    kind = "base"

    def __init__(self, m, dictionary=None):
        self.m = m
        self.dictionary = dictionary

    def lifted(self, Z):
        raise NotImplementedError

    def on_state(self, X):
        if self.dictionary is None:
            raise ValueError("this policy needs a dictionary to act on plant states")
        return self.lifted(lift(self.dictionary, _rows(X)))

    def __call__(self, z):
        u = self.lifted(_rows(z))
        return u[0] if np.ndim(z) == 1 else u


class ZeroPolicy(Policy):
    kind = "zero"

    def lifted(self, Z):
        return np.zeros((len(_rows(Z)), self.m))

    def on_state(self, X):
        return np.zeros((len(_rows(X)), self.m))


class AnalyticPolicy(Policy):
    """u(x) known in closed form; on lifted inputs x = C z is used."""
    kind = "analytic"

    def __init__(self, fn, m, dictionary=None):
        super().__init__(m, dictionary)
        self.fn = fn

    def on_state(self, X):
        return np.asarray(self.fn(_rows(X)), float).reshape(-1, self.m)

    def lifted(self, Z):
        return self.on_state(_rows(Z) @ self.dictionary.C.T)


class LinearGainPolicy(Policy):
    """u = -K z."""
    kind = "linear_gain"

    def __init__(self, K, dictionary=None):
        K = np.atleast_2d(np.asarray(K, float))
        super().__init__(K.shape[0], dictionary)
        self.K = K

    def lifted(self, Z):
        return -_rows(Z) @ self.K.T


class NominalFeedback(Policy):
    """u = -R^-1 B(z)' grad V(z)."""
    kind = "nominal_feedback"

    def __init__(self, valuefn, model, weights, dictionary=None):
        super().__init__(model.m, dictionary)
        self.valuefn, self.model, self.weights = valuefn, model, weights

    def lifted(self, Z):
        Z = _rows(Z)
        b = self.model.input_gain(Z, self.valuefn.gradient(Z))
        return -(b @ self.weights.Rinv.T)


class RobustFeedback(Policy):
    """Self-consistent robust law (R + c2||grad V||/||u|| I) u = -B(z)' grad V."""
    kind = "robust_feedback"

    def __init__(self, valuefn, model, weights, eb, rho_prime=1e-3, dictionary=None):
        super().__init__(model.m, dictionary)
        self.valuefn, self.model, self.weights, self.eb = valuefn, model, weights, eb
        self.rho_prime = rho_prime
        self._eig = np.linalg.eigh(weights.R)

    def lifted(self, Z):
        Z = _rows(Z)
        p = self.valuefn.gradient(Z)
        b = self.model.input_gain(Z, p)
        kap = self.eb.c2 * np.sqrt(np.einsum("pn,pn->p", p, p))
        return robust_control_batch(b, kap, self.weights.R, self.rho_prime, self._eig)


class ImprovedPolicy(Policy):
    """One policy-improvement step closing over the previous policy."""
    kind = "improved"

    def __init__(self, valuefn, prev, model, weights, c2, rho_prime=1e-3, dictionary=None):
        super().__init__(model.m, dictionary)
        self.valuefn, self.prev, self.model, self.weights = valuefn, prev, model, weights
        self.c2, self.rho_prime = c2, rho_prime

    def lifted(self, Z):
        Z = _rows(Z)
        u_prev = self.prev.lifted(Z) if self.c2 != 0.0 else np.zeros((len(Z), self.m))
        return improve_values(Z, self.valuefn.gradient(Z), u_prev, self.model, self.weights,
                              self.c2, self.rho_prime)


class SwitchedPolicy(Policy):
    """``inner`` outside the ball ||z|| < radius, ``near`` inside it."""
    kind = "switched"

    def __init__(self, inner, near, radius, dictionary=None):
        super().__init__(inner.m, dictionary if dictionary is not None else inner.dictionary)
        self.inner, self.near, self.radius = inner, near, float(radius)

    def lifted(self, Z):
        Z = _rows(Z)
        u = self.inner.lifted(Z)
        close = np.linalg.norm(Z, axis=1) < self.radius
        if np.any(close):
            u[close] = self.near.lifted(Z[close])
        return u
