"""Viscosity-regularised policy iteration with Galerkin collocation.

Policy evaluation solves, in least squares over the collocation points,

    -eps Lap V + H(z, grad V) - delta(z, u_prev, grad V_prev) = 0

with V = sum theta_k phi_k. H is quadratic in theta, so Levenberg-Marquardt
with the exact Jacobian is used. Policy improvement then applies the robust
update at every collocation and probe point.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..identify import ErrorBound, fit_lti
from ..simulate import integrate_lifted_batch
from .galerkin import GalerkinValueFn, fit_quadratic_form, probe_points, sample_collocation
from .policies import ImprovedPolicy, LinearGainPolicy, delta_term, improve_values
from .riccati import care_newton_kleinman

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


@dataclass
class SolverConfig:
    epsilon: float = 1e-3
    nu: float = 1e-4
    rho: float = 1e-2
    rho_prime: float = 1e-3
    Nc: int = 5000
    max_iter: int = 50
    domain: list = field(default_factory=lambda: [[-1.5, 1.5], [-1.5, 1.5]])
    seed: int = 0
    n_probe: int = 200
    inner_max_iter: int = 200
    probe_horizon: float = 10.0
    probe_step: float = 1e-2

    def __post_init__(self):
        for k in ("nu", "rho", "rho_prime", "Nc", "max_iter", "n_probe"):
            if not getattr(self, k) > 0:
                raise ValueError(f"solver setting {k} must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")


@dataclass
class ConvergenceLog:
    dtheta_rel: list = field(default_factory=list)
    dpolicy: list = field(default_factory=list)
    residual_rms: list = field(default_factory=list)
    inner_iters: list = field(default_factory=list)
    damped: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return len(self.dpolicy)

    def contraction(self):
        """Successive ratios ||dtheta_{k+1}|| / ||dtheta_k||."""
        d = np.asarray(self.dtheta_rel)
        with np.errstate(divide="ignore", invalid="ignore"):
            return (d[1:] / d[:-1]).tolist()

    def rows(self):
        return [(k + 1, self.dtheta_rel[k], self.dpolicy[k]) for k in range(self.iterations)]

    def to_csv(self, path, header=None):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(header.rstrip("\n") + "\n")
            w = csv.writer(fh)
            w.writerow(["iter", "dtheta_rel", "dpolicy"])
            for k, a, b in self.rows():
                w.writerow([k, repr(float(a)), repr(float(b))])


class Collocation:
    """Per-point quantities that stay fixed across the outer iterations."""

    def __init__(self, basis, Z, model, weights):
        self.Z = np.ascontiguousarray(Z, dtype=float)
        tmp = GalerkinValueFn(basis, np.zeros(len(basis)))
        self.G = tmp.feature_gradients(self.Z)                         # (P, M, N)
        self.lap = tmp.feature_laplacians(self.Z)                      # (P, M)
        self.a = np.einsum("pkn,pn->pk", self.G, self.Z @ model.A.T)   # grad phi . A z
        Bz = model.B(self.Z).reshape(len(self.Z), model.N, model.m)
        self.S = np.einsum("pnm,pkn->pmk", Bz, self.G)                 # B(z)' grad phi
        self.qz = 0.5 * np.einsum("pi,ij,pj->p", self.Z, weights.Q, self.Z)
        self.Rinv = weights.Rinv

    def gradient(self, theta):
        return np.einsum("pkn,k->pn", self.G, theta)

    def residual(self, theta, eps, delta):
        st = np.einsum("pmk,k->pm", self.S, theta)
        rst = st @ self.Rinv.T
        r = -eps * (self.lap @ theta) + self.a @ theta + self.qz \
            - 0.5 * np.einsum("pm,pm->p", st, rst) - delta
        J = -eps * self.lap + self.a - np.einsum("pm,pmk->pk", rst, self.S)
        return r, J


def _levenberg_marquardt(col, theta, eps, delta, max_iter=200, ftol=1e-13, xtol=1e-12):
    """Damped Gauss-Newton on sum res^2. Returns theta, info."""
    lam = 1e-8
    r, J = col.residual(theta, eps, delta)
    f = float(r @ r)
    hist = [f]
    damped = False
    for it in range(1, max_iter + 1):
        H = J.T @ J
        g = J.T @ r
        if np.linalg.norm(g) <= 1e-14 * max(1.0, f):
            return theta, dict(iters=it - 1, history=hist, damped=damped)
        if np.linalg.cond(H) > 1e14:
            damped = True
        while True:
            step = np.linalg.solve(H + lam * (np.diag(np.diag(H)) + 1e-12 * np.eye(len(H))), -g)
            th2 = theta + step
            r2, J2 = col.residual(th2, eps, delta)
            f2 = float(r2 @ r2)
            if f2 <= f:
                break
            lam *= 10.0
            if lam > 1e16:
                return theta, dict(iters=it, history=hist, damped=damped)
        done = (f - f2) <= ftol * max(f, 1e-300) or \
            np.linalg.norm(step) <= xtol * (1.0 + np.linalg.norm(th2))
        theta, r, J, f = th2, r2, J2, f2
        hist.append(f)
        lam = max(lam / 10.0, 1e-15)
        if done:
            return theta, dict(iters=it, history=hist, damped=damped)
    raise SolverError(f"policy evaluation did not converge in {max_iter} iterations", hist)


def policy_evaluation(basis, policy_prev, valuefn_prev, model, weights, eb, cfg, points,
                      eps=None, info=False):
    """New coefficient vector for the value function of ``policy_prev``."""
    col = points if isinstance(points, Collocation) else Collocation(basis, points, model, weights)
    u_prev = policy_prev if isinstance(policy_prev, np.ndarray) else policy_prev.lifted(col.Z)
    p_prev = valuefn_prev.gradient(col.Z)
    delta = delta_term(col.Z, u_prev, p_prev, eb, weights, cfg.rho_prime) \
        if (eb.c1 or eb.c2) else np.zeros(len(col.Z))
    eps = cfg.epsilon if eps is None else eps
    theta, rep = _levenberg_marquardt(col, valuefn_prev.theta.copy(), eps, delta, cfg.inner_max_iter)
    r, _ = col.residual(theta, eps, delta)
    rep["rms"] = float(np.sqrt(np.mean(r ** 2)))
    return (theta, rep) if info else theta


def policy_improvement(valuefn_new, policy_prev, model, weights, eb, cfg):
    return ImprovedPolicy(valuefn_new, policy_prev, model, weights, eb.c2, cfg.rho_prime,
                          dictionary=getattr(policy_prev, "dictionary", None))


def check_admissible(model, policy, Z_probe, cfg, weights):
    """Simulate the lifted model under ``policy`` from a few probe states."""
    idx = np.linspace(0, len(Z_probe) - 1, min(8, len(Z_probe))).astype(int)
    trajs = integrate_lifted_batch(model, policy, Z_probe[idx], cfg.probe_horizon, cfg.probe_step,
                                   weights)
    bad = [i for i, t in enumerate(trajs) if t.divergent]
    if bad:
        raise SolverError(f"initial policy diverges on the lifted model from {len(bad)} probe states")


def run_policy_iteration(model, weights, eb, cfg, init_policy, init_valuefn, points=None,
                         probe=None, dictionary=None, eps=None, check=True):
    """Alternate evaluation and improvement until the policy change on the
    probe set drops below nu. Returns (valuefn, policy, log)."""
    basis = init_valuefn.basis
    if points is None:
        points = sample_collocation(cfg.Nc, cfg.domain, cfg.rho,
                                    np.random.default_rng(cfg.seed), dictionary)
    if probe is None:
        probe = probe_points(cfg.n_probe, cfg.domain, cfg.rho, cfg.seed + 1, dictionary)
    col = points if isinstance(points, Collocation) else Collocation(basis, points, model, weights)
    if check:
        check_admissible(model, init_policy, probe, cfg, weights)
    eps = cfg.epsilon if eps is None else eps
    vf = init_valuefn
    u_c = init_policy.lifted(col.Z)
    u_p = init_policy.lifted(probe)
    policy = init_policy
    clog = ConvergenceLog()
    for k in range(cfg.max_iter):
        theta, rep = policy_evaluation(basis, u_c, vf, model, weights, eb, cfg, col, eps, info=True)
        vf_new = vf.with_theta(theta)
        u_c_new = improve_values(col.Z, col.gradient(theta), u_c, model, weights, eb.c2, cfg.rho_prime)
        u_p_new = improve_values(probe, vf_new.gradient(probe), u_p, model, weights, eb.c2,
                                 cfg.rho_prime)
        dpol = float(np.max(np.linalg.norm(u_p_new - u_p, axis=1)))
        dth = float(np.linalg.norm(theta - vf.theta) / max(np.linalg.norm(theta), 1e-300))
        clog.dtheta_rel.append(dth)
        clog.dpolicy.append(dpol)
        clog.residual_rms.append(rep["rms"])
        clog.inner_iters.append(rep["iters"])
        clog.damped.append(rep["damped"])
        log.info("PI %d: rms %.3e dtheta %.3e dpolicy %.3e", k + 1, rep["rms"], dth, dpol)
        policy = policy_improvement(vf_new, policy, model, weights, eb, cfg)
        vf, u_c, u_p = vf_new, u_c_new, u_p_new
        if dpol < cfg.nu:
            clog.converged = True
            break
    return vf, policy, clog


def lqr_lti_baseline(batch, weights, dictionary=None):
    """LTI fit z' = A z + B0 u and its LQR gain; returns (policy, P, (A, B0))."""
    A, B0 = fit_lti(batch)
    P, K, _ = care_newton_kleinman(A, B0, weights.Q, weights.R)
    pol = LinearGainPolicy(K, dictionary)
    pol.P, pol.A, pol.B = P, A, B0
    return pol


def initial_guess(basis, P, points):
    return GalerkinValueFn(basis, fit_quadratic_form(basis, P, points))


def solve_nominal(model, weights, cfg, init_policy, init_valuefn, points=None, probe=None,
                  dictionary=None, eps=0.0):
    """Error-free problem (c1 = c2 = 0); eps defaults to 0."""
    eb0 = ErrorBound(0.0, 0.0)
    return run_policy_iteration(model, weights, eb0, cfg, init_policy, init_valuefn, points, probe,
                                dictionary, eps=eps)


def viscosity_sweep(model, weights, eb, cfg, init_policy, init_valuefn, halvings, **kw):
    """Re-solve with eps, eps/2, ...; returns [(eps, valuefn, log)]."""
    out = []
    for j in range(halvings + 1):
        c = replace(cfg, epsilon=cfg.epsilon / 2 ** j)
        vf, _, lg = run_policy_iteration(model, weights, eb, c, init_policy, init_valuefn, **kw)
        out.append((c.epsilon, vf, lg))
    return out
