"""Fixed-step RK4 simulation of the plant and of the lifted bilinear model,
noisy data collection, and the worst-case approximation error.

All integrators run a batch of initial conditions at once; each row stops
contributing once it diverges.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DIVERGENCE_CAP = 1e3


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    lifted: np.ndarray | None
    inputs: np.ndarray
    injected_error: np.ndarray
    running_cost: np.ndarray
    divergent: bool = False
    message: str = ""

    @property
    def cost(self):
        return float(self.running_cost[-1]) if not self.divergent else float("inf")

    def __len__(self):
        return len(self.times)

    def to_csv(self, path):
        n, m = self.states.shape[1], self.inputs.shape[1]
        cols = ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(m)] \
            + ["cost_cum", "err_norm"]
        data = np.column_stack([self.times, self.states, self.inputs, self.running_cost,
                                np.linalg.norm(self.injected_error, axis=1)])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def _as_state_policy(policy):
    return getattr(policy, "on_state", policy)


def _as_lifted_policy(policy):
    return getattr(policy, "lifted", policy)


def _finite_rows(X):
    # stage points of rows that are blowing up may overflow; evaluate the
    # field at the origin there and let the divergence check catch the row
    ok = np.isfinite(X)
    return X if ok.all() else np.where(ok.all(axis=1, keepdims=True), X, 0.0)


def _rk4_batch(F, cost_fn, X0, horizon, step, cap):
    """Shared driver. F(X) -> (Xdot, U, Err); cost_fn(X, U) -> integrand."""
    if step <= 0 or horizon < step:
        raise ValueError("need step > 0 and horizon >= step")
    X = np.array(X0, dtype=float, copy=True)
    P = len(X)
    K = int(round(horizon / step))
    active = np.ones(P, bool)
    stop = np.full(P, K, dtype=int)
    msgs = [""] * P
    states = np.empty((K + 1, P, X.shape[1]))
    inputs = errs = None
    cost = np.zeros((K + 1, P))
    h = step
    cap2 = cap * cap
    for k in range(K + 1):
        k1, U, E = F(X)
        if inputs is None:
            inputs = np.zeros((K + 1, P, U.shape[1]))
            errs = np.zeros((K + 1, P, E.shape[1]))
        states[k], inputs[k], errs[k] = X, U, E
        L = cost_fn(X, U)
        if k > 0:
            cost[k] = cost[k - 1] + np.where(active, 0.5 * h * (Lprev + L), 0.0)
        Lprev = L
        n2 = np.einsum("pi,pi->p", X, X)
        hit = active & ~((n2 <= cap2) & np.isfinite(L))
        if hit.any():
            for i in np.nonzero(hit)[0]:
                msgs[i] = (f"state norm exceeded {cap:g} at t={k * h:.4g}"
                           if np.isfinite(n2[i]) else f"non-finite state at t={k * h:.4g}")
            stop[hit] = k
            active &= ~hit
            if not active.any():
                K = k
                break
        if k == K:
            break
        k2 = F(_finite_rows(X + 0.5 * h * k1))[0]
        k3 = F(_finite_rows(X + 0.5 * h * k2))[0]
        k4 = F(_finite_rows(X + h * k3))[0]
        Xn = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        # frozen rows keep their last state
        X = Xn if active.all() else np.where(active[:, None], Xn, X)
    out = []
    t = np.arange(K + 1) * h
    for i in range(P):
        s = min(stop[i], K)
        out.append(dict(times=t[:s + 1], states=states[:s + 1, i], inputs=inputs[:s + 1, i],
                        injected_error=errs[:s + 1, i], running_cost=cost[:s + 1, i],
                        divergent=bool(msgs[i]), message=msgs[i]))
    return out


def integrate_batch(plant, policy, X0, horizon, step, weights, cap=DIVERGENCE_CAP, dictionary=None):
    """RK4 on x' = f(x) + g(x) u(x) from every row of X0.

    Cost is the trapezoid integral of (x'Qbar x + u'R u)/2 on the step grid.
    """
    pol = _as_state_policy(policy)
    Qb, R = weights.Qbar, weights.R

    no_err = np.zeros((len(np.atleast_2d(X0)), 0))

    def F(X):
        with np.errstate(all="ignore"):
            U = np.asarray(pol(X), float).reshape(len(X), plant.m)
            return plant.rhs(X, U), U, no_err

    def cost_fn(X, U):
        with np.errstate(all="ignore"):
            return 0.5 * (np.einsum("pi,ij,pj->p", X, Qb, X) + np.einsum("pi,ij,pj->p", U, R, U))

    X0 = np.atleast_2d(np.asarray(X0, float))
    trajs = []
    for d in _rk4_batch(F, cost_fn, X0, horizon, step, cap):
        Z = None
        if dictionary is not None and not d["divergent"]:
            from .lifting import lift
            Z = lift(dictionary, d["states"])
        d["injected_error"] = np.zeros((len(d["times"]), Z.shape[1] if Z is not None else 0))
        trajs.append(Trajectory(lifted=Z, **d))
    return trajs


def integrate(plant, policy, x0, horizon, step, weights, cap=DIVERGENCE_CAP, dictionary=None):
    return integrate_batch(plant, policy, np.atleast_2d(x0), horizon, step, weights, cap, dictionary)[0]


def integrate_lifted_batch(model, policy, Z0, horizon, step, weights, errorfn=None,
                           cap=DIVERGENCE_CAP, manifold=None):
    """RK4 on z' = A z + B(z) u + r(z, u) with cost (z'Qz + u'Ru)/2.

    With ``manifold`` (a Dictionary) the state is kept on the lifted
    manifold: x' = C (A z + B(z) u + r) with z = Psi(x) at every stage,
    and Z0 is projected to Psi(C Z0).
    """
    pol = _as_lifted_policy(policy)
    Q, R = weights.Q, weights.R
    Z0 = np.atleast_2d(np.asarray(Z0, float))
    if manifold is not None:
        from .lifting import lift
        C = manifold.C

        def F(X):
            with np.errstate(all="ignore"):
                Z = lift(manifold, _finite_rows(X))
                U = np.asarray(pol(Z), float).reshape(len(Z), model.m)
                E = errorfn(Z, U) if errorfn is not None else np.zeros_like(Z)
                return (model.field(Z, U) + E) @ C.T, U, E

        def cost_fn(X, U):
            Z = lift(manifold, _finite_rows(X))
            return 0.5 * (np.einsum("pi,ij,pj->p", Z, Q, Z) + np.einsum("pi,ij,pj->p", U, R, U))

        X0 = Z0 @ C.T
        trajs = []
        for d in _rk4_batch(F, cost_fn, X0, horizon, step, cap):
            Z = lift(manifold, _finite_rows(d["states"]))
            trajs.append(Trajectory(lifted=Z, **d))
        return trajs

    def F(Z):
        with np.errstate(all="ignore"):
            U = np.asarray(pol(Z), float).reshape(len(Z), model.m)
            E = errorfn(Z, U) if errorfn is not None else np.zeros_like(Z)
            return model.field(Z, U) + E, U, E

    def cost_fn(Z, U):
        with np.errstate(all="ignore"):
            return 0.5 * (np.einsum("pi,ij,pj->p", Z, Q, Z) + np.einsum("pi,ij,pj->p", U, R, U))

    trajs = []
    n_rec = getattr(model, "n", None)
    for d in _rk4_batch(F, cost_fn, Z0, horizon, step, cap):
        Z = d.pop("states")
        X = Z[:, :n_rec] if n_rec else Z
        trajs.append(Trajectory(states=X, lifted=Z, **d))
    return trajs


def integrate_lifted(model, policy, z0, horizon, step, weights, errorfn=None,
                     cap=DIVERGENCE_CAP, manifold=None):
    return integrate_lifted_batch(model, policy, np.atleast_2d(z0), horizon, step, weights,
                                  errorfn, cap, manifold)[0]


def worst_case_error(z, u, gradV, eb, rho_grad=1e-9):
    """Admissible error of maximal norm c1||z|| + c2||u|| aligned with gradV.

    Works on single vectors or on row batches. Zero where ||gradV|| < rho_grad
    and at (z, u) = (0, 0).
    """
    z, u, p = (np.atleast_2d(np.asarray(a, float)) for a in (z, u, gradV))
    single = np.ndim(gradV) == 1
    mag = eb.c1 * np.linalg.norm(z, axis=1) + eb.c2 * np.linalg.norm(u, axis=1)
    pn = np.linalg.norm(p, axis=1)
    ok = pn >= rho_grad
    r = np.zeros_like(p)
    r[ok] = (mag[ok] / pn[ok])[:, None] * p[ok]
    return r[0] if single else r


# ---------------------------------------------------------------- data ---

@dataclass
class Samples:
    X: np.ndarray       # (T, n)
    U: np.ndarray       # (T, m)
    Xdot: np.ndarray    # (T, n), noisy vector field at the sample instant
    t: np.ndarray       # (T,) global sample times
    replaced: list = field(default_factory=list)

    def __len__(self):
        return len(self.X)


class MultisineExcitation:
    """Per-segment sum of sines around a signed offset.

    u(t) = s_k (offset + sum_j a_j sin(2 pi f_j (t - t_k) + phi_kj)) for a
    sample of segment k starting at t_k. Signs and phases come from ``rng``.
    """
    per_segment = True

    def __init__(self, n_segments, amplitudes, freqs, offset, rng, m=1):
        self.a = np.asarray(amplitudes, float)
        self.f = np.asarray(freqs, float)
        self.offset = float(offset)
        self.m = m
        self.phase = rng.uniform(0.0, 2 * np.pi, (n_segments, m, len(self.f)))
        self.sign = rng.choice([-1.0, 1.0], (n_segments, m))

    def __call__(self, tau, seg):
        # tau: local time since segment start, seg: segment index, both (P,)
        ang = 2 * np.pi * self.f[None, None, :] * tau[:, None, None] + self.phase[seg]
        return self.sign[seg] * (self.offset + np.sum(self.a * np.sin(ang), axis=2))


def sinusoidal_noise(amplitude, freq, n=2):
    """d(t) = amplitude * (cos 2 pi f t, sin 2 pi f t) for n = 2."""
    if n != 2:
        raise ValueError("the cos/sin noise pattern is two-dimensional")

    def d(t):
        t = np.asarray(t, float)
        return amplitude * np.stack([np.cos(2 * np.pi * freq * t), np.sin(2 * np.pi * freq * t)], axis=-1)
    return d


def collect_data(plant, input_signal, noise_signal, dictionary, T, sample_dt, init_states,
                 samples_per_segment=25, substeps=2, cap=DIVERGENCE_CAP, max_retries=10):
    """Sample x, u and the noisy x' along short forced segments.

    Segments run back to back on a global clock (the noise sees global time);
    each contributes ``samples_per_segment`` samples. A segment that diverges
    is rerun from half its initial state. ``input_signal`` is either a
    per-segment excitation (``per_segment = True``, called as ``(tau, seg)``)
    or a vectorised function of global time. ``dictionary`` only validates
    that the sampled states have the dimension the lifting expects.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if dictionary is not None and dictionary.n != plant.n:
        raise ValueError("dictionary and plant dimensions differ")
    S = -(-T // samples_per_segment)
    init = np.atleast_2d(np.asarray(init_states, float))
    if len(init) < S:
        raise ValueError(f"need {S} initial states for T={T}, got {len(init)}")
    init = init[:S].copy()
    seg_len = samples_per_segment * sample_dt
    t0 = np.arange(S) * seg_len
    noise = noise_signal if noise_signal is not None else (lambda t: np.zeros((np.size(t), plant.n)))

    def u_of(tau, seg):
        if getattr(input_signal, "per_segment", False):
            return np.asarray(input_signal(tau, seg), float).reshape(len(tau), plant.m)
        return np.asarray(input_signal(t0[seg] + tau), float).reshape(len(tau), plant.m)

    def run(idx):
        X = init[idx].copy()
        seg = idx
        h = sample_dt / substeps
        Xs, Us, Xd = [], [], []
        ok = np.ones(len(idx), bool)

        def F(tau, X):
            return plant.rhs(X, u_of(tau, seg)) + noise(t0[seg] + tau)

        with np.errstate(all="ignore"):
            for j in range(samples_per_segment):
                tau = np.full(len(idx), j * sample_dt)
                Xs.append(X.copy())
                Us.append(u_of(tau, seg))
                Xd.append(F(tau, X))
                for _ in range(substeps):
                    k1 = F(tau, X)
                    k2 = F(tau + h / 2, X + h / 2 * k1)
                    k3 = F(tau + h / 2, X + h / 2 * k2)
                    k4 = F(tau + h, X + h * k3)
                    X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                    tau = tau + h
                ok &= np.all(np.isfinite(X), axis=1) & (np.linalg.norm(X, axis=1) <= cap)
        return np.stack(Xs, 1), np.stack(Us, 1), np.stack(Xd, 1), ok

    Xs, Us, Xd, ok = run(np.arange(S))
    replaced = []
    for _ in range(max_retries):
        bad = np.nonzero(~ok | ~np.all(np.isfinite(Xd), axis=(1, 2)))[0]
        if len(bad) == 0:
            break
        log.info("replacing %d divergent collection segments", len(bad))
        replaced.extend(int(b) for b in bad)
        init[bad] *= 0.5
        a, b_, c, okb = run(bad)
        Xs[bad], Us[bad], Xd[bad], ok[bad] = a, b_, c, okb
    else:
        raise RuntimeError("collection segments kept diverging")
    tt = (t0[:, None] + np.arange(samples_per_segment)[None, :] * sample_dt).ravel()
    return Samples(X=Xs.reshape(-1, plant.n)[:T], U=Us.reshape(-1, plant.m)[:T],
                   Xdot=Xd.reshape(-1, plant.n)[:T], t=tt[:T], replaced=replaced)
