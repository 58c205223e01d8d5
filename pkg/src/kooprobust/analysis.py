"""Optimality-deviation bounds, the performance/robustness trade-off and
the cost comparison table."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .lifting import lift
from .simulate import integrate_batch, integrate_lifted_batch, worst_case_error

log = logging.getLogger(__name__)


def trapezoid(y, t):
    y, t = np.asarray(y, float), np.asarray(t, float)
    if len(t) < 2:
        return 0.0
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def _lifted_of(traj, dictionary=None):
    if traj.lifted is not None:
        return traj.lifted
    if dictionary is None:
        raise ValueError("trajectory has no lifted states and no dictionary was given")
    return lift(dictionary, traj.states)


def grad_norm_integral(traj, valuefn, dictionary=None):
    """Trapezoid quadrature of ||grad V(z(t))||^2 along a trajectory."""
    if traj.divergent:
        raise ValueError("divergent trajectory: " + traj.message)
    g = valuefn.gradient(_lifted_of(traj, dictionary))
    return trapezoid(np.einsum("pi,pi->p", g, g), traj.times)


def control_deviation_integral(traj, ua, ub, R):
    """Integral of (ua - ub)' R (ua - ub) with ua, ub given as row arrays."""
    d = np.asarray(ua, float) - np.asarray(ub, float)
    return trapezoid(np.einsum("pi,ij,pj->p", d, R, d), traj.times)


def value_deviation_bound(V0, grad_integral, eb):
    """dV_max = C^2 I / 2 + (C/2) sqrt(I) sqrt(C^2 I + 4 V0), C = C12."""
    if V0 < 0 or grad_integral < 0:
        raise ValueError("inputs must be nonnegative")
    C, I = eb.C12, grad_integral
    return float(0.5 * C * C * I + 0.5 * C * np.sqrt(I) * np.sqrt(C * C * I + 4.0 * V0))


def controller_deviation_bound(dv_max, V0, grad_integral_actual, eb):
    """2 dV_max + 2 C12 sqrt((V0 + dV_max) I_actual)."""
    return float(2.0 * dv_max + 2.0 * eb.C12 * np.sqrt((V0 + dv_max) * grad_integral_actual))


def robust_controller_deviation_bound(V_star, grad_integral_robust, eb, weights=None, dic=None):
    """max{4 c1 L_p / sqrt(lmin Qbar), 4 c2 / sqrt(lmin R)} sqrt(V* I)."""
    L_p = dic.L_p if dic is not None else eb.L_p
    lq = weights.lam_min_Qbar if weights is not None else eb.lam_min_Qbar
    lr = weights.lam_min_R if weights is not None else eb.lam_min_R
    k = max(4 * eb.c1 * L_p / np.sqrt(lq), 4 * eb.c2 / np.sqrt(lr))
    return float(k * np.sqrt(V_star * grad_integral_robust))


# ------------------------------------------------------------ reports ---

@dataclass
class SimSettings:
    horizon: float = 20.0
    step: float = 1e-3
    cap: float = 1e3
    threads: int = 1


def _map(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def tradeoff_report(model, weights, eb, u0, uro, valuefn_ro, x0_list, sim, dictionary,
                    manifold=True):
    """Per initial state: nominal loss (identity check) and worst-case gain bound.

    The error-free runs under u_ro and u0 start at Psi(x0); with
    ``manifold`` they are kept on the lifted manifold. The worst-case run
    drives u0 with r aligned to grad V_ro on the free lifted model.
    """
    X0 = np.atleast_2d(np.asarray(x0_list, float))
    Z0 = lift(dictionary, X0)
    R = weights.R
    lr = weights.lam_min_R
    man = dictionary if manifold else None

    def err_ro(Z, U):
        return worst_case_error(Z, U, valuefn_ro.gradient(Z), eb)

    jobs = [("ro", uro, None, man), ("u0", u0, None, man), ("wc", u0, err_ro, None)]
    runs = _map(lambda j: integrate_lifted_batch(model, j[1], Z0, sim.horizon, sim.step, weights,
                                                 errorfn=j[2], cap=sim.cap, manifold=j[3]),
                jobs, sim.threads)
    tr_ro, tr_0, tr_wc = runs
    rows = []
    for i, x0 in enumerate(X0):
        a, b, w = tr_ro[i], tr_0[i], tr_wc[i]
        row = {"x0": x0.tolist(), "J_ro": a.cost, "J_0": b.cost,
               "trajectory": "manifold" if manifold else "lifted"}
        if a.divergent or b.divergent:
            row.update(nominal_loss=None, cost_gap=None, identity_rel_err=None)
        else:
            d = uro.lifted(a.lifted) - u0.lifted(a.lifted)
            nl = 0.5 * trapezoid(np.einsum("pi,ij,pj->p", d, R, d), a.times)
            gap = a.cost - b.cost
            row.update(nominal_loss=nl, cost_gap=gap,
                       identity_rel_err=abs(gap - nl) / abs(nl) if nl > 0 else abs(gap))
        if w.divergent:
            row.update(worstcase_gain_bound=None, worstcase_divergent=True)
        else:
            Z = w.lifted
            d = uro.lifted(Z) - u0.lifted(Z)
            g = valuefn_ro.gradient(Z)
            integrand = (1 + 1 / (2 * lr)) * np.einsum("pi,ij,pj->p", d, R, d) \
                + (1 + 1 / lr) * 0.5 * eb.c2 ** 2 * np.einsum("pi,pi->p", g, g)
            row.update(worstcase_gain_bound=trapezoid(integrand, w.times), worstcase_divergent=False)
        rows.append(row)
    return rows


def deviation_report(plant, model, weights, eb, dictionary, valuefn_nom, valuefn_ro, u0, uro,
                     x0_list, sim, actual_trajs=None):
    """Bounds on value and controller deviations, with measured values.

    Worst-case runs align r with grad V0 (the converged nominal Galerkin
    solution stands in for the intermediate worst-case value function).
    Measured controller deviations need the plant's analytic optimum.
    """
    X0 = np.atleast_2d(np.asarray(x0_list, float))
    Z0 = lift(dictionary, X0)
    R = weights.R

    def err0(Z, U):
        return worst_case_error(Z, U, valuefn_nom.gradient(Z), eb)

    wc = integrate_lifted_batch(model, u0, Z0, sim.horizon, sim.step, weights, errorfn=err0,
                                cap=sim.cap)
    have_opt = plant.optimal_policy is not None
    if have_opt and actual_trajs is None:
        from .hjsolve.policies import AnalyticPolicy
        actual_trajs = integrate_batch(plant, AnalyticPolicy(plant.optimal_policy, plant.m, dictionary),
                                       X0, sim.horizon, sim.step, weights, sim.cap, dictionary)
    rows = []
    for i, x0 in enumerate(X0):
        V0 = float(valuefn_nom.value(Z0[i]))
        row = {"x0": x0.tolist(), "V0_at_x0": V0, "gradient_source_worst_case": "nominal",
               "V0_source": "galerkin_nominal"}
        w = wc[i]
        if w.divergent:
            row.update(worstcase_divergent=True, grad_integral=None, dv_max=None,
                       observed_value_dev=None)
            dv = None
        else:
            I = grad_norm_integral(w, valuefn_nom)
            dv = value_deviation_bound(max(V0, 0.0), I, eb)
            row.update(worstcase_divergent=False, grad_integral=I, dv_max=dv,
                       worstcase_cost=w.cost, observed_value_dev=w.cost - V0)
        if have_opt:
            a = actual_trajs[i]
            Za = _lifted_of(a, dictionary)
            ustar = plant.optimal_policy(a.states)
            Vstar = float(plant.optimal_value(x0[None])[0])
            I_act = grad_norm_integral(a, valuefn_nom, dictionary)
            I_ro = grad_norm_integral(a, valuefn_ro, dictionary)
            obs2 = control_deviation_integral(a, u0.lifted(Za), ustar, R)
            obs5 = control_deviation_integral(a, uro.lifted(Za), ustar, R)
            b2 = controller_deviation_bound(dv, max(V0, 0.0), I_act, eb) if dv is not None else None
            b5 = robust_controller_deviation_bound(Vstar, I_ro, eb, weights, dictionary)
            row.update(V_star=Vstar, grad_integral_actual=I_act, grad_integral_robust=I_ro,
                       controller_dev_bound=b2, observed_dev=obs2,
                       robust_controller_dev_bound=b5, observed_robust_dev=obs5)
        rows.append(row)
    return rows


@dataclass
class CostReport:
    rows: list
    names: tuple = ("actual", "robust", "baseline")
    averages: dict = field(default_factory=dict)
    complete: bool = True

    def to_dict(self):
        return {"rows": self.rows, "averages": self.averages, "complete": self.complete}

    def to_text(self):
        head = f"{'Initial state':<18}{'Actual':>10}{'Robust':>10}{'LQR':>10}{'Robust %':>11}{'LQR %':>11}"
        lines = [head, "-" * len(head)]

        def c(v):
            return f"{v:10.4f}" if v is not None else f"{'diverged':>10}"

        def pc(v):
            return f"{100 * v:10.2f}%" if v is not None else f"{'n/a':>11}"

        for r in self.rows:
            x = "(" + ", ".join(f"{v:g}" for v in r["x0"]) + ")"
            lines.append(f"{x:<18}{c(r['cost_actual'])}{c(r['cost_robust'])}{c(r['cost_baseline'])}"
                         f"{pc(r['rel_extra_robust'])}{pc(r['rel_extra_baseline'])}")
        lines.append("-" * len(head))
        a = self.averages
        lines.append(f"{'Average':<18}{'':>30}{pc(a.get('rel_extra_robust'))}"
                     f"{pc(a.get('rel_extra_baseline'))}")
        if not self.complete:
            lines.append("averages exclude diverged runs: " +
                         ", ".join(f"{k}={v}" for k, v in a.get("n_used", {}).items()))
        return "\n".join(lines) + "\n"


def cost_table(plant, policies, x0_list, weights, sim, dictionary=None):
    """Simulate the plant under each policy from each x0 and tabulate."""
    X0 = np.atleast_2d(np.asarray(x0_list, float))
    keys = ["actual", "robust", "baseline"]
    runs = dict(zip(keys, _map(lambda k: integrate_batch(plant, policies[k], X0, sim.horizon, sim.step,
                                                         weights, sim.cap), keys, sim.threads)))
    rows = []
    for i, x0 in enumerate(X0):
        row = {"x0": x0.tolist()}
        for k in keys:
            t = runs[k][i]
            row[f"cost_{k}"] = None if t.divergent else t.cost
            if t.divergent:
                row[f"note_{k}"] = t.message
        ca = row["cost_actual"]
        for k in ("robust", "baseline"):
            ck = row[f"cost_{k}"]
            row[f"rel_extra_{k}"] = None if (ck is None or ca is None or ca == 0) else (ck - ca) / ca
        rows.append(row)
    av, used = {}, {}
    for k in ("robust", "baseline"):
        vals = [r[f"rel_extra_{k}"] for r in rows if r[f"rel_extra_{k}"] is not None]
        av[f"rel_extra_{k}"] = float(np.mean(vals)) if vals else None
        used[k] = len(vals)
    for k in keys:
        vals = [r[f"cost_{k}"] for r in rows if r[f"cost_{k}"] is not None]
        av[f"cost_{k}"] = float(np.mean(vals)) if vals else None
    av["n_used"] = used
    complete = all(v == len(rows) for v in used.values())
    return CostReport(rows=rows, averages=av, complete=complete), runs
