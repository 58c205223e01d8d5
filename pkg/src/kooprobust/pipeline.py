"""Stage runner: collect -> fit -> bound -> solve -> evaluate -> report.

Every stage reads the artifacts of the previous ones from the output
directory, so each can be rerun on its own. Every artifact records the
config hash.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
import traceback
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .analysis import SimSettings, cost_table, deviation_report, tradeoff_report
from .hjsolve import (AnalyticPolicy, GalerkinValueFn, LinearGainPolicy, NominalFeedback,
                      RobustFeedback, SolverConfig, SwitchedPolicy, initial_guess, lqr_lti_baseline,
                      probe_points, prune_basis, quadratic_candidates, run_policy_iteration,
                      sample_collocation, solve_nominal, viscosity_sweep)
from .identify import (BilinearModel, ErrorBound, bound_slack, build_data_matrices, edmd_fit,
                       estimate_error_bounds, fold_noise_into_bound, lifted_noise_delta,
                       noise_coefficient)
from .lifting import Dictionary, make_dictionary, max_lift_norm
from .plants import CostWeights, get_plant
from .simulate import MultisineExcitation, Samples, collect_data, sinusoidal_noise

log = logging.getLogger(__name__)

STAGES = ["collect", "fit", "bound", "solve", "evaluate", "report"]


class StageError(RuntimeError):
    def __init__(self, stage, msg):
        super().__init__(f"[{stage}] {msg}")
        self.stage = stage

    @property
    def exit_code(self):
        return 10 + STAGES.index(self.stage) + 1


class MissingArtifact(FileNotFoundError):
    pass


def _clean(o):
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if math.isfinite(v) else None
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


class Run:
    """Holds the config and output directory of one experiment."""

    def __init__(self, cfg, out, threads=1):
        self.cfg = cfg
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.hash = cfgmod.config_hash(cfg)
        self.threads = max(1, int(threads or 1))

    # -- io
    def path(self, name):
        return self.out / name

    def write_json(self, name, obj):
        obj = dict(obj)
        obj["config_hash"] = self.hash
        with open(self.path(name), "w") as fh:
            json.dump(_clean(obj), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def read_json(self, name):
        p = self.path(name)
        if not p.exists():
            raise MissingArtifact(f"missing prerequisite artifact {name} in {self.out}")
        with open(p) as fh:
            return json.load(fh)

    def digest(self, name):
        return hashlib.sha256(self.path(name).read_bytes()).hexdigest()[:16]

    # -- shared objects
    def plant(self):
        return get_plant(self.cfg["plant"])

    def weights(self, dic):
        w = self.cfg["weights"]
        return CostWeights.from_state_weights(w["Qbar"], w["R"], dic.C)

    def solver_config(self):
        s = self.cfg["solver"]
        keys = {"epsilon", "nu", "rho", "rho_prime", "Nc", "max_iter", "n_probe"}
        return SolverConfig(domain=self.cfg["dictionary"]["domain"], seed=int(self.cfg["seed"]),
                            **{k: v for k, v in s.items() if k in keys})

    def sim_settings(self):
        e = self.cfg["evaluation"]
        return SimSettings(horizon=e["horizon"], step=e["step"], cap=e.get("cap", 1e3),
                           threads=self.threads)

    def samples(self):
        p = self.path("samples.csv")
        if not p.exists():
            raise MissingArtifact(f"missing prerequisite artifact samples.csv in {self.out}")
        man = self.read_json("collect_manifest.json")
        with open(p) as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        a = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
        n, m = man["n"], man["m"]
        return Samples(X=a[:, 1:1 + n], U=a[:, 1 + n:1 + n + m], Xdot=a[:, 1 + n + m:1 + 2 * n + m],
                       t=a[:, 0])

    def model(self):
        d = self.read_json("model.json")
        return BilinearModel.from_dict(d["model"]), d

    def bounds(self):
        d = self.read_json("bounds.json")
        return ErrorBound.from_dict(d["controller_bound"]), d

    def baseline(self, dic):
        b = self.read_json("model.json")["baseline"]
        pol = LinearGainPolicy(b["K"], dic)
        pol.P = np.asarray(b["P"])
        return pol


# ------------------------------------------------------------- stages ---

def stage_collect(run):
    cfg, c = run.cfg, run.cfg["collection"]
    plant = run.plant()
    d = cfg["dictionary"]
    dic = make_dictionary(plant.n, d["max_degree"], d["domain"], d["grid_density"])
    rng = cfgmod.rng(cfg, "collection")
    T, seg = int(c["T"]), int(c["samples_per_segment"])
    S = -(-T // seg)
    n_near = int(round(c.get("near_origin_fraction", 0.0) * S))
    r_near = c.get("near_origin_radius", 0.0)
    box = np.asarray(c["init_box"], float)
    init = []
    for s in range(S):
        if s < n_near:
            while True:
                x = rng.uniform(-r_near, r_near, plant.n)
                if np.linalg.norm(x) <= r_near:
                    break
        else:
            x = rng.uniform(box[:, 0], box[:, 1])
        init.append(x)
    ex = c["excitation"]
    excite = MultisineExcitation(S, ex["amplitudes"], ex["freqs"], ex["offset"], rng, plant.m)
    noise = sinusoidal_noise(c["noise"]["amplitude"], c["noise"]["freq"], plant.n)
    smp = collect_data(plant, excite, noise, dic, T, c["sample_dt"], init, seg, c.get("substeps", 2))
    n, m = plant.n, plant.m
    cols = ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(m)] + \
        [f"xdot_{i + 1}" for i in range(n)]
    np.savetxt(run.path("samples.csv"), np.column_stack([smp.t, smp.X, smp.U, smp.Xdot]),
               delimiter=",", header=f"# config_hash={run.hash}\n" + ",".join(cols), comments="",
               fmt="%.17g")
    run.write_json("collect_manifest.json", {
        "T": len(smp), "n": n, "m": m, "N": dic.N, "sample_dt": c["sample_dt"], "segments": S,
        "near_origin_segments": n_near, "replaced_segments": smp.replaced,
        "samples_file": "samples.csv", "dictionary": dic.to_dict()})
    return {"T": len(smp)}


def stage_fit(run):
    man = run.read_json("collect_manifest.json")
    dic = Dictionary.from_dict(man["dictionary"])
    smp = run.samples()
    rank_tol = run.cfg["identification"]["rank_tol"]
    batch = build_data_matrices(smp, dic, rank_tol=rank_tol)
    model, resid = edmd_fit(batch, rank_tol=rank_tol, dict_ref=_dict_ref(dic), n=dic.n)
    W = run.weights(dic)
    base = lqr_lti_baseline(batch, W, dic)
    s = batch.singular_values()
    run.write_json("model.json", {
        "model": model.to_dict(), "dictionary": dic.to_dict(),
        "W0_singular_values": s, "W0_condition": s[0] / s[-1],
        "residual_fro": float(np.linalg.norm(resid)),
        "baseline": {"A": base.A, "B0": base.B, "K": base.K, "P": base.P,
                     "method": "LTI least squares + Newton-Kleinman CARE"}})
    return {"cond": s[0] / s[-1]}


def _dict_ref(dic):
    return hashlib.sha256(json.dumps(dic.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def stage_bound(run):
    model, md = run.model()
    dic = Dictionary.from_dict(md["dictionary"])
    smp = run.samples()
    batch = build_data_matrices(smp, dic, rank_tol=run.cfg["identification"]["rank_tol"])
    W = run.weights(dic)
    eb = estimate_error_bounds(batch, model, dic, W, run.cfg["identification"]["lp_weights"])
    slack = bound_slack(batch, model, eb)
    ne = run.cfg["noise_envelope"]
    if ne["rule"] != "lifted_jacobian":
        raise ValueError(f"unknown noise envelope rule {ne['rule']!r}")
    Delta = lifted_noise_delta(dic, batch.T, ne["amplitude"])
    zmax = max_lift_norm(dic, dic.domain, run.cfg["dictionary"]["grid_density"])
    env = noise_coefficient(batch, Delta, zmax)
    folded = fold_noise_into_bound(eb, env)
    run.write_json("bounds.json", {
        "controller_bound": eb.to_dict(), "lp_min_slack": float(slack.min()),
        "lp_weights": run.cfg["identification"]["lp_weights"],
        "noise": {"c_d": env.c_d, "zmax": zmax, "rule": ne["rule"],
                  "Delta_scale": float(Delta[0, 0]), "amplitude": ne["amplitude"]},
        "folded_bound": folded.to_dict(),
        "note": "controller design and deviation bounds use controller_bound; "
                "folded_bound adds the noise coefficient and is reported only"})
    return {"c1": eb.c1, "c2": eb.c2}


def _solver_inputs(run):
    model, md = run.model()
    dic = Dictionary.from_dict(md["dictionary"])
    W = run.weights(dic)
    scfg = run.solver_config()
    pts = sample_collocation(scfg.Nc, scfg.domain, scfg.rho, cfgmod.rng(run.cfg, "collocation"), dic)
    probe = probe_points(scfg.n_probe, scfg.domain, scfg.rho,
                         int(run.cfg["seed"]) * 100 + cfgmod.STREAMS["probe"], dic)
    basis = prune_basis(quadratic_candidates(dic.N), pts, run.cfg["solver"].get("prune_tol", 1e-8))
    base = run.baseline(dic)
    vf0 = initial_guess(basis, base.P, pts)
    vf0.domain = np.asarray(scfg.domain)
    return model, dic, W, scfg, pts, probe, base, vf0


def _vf_doc(run, vf, clog, extra):
    d = {"basis": vf.basis, "theta": vf.theta, "M": vf.M, "domain": vf.domain,
         "model_ref": run.digest("model.json"), "converged": clog.converged,
         "iterations": clog.iterations,
         "convergence": [{"iter": k, "dtheta_rel": a, "dpolicy": b} for k, a, b in clog.rows()],
         "residual_rms": clog.residual_rms, "contraction": clog.contraction()}
    d.update(extra)
    return d


def stage_solve(run, nominal_only=False):
    model, dic, W, scfg, pts, probe, base, vf0 = _solver_inputs(run)
    eps0 = run.cfg["solver"].get("nominal_epsilon", 0.0)
    t0 = time.perf_counter()
    vfn, _, logn = solve_nominal(model, W, scfg, base, vf0, pts, probe, dic, eps=eps0)
    run.write_json("valuefn_nominal.json", _vf_doc(run, vfn, logn, {
        "epsilon": eps0, "c1": 0.0, "c2": 0.0}))
    # wall-clock times go to the log only, so artifacts stay reproducible
    out = {"nominal_iterations": logn.iterations, "nominal_seconds": round(time.perf_counter() - t0, 1)}
    if nominal_only:
        return out
    eb, _ = run.bounds()
    t0 = time.perf_counter()
    vfr, _, logr = run_policy_iteration(model, W, eb, scfg, base, vf0, pts, probe, dic)
    run.write_json("valuefn_robust.json", _vf_doc(run, vfr, logr, {
        "epsilon": scfg.epsilon, "c1": eb.c1, "c2": eb.c2, "rho_prime": scfg.rho_prime}))
    logr.to_csv(run.path("convergence.csv"), header=f"# config_hash={run.hash}")
    out.update(robust_iterations=logr.iterations, robust_converged=logr.converged,
               robust_seconds=round(time.perf_counter() - t0, 1))
    sweep = int(run.cfg["solver"].get("eps_sweep", 0))
    if sweep:
        res = viscosity_sweep(model, W, eb, scfg, base, vf0, sweep, points=pts, probe=probe,
                              dictionary=dic)
        with open(run.path("viscosity_sweep.csv"), "w", newline="") as fh:
            fh.write(f"# config_hash={run.hash}\n")
            w = csv.writer(fh)
            w.writerow(["epsilon", "iterations", "theta_norm", "theta_change_vs_first"])
            for e, vf, lg in res:
                w.writerow([repr(e), lg.iterations, repr(float(np.linalg.norm(vf.theta))),
                            repr(float(np.linalg.norm(vf.theta - res[0][1].theta)))])
    return out


def shipped_policies(run, dic, model, W):
    """Nominal and robust feedback, switched to the LTI-LQR gain near z = 0."""
    scfg = run.solver_config()
    base = run.baseline(dic)
    vfn = GalerkinValueFn.from_dict(run.read_json("valuefn_nominal.json"))
    vfr = GalerkinValueFn.from_dict(run.read_json("valuefn_robust.json"))
    eb, _ = run.bounds()
    radius = run.cfg["solver"].get("switch_radius", scfg.rho)
    u0 = SwitchedPolicy(NominalFeedback(vfn, model, W, dic), base, radius)
    uro = SwitchedPolicy(RobustFeedback(vfr, model, W, eb, scfg.rho_prime, dic), base, radius)
    return vfn, vfr, u0, uro, base, eb, radius


def stage_evaluate(run):
    model, md = run.model()
    dic = Dictionary.from_dict(md["dictionary"])
    W = run.weights(dic)
    plant = run.plant()
    vfn, vfr, u0, uro, base, eb, radius = shipped_policies(run, dic, model, W)
    sim = run.sim_settings()
    ev = run.cfg["evaluation"]
    X0 = np.asarray(ev["initial_states"], float)
    if plant.optimal_policy is None:
        raise ValueError("cost table needs a plant with a registered optimal policy")
    actual = AnalyticPolicy(plant.optimal_policy, plant.m, dic)
    t0 = time.perf_counter()
    report, runs = cost_table(plant, {"actual": actual, "robust": uro, "baseline": base}, X0, W, sim)
    t_cost = time.perf_counter() - t0
    t0 = time.perf_counter()
    trade = tradeoff_report(model, W, eb, u0, uro, vfr, X0, sim, dic,
                            manifold=ev.get("tradeoff_trajectory", "manifold") == "manifold")
    t_trade = time.perf_counter() - t0
    t0 = time.perf_counter()
    dev = deviation_report(plant, model, W, eb, dic, vfn, vfr, u0, uro, X0, sim,
                           actual_trajs=runs["actual"])
    t_dev = time.perf_counter() - t0
    if ev.get("save_trajectories"):
        tdir = run.path("trajectories")
        tdir.mkdir(exist_ok=True)
        k = int(ev.get("trajectory_decimate", 10))
        for name, trs in runs.items():
            for i, tr in enumerate(trs):
                _decimated(tr, k).to_csv(tdir / f"{name}_{i}.csv")
    run.write_json("evaluation.json", {
        "cost_table": report.to_dict(), "tradeoff": trade, "deviation": dev,
        "switch_radius": radius, "bound_used": eb.to_dict(),
        "sim": {"horizon": sim.horizon, "step": sim.step, "cap": sim.cap}})
    return {"rel_extra_robust": report.averages["rel_extra_robust"],
            "rel_extra_baseline": report.averages["rel_extra_baseline"],
            "seconds": {"cost_table": round(t_cost, 1), "tradeoff": round(t_trade, 1),
                        "deviation": round(t_dev, 1)}}


def _decimated(tr, k):
    from .simulate import Trajectory
    sl = slice(None, None, k)
    return Trajectory(tr.times[sl], tr.states[sl], None, tr.inputs[sl], tr.injected_error[sl],
                      tr.running_cost[sl], tr.divergent, tr.message)


def stage_report(run):
    ev = run.read_json("evaluation.json")
    from .analysis import CostReport
    ct = ev["cost_table"]
    rep = CostReport(rows=ct["rows"], averages=ct["averages"], complete=ct["complete"])
    run.write_json("cost_table.json", rep.to_dict())
    with open(run.path("cost_table.txt"), "w") as fh:
        fh.write(f"config {run.hash}\n")
        fh.write(rep.to_text())
    with open(run.path("tradeoff.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x0", "nominal_loss", "worstcase_gain_bound", "cost_gap", "config_hash"])
        for r in ev["tradeoff"]:
            w.writerow([" ".join(repr(v) for v in r["x0"]), repr(r["nominal_loss"]),
                        repr(r["worstcase_gain_bound"]), repr(r["cost_gap"]), run.hash])
    run.write_json("deviation_report.json", {
        "rows": ev["deviation"], "bound_used": ev["bound_used"],
        "notes": {"worst_case_gradient": "grad V0 of the converged nominal Galerkin solution",
                  "V0": "Galerkin nominal value function (numerical surrogate)",
                  "tradeoff_trajectory": ev["tradeoff"][0]["trajectory"] if ev["tradeoff"] else None}})
    return {}


RUNNERS = {"collect": stage_collect, "fit": stage_fit, "bound": stage_bound, "solve": stage_solve,
           "evaluate": stage_evaluate, "report": stage_report}


def run_stage(run, name, **kw):
    marker = run.path("FAILED")
    try:
        t0 = time.perf_counter()
        info = RUNNERS[name](run, **kw) if name == "solve" else RUNNERS[name](run)
        log.info("stage %s done in %.1f s: %s", name, time.perf_counter() - t0, info)
        return info
    except Exception as exc:
        with open(marker, "w") as fh:
            fh.write(f"stage: {name}\nconfig_hash: {run.hash}\nerror: {exc!r}\n")
            fh.write(traceback.format_exc())
        raise StageError(name, str(exc)) from exc


def run_pipeline(cfg, out, stages=None, threads=1, nominal_only=False):
    """Run the requested stages (default: all) in order."""
    run = Run(cfg, out, threads)
    marker = run.path("FAILED")
    if marker.exists():
        os.remove(marker)
    todo = stages or STAGES
    results = {}
    for name in STAGES:
        if name not in todo:
            continue
        kw = {"nominal_only": nominal_only} if name == "solve" else {}
        results[name] = run_stage(run, name, **kw)
        if name == "solve" and nominal_only and stages is None:
            break
    return run, results
