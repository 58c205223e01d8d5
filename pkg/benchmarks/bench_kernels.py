"""Compiled vs pure-Python kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Times each hot kernel on both backends at the sizes the pipeline uses,
then one closed-loop simulation of the robust controller with each backend.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from kooprobust import kernels
from kooprobust.hjsolve import quadratic_candidates
from kooprobust.lifting import make_dictionary


def kernel_cases():
    rng = np.random.default_rng(0)
    dic = make_dictionary(2, 3)
    X = rng.uniform(-1.5, 1.5, (5000, 2))
    Z = dic.lift(X)
    basis = quadratic_candidates(9)[:25]
    theta = rng.normal(size=len(basis))
    b = rng.normal(size=(5000, 1))
    kap = np.abs(rng.normal(size=5000)) * 0.5
    lam, V = np.linalg.eigh(np.eye(1))
    return {
        "monomials (lift, P=5000)": ("monomials", (X, dic.exponents, dic.scale)),
        "monomials_jacobian (lift, P=5000)": ("monomials_jacobian", (X, dic.exponents, dic.scale)),
        "poly_gradient (value fn, P=5000, M=25)": ("poly_gradient", (Z, basis, theta)),
        "monomials_laplacian (value fn, P=5000)": ("monomials_laplacian", (Z, basis, np.ones(len(basis)))),
        "robust_solve (P=5000, m=1)": ("robust_solve", (b, kap, lam, V, 1e-3)),
    }


SIM = """
import time, numpy as np
from kooprobust.hjsolve import RobustFeedback, GalerkinValueFn, quadratic_candidates
from kooprobust.identify import BilinearModel, ErrorBound
from kooprobust.lifting import make_dictionary
from kooprobust.plants import CostWeights, benchmark_plant
from kooprobust.simulate import integrate_batch
rng = np.random.default_rng(0)
dic = make_dictionary(2, 3)
W = CostWeights.from_state_weights(np.eye(2), np.eye(1), dic.C)
model = BilinearModel(-np.eye(9), rng.normal(size=(9, 1)) * 0.1, [rng.normal(size=(9, 9)) * 0.1])
basis = quadratic_candidates(9)
vf = GalerkinValueFn(basis, np.where(basis[:, 0] + basis[:, 1] == 2, 0.5, 0.0))
pol = RobustFeedback(vf, model, W, ErrorBound(0.2, 0.05), dictionary=dic)
t0 = time.perf_counter()
integrate_batch(benchmark_plant(), pol, [[-1.5, -1.2]], 5.0, 1e-3, W)
print(time.perf_counter() - t0)
"""


def closed_loop(pure):
    env = dict(os.environ)
    if pure:
        env["KOOPROBUST_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", SIM], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args()
    if kernels._compiled is None:
        print("compiled extension not available; only the python backend can be timed")
    res = {}
    print(f"{'kernel':<42}{'compiled ms':>13}{'python ms':>12}{'speedup':>9}")
    for name, (fn, a) in kernel_cases().items():
        f = getattr(kernels, fn)
        row = {}
        for be in ("compiled", "python"):
            if be == "compiled" and kernels._compiled is None:
                continue
            row[be] = 1e3 * min(timeit.repeat(lambda: f(*a, backend=be), number=1, repeat=args.repeat))
        res[name] = row
        c = row.get("compiled", float("nan"))
        print(f"{name:<42}{c:13.2f}{row['python']:12.2f}{row['python'] / c:9.1f}")
    sims = {"compiled": closed_loop(False), "python": closed_loop(True)}
    res["closed loop robust controller, 5 s at h=1e-3"] = sims
    print(f"{'closed loop, 5 s at h=1e-3 (s)':<42}{sims['compiled']:13.2f}{sims['python']:12.2f}"
          f"{sims['python'] / sims['compiled']:9.1f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(res, fh, indent=1)


if __name__ == "__main__":
    main()
