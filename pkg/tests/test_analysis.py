import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kooprobust.analysis import (CostReport, SimSettings, control_deviation_integral, cost_table,
                                 controller_deviation_bound, grad_norm_integral,
                                 robust_controller_deviation_bound, trapezoid, value_deviation_bound)
from kooprobust.hjsolve import AnalyticPolicy, GalerkinValueFn, quadratic_candidates
from kooprobust.identify import ErrorBound
from kooprobust.plants import CostWeights, benchmark_plant
from kooprobust.simulate import Trajectory

W2 = CostWeights(np.eye(2), np.eye(1), np.eye(2))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=40), st.integers(0, 2 ** 31))
def test_trapezoid_matches_numpy(y, seed):
    t = np.cumsum(np.random.default_rng(seed).uniform(0.01, 1, len(y)))
    ref = getattr(np, "trapezoid", None) or np.trapz     # renamed in numpy 2
    assert trapezoid(y, t) == pytest.approx(ref(y, t), rel=1e-12, abs=1e-12)


def test_trapezoid_short():
    assert trapezoid([3.0], [0.0]) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 10), st.floats(0, 10))
def test_value_bound_is_root_of_its_quadratic(c1, c2, V0, I):
    eb = ErrorBound(c1, c2, L_p=2.0)
    dv = value_deviation_bound(V0, I, eb)
    C = eb.C12
    # dV solves dV = C sqrt(I (V0 + dV)), the positive root of x^2 - C^2 I x - C^2 I V0
    assert dv == pytest.approx(C * np.sqrt(I * (V0 + dv)), rel=1e-9, abs=1e-12)
    assert dv >= 0 and isinstance(dv, float)
    assert value_deviation_bound(V0 + 1, I, eb) >= dv
    assert value_deviation_bound(V0, I + 1, eb) >= dv


def test_bounds_vanish_without_error():
    eb = ErrorBound(0.0, 0.0)
    assert value_deviation_bound(2.0, 3.0, eb) == 0.0
    assert controller_deviation_bound(0.0, 2.0, 3.0, eb) == 0.0
    assert robust_controller_deviation_bound(1.0, 5.0, eb) == 0.0
    with pytest.raises(ValueError):
        value_deviation_bound(-1.0, 1.0, eb)


def test_robust_controller_bound_formula():
    eb = ErrorBound(0.1, 0.3, L_p=2.0, lam_min_Qbar=4.0, lam_min_R=1.0)
    assert robust_controller_deviation_bound(2.0, 8.0, eb) == pytest.approx(
        max(4 * 0.1 * 2 / 2, 4 * 0.3) * 4.0)


def _traj(t, Z, U=None):
    U = np.zeros((len(t), 1)) if U is None else U
    return Trajectory(t, Z[:, :2], Z, U, np.zeros_like(Z), np.zeros(len(t)))


def test_integrals_on_known_curves():
    t = np.linspace(0, 1, 2001)
    Z = np.column_stack([np.exp(-t), np.zeros_like(t)])
    vf = GalerkinValueFn(quadratic_candidates(2), [0.5, 0.0, 0.5])   # V = |z|^2/2, grad = z
    assert grad_norm_integral(_traj(t, Z), vf) == pytest.approx(0.5 * (1 - np.exp(-2)), rel=1e-6)
    ua, ub = np.ones((len(t), 1)), np.column_stack([t])
    assert control_deviation_integral(_traj(t, Z), ua, ub, 2 * np.eye(1)) == pytest.approx(2 / 3, rel=1e-6)
    tr = _traj(t, Z)
    tr.divergent, tr.message = True, "boom"
    with pytest.raises(ValueError, match="boom"):
        grad_norm_integral(tr, vf)


def test_cost_table_structure():
    plant = benchmark_plant()
    opt = AnalyticPolicy(plant.optimal_policy, 1)
    half = AnalyticPolicy(lambda X: 0.5 * plant.optimal_policy(X), 1)
    boom = AnalyticPolicy(lambda X: 50.0 * (X[:, :1] * X[:, 1:]), 1)
    sim = SimSettings(horizon=5.0, step=1e-2, cap=100.0)
    rep, runs = cost_table(plant, {"actual": opt, "robust": half, "baseline": boom},
                           [[0.0, 0.0], [1.2, 0.9]], W2, sim)
    r0, r1 = rep.rows
    assert r0["cost_actual"] == 0.0 and r0["rel_extra_robust"] is None
    assert r1["cost_robust"] > r1["cost_actual"] > 0
    assert r1["cost_baseline"] is None and "exceeded" in r1["note_baseline"]
    assert not rep.complete and rep.averages["n_used"] == {"robust": 1, "baseline": 0}
    txt = rep.to_text()
    assert "diverged" in txt and "Average" in txt and "exclude" in txt


def test_cost_table_threads_do_not_change_results():
    plant = benchmark_plant()
    pols = {k: AnalyticPolicy(lambda X, a=a: a * plant.optimal_policy(X), 1)
            for k, a in (("actual", 1.0), ("robust", 0.9), ("baseline", 0.5))}
    X0 = [[-1.5, -1.2], [0.2, -1.4]]
    a, _ = cost_table(plant, pols, X0, W2, SimSettings(2.0, 1e-2, 1e3, 1))
    b, _ = cost_table(plant, pols, X0, W2, SimSettings(2.0, 1e-2, 1e3, 3))
    assert a.to_dict() == b.to_dict()
