from .galerkin import (GalerkinValueFn, prune_basis, probe_points, quadratic_candidates,
                       sample_collocation)
from .policies import (AnalyticPolicy, ImprovedPolicy, LinearGainPolicy, NominalFeedback, Policy,
                       RobustFeedback, SwitchedPolicy, ZeroPolicy, delta_term, hamiltonian,
                       implicit_robust_control, improve_values, robust_control_batch)
from .riccati import care_newton_kleinman, pole_shift_gain
from .solver import (Collocation, ConvergenceLog, SolverConfig, SolverError, initial_guess,
                     lqr_lti_baseline, policy_evaluation, policy_improvement, run_policy_iteration,
                     solve_nominal, viscosity_sweep)
