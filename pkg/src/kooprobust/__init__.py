"""Robust optimal control on identified lifted bilinear (Koopman) models."""
from .kernels import BACKEND
from .lifting import Dictionary, estimate_lipschitz, lift, lift_jacobian, make_dictionary
from .plants import CostWeights, Plant, benchmark_plant, get_plant
from .identify import (BilinearModel, DataBatch, ErrorBound, NoiseEnvelope, build_data_matrices,
                       consistency_membership, edmd_fit, estimate_error_bounds,
                       fold_noise_into_bound, noise_coefficient)
from .simulate import (Trajectory, collect_data, integrate, integrate_batch, integrate_lifted,
                       integrate_lifted_batch, worst_case_error)

__version__ = "0.1.0"
