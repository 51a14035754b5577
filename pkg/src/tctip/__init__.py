"""Numerical laboratory for tipping in a low-dimensional tropical-cyclone
model: bifurcation structure, rate-induced tipping with critical-rate
bisection, reflected stochastic dynamics, and Freidlin-Wentzell most
probable paths with tipping-time scaling laws."""

from .params import DimensionalParams, ModelParams, nondimensionalize, time_scale
from .model import (FixedPointSet, Path, asymptotic_fixed_points,
                    center_manifold, cubic_p, fixed_points, integrate_ode,
                    jacobian, origin_center_dynamics, saddle_node_locus,
                    vector_field)
from .manifolds import (ManifoldBranch, basin_grid, classify_basin,
                        polyline_distance, saddle_manifold, separatrix_polyline,
                        separatrix_side)
from .ramp import (InvariantBox, RampSpec, check_invariant_box, critical_rate,
                   frozen_fixed_points, nonautonomous_field,
                   nonincreasing_no_tip_probe, ramp_coefficients,
                   ramp_value, ramped_params, simulate_ramp)
from .sde import (CombinedResult, EnsembleStats, NoiseSpec, Realization,
                  combined_rate_noise, detect_tips, euler_maruyama, reflect,
                  reflected_field, run_ensemble)
from .action import (AssembledMpp, TransitionPath, WeightMatrix, action_value,
                     euler_lagrange_residual, expected_tip_time_bound,
                     hamiltonian_center_manifold, hamiltonian_field,
                     hamiltonian_jacobian, hamiltonian_value, initial_path,
                     integrate_hamiltonian, local_mpp, mam_gradient_flow,
                     mpp_assemble, scaling_law_action, transformed_action)

__version__ = "0.1.0"
