"""Lattice-based solver for deterministic mean field games.

A problem is posed through `ProblemSpec` (split control-affine dynamics,
running/terminal costs, initial density) and a `Discretization`; the solver
grows the reachable level sets, runs entropy-regularized backward sweeps
against a marginal flow, and closes the loop with an averaged fixed-point
iteration over a tolerance schedule.  See the module docstrings for the
individual pieces; the `mfglat` console script drives the same machinery
from JSON configs.
"""

from .analysis import (RNG_ALGORITHM, SampledPath, path_bounds_check,
                       sample_states, sample_trajectories, wasserstein1_1d)
from .errors import (ConfigurationError, CoverageError, NumericError,
                     StructuralError, UsageError)
from .examples import (GaussianKernel, build_problem, convolve_with_measure,
                       custom1d, example1, example2, gaussian_coupling)
from .fixedpoint import (FPReport, StageResult, exploitability,
                         fictitious_play, l1_flow_distance,
                         tolerance_schedule_run)
from .hjb import (SaturationReport, StepCache, ValuePolicy, backward_sweep,
                  gibbs_step, node_measure, saturation_report,
                  semidiscrete_value, semidiscrete_values)
from .lattice import (LatticeDynamics, LatticePoint, LevelSets, NodeTable,
                      StepGeometry, build_level_sets, build_s0, interpolate,
                      q1_weights)
from .problem import (CostSpec, DiscreteMeasure, Discretization,
                      InitialMeasure, ProblemSpec, SplitDynamics,
                      ValidationReport, forecast_working_boxes,
                      m0_mass_estimate, monotonicity_check, validate)
from .transport import (Flow, TransitionKernel, best_response,
                        constant_initial_flow, discretize_initial,
                        forward_push, uniform_flow)

__version__ = "0.1.0"

__all__ = [
    "RNG_ALGORITHM", "SampledPath", "path_bounds_check", "sample_states",
    "sample_trajectories", "wasserstein1_1d",
    "ConfigurationError", "CoverageError", "NumericError", "StructuralError",
    "UsageError",
    "GaussianKernel", "build_problem", "convolve_with_measure", "custom1d",
    "example1", "example2", "gaussian_coupling",
    "FPReport", "StageResult", "exploitability", "fictitious_play",
    "l1_flow_distance", "tolerance_schedule_run",
    "SaturationReport", "StepCache", "ValuePolicy", "backward_sweep",
    "gibbs_step",
    "node_measure", "saturation_report", "semidiscrete_value",
    "semidiscrete_values",
    "LatticeDynamics", "LatticePoint", "LevelSets", "NodeTable",
    "StepGeometry", "build_level_sets", "build_s0", "interpolate",
    "q1_weights",
    "CostSpec", "DiscreteMeasure", "Discretization", "InitialMeasure",
    "ProblemSpec", "SplitDynamics", "ValidationReport",
    "forecast_working_boxes", "m0_mass_estimate", "monotonicity_check",
    "validate",
    "Flow", "TransitionKernel", "best_response", "constant_initial_flow",
    "discretize_initial", "forward_push", "uniform_flow",
    "__version__",
]
