"""Infection with recovery among continuous-time random walkers on Z^d."""
from .cell_events import (BoundInputs, CellCheckContext, DistinguishedPath, bound_acceptable, bound_E_tilde_complement,
                          bound_good, check_hypotheses, estimate_nu_E, good_point_probability, holds_E, holds_E_tilde,
                          is_acceptable, is_good_cell, is_good_point, omega_lower_bound, sample_distinguished_path,
                          transit_counts)
from .coupling import CoupledPair, CouplingViolation, advance_pair, coupled_density_run, coupled_recovery_run
from .dynamics import (InvariantViolation, ParticleTrace, RecoveryMarks, SimState, TraceSet, Trajectory, TrialOutcome,
                       TrialParams, apply_recovery, evolve, move_particle, record_trace, run_trial,
                       sample_recovery_marks, step_events)
from .errors import (ComparisonError, EstimationError, KernelError, ParameterError, PreconditionError,
                     RangeError)
from .harness import (ExperimentSpec, estimate_local_survival, estimate_survival, sweep, verify_thinning,
                      __version__)
from .model import (Configuration, LatticeDomain, ParticleId, dominance_check, sample_initial_configuration)
from .rng import Purpose, RngStream, make_stream
from .stats import Estimate, wilson_interval
from .surface import (CellEventField, Infeasible, LipschitzSurface, brute_force_minimal_surface,
                      extract_minimal_surface, extract_two_sided, is_lipschitz, surrounds_origin,
                      zero_height_percolation)
from .tessellation import BaseHeightIndex, Box, CellIndex, TessellationParams, base_height, cell_of, region
