"""Arbitrary-precision dynamics of the logistic family and its physical measures."""

__version__ = "0.1.0"

from .dynamics import (PrecisionConfig, cycle_multiplier, f_derivative, f_eval, iterate,
                       parameter_sensitivity, to_decimal, to_real, working_precision)
from .errors import (Ambiguous, BudgetExhausted, ChaostatError, DomainError, Inconclusive,
                     InvalidSwitch, NotFound, OutOfRange)
from .measures import (AtomicMeasure, PointSet, birkhoff_measure, hat_upper_sequence,
                       monte_carlo_measure, neighborhood_weight, orbit_uniform_measure, w1_distance)
from .params import (ParabolicParameter, basin_convergence_check, detect_sink, find_parabolic,
                     find_superattracting, multiplier_curve, stability_radius, verify_admissible)
from .steering import (BackwardLadder, StageRecord, SteerConfig, TargetWeights, VerificationReport,
                       backward_ladder, steer_stage, tune_landing, verify_stage)
from .symbolic import (BranchSystem, Escaped, branch_system, find_c, itinerary, locate_periodic_orbit,
                       min_gap, necklace_enumerate, per_set, primitive_classes)

__all__ = [n for n in dir() if not n.startswith("_")]
