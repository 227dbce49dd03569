"""Landscape lab for empirical risk minimization under expansive ReLU generative priors."""
from ._version import __version__
from .conditions import (ConditionReport, angle_contraction_check, composed_pattern_bound,
                         count_activation_patterns, count_composed_patterns, empirical_q, q_matrix,
                         rric_deviation, spectral_norm, wdc_deviation, wendel_count)
from .estimators import LatentRecovery, ReLUGenerator
from .exceptions import (AllProbesDegenerate, BudgetExceeded, DimensionError, DomainError, EmptyProbeSet,
                         GenPriorError, InvalidSpec, IoFailure, NondifferentiablePoint, ZeroVector)
from .harness import ExperimentSpec, load_spec, parse_spec, phase_table, run
from .landscape import (BasinPrediction, angle, g, h_field, h_tilde, in_S_eps, predicted_basins, rho,
                        s_eps_dichotomy, theta_bar, theta_check)
from .measure import (Instance, MeasurementEnsemble, directional_derivative, load_instance, make_instance,
                      observe, risk, sample_ensemble, save_instance, subgradient)
from .netgen import (ActivationPattern, GeneratorNetwork, NetworkShape, end_to_end_linearization, forward,
                     load_network, sample_gaussian_network, save_network)
from .solver import Backtracking, DescentConfig, Trajectory, descend, negation_restart, verify_descent

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
