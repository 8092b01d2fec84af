"""Fluctuations and first-exit laws of multiscale diffusions.

The package averages periodic coefficients over the fast variable,
integrates the effective flow, simulates the full multiscale SDE and
compares Monte Carlo ensembles with the limiting Gaussian laws.
"""

from .errors import (BlowUpError, BudgetError, ConfigurationError, DomainError,
                     ExtrapolationError, InvalidFieldError, MsexitError, NoExitError,
                     PreconditionError, SampleSizeError, SingularIntegrandError, SolverError,
                     TangencyError, UnsolvableError, UnsupportedRegimeError)
from .fields import Polynomial, SeparableField, TrigPolynomial
from .torus import (PeriodicField, TorusGrid, antiderivative_on_period, cell_average,
                    cumulative_integral, integrate, periodic_derivative,
                    periodic_second_derivative, spectral_antiderivative, spectral_derivative)
from .homogenize import (CellAverages, EffectiveTrajectory, HomogenizedModel,
                         PeriodicCoefficientSet, RegimeClassification, averaged_coefficients,
                         check_centering, classify_regime, effective_flow,
                         hitting_time_deterministic, homogenize, invariant_measure,
                         langevin_coefficients, solve_auxiliary_pde, solve_cell_problem)
from .sde import (DriftTable, EnsembleResult, ExitProblemSpec, ExitRecord, InitialPerturbation,
                  PathRecord, SimulationSpec, detect_exit, extract_fluctuation,
                  simulate_ensemble, simulate_path)
from .limits import (ExitLawPrediction, LimitCoefficients, LimitProcessSpec,
                     exit_law_projection, h_term, limit_fluctuation_moments, simulate_limit_ou)
from .rough import (RoughPotentialSpec, conditional_exit_clt_check, conditional_exit_stats,
                    conditioned_drift, gibbs_constants, j_bar_nested, scale_speed_functions,
                    simulate_conditioned_ensemble, simulate_conditioned_path)
from .config import ExperimentConfig
from .harness import (Accumulator, EnsembleReport, ks_statistic, merge_reports, run_ensemble,
                      summarize_exit)

__version__ = "0.1.0"
