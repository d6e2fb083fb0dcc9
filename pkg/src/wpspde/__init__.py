"""Exponential Wagner-Platen integrators for semilinear parabolic SPDEs with
multiplicative trace-class noise, with Euler and Milstein baselines and a
strong-convergence study harness."""

__version__ = '0.1.0'

from .errors import (CommutativityError, ConfigurationError,
                     ConstraintViolation, DomainError, NumericalOverflowError,
                     StudyError)
from .spectral import (GridProfile, OperatorSpec, SpectralVector,
                       dirichlet_laplacian, fractional_apply, semigroup_apply,
                       to_grid, to_spectrum)
from .stochastics import (IncrementPair, NoiseSpec, PathSeed, aggregate_pairs,
                          coarsen, iterated_integrals_oracle, sample_pair)
from .coefficients import (CATALOG, AffineDiffusion, Coefficients,
                           LinearMultiplicative, NemytskiiDrift, Regularity,
                           ScalarCoefficients, ScalarGBM, ZeroCoefficients,
                           check_commutativity_first,
                           check_commutativity_second, trace_F2)
from .schemes import (SCHEMES, StepContext, SuppliedIntegrals, evolve,
                      exp_euler_step, exp_milstein_step, wagner_platen_step,
                      wagner_platen_step_integral_form)
from .experiments import (ConvergenceReport, MomentTable, StudyPlan,
                          build_problem, fit_order, moment_probe,
                          reference_solution, run_study, strong_error,
                          write_report)
