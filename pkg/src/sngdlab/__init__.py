"""Subsampled natural-gradient and randomized block Kaczmarz solver lab.

Solvers for consistent linear least-squares and strongly consistent linear
least-quadratics, with an exact/Monte-Carlo spectral engine for the projector
statistics that govern their convergence rates.
"""

__version__ = "0.1.0"

from .kernels import (BudgetExceeded, ExpectationMode, SampleSet, SamplerSpec,
                      SingularBlock, exact_mode, expect_matrix, mc_mode,
                      projector, reg_pinv_apply, sample, sketch_projector_mc)
from .problems import (GeneratorSpec, LLQProblem, LLSProblem,
                       gen_conditioned_llq, gen_diag_sketch, gen_gaussian_lls,
                       generate, load_problem, save_problem)
from .solvers import (SolverConfig, SolverState, Trace, WeightedSGDSpec,
                      build_context, run, verify_equivalences)
from .spectral import (IllConditionedPbar, MSpectrum, SpectralReport,
                       compute_report, find_lambda0, m_spectrum,
                       one_step_operator, rate_predictors)
from .experiments import (AllDiverged, ExperimentResult, ExperimentSpec,
                          make_grid, run_experiment, tune)

__all__ = [
    "BudgetExceeded", "ExpectationMode", "SampleSet", "SamplerSpec",
    "SingularBlock", "exact_mode", "expect_matrix", "mc_mode", "projector",
    "reg_pinv_apply", "sample", "sketch_projector_mc",
    "GeneratorSpec", "LLQProblem", "LLSProblem", "gen_conditioned_llq",
    "gen_diag_sketch", "gen_gaussian_lls", "generate", "load_problem",
    "save_problem",
    "SolverConfig", "SolverState", "Trace", "WeightedSGDSpec", "build_context",
    "run", "verify_equivalences",
    "IllConditionedPbar", "MSpectrum", "SpectralReport", "compute_report",
    "find_lambda0", "m_spectrum", "one_step_operator", "rate_predictors",
    "AllDiverged", "ExperimentResult", "ExperimentSpec", "make_grid",
    "run_experiment", "tune",
    "__version__",
]
