"""Stochastic trust-region optimization toolkit.

Second-order finite-sum minimization with variance-reduced gradient and
Hessian estimators, exact and Krylov trust-region subproblem solvers, and a
benchmark harness that certifies approximate second-order stationarity while
accounting stochastic oracle queries.
"""

__version__ = "0.1.0"

from .datasets import Dataset, generate_synthetic, load_libsvm, parse_libsvm, to_libsvm
from .driver import (
    RunConfig,
    RunResult,
    SosReport,
    run,
    run_inexact_tr,
    run_inexact_tr_expectation,
    verify_sosp,
)
from .problems import (
    FiniteSumProblem,
    LipschitzBounds,
    OracleCounters,
    batch_gradient,
    batch_hessian,
    batch_hvp,
    from_dataset,
    full_value,
    lipschitz_bounds,
    quadratic_problem,
    regularizer_derivatives,
)
from .trs import TrsSolution, kkt_residual, solve_trs_exact, solve_trs_lanczos, sym_eig

__all__ = [
    "Dataset",
    "FiniteSumProblem",
    "LipschitzBounds",
    "OracleCounters",
    "RunConfig",
    "RunResult",
    "SosReport",
    "TrsSolution",
    "batch_gradient",
    "batch_hessian",
    "batch_hvp",
    "from_dataset",
    "full_value",
    "generate_synthetic",
    "kkt_residual",
    "lipschitz_bounds",
    "load_libsvm",
    "parse_libsvm",
    "quadratic_problem",
    "regularizer_derivatives",
    "run",
    "run_inexact_tr",
    "run_inexact_tr_expectation",
    "solve_trs_exact",
    "solve_trs_lanczos",
    "sym_eig",
    "to_libsvm",
    "verify_sosp",
]
