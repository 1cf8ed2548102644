"""Sparse Hermite polynomial-chaos surrogates from limited samples, with
compressive sensing enhanced by iterative rotation and sliced inverse
regression."""

__version__ = "0.1.0"

from .errors import (
    BracketError,
    CapacityError,
    ConfigError,
    CrossValidationError,
    DegenerateOutputError,
    InfeasibleEpsilonError,
    InvalidArgumentError,
    NumericalFailureError,
    PartialResultsError,
    RpceError,
)
from .hermite import (
    FULL,
    NO_INTERACTION,
    MultiIndexBasis,
    basis_size,
    enumerate_basis,
    eval_univariate,
    grad_kernel,
    measurement_matrix,
)
from .numerics import (
    RngStream,
    SymEigen,
    find_roots_increasing,
    sample_std_normal,
    solve_sym_sparse,
    sym_eigen,
)
from .rotate import (
    AdmOptions,
    SurrogateModel,
    evaluate,
    fit_adm,
    fit_l1,
    fit_sadmdr,
    gradient_matrix,
    load_model,
    moments,
    reduce_via_gradient,
    save_model,
)
from .sir import SirResult, sir_fit, suggest_dtilde
from .sparse_recovery import (
    BpdnProblem,
    RecoveryResult,
    SolverOptions,
    cross_validate_epsilon,
    solve_bpdn,
    solve_reweighted,
)
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    moment_errors,
    relative_l2,
    run_experiment,
    write_csv,
    write_curves_tsv,
    write_summary,
)
from .problems import ProblemSpec, build_problem, kl_1d
