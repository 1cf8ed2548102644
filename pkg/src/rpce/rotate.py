"""Surrogate models and the rotation machinery.

A surrogate is a Hermite expansion evaluated in rotated (and optionally
reduced) input variables.  The alternating direction loop interleaves
sparse coefficient recovery with rotations drawn from the eigenvectors of
the gradient matrix G = E[grad u x grad u], assembled analytically from
the expansion coefficients through the derivative-coupling kernels.

Rotation fits can be initialized from the identity (plain alternating
directions), from a sliced-inverse-regression direction matrix, or from a
caller-supplied orthogonal matrix.  Dimension-reduced fits project the
inputs first and run the same loop on the reduced variables.
"""

import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import sir as sir_mod
from .errors import (
    CapacityError,
    CrossValidationError,
    InvalidArgumentError,
    NumericalFailureError,
    RankDeficiencyWarning,
    RpceError,
)
from .hermite import (
    FULL,
    GradientKernels,
    MultiIndexBasis,
    basis_size,
    enumerate_basis,
    measurement_matrix,
)
from .numerics import RngStream, sym_eigen
from .sparse_recovery import (
    BpdnProblem,
    SolverOptions,
    cross_validate_epsilon,
    solve_bpdn,
    solve_reweighted,
)

_KERNEL_CACHE: dict[tuple, GradientKernels] = {}


def get_kernels(basis: MultiIndexBasis) -> GradientKernels:
    """Derivative-coupling kernels for a basis, cached per (d, P, mode)."""
    key = (basis.dim, basis.order, basis.mode)
    kern = _KERNEL_CACHE.get(key)
    if kern is None:
        kern = GradientKernels(basis)
        _KERNEL_CACHE[key] = kern
    return kern


@dataclass(frozen=True)
class IterationRecord:
    """One rotation (or warm-start) step: chosen epsilon, the entrywise-l1
    distance of the rotation factor from d, and the achieved residual."""

    epsilon: float
    l1_distance: float | None
    residual: float
    solver_converged: bool


@dataclass
class SurrogateModel:
    """Hermite expansion in rotated (optionally reduced) variables.

    Evaluation applies the reduction map (if any), then the accumulated
    rotation, then the basis:  u(xi) ~ sum_n c_n psi_n(A (Ahat xi)).
    ``converged`` reports whether the fit's own stopping rule triggered
    (the rotation-distance threshold for alternating-direction fits, the
    solver acceptance window for plain fits).
    """

    basis: MultiIndexBasis
    coeffs: np.ndarray
    rotation: np.ndarray
    reduction: np.ndarray | None = None
    history: list = field(default_factory=list)
    converged: bool = True
    reduction_method: str | None = None

    @property
    def input_dim(self) -> int:
        return self.reduction.shape[1] if self.reduction is not None else self.basis.dim


@dataclass
class AdmOptions:
    """Options shared by all fitting entry points.

    ``epsilon_grid`` holds cross-validation candidates relative to the
    output norm ||u||_2 (defaults to six log-spaced values on [1e-4, 1]);
    per-rotation grids span [eps/5, eps] around the base epsilon with
    ``eps_grid_per_iter`` points.  ``theta`` defaults to 0.25 d for d <= 30
    and 0.65 d above.  ``reweighted`` switches every recovery solve to the
    re-weighted variant.
    """

    rng: RngStream
    theta: float | None = None
    max_rotations: int = 9
    eps_grid_per_iter: int = 3
    reweighted: bool = False
    reweight_iters: int = 2
    epsilon_grid: np.ndarray | None = None
    split_fraction: float = 0.8
    cv_repeats: int = 1
    sir_slices: int | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    pilot_cap: int = 3000
    degeneracy_permutations: int = 63
    degeneracy_alpha: float = 0.05

    def __post_init__(self):
        if self.theta is not None and self.theta <= 0:
            raise InvalidArgumentError("theta must be positive")
        if self.max_rotations < 1:
            raise InvalidArgumentError("max_rotations must be at least 1")


def default_theta(d: int) -> float:
    """Rotation-stopping threshold: midpoints of the prescribed ranges."""
    return 0.25 * d if d <= 30 else 0.65 * d


def gradient_matrix(coeffs: np.ndarray, kernels: GradientKernels) -> np.ndarray:
    """Assemble G with G_ij = c^T K_ij c; symmetric positive semidefinite."""
    coeffs = np.asarray(coeffs, dtype=np.float64).ravel()
    if coeffs.shape[0] != kernels.basis.size:
        raise InvalidArgumentError("coefficient length does not match the kernel basis")
    d = kernels.basis.dim
    G = np.empty((d, d))
    for i in range(d):
        G[i, i] = kernels[(i, i)].quad(coeffs)
        for j in range(i + 1, d):
            g = kernels[(i, j)].quad(coeffs)
            G[i, j] = g
            G[j, i] = g
    return G


def evaluate(model: SurrogateModel, points: np.ndarray) -> np.ndarray:
    """Evaluate the surrogate at rows of ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != model.input_dim:
        raise InvalidArgumentError(
            f"points have {points.shape[1]} columns, model expects {model.input_dim}")
    x = points if model.reduction is None else points @ model.reduction.T
    y = x @ model.rotation.T
    return measurement_matrix(model.basis, y) @ model.coeffs


def moments(model: SurrogateModel) -> tuple[float, float]:
    """Closed-form mean and variance.

    Orthonormality makes the constant coefficient the mean and the sum of
    squared non-constant coefficients the variance; both are invariant
    under the rotation and reduction maps, which preserve N(0, I).
    """
    mean = float(model.coeffs[0])
    var = float(np.dot(model.coeffs[1:], model.coeffs[1:]))
    return mean, var


def _epsilon_candidates(u: np.ndarray, opts: AdmOptions) -> np.ndarray:
    norm_u = float(np.linalg.norm(u))
    if opts.epsilon_grid is not None:
        return np.asarray(opts.epsilon_grid, dtype=np.float64) * norm_u
    return np.geomspace(1e-4, 1.0, 6) * norm_u


def _select_epsilon(psi, u, candidates, opts: AdmOptions) -> float:
    """Cross-validate epsilon; on total infeasibility re-bracket upward once."""
    cv_opts = opts.solver.for_cv()
    try:
        return cross_validate_epsilon(psi, u, candidates, opts.split_fraction,
                                      opts.rng, cv_opts, opts.cv_repeats)
    except CrossValidationError:
        return cross_validate_epsilon(psi, u, np.asarray(candidates) * 100.0,
                                      opts.split_fraction, opts.rng, cv_opts,
                                      opts.cv_repeats)


def _solve(psi, u, epsilon, opts: AdmOptions):
    if opts.reweighted:
        return solve_reweighted(psi, u, epsilon, iters=opts.reweight_iters,
                                opts=opts.solver)
    return solve_bpdn(BpdnProblem(psi, u, epsilon), opts.solver)


def fit_l1(samples: np.ndarray, outputs: np.ndarray, basis: MultiIndexBasis,
           opts: AdmOptions) -> SurrogateModel:
    """Plain (or re-weighted) sparse fit in the original variables."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    outputs = np.asarray(outputs, dtype=np.float64).ravel()
    psi = measurement_matrix(basis, samples)
    eps = _select_epsilon(psi, outputs, _epsilon_candidates(outputs, opts), opts)
    res = _solve(psi, outputs, eps, opts)
    record = IterationRecord(epsilon=eps, l1_distance=None,
                             residual=res.residual_norm,
                             solver_converged=res.converged)
    return SurrogateModel(basis=basis, coeffs=res.coeffs,
                          rotation=np.eye(basis.dim), history=[record],
                          converged=res.converged)


def fit_adm(samples: np.ndarray, outputs: np.ndarray, basis: MultiIndexBasis,
            opts: AdmOptions, init="identity") -> SurrogateModel:
    """Alternating-direction fit: rotate, recover, re-estimate the rotation.

    ``init`` selects the first rotation factor: ``"identity"`` warm-starts
    with an unrotated recovery and derives the factor from its gradient
    matrix; ``"sir"`` uses the sliced-inverse-regression direction matrix
    (skipping the warm start); an orthogonal matrix is used verbatim.
    Rotation factors count against ``max_rotations``.  If the distance
    criterion never triggers, the best-residual iterate is returned with
    ``converged=False``.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    outputs = np.asarray(outputs, dtype=np.float64).ravel()
    d = basis.dim
    if samples.shape[1] != d:
        raise InvalidArgumentError("sample dimension does not match basis")
    theta = default_theta(d) if opts.theta is None else opts.theta
    kernels = get_kernels(basis)
    candidates = _epsilon_candidates(outputs, opts)

    U_init = None
    if isinstance(init, str):
        if init == "sir":
            sres = sir_mod.sir_fit(samples, outputs, opts.sir_slices)
            U_init = sres.directions.T
        elif init != "identity":
            raise InvalidArgumentError(f"unknown init {init!r}")
    else:
        U_init = np.asarray(init, dtype=np.float64)
        if U_init.shape != (d, d) or np.max(np.abs(U_init @ U_init.T - np.eye(d))) > 1e-8:
            raise InvalidArgumentError("init matrix must be orthogonal d x d")

    history = []
    snapshots = []  # (coeffs, accumulated product, residual)
    coeffs = None
    eps_base = None

    if U_init is None:
        # warm start: recover in the original variables first
        psi0 = measurement_matrix(basis, samples)
        eps_base = _select_epsilon(psi0, outputs, candidates, opts)
        res0 = _solve(psi0, outputs, eps_base, opts)
        coeffs = res0.coeffs
        history.append(IterationRecord(epsilon=eps_base, l1_distance=None,
                                       residual=res0.residual_norm,
                                       solver_converged=res0.converged))
        snapshots.append((coeffs, np.eye(d), res0.residual_norm))

    eta = samples
    prod = np.eye(d)
    stopped = False
    failures = 0
    for l in range(1, opts.max_rotations + 1):
        if l == 1 and U_init is not None:
            U = U_init
        else:
            G = gradient_matrix(coeffs, kernels)
            U = sym_eigen(G).eigenvectors
        eta = eta @ U
        prod = prod @ U
        psi_l = measurement_matrix(basis, eta)
        try:
            if eps_base is None:
                eps_base = _select_epsilon(psi_l, outputs, candidates, opts)
            # the grid is anchored to the previous iteration's choice, so the
            # constraint can tighten as the rotation sharpens the expansion
            grid = np.geomspace(eps_base / 5.0, eps_base, opts.eps_grid_per_iter)
            eps_l = _select_epsilon(psi_l, outputs, grid, opts)
            eps_base = eps_l
            res = _solve(psi_l, outputs, eps_l, opts)
        except RpceError:
            failures += 1
            break
        coeffs = res.coeffs
        dist = abs(float(np.abs(U).sum()) - d)
        history.append(IterationRecord(epsilon=eps_l, l1_distance=dist,
                                       residual=res.residual_norm,
                                       solver_converged=res.converged))
        snapshots.append((coeffs, prod.copy(), res.residual_norm))
        if dist < theta:
            stopped = True
            break

    if not snapshots:
        raise NumericalFailureError("every rotation iteration failed to solve")
    if stopped:
        coeffs_out, prod_out, _ = snapshots[-1]
    else:
        # best-residual iterate; ties go to the latest
        residuals = np.array([s[2] for s in snapshots])
        best = len(residuals) - 1 - int(np.argmin(residuals[::-1]))
        coeffs_out, prod_out, _ = snapshots[best]
    return SurrogateModel(basis=basis, coeffs=coeffs_out, rotation=prod_out.T,
                          history=history, converged=stopped)


def reduce_via_gradient(model: SurrogateModel, d_tilde: int) -> np.ndarray:
    """Reduction map from the model's gradient matrix.

    Rows are the top eigenvector directions of G computed in the model's
    current variables, mapped back through the model's rotation (and any
    existing reduction) so the result acts on the original inputs.  Warns
    instead of failing when G has numerical rank below ``d_tilde``.
    """
    if not 1 <= d_tilde <= model.basis.dim:
        raise InvalidArgumentError(f"need 1 <= d_tilde <= {model.basis.dim}")
    G = gradient_matrix(model.coeffs, get_kernels(model.basis))
    eig = sym_eigen(G)
    lam = eig.eigenvalues
    if lam[d_tilde - 1] <= 1e-12 * max(lam[0], 1e-300):
        warnings.warn("gradient matrix rank is below the requested reduction",
                      RankDeficiencyWarning)
    rows = eig.eigenvectors.T[:d_tilde]
    out = rows @ model.rotation
    if model.reduction is not None:
        out = out @ model.reduction
    return out


def _sir_spectrum_is_noise(samples, outputs, sir_result, opts: AdmOptions) -> bool:
    """Permutation test: is the leading eigenvalue consistent with no signal?

    Re-fitting on output-shuffled copies breaks the input-output link; if
    the observed leading eigenvalue does not beat the (1 - alpha) tail of
    the shuffled ones, the directions carry no usable information.
    """
    lam_obs = sir_result.eigenvalues[0]
    K = opts.degeneracy_permutations
    exceed = 0
    for _ in range(K):
        perm = opts.rng.permutation(outputs.shape[0])
        null = sir_mod.sir_fit(samples, outputs[perm], opts.sir_slices)
        if null.eigenvalues[0] >= lam_obs:
            exceed += 1
    p_value = (1 + exceed) / (K + 1)
    return p_value > opts.degeneracy_alpha


def fit_sadmdr(samples: np.ndarray, outputs: np.ndarray, d_tilde: int,
               P_reduced: int, opts: AdmOptions, reduction_method: str = "auto",
               reduced_mode: str = FULL,
               pilot_basis: MultiIndexBasis | None = None) -> SurrogateModel:
    """Dimension-reduced fit: project the inputs, then run the rotation loop.

    The reduction map comes from sliced inverse regression.  SIR is blind
    to purely even input-output relationships (the sliced means vanish by
    symmetry), so in ``"auto"`` mode a degenerate spectrum falls back to
    the gradient-matrix reduction computed from a pilot fit in the full
    variables, provided the full-dimensional pilot basis stays under
    ``opts.pilot_cap``.  ``"sir"`` and ``"gradient"`` force either route.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    outputs = np.asarray(outputs, dtype=np.float64).ravel()
    d = samples.shape[1]
    if not 1 <= d_tilde < d:
        raise InvalidArgumentError(f"need 1 <= d_tilde < d={d}, got {d_tilde}")
    if reduction_method not in ("auto", "sir", "gradient"):
        raise InvalidArgumentError(f"unknown reduction method {reduction_method!r}")

    def _pilot() -> MultiIndexBasis:
        if pilot_basis is not None:
            return pilot_basis
        return enumerate_basis(d, P_reduced, FULL, cap=opts.pilot_cap)

    method = reduction_method
    sir_result = None
    if method != "gradient":
        sir_result = sir_mod.sir_fit(samples, outputs, opts.sir_slices)
    if method == "auto":
        method = "sir"
        pilot_feasible = (pilot_basis is not None
                          or basis_size(d, P_reduced, FULL) <= opts.pilot_cap)
        if pilot_feasible and _sir_spectrum_is_noise(samples, outputs, sir_result, opts):
            method = "gradient"

    if method == "sir":
        A_hat = sir_mod.reduce(sir_result, d_tilde)
    else:
        pilot_model = fit_l1(samples, outputs, _pilot(), opts)
        A_hat = reduce_via_gradient(pilot_model, d_tilde)

    reduced = samples @ A_hat.T
    rbasis = enumerate_basis(d_tilde, P_reduced, reduced_mode)
    inner = fit_adm(reduced, outputs, rbasis, opts, init="identity")
    inner.reduction = A_hat
    inner.reduction_method = method
    return inner


# --- serialization ----------------------------------------------------------

_FORMAT = "rpce-model"
_VERSION = 1


def _hex_vec(a) -> list:
    return [float(x).hex() for x in np.ravel(a)]


def _hex_mat(a) -> list:
    return [[float(x).hex() for x in row] for row in np.asarray(a)]


def save_model(model: SurrogateModel, path) -> None:
    """Write a model as versioned JSON with hex-encoded doubles (lossless)."""
    doc = {
        "format": _FORMAT,
        "version": _VERSION,
        "dim": model.basis.dim,
        "order": model.basis.order,
        "mode": model.basis.mode,
        "input_dim": model.input_dim,
        "coeffs": _hex_vec(model.coeffs),
        "rotation": _hex_mat(model.rotation),
        "reduction": None if model.reduction is None else _hex_mat(model.reduction),
        "converged": bool(model.converged),
        "reduction_method": model.reduction_method,
        "history": [
            {
                "epsilon": float(r.epsilon).hex(),
                "l1_distance": None if r.l1_distance is None else float(r.l1_distance).hex(),
                "residual": float(r.residual).hex(),
                "solver_converged": bool(r.solver_converged),
            }
            for r in model.history
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> SurrogateModel:
    """Read a model written by :func:`save_model`."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != _FORMAT:
        raise InvalidArgumentError(f"{path} is not a model file")
    if doc.get("version") != _VERSION:
        raise InvalidArgumentError(f"unsupported model version {doc.get('version')}")
    basis = enumerate_basis(doc["dim"], doc["order"], doc["mode"])
    coeffs = np.array([float.fromhex(x) for x in doc["coeffs"]])
    rotation = np.array([[float.fromhex(x) for x in row] for row in doc["rotation"]])
    reduction = doc["reduction"]
    if reduction is not None:
        reduction = np.array([[float.fromhex(x) for x in row] for row in reduction])
    history = [
        IterationRecord(
            epsilon=float.fromhex(r["epsilon"]),
            l1_distance=None if r["l1_distance"] is None else float.fromhex(r["l1_distance"]),
            residual=float.fromhex(r["residual"]),
            solver_converged=bool(r["solver_converged"]),
        )
        for r in doc["history"]
    ]
    return SurrogateModel(basis=basis, coeffs=coeffs, rotation=rotation,
                          reduction=reduction, history=history,
                          converged=bool(doc["converged"]),
                          reduction_method=doc.get("reduction_method"))
