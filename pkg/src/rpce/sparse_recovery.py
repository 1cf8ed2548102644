"""Basis pursuit denoising, re-weighted l1 iterations, and epsilon selection
by cross-validation.

The constrained problem min ||W c||_1 s.t. ||Psi c - u||_2 <= eps is solved
by root finding on the residual of the penalized LASSO path: an accelerated
proximal-gradient (FISTA) inner solver handles
min 0.5 ||B z - u||^2 + lam ||z||_1 for a given penalty, and an outer
secant iteration with a bisection safeguard adjusts the penalty until the
residual matches the target.  Weighted norms are handled by column scaling
(z = W c with columns of Psi divided by the weights), which leaves the
residual unchanged.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    CrossValidationError,
    InfeasibleEpsilonError,
    InvalidArgumentError,
)
from .numerics import RngStream


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances for the BPDN solver.

    ``rel_gap`` is the relative optimality tolerance of the inner penalized
    solves; the outer iteration accepts a residual inside
    ``[eps*(1 - residual_window), eps*(1 + feas_slack)]``.  With ``eps = 0``
    the target becomes ``bp_atol * ||u||`` in absolute terms.
    """

    rel_gap: float = 1e-6
    max_inner: int = 8000
    max_outer: int = 40
    residual_window: float = 1e-5
    feas_slack: float = 5e-7
    bp_atol: float = 1e-10
    check_every: int = 10

    def for_cv(self) -> "SolverOptions":
        """Lighter-effort profile for cross-validation candidate solves.

        Candidate solves only feed the validation-residual ranking, so a
        capped budget with a loose acceptance window is enough.
        """
        return replace(self, max_inner=min(600, self.max_inner),
                       max_outer=min(12, self.max_outer),
                       rel_gap=max(self.rel_gap, 1e-4),
                       residual_window=max(self.residual_window, 1e-2),
                       check_every=20)

    @classmethod
    def experiment_profile(cls) -> "SolverOptions":
        """Budgeted profile for experiment fits, where model errors sit far
        above solver precision."""
        return cls(rel_gap=1e-5, max_inner=3000, max_outer=25,
                   residual_window=1e-2)


@dataclass
class BpdnProblem:
    """One basis-pursuit-denoising instance.

    ``weights`` of all ones recovers the unweighted problem.
    """

    psi: np.ndarray
    u: np.ndarray
    epsilon: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64).ravel()
        if self.psi.ndim != 2 or self.psi.shape[0] != self.u.shape[0]:
            raise InvalidArgumentError("Psi rows must match the length of u")
        if self.epsilon < 0:
            raise InvalidArgumentError("epsilon must be non-negative")
        if self.weights is None:
            self.weights = np.ones(self.psi.shape[1])
        else:
            self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
            if self.weights.shape[0] != self.psi.shape[1]:
                raise InvalidArgumentError("weights length must match Psi columns")
            if np.any(self.weights <= 0):
                raise InvalidArgumentError("weights must be strictly positive")


@dataclass(frozen=True)
class RecoveryResult:
    """Solution of one (weighted) BPDN solve.

    ``residual_norm`` is recomputed from the returned coefficients;
    ``converged`` means the residual landed inside the acceptance window of
    the target epsilon with the inner optimality tolerance met.
    """

    coeffs: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool


def _soft(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _spectral_norm_sq(B: np.ndarray) -> float:
    # deterministic power iteration on B^T B
    n = B.shape[1]
    v = np.ones(n) / np.sqrt(n)
    s = 0.0
    for _ in range(100):
        w = B.T @ (B @ v)
        s_new = np.linalg.norm(w)
        if s_new == 0.0:
            return 0.0
        v = w / s_new
        if abs(s_new - s) <= 1e-10 * s_new:
            s = s_new
            break
        s = s_new
    return s


def _fista(B, u, lam, z0, L, max_inner, check_every, tol):
    """Accelerated proximal gradient for 0.5||Bz-u||^2 + lam||z||_1.

    Gradient-scheme adaptive restart keeps the momentum stable; optimality
    is measured by the worst violation of the subgradient conditions.
    Returns the iterate, the iteration count, and whether the tolerance
    was met.
    """
    z = z0.copy()
    y = z.copy()
    t = 1.0
    step = 1.0 / L
    it = 0
    ok = False
    while it < max_inner:
        it += 1
        g = B.T @ (B @ y - u)
        z_new = _soft(y - step * g, lam * step)
        if np.dot(y - z_new, z_new - z) > 0.0:
            # restart momentum
            t = 1.0
            y = z_new.copy()
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = z_new + ((t - 1.0) / t_new) * (z_new - z)
            t = t_new
        z = z_new
        if it % check_every == 0 or it == max_inner:
            gz = B.T @ (B @ z - u)
            on = z != 0.0
            viol = 0.0
            if np.any(on):
                viol = np.max(np.abs(gz[on] + lam * np.sign(z[on])))
            off = ~on
            if np.any(off):
                viol = max(viol, max(np.max(np.abs(gz[off])) - lam, 0.0))
            if viol <= tol:
                ok = True
                break
    return z, it, ok


def _min_residual(B: np.ndarray, u: np.ndarray) -> float:
    c, *_ = np.linalg.lstsq(B, u, rcond=None)
    return float(np.linalg.norm(B @ c - u))


def solve_bpdn(prob: BpdnProblem, opts: SolverOptions | None = None) -> RecoveryResult:
    """Solve min ||W c||_1 subject to ||Psi c - u||_2 <= epsilon.

    Raises ``InfeasibleEpsilonError`` when epsilon lies below the attainable
    least-squares residual.  If the outer iteration cap is reached first,
    the best iterate found is returned flagged ``converged=False``.
    """
    opts = opts or SolverOptions()
    psi, u, eps, w = prob.psi, prob.u, float(prob.epsilon), prob.weights
    N = psi.shape[1]
    norm_u = float(np.linalg.norm(u))

    def _result(coeffs, iterations, converged):
        resid = float(np.linalg.norm(psi @ coeffs - u))
        return RecoveryResult(coeffs=coeffs, residual_norm=resid,
                              iterations=iterations, converged=converged)

    if norm_u == 0.0 or eps >= norm_u:
        # zero is feasible and has minimal weighted l1 norm
        return _result(np.zeros(N), 0, True)

    unweighted = np.all(w == 1.0)
    B = psi if unweighted else psi / w[np.newaxis, :]

    if eps > 0.0:
        accept_hi = eps * (1.0 + opts.feas_slack)
        accept_lo = eps * (1.0 - opts.residual_window)
        target = eps
    else:
        accept_hi = opts.bp_atol * norm_u
        accept_lo = 0.0
        target = accept_hi / 2.0

    L = _spectral_norm_sq(B)
    lam_max = float(np.max(np.abs(B.T @ u)))
    if lam_max == 0.0 or L == 0.0:
        raise InfeasibleEpsilonError(
            "u is orthogonal to the span of Psi; the constraint cannot be met")
    L *= 1.0 + 1e-3
    tol_floor = lam_max * 1e-13
    loose_gap = min(opts.rel_gap * 100.0, 1e-3)

    z = np.zeros(N)
    # moderate start, then continuation downwards with warm starts; jumping
    # straight to the tiny penalty a small epsilon needs makes the inner
    # solver grind from a cold start
    lam = lam_max * max(target / norm_u, 0.05)
    hi = (lam_max, norm_u)   # residual above target
    lo = None                # residual below target
    best_feas = None         # feasible iterate with largest residual
    best_any = None          # iterate with smallest residual
    total_inner = 0
    converged = False
    checked_feasibility = False

    for _ in range(opts.max_outer):
        lam = min(max(lam, lam_max * 1e-18), lam_max)
        # loose tolerance while hunting for a bracket, tight once refining
        tight = lo is not None
        gap = opts.rel_gap if tight else loose_gap
        cap = opts.max_inner if tight else max(opts.max_inner // 4, 200)
        z, it, ok = _fista(B, u, lam, z, L, cap, opts.check_every,
                           max(lam * gap, tol_floor))
        r = float(np.linalg.norm(B @ z - u))
        if not tight and accept_lo <= r <= accept_hi:
            # candidate acceptance must be certified at the tight tolerance
            z, it2, ok = _fista(B, u, lam, z, L, opts.max_inner, opts.check_every,
                                max(lam * opts.rel_gap, tol_floor))
            it += it2
            r = float(np.linalg.norm(B @ z - u))
        total_inner += it
        if best_any is None or r < best_any[1]:
            best_any = (z.copy(), r)
        if r <= accept_hi and (best_feas is None or r > best_feas[1]):
            best_feas = (z.copy(), r)
        if accept_lo <= r <= accept_hi and ok:
            converged = True
            break
        if r > target:
            if lam < hi[0]:
                hi = (lam, r)
        else:
            if lo is None or lam > lo[0]:
                lo = (lam, r)
        if lo is None:
            # still above target everywhere: continuation downwards
            lam = lam / 10.0
            if lam < lam_max * 1e-14 and not checked_feasibility:
                checked_feasibility = True
                r_min = _min_residual(B, u)
                if accept_hi < r_min * (1.0 - 1e-8):
                    raise InfeasibleEpsilonError(
                        f"epsilon={eps:.3e} below least-squares residual {r_min:.3e}")
        else:
            # secant step on the bracket, safeguarded by geometric bisection
            (lam_lo, r_lo), (lam_hi, r_hi) = lo, hi
            denom = r_hi - r_lo
            lam_sec = lam_lo + (target - r_lo) * (lam_hi - lam_lo) / denom if denom > 0 else 0.0
            if not (lam_lo * 1.000001 < lam_sec < lam_hi * 0.999999):
                lam_sec = np.sqrt(lam_lo * lam_hi)
            lam = lam_sec

    if converged:
        zz = z
    elif best_feas is not None:
        zz = best_feas[0]
    else:
        zz = best_any[0]
    coeffs = zz if unweighted else zz / w
    return _result(coeffs, total_inner, converged)


def reweight_weights(coeffs: np.ndarray, delta: float) -> np.ndarray:
    """Weights 1 / (|c_i| + delta) for the next re-weighted pass."""
    if delta <= 0:
        raise InvalidArgumentError("delta must be positive")
    return 1.0 / (np.abs(coeffs) + delta)


def solve_reweighted(psi, u, epsilon: float, iters: int = 2,
                     delta: float | None = None,
                     opts: SolverOptions | None = None) -> RecoveryResult:
    """Re-weighted l1 minimization: an unweighted warm start followed by
    ``iters`` weighted solves with weights 1/(|c| + delta).

    ``delta`` defaults to 1e-4 times the largest warm-start coefficient
    magnitude (floored at 1e-12) so the weights stay finite.
    """
    if iters < 1:
        raise InvalidArgumentError("iters must be at least 1")
    res = solve_bpdn(BpdnProblem(psi, u, epsilon), opts)
    total = res.iterations
    if delta is None:
        delta = max(1e-4 * float(np.max(np.abs(res.coeffs), initial=0.0)), 1e-12)
    for _ in range(iters):
        w = reweight_weights(res.coeffs, delta)
        res = solve_bpdn(BpdnProblem(psi, u, epsilon, weights=w), opts)
        total += res.iterations
    return RecoveryResult(coeffs=res.coeffs, residual_norm=res.residual_norm,
                          iterations=total, converged=res.converged)


def default_epsilon_grid(u: np.ndarray, count: int = 6,
                         lo: float = 1e-4, hi: float = 1.0) -> np.ndarray:
    """Log-spaced epsilon candidates spanning [lo, hi] times ||u||_2."""
    return np.geomspace(lo, hi, count) * float(np.linalg.norm(u))


def cross_validate_epsilon(psi, u, candidates, split_fraction: float,
                           rng: RngStream, opts: SolverOptions | None = None,
                           repeats: int = 1) -> float:
    """Pick epsilon by reconstruction/validation splitting.

    The rows are split once (or ``repeats`` times, averaging the validation
    residuals); each candidate eps_r is solved on the reconstruction rows
    and scored by the validation residual.  The winner is rescaled by
    sqrt(M / M_r) to account for the row count of the full system.
    """
    psi = np.asarray(psi, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64).ravel()
    candidates = np.asarray(list(candidates), dtype=np.float64)
    if candidates.size == 0:
        raise InvalidArgumentError("need at least one epsilon candidate")
    if not 0.0 < split_fraction < 1.0:
        raise InvalidArgumentError("split_fraction must lie in (0, 1)")
    M = u.shape[0]
    M_r = min(max(int(round(split_fraction * M)), 1), M - 1)

    scores = np.zeros(candidates.size)
    valid = np.ones(candidates.size, dtype=bool)
    for _ in range(max(repeats, 1)):
        perm = rng.permutation(M)
        rec, val = perm[:M_r], perm[M_r:]
        psi_r, u_r = psi[rec], u[rec]
        psi_v, u_v = psi[val], u[val]
        for k, eps_r in enumerate(candidates):
            if not valid[k]:
                continue
            try:
                res = solve_bpdn(BpdnProblem(psi_r, u_r, eps_r), opts)
            except InfeasibleEpsilonError:
                valid[k] = False
                continue
            scores[k] += float(np.linalg.norm(psi_v @ res.coeffs - u_v))
    if not np.any(valid):
        raise CrossValidationError("every epsilon candidate was infeasible")
    scores[~valid] = np.inf
    best = int(np.argmin(scores))
    return float(np.sqrt(M / M_r) * candidates[best])
