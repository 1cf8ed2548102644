"""Experiment orchestration: method matrices over sample sizes and
replicates, error metrics against reference statistics, and report files.

Every replicate draws its own training set from a stream keyed by
(seed, replicate); all methods within one (replicate, M) cell consume the
identical training set and, when requested, the identical evaluation
points, so method comparisons are paired.  Reports are deterministic
functions of (config, seed) apart from the wall-time column.
"""

import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    DegenerateOutputError,
    InvalidArgumentError,
    RpceError,
)
from .hermite import FULL, NO_INTERACTION, basis_size, enumerate_basis
from .numerics import RngStream
from .problems import PROBLEM_NAMES, ProblemSpec, build_problem
from .rotate import (
    AdmOptions,
    SurrogateModel,
    evaluate,
    fit_adm,
    fit_l1,
    fit_sadmdr,
    moments,
)
from .sparse_recovery import SolverOptions

METHODS = ("mc", "l1", "reweighted-l1", "adm", "sadm", "sadmdr", "gradient-reduced")
_REDUCTION_METHODS = ("sadmdr", "gradient-reduced")
_METRICS = ("moments", "rel_l2")

# stream ids: replicate r trains from (seed, r); reference draws live far away
_REF_STREAM_BASE = 2**32
_PIN_STREAM = 2**33

CSV_HEADER = "method,M,replicate,err_mean,err_std,rel_l2,N,d_tilde,converged,seconds"


# --- configuration ------------------------------------------------------------

_PROBLEM_KEYS = {"name", "d", "sigma", "l_c", "l_x", "l_y", "nx", "ny",
                 "signal_order", "pin_signal", "field_mean"}
_SOLVER_KEYS = {"rel_gap", "max_inner", "max_outer", "residual_window",
                "feas_slack", "bp_atol", "check_every"}
_REFERENCE_KEYS = {"mc_samples", "mean", "std"}
_CONFIG_KEYS = {"problem", "methods", "M_values", "replicates", "order",
                "basis_mode", "d_tilde", "P_reduced", "theta", "max_rotations",
                "eps_grid_per_iter", "epsilon_grid", "sir_slices",
                "adm_reweighted", "reweight_iters", "split_fraction",
                "cv_repeats", "metrics", "rel_l2_samples", "reference", "seed",
                "output_dir", "solver", "pilot_cap"}


@dataclass
class ExperimentConfig:
    """Full experiment description; one JSON document maps onto this."""

    problem: ProblemSpec
    methods: list
    M_values: list
    replicates: int
    order: int = 3
    basis_mode: str = FULL
    d_tilde: int | None = None
    P_reduced: int | None = None
    theta: float | None = None
    max_rotations: int = 9
    eps_grid_per_iter: int = 3
    epsilon_grid: list | None = None
    sir_slices: int | None = None
    adm_reweighted: bool = False
    reweight_iters: int = 2
    split_fraction: float = 0.8
    cv_repeats: int = 1
    metrics: list = field(default_factory=lambda: ["moments"])
    rel_l2_samples: int = 10000
    reference: dict = field(default_factory=lambda: {"mc_samples": 100000})
    seed: int = 0
    output_dir: str | None = None
    solver: dict | None = None
    pilot_cap: int = 3000

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if not self.M_values or any(int(m) < 1 for m in self.M_values):
            raise ConfigError("M_values must be positive")
        if not self.methods:
            raise ConfigError("at least one method is required")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        for m in self.metrics:
            if m not in _METRICS:
                raise ConfigError(f"unknown metric {m!r}; choose from {_METRICS}")
        if self.basis_mode not in (FULL, NO_INTERACTION):
            raise ConfigError(f"unknown basis mode {self.basis_mode!r}")
        needs_reduction = [m for m in self.methods if m in _REDUCTION_METHODS]
        if needs_reduction:
            if self.d_tilde is None or self.P_reduced is None:
                raise ConfigError(f"{needs_reduction} require d_tilde and P_reduced")
            if not 1 <= self.d_tilde < self.problem.d:
                raise ConfigError("need 1 <= d_tilde < problem dimension")
        if not (isinstance(self.reference, dict)
                and (set(self.reference) == {"mc_samples"}
                     or set(self.reference) == {"mean", "std"})):
            raise ConfigError(
                "reference must be {'mc_samples': n} or {'mean': m, 'std': s}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        unknown = set(doc) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "problem" not in doc:
            raise ConfigError("config needs a 'problem' section")
        pdoc = doc["problem"]
        if not isinstance(pdoc, dict):
            raise ConfigError("'problem' must be an object")
        bad = set(pdoc) - _PROBLEM_KEYS
        if bad:
            raise ConfigError(f"unknown problem keys: {sorted(bad)}")
        if "name" not in pdoc or "d" not in pdoc:
            raise ConfigError("problem needs 'name' and 'd'")
        sdoc = doc.get("solver")
        if sdoc is not None:
            bad = set(sdoc) - _SOLVER_KEYS
            if bad:
                raise ConfigError(f"unknown solver keys: {sorted(bad)}")
        rdoc = doc.get("reference")
        if rdoc is not None and not isinstance(rdoc, dict):
            raise ConfigError("'reference' must be an object")
        if rdoc is not None:
            bad = set(rdoc) - _REFERENCE_KEYS
            if bad:
                raise ConfigError(f"unknown reference keys: {sorted(bad)}")
        try:
            spec = ProblemSpec(**pdoc)
        except (TypeError, InvalidArgumentError) as exc:
            raise ConfigError(f"bad problem section: {exc}") from exc
        kwargs = {k: v for k, v in doc.items() if k != "problem"}
        try:
            return cls(problem=spec, **kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from exc

    def to_dict(self) -> dict:
        pd = {
            "name": self.problem.name, "d": self.problem.d,
            "sigma": self.problem.sigma, "l_c": self.problem.l_c,
            "l_x": self.problem.l_x, "l_y": self.problem.l_y,
            "nx": self.problem.nx, "ny": self.problem.ny,
            "signal_order": self.problem.signal_order,
            "pin_signal": self.problem.pin_signal,
            "field_mean": self.problem.field_mean,
        }
        return {
            "problem": pd,
            "methods": list(self.methods),
            "M_values": [int(m) for m in self.M_values],
            "replicates": self.replicates,
            "order": self.order,
            "basis_mode": self.basis_mode,
            "d_tilde": self.d_tilde,
            "P_reduced": self.P_reduced,
            "theta": self.theta,
            "max_rotations": self.max_rotations,
            "eps_grid_per_iter": self.eps_grid_per_iter,
            "epsilon_grid": None if self.epsilon_grid is None else list(self.epsilon_grid),
            "sir_slices": self.sir_slices,
            "adm_reweighted": self.adm_reweighted,
            "reweight_iters": self.reweight_iters,
            "split_fraction": self.split_fraction,
            "cv_repeats": self.cv_repeats,
            "metrics": list(self.metrics),
            "rel_l2_samples": self.rel_l2_samples,
            "reference": dict(self.reference),
            "seed": self.seed,
            "output_dir": self.output_dir,
            "solver": None if self.solver is None else dict(self.solver),
            "pilot_cap": self.pilot_cap,
        }

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def solver_options(self) -> SolverOptions:
        if self.solver:
            return SolverOptions(**self.solver)
        return SolverOptions.experiment_profile()


# --- metrics ------------------------------------------------------------------

@dataclass(frozen=True)
class RelL2Estimate:
    value: float
    stderr: float


@dataclass(frozen=True)
class MomentErrors:
    mean_error: float
    std_error: float
    mean_error_absolute: bool = False


def _model_fn(model):
    return (lambda pts: evaluate(model, pts)) if isinstance(model, SurrogateModel) else model


def _rel_l2_from_values(err: np.ndarray, tru: np.ndarray) -> RelL2Estimate:
    n = err.shape[0]
    e2 = err * err
    u2 = tru * tru
    A, B = float(e2.mean()), float(u2.mean())
    if not np.isfinite(B) or B <= 0.0:
        raise DegenerateOutputError("reference norm estimate vanished")
    var_a = float(e2.var()) / n
    var_b = float(u2.var()) / n
    cov = float(np.mean((e2 - A) * (u2 - B))) / n
    r = math.sqrt(A / B) if A > 0 else 0.0
    if r > 0:
        var_r = 0.25 * r * r * (var_a / A**2 + var_b / B**2 - 2.0 * cov / (A * B))
    else:
        var_r = var_a / (4.0 * B * max(A, var_a + 1e-300))
    return RelL2Estimate(value=r, stderr=math.sqrt(max(var_r, 0.0)))


def relative_l2(model, truth, n_mc: int, rng: RngStream,
                dim: int | None = None, chunk: int = 65536) -> RelL2Estimate:
    """Monte-Carlo relative L2 error ||u - u_g|| / ||u|| with a standard error.

    ``model`` is a SurrogateModel or callable on point rows; ``truth`` is a
    callable.  ``dim`` is required when the model is a bare callable.
    """
    if n_mc < 1000:
        raise InvalidArgumentError("need at least 1000 Monte-Carlo points")
    if isinstance(model, SurrogateModel):
        d = model.input_dim
    elif dim is None:
        raise InvalidArgumentError("dim is required for a callable model")
    else:
        d = int(dim)
    fn = _model_fn(model)
    errs, trus = [], []
    left = int(n_mc)
    while left > 0:
        m = min(chunk, left)
        pts = rng.standard_normal((m, d))
        tv = np.asarray(truth(pts), dtype=np.float64)
        errs.append(np.asarray(fn(pts), dtype=np.float64) - tv)
        trus.append(tv)
        left -= m
    return _rel_l2_from_values(np.concatenate(errs), np.concatenate(trus))


def moment_errors(model_or_samples, reference: tuple) -> MomentErrors:
    """Relative mean/std errors of a surrogate (closed form) or of raw samples.

    A vanishing reference mean switches the mean error to absolute and
    flags it.
    """
    ref_mean, ref_std = float(reference[0]), float(reference[1])
    if ref_std <= 0:
        raise InvalidArgumentError("reference std must be positive")
    if isinstance(model_or_samples, SurrogateModel):
        est_mean, est_var = moments(model_or_samples)
        est_std = math.sqrt(est_var)
    else:
        arr = np.asarray(model_or_samples, dtype=np.float64).ravel()
        est_mean = float(arr.mean())
        est_std = float(arr.std(ddof=1))
    if abs(ref_mean) < 1e-12 * ref_std:
        return MomentErrors(abs(est_mean - ref_mean), abs(est_std - ref_std) / ref_std,
                            mean_error_absolute=True)
    return MomentErrors(abs(est_mean - ref_mean) / abs(ref_mean),
                        abs(est_std - ref_std) / ref_std)


def reference_moments(problem, n: int, rng: RngStream, chunk: int = 20000) -> tuple:
    """Streaming Monte-Carlo mean and std (ddof=1) of a problem's output."""
    total = 0
    s1 = 0.0
    s2 = 0.0
    left = int(n)
    while left > 0:
        m = min(chunk, left)
        u = np.asarray(problem.evaluate(rng.standard_normal((m, problem.dim))))
        s1 += float(u.sum())
        s2 += float(np.dot(u, u))
        total += m
        left -= m
    mean = s1 / total
    var = max(s2 - total * mean * mean, 0.0) / (total - 1)
    return mean, math.sqrt(var)


def nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    """Nearest-rank quantile of pre-sorted values (no interpolation)."""
    n = len(sorted_values)
    k = max(int(math.ceil(q * n)), 1) - 1
    return float(sorted_values[min(k, n - 1)])


# --- replicate execution ------------------------------------------------------

@dataclass
class ReplicateRow:
    method: str
    M: int
    replicate: int
    err_mean: float | None
    err_std: float | None
    rel_l2: float | None
    N: int | None
    d_tilde: int | None
    converged: bool
    seconds: float
    error: str | None = None  # failure message when the fit raised


def _adm_options(config: ExperimentConfig, rng: RngStream, reweighted: bool) -> AdmOptions:
    return AdmOptions(
        rng=rng,
        theta=config.theta,
        max_rotations=config.max_rotations,
        eps_grid_per_iter=config.eps_grid_per_iter,
        reweighted=reweighted,
        reweight_iters=config.reweight_iters,
        epsilon_grid=None if config.epsilon_grid is None else np.asarray(config.epsilon_grid),
        split_fraction=config.split_fraction,
        cv_repeats=config.cv_repeats,
        sir_slices=config.sir_slices,
        solver=config.solver_options(),
        pilot_cap=config.pilot_cap,
    )


def _full_basis(config: ExperimentConfig):
    return enumerate_basis(config.problem.d, config.order, config.basis_mode)


def _fit_one(method, samples, outputs, config, rng, full_basis_cache):
    def full_basis():
        if full_basis_cache.get("basis") is None:
            full_basis_cache["basis"] = _full_basis(config)
        return full_basis_cache["basis"]

    if method == "l1":
        return fit_l1(samples, outputs, full_basis(),
                      _adm_options(config, rng, reweighted=False))
    if method == "reweighted-l1":
        return fit_l1(samples, outputs, full_basis(),
                      _adm_options(config, rng, reweighted=True))
    if method == "adm":
        return fit_adm(samples, outputs, full_basis(),
                       _adm_options(config, rng, config.adm_reweighted), init="identity")
    if method == "sadm":
        return fit_adm(samples, outputs, full_basis(),
                       _adm_options(config, rng, config.adm_reweighted), init="sir")
    if method == "sadmdr":
        return fit_sadmdr(samples, outputs, config.d_tilde, config.P_reduced,
                          _adm_options(config, rng, config.adm_reweighted))
    if method == "gradient-reduced":
        return fit_sadmdr(samples, outputs, config.d_tilde, config.P_reduced,
                          _adm_options(config, rng, config.adm_reweighted),
                          reduction_method="gradient", pilot_basis=full_basis())
    raise ConfigError(f"unknown method {method!r}")


def _run_replicate(config: ExperimentConfig, r: int, fixed_reference) -> list:
    rng = RngStream(config.seed, r)
    if config.problem.name == "compressible" and not config.problem.pin_signal:
        problem = build_problem(config.problem, rng)
        reference = None
        if "moments" in config.metrics:
            ref_rng = RngStream(config.seed, _REF_STREAM_BASE + r)
            reference = _resolve_reference(config, problem, ref_rng)
    else:
        pin_rng = RngStream(config.seed, _PIN_STREAM)
        problem = build_problem(config.problem, pin_rng)
        reference = fixed_reference

    rows = []
    full_basis_cache = {}
    for M in config.M_values:
        M = int(M)
        samples = rng.standard_normal((M, problem.dim))
        outputs = np.asarray(problem.evaluate(samples), dtype=np.float64)
        eval_pts = None
        eval_truth = None
        if "rel_l2" in config.metrics:
            eval_pts = rng.standard_normal((config.rel_l2_samples, problem.dim))
            eval_truth = np.asarray(problem.evaluate(eval_pts), dtype=np.float64)
        for method in config.methods:
            t0 = time.perf_counter()
            try:
                if method == "mc":
                    err = None
                    if "moments" in config.metrics:
                        err = moment_errors(outputs, reference)
                    rows.append(ReplicateRow(
                        method=method, M=M, replicate=r,
                        err_mean=None if err is None else err.mean_error,
                        err_std=None if err is None else err.std_error,
                        rel_l2=None, N=None, d_tilde=None, converged=True,
                        seconds=time.perf_counter() - t0))
                    continue
                model = _fit_one(method, samples, outputs, config, rng,
                                 full_basis_cache)
                err = None
                if "moments" in config.metrics:
                    err = moment_errors(model, reference)
                rl2 = None
                if "rel_l2" in config.metrics:
                    pred = evaluate(model, eval_pts)
                    rl2 = _rel_l2_from_values(pred - eval_truth, eval_truth).value
                rows.append(ReplicateRow(
                    method=method, M=M, replicate=r,
                    err_mean=None if err is None else err.mean_error,
                    err_std=None if err is None else err.std_error,
                    rel_l2=rl2, N=model.basis.size,
                    d_tilde=None if model.reduction is None else model.reduction.shape[0],
                    converged=bool(model.converged),
                    seconds=time.perf_counter() - t0))
            except RpceError as exc:
                rows.append(ReplicateRow(
                    method=method, M=M, replicate=r, err_mean=None,
                    err_std=None, rel_l2=None, N=None, d_tilde=None,
                    converged=False, seconds=time.perf_counter() - t0,
                    error=f"{type(exc).__name__}: {exc}"))
    return rows


def _resolve_reference(config: ExperimentConfig, problem, rng: RngStream):
    if "moments" not in config.metrics:
        return None
    if "mean" in config.reference:
        return (float(config.reference["mean"]), float(config.reference["std"]))
    return reference_moments(problem, int(config.reference["mc_samples"]), rng)


# --- report -------------------------------------------------------------------

@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list
    summary: dict
    quota_exceeded: bool
    timing_warnings: list
    reference: tuple | None


def _aggregate(values: list) -> dict | None:
    vals = np.sort(np.asarray([v for v in values if v is not None], dtype=np.float64))
    if vals.size == 0:
        return None
    return {
        "mean": float(vals.mean()),
        "median": nearest_rank(vals, 0.5),
        "q25": nearest_rank(vals, 0.25),
        "q75": nearest_rank(vals, 0.75),
    }


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run the full method/size/replicate matrix described by ``config``.

    Deterministic given (config, seed) apart from wall-time fields.
    Replicates run in parallel when the RPCE_THREADS environment variable
    allows more than one worker.
    """
    fixed_reference = None
    if not (config.problem.name == "compressible" and not config.problem.pin_signal):
        problem = build_problem(config.problem, RngStream(config.seed, _PIN_STREAM))
        fixed_reference = _resolve_reference(
            config, problem, RngStream(config.seed, _REF_STREAM_BASE))

    workers = int(os.environ.get("RPCE_THREADS", "1") or "1")
    workers = max(1, min(workers, config.replicates))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_replicate, config, r, fixed_reference)
                       for r in range(config.replicates)]
            all_rows = [row for fut in futures for row in fut.result()]
    else:
        all_rows = [row for r in range(config.replicates)
                    for row in _run_replicate(config, r, fixed_reference)]

    # aggregate per (method, M) in configured order
    cells = []
    quota_exceeded = False
    for method in config.methods:
        for M in config.M_values:
            M = int(M)
            sub = [row for row in all_rows if row.method == method and row.M == M]
            ok = [row for row in sub if row.error is None]
            n_failed = len(sub) - len(ok)
            if len(sub) and n_failed > 0.2 * len(sub):
                quota_exceeded = True
            cell = {
                "method": method,
                "M": M,
                "n_ok": len(ok),
                "n_failed": n_failed,
                "err_mean": _aggregate([row.err_mean for row in ok]),
                "err_std": _aggregate([row.err_std for row in ok]),
                "rel_l2": _aggregate([row.rel_l2 for row in ok]),
                "N": next((row.N for row in ok if row.N is not None), None),
                "d_tilde": next((row.d_tilde for row in ok if row.d_tilde is not None), None),
                "n_converged": sum(1 for row in ok if row.converged),
            }
            cells.append(cell)

    advisories = []
    for cell in cells:
        if cell["N"] is not None:
            lo, hi = 2 * cell["M"], 5 * cell["M"]
            if not lo <= cell["N"] <= hi:
                advisories.append(
                    f"{cell['method']} at M={cell['M']}: N={cell['N']} outside "
                    f"the suggested [2M, 5M] = [{lo}, {hi}] range")

    summary = {
        "schema": "rpce-experiment-summary/1",
        "library_version": __version__,
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "config": config.to_dict(),
        "reference": None if fixed_reference is None else
            {"mean": fixed_reference[0], "std": fixed_reference[1]},
        "cells": cells,
        "advisories": advisories,
        "failures": [
            {"method": row.method, "M": row.M, "replicate": row.replicate,
             "error": row.error}
            for row in all_rows if row.error is not None
        ],
        "quota_exceeded": quota_exceeded,
    }

    timing_warnings = []
    for method in config.methods:
        means = []
        for M in config.M_values:
            sub = [row.seconds for row in all_rows
                   if row.method == method and row.M == int(M) and row.error is None]
            means.append(np.mean(sub) if sub else 0.0)
        if any(means[i + 1] < means[i] for i in range(len(means) - 1)):
            timing_warnings.append(
                f"wall time for {method} is not monotone in M: {means}")

    return ExperimentReport(config=config, rows=all_rows, summary=summary,
                            quota_exceeded=quota_exceeded,
                            timing_warnings=timing_warnings,
                            reference=fixed_reference)


# --- output files -------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(report: ExperimentReport, path) -> None:
    """Per-replicate rows; floats carry full round-trip precision."""
    lines = [CSV_HEADER]
    for row in sorted(report.rows, key=lambda r: (report.config.methods.index(r.method),
                                                  r.M, r.replicate)):
        lines.append(",".join([
            row.method, str(row.M), str(row.replicate), _fmt(row.err_mean),
            _fmt(row.err_std), _fmt(row.rel_l2), _fmt(row.N), _fmt(row.d_tilde),
            _fmt(row.converged), f"{row.seconds:.3f}",
        ]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_summary(report: ExperimentReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.summary, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_curves_tsv(report: ExperimentReport, path) -> None:
    """Long-form error-vs-M table, one line per (metric, method, M)."""
    lines = ["metric\tmethod\tM\tmean\tmedian\tq25\tq75"]
    for metric in ("err_mean", "err_std", "rel_l2"):
        for cell in report.summary["cells"]:
            agg = cell[metric]
            if agg is None:
                continue
            lines.append("\t".join([
                metric, cell["method"], str(cell["M"]), repr(agg["mean"]),
                repr(agg["median"]), repr(agg["q25"]), repr(agg["q75"]),
            ]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
