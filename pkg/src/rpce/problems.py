"""The five benchmark quantities of interest.

Each problem is a deterministic, seedable generator: a pure function from
standard-normal inputs to scalar outputs.  The stochastic-process problems
build Karhunen-Loeve expansions of the exponential covariance kernel from
its analytic eigenpairs; the groundwater problem additionally solves the
Darcy equation by finite differences for every sample.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad

from .errors import InvalidArgumentError
from .hermite import FULL, enumerate_basis, measurement_matrix
from .numerics import RngStream, find_roots_increasing, solve_sym_sparse

PROBLEM_NAMES = ("ridge", "compressible", "kdv", "groundwater", "highdim")


def _sech2(x: np.ndarray) -> np.ndarray:
    # overflow-safe sech^2
    e = np.exp(-np.abs(x))
    s = 2.0 * e / (1.0 + e * e)
    return s * s


# --- Karhunen-Loeve machinery ------------------------------------------------

@dataclass(frozen=True)
class KlExpansion:
    """Analytic eigenpairs of exp(-|t - t'| / l_c) on an interval.

    Eigenfunctions alternate between a cosine and a sine family about the
    interval midpoint; the frequencies solve the classical transcendental
    equations and the eigenvalues are 2c / (w^2 + c^2) with c = 1 / l_c.
    Ordered by descending eigenvalue.  The operator trace equals the
    interval length.
    """

    corr_length: float
    domain: tuple
    eigenvalues: np.ndarray
    omegas: np.ndarray
    families: np.ndarray  # 0 = cosine, 1 = sine
    norms: np.ndarray

    @property
    def trace(self) -> float:
        return self.domain[1] - self.domain[0]

    def eigenfunction_values(self, x) -> np.ndarray:
        """Matrix of phi_i(x): shape (terms, len(x))."""
        x = np.asarray(x, dtype=np.float64)
        center = 0.5 * (self.domain[0] + self.domain[1])
        arg = np.outer(self.omegas, x - center)
        vals = np.where(self.families[:, None] == 0, np.cos(arg), np.sin(arg))
        return vals / self.norms[:, None]

    def eigenfunction_integral_values(self, z) -> np.ndarray:
        """Matrix of int_{x0}^{z} phi_i(y) dy via the antiderivative."""
        z = np.asarray(z, dtype=np.float64)
        x0 = self.domain[0]
        center = 0.5 * (self.domain[0] + self.domain[1])
        w = self.omegas[:, None]
        upper = w * (z - center)
        lower = w * (x0 - center)
        cos_part = (np.sin(upper) - np.sin(lower)) / w
        sin_part = (np.cos(lower) - np.cos(upper)) / w
        vals = np.where(self.families[:, None] == 0, cos_part, sin_part)
        return vals / self.norms[:, None]


def kl_1d(l_c: float, terms: int, domain=(0.0, 1.0)) -> KlExpansion:
    """Analytic KL eigenpairs of the exponential kernel on ``domain``."""
    if l_c <= 0 or terms < 1:
        raise InvalidArgumentError("need l_c > 0 and terms >= 1")
    x0, x1 = float(domain[0]), float(domain[1])
    if x1 <= x0:
        raise InvalidArgumentError("domain must have positive length")
    a = 0.5 * (x1 - x0)
    c = 1.0 / l_c
    half_pi = math.pi / (2.0 * a)
    margin = 1e-9 * half_pi

    n_cos = terms // 2 + terms % 2
    n_sin = terms // 2

    f_cos = lambda w: c - w * math.tan(w * a)
    cos_brackets = [((2 * k) * half_pi + margin, (2 * k + 1) * half_pi - margin)
                    for k in range(n_cos)]
    w_cos = find_roots_increasing(f_cos, cos_brackets)

    f_sin = lambda w: w + c * math.tan(w * a)
    sin_brackets = [((2 * k + 1) * half_pi + margin, (2 * k + 2) * half_pi - margin)
                    for k in range(n_sin)]
    w_sin = find_roots_increasing(f_sin, sin_brackets)

    omegas, families, norms = [], [], []
    for k in range(terms):
        if k % 2 == 0:
            w = w_cos[k // 2]
            families.append(0)
            norms.append(math.sqrt(a + math.sin(2 * w * a) / (2 * w)))
        else:
            w = w_sin[k // 2]
            families.append(1)
            norms.append(math.sqrt(a - math.sin(2 * w * a) / (2 * w)))
        omegas.append(w)

    omegas = np.asarray(omegas)
    eigenvalues = 2.0 * c / (omegas**2 + c**2)
    if np.any(np.diff(eigenvalues) >= 0):
        raise InvalidArgumentError("eigenvalues failed to decrease; bad brackets")
    return KlExpansion(corr_length=float(l_c), domain=(x0, x1),
                       eigenvalues=eigenvalues, omegas=omegas,
                       families=np.asarray(families, dtype=np.int8),
                       norms=np.asarray(norms))


# --- benchmark functions ------------------------------------------------------

class RidgeFunction:
    """Cubic polynomial of the coordinate sum: s + 0.25 s^2 + 0.025 s^3."""

    per_replicate = False

    def __init__(self, d: int = 12):
        self.dim = int(d)

    def evaluate(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
        s = xi.sum(axis=1)
        return s + 0.25 * s**2 + 0.025 * s**3


class CompressibleFunction:
    """Random compressible Hermite expansion: c_n = zeta_n / n^1.5.

    A fresh signal is drawn from the provided stream (one independent
    U[-1, 1] draw per coefficient, divided by the 1-based basis position).
    """

    per_replicate = True

    def __init__(self, rng: RngStream, d: int = 20, order: int = 3):
        self.dim = int(d)
        self.basis = enumerate_basis(d, order, FULL)
        zeta = rng.uniform(self.basis.size, low=-1.0, high=1.0)
        n = np.arange(1, self.basis.size + 1, dtype=np.float64)
        self.coeffs = zeta / n**1.5

    def evaluate(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
        return measurement_matrix(self.basis, xi) @ self.coeffs


class KdvQoi:
    """Soliton solution of the stochastically forced KdV equation at a point.

    The additive forcing is a KL expansion of the exponential kernel; the
    exact solution reduces the QoI to two dot products through the
    precomputed loadings A_i (integral of the eigenfunctions) and B_i
    (their iterated integral), both scaled by sqrt(lambda_i) and
    evaluated by adaptive quadrature of the analytic eigenfunctions.
    """

    per_replicate = False

    def __init__(self, d: int = 100, sigma: float = 0.4, l_c: float = 0.1):
        self.dim = int(d)
        self.sigma = float(sigma)
        self.kl = kl_1d(l_c, d, (0.0, 1.0))
        sqrt_lam = np.sqrt(self.kl.eigenvalues)
        A = np.empty(d)
        B = np.empty(d)
        for i in range(d):
            w = self.kl.omegas[i]
            nrm = self.kl.norms[i]
            if self.kl.families[i] == 0:
                phi = lambda y: math.cos(w * (y - 0.5)) / nrm
                anti = lambda z: (math.sin(w * (z - 0.5)) + math.sin(0.5 * w)) / (w * nrm)
            else:
                phi = lambda y: math.sin(w * (y - 0.5)) / nrm
                anti = lambda z: (math.cos(0.5 * w) - math.cos(w * (z - 0.5))) / (w * nrm)
            A[i], _ = quad(phi, 0.0, 1.0, epsabs=1e-10, epsrel=1e-10, limit=400)
            B[i], _ = quad(anti, 0.0, 1.0, epsabs=1e-10, epsrel=1e-10, limit=400)
        self.A = sqrt_lam * A
        self.B = sqrt_lam * B

    def components(self, xi) -> tuple[np.ndarray, np.ndarray]:
        """The two ridge projections (sum A_i xi_i, sum B_i xi_i)."""
        xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
        return xi @ self.A, xi @ self.B

    def evaluate(self, xi) -> np.ndarray:
        a, b = self.components(xi)
        return self.sigma * a - 2.0 * _sech2(2.0 + 6.0 * self.sigma * b)


class GroundwaterQoi:
    """Hydraulic head at (200, 500) of a Darcy flow with log-normal
    transmissivity on a 2000 x 1000 aquifer.

    The Gaussian log-field has mean 2 and a separable exponential
    covariance, expanded in the ``kl_terms`` largest products of the 1-D
    eigenpairs (ties by lexicographic index order).  The flow problem has
    fixed heads 0 and 10 on the south/north boundaries, no-flux east/west,
    and is discretized cell-centered with harmonic face transmissivities,
    then solved by preconditioned conjugate gradient.
    """

    per_replicate = False

    def __init__(self, d: int = 100, l_x: float = 300.0, l_y: float = 300.0,
                 nx: int = 61, ny: int = 31, kl_terms: int | None = None,
                 field_mean: float = 2.0, n_1d: int = 40):
        self.dim = int(d)
        kl_terms = d if kl_terms is None else int(kl_terms)
        if kl_terms != d:
            raise InvalidArgumentError("kl_terms must equal the input dimension")
        self.lx_dom, self.ly_dom = 2000.0, 1000.0
        self.nx, self.ny = int(nx), int(ny)
        self.field_mean = float(field_mean)
        self.bc_south, self.bc_north = 0.0, 10.0
        self.qoi_xy = (200.0, 500.0)

        self.klx = kl_1d(l_x, n_1d, (0.0, self.lx_dom))
        self.kly = kl_1d(l_y, n_1d, (0.0, self.ly_dom))
        lam = np.outer(self.klx.eigenvalues, self.kly.eigenvalues)
        order = sorted(
            ((i, j) for i in range(n_1d) for j in range(n_1d)),
            key=lambda t: (-lam[t], t[0], t[1]),
        )[:kl_terms]
        self.pair_indices = order
        self.eigenvalues = np.array([lam[t] for t in order])
        self.trace_2d = self.lx_dom * self.ly_dom
        self.capture = float(self.eigenvalues.sum() / self.trace_2d)

        self._build_grid()

    def _build_grid(self):
        nx, ny = self.nx, self.ny
        self.dx = self.lx_dom / nx
        self.dy = self.ly_dom / ny
        self.xc = (np.arange(nx) + 0.5) * self.dx
        self.yc = (np.arange(ny) + 0.5) * self.dy

        phix = self.klx.eigenfunction_values(self.xc)
        phiy = self.kly.eigenfunction_values(self.yc)
        sqrt_lam = np.sqrt(self.eigenvalues)
        self.modes = np.stack([
            sqrt_lam[k] * np.outer(phix[i], phiy[j])
            for k, (i, j) in enumerate(self.pair_indices)
        ])  # (terms, nx, ny)

        # precomputed topology of the 5-point stencil
        idx = np.arange(nx * ny).reshape(nx, ny)
        self._ew = (idx[:-1, :].ravel(), idx[1:, :].ravel())
        self._ns = (idx[:, :-1].ravel(), idx[:, 1:].ravel())
        self._south = idx[:, 0]
        self._north = idx[:, -1]

        # bilinear interpolation stencil for the observation point
        self._qoi_stencil = self._interp_stencil(*self.qoi_xy)

    def _interp_stencil(self, x, y):
        ix = int(np.clip(np.searchsorted(self.xc, x) - 1, 0, self.nx - 2))
        iy = int(np.clip(np.searchsorted(self.yc, y) - 1, 0, self.ny - 2))
        tx = (x - self.xc[ix]) / self.dx
        ty = (y - self.yc[iy]) / self.dy
        idx = lambda i, j: i * self.ny + j
        return (
            [idx(ix, iy), idx(ix + 1, iy), idx(ix, iy + 1), idx(ix + 1, iy + 1)],
            [(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty],
        )

    def log_field(self, xi) -> np.ndarray:
        """The Gaussian log-transmissivity on the cell centers."""
        xi = np.asarray(xi, dtype=np.float64).ravel()
        return self.field_mean + np.tensordot(xi, self.modes, axes=1)

    def solve_head(self, xi) -> np.ndarray:
        """Full head field (nx, ny) for one sample."""
        T = np.exp(self.log_field(xi))
        return self._solve_with_transmissivity(T)

    def _solve_with_transmissivity(self, T: np.ndarray) -> np.ndarray:
        nx, ny, dx, dy = self.nx, self.ny, self.dx, self.dy
        n = nx * ny
        # harmonic face averages
        tx = 2.0 * T[:-1, :] * T[1:, :] / (T[:-1, :] + T[1:, :])
        ty = 2.0 * T[:, :-1] * T[:, 1:] / (T[:, :-1] + T[:, 1:])
        ax = (tx * dy / dx).ravel()
        ay = (ty * dx / dy).ravel()
        b_s = 2.0 * T[:, 0] * dx / dy
        b_n = 2.0 * T[:, -1] * dx / dy

        diag = np.zeros(n)
        np.add.at(diag, self._ew[0], ax)
        np.add.at(diag, self._ew[1], ax)
        np.add.at(diag, self._ns[0], ay)
        np.add.at(diag, self._ns[1], ay)
        diag[self._south] += b_s
        diag[self._north] += b_n

        rows = np.concatenate([self._ew[0], self._ew[1], self._ns[0], self._ns[1],
                               np.arange(n)])
        cols = np.concatenate([self._ew[1], self._ew[0], self._ns[1], self._ns[0],
                               np.arange(n)])
        vals = np.concatenate([-ax, -ax, -ay, -ay, diag])
        A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

        rhs = np.zeros(n)
        rhs[self._south] += b_s * self.bc_south
        rhs[self._north] += b_n * self.bc_north
        u = solve_sym_sparse(A, rhs)
        return u.reshape(nx, ny)

    def evaluate(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
        idx, wts = self._qoi_stencil
        out = np.empty(xi.shape[0])
        for q in range(xi.shape[0]):
            u = self.solve_head(xi[q]).ravel()
            out[q] = sum(w * u[i] for i, w in zip(idx, wts))
        return out


class HighDimFunction:
    """exp(2 - sum_i sin(i) xi_i / i) in 500 dimensions."""

    per_replicate = False

    def __init__(self, d: int = 500):
        self.dim = int(d)
        i = np.arange(1, d + 1, dtype=np.float64)
        self.weights = np.sin(i) / i

    def evaluate(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
        return np.exp(2.0 - xi @ self.weights)


def ridge_eval(xi) -> np.ndarray:
    """Module-level ridge evaluator (dimension inferred from the input)."""
    return RidgeFunction(np.atleast_2d(xi).shape[1]).evaluate(xi)


def compressible_make(rng: RngStream, d: int = 20, order: int = 3) -> CompressibleFunction:
    """Draw a fresh compressible signal and return its evaluator."""
    return CompressibleFunction(rng, d, order)


def kdv_qoi(d: int = 100, sigma: float = 0.4, l_c: float = 0.1) -> KdvQoi:
    return KdvQoi(d, sigma, l_c)


def groundwater_qoi(**kwargs) -> GroundwaterQoi:
    return GroundwaterQoi(**kwargs)


def highdim_eval(xi) -> np.ndarray:
    xi = np.atleast_2d(xi)
    return HighDimFunction(xi.shape[1]).evaluate(xi)


# --- problem specification ----------------------------------------------------

@dataclass
class ProblemSpec:
    """Named benchmark configuration consumed by the experiment harness."""

    name: str
    d: int
    sigma: float = 0.4
    l_c: float = 0.1
    l_x: float = 300.0
    l_y: float = 300.0
    nx: int = 61
    ny: int = 31
    signal_order: int = 3
    pin_signal: bool = False
    field_mean: float = 2.0

    def __post_init__(self):
        if self.name not in PROBLEM_NAMES:
            raise InvalidArgumentError(
                f"unknown problem {self.name!r}; choose from {PROBLEM_NAMES}")
        if self.d < 1:
            raise InvalidArgumentError("dimension must be positive")


def build_problem(spec: ProblemSpec, rng: RngStream | None = None):
    """Instantiate the evaluator for a problem spec.

    ``rng`` is consumed only by problems that draw their own randomness
    (the compressible signal); deterministic problems ignore it.
    """
    if spec.name == "ridge":
        return RidgeFunction(spec.d)
    if spec.name == "compressible":
        if rng is None:
            raise InvalidArgumentError("the compressible problem needs an RngStream")
        return CompressibleFunction(rng, spec.d, spec.signal_order)
    if spec.name == "kdv":
        return KdvQoi(spec.d, spec.sigma, spec.l_c)
    if spec.name == "groundwater":
        return GroundwaterQoi(spec.d, spec.l_x, spec.l_y, spec.nx, spec.ny,
                              field_mean=spec.field_mean)
    if spec.name == "highdim":
        return HighDimFunction(spec.d)
    raise InvalidArgumentError(f"unknown problem {spec.name!r}")


PROBLEM_SUMMARIES = {
    "ridge": "cubic polynomial of the coordinate sum (default d=12); every "
             "input matters equally, sparse only after rotation",
    "compressible": "random Hermite expansion with coefficients zeta_n/n^1.5 "
                    "(default d=20, order 3); a fresh signal per replicate",
    "kdv": "stochastically forced KdV soliton evaluated at x=6, t=1 "
           "(d=100 KL modes of an exponential kernel, sigma=0.4)",
    "groundwater": "Darcy flow head at (200, 500) with log-normal "
                   "transmissivity on a 61x31 grid (d=100 KL modes)",
    "highdim": "exp(2 - sum sin(i) xi_i / i) with d=500",
}
