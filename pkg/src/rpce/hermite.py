"""Multivariate normalized probabilists' Hermite basis.

Multi-index enumeration with a fixed graded-lexicographic order, measurement
matrix assembly, and the sparse derivative-coupling kernels used to build
gradient matrices from expansion coefficients.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, InvalidArgumentError

FULL = "full"
NO_INTERACTION = "no-interaction"

_DEFAULT_CAP = 10**6


@dataclass(frozen=True)
class MultiIndexBasis:
    """Ordered multi-index set defining the polynomial basis.

    ``indices`` is an ``N x dim`` integer array; row ``n`` holds the degree
    vector of basis function ``n``.  Rows are sorted by total degree, and
    within a degree by descending dictionary order of the degree tuple (so
    degree lands on earlier dimensions first).  Row 0 is always the constant.

    ``mode`` is either ``"full"`` (every multi-index with total degree at
    most ``order``) or ``"no-interaction"`` (the constant plus pure powers
    of single variables up to ``order``).
    """

    dim: int
    order: int
    mode: str
    indices: np.ndarray

    def __len__(self):
        return self.indices.shape[0]

    @property
    def size(self) -> int:
        return self.indices.shape[0]


def basis_size(d: int, P: int, mode: str = FULL) -> int:
    """Number of basis functions without enumerating them."""
    if mode == FULL:
        return math.comb(P + d, d)
    if mode == NO_INTERACTION:
        return 1 + d * P
    raise InvalidArgumentError(f"unknown basis mode {mode!r}")


def _degree_block(d: int, t: int) -> np.ndarray:
    # all multi-indices of total degree exactly t, descending dictionary order
    if t == 0:
        return np.zeros((1, d), dtype=np.int64)
    rows = math.comb(d + t - 1, t)
    out = np.zeros((rows, d), dtype=np.int64)
    for r, combo in enumerate(itertools.combinations_with_replacement(range(d), t)):
        for i in combo:
            out[r, i] += 1
    return out


def enumerate_basis(d: int, P: int, mode: str = FULL, cap: int = _DEFAULT_CAP) -> MultiIndexBasis:
    """Enumerate the multi-index basis of dimension ``d`` and order ``P``.

    Raises ``CapacityError`` if the enumerated size would exceed ``cap``
    (default 10^6).
    """
    if d < 1 or P < 0:
        raise InvalidArgumentError(f"need d >= 1 and P >= 0, got d={d}, P={P}")
    n = basis_size(d, P, mode)
    if n > cap:
        raise CapacityError(f"basis would hold {n} functions, above the cap of {cap}")
    if mode == FULL:
        blocks = [_degree_block(d, t) for t in range(P + 1)]
        indices = np.vstack(blocks)
    else:
        blocks = [np.zeros((1, d), dtype=np.int64)]
        for t in range(1, P + 1):
            block = np.zeros((d, d), dtype=np.int64)
            np.fill_diagonal(block, t)
            blocks.append(block)
        indices = np.vstack(blocks)
    indices.setflags(write=False)
    return MultiIndexBasis(dim=d, order=P, mode=mode, indices=indices)


def _hermite_table(x: np.ndarray, P: int) -> np.ndarray:
    """Normalized Hermite values psi_0..psi_P at each point of ``x``.

    Three-term recurrence He_{n+1} = x He_n - n He_{n-1}, each row divided
    by sqrt(n!).  Returns an array of shape ``(P + 1,) + x.shape``.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty((P + 1,) + x.shape)
    out[0] = 1.0
    if P >= 1:
        out[1] = x
    for n in range(1, P):
        out[n + 1] = x * out[n] - n * out[n - 1]
    fact = 1.0
    for n in range(2, P + 1):
        fact *= n
        out[n] /= math.sqrt(fact)
    return out


def eval_univariate(n: int, x) -> np.ndarray | float:
    """Normalized probabilists' Hermite polynomial He_n(x)/sqrt(n!)."""
    if n < 0:
        raise InvalidArgumentError("degree must be non-negative")
    arr = np.asarray(x, dtype=np.float64)
    val = _hermite_table(arr, n)[n]
    return float(val) if np.isscalar(x) else val


def measurement_matrix(basis: MultiIndexBasis, points: np.ndarray) -> np.ndarray:
    """Basis functions evaluated at sample points: entry (q, n) = psi_n(xi^q)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != basis.dim:
        raise InvalidArgumentError(
            f"points have {points.shape[1]} columns, basis dimension is {basis.dim}"
        )
    M = points.shape[0]
    table = _hermite_table(points, basis.order)  # (P+1, M, d)
    psi = np.ones((M, basis.size))
    for n in range(basis.size):
        alpha = basis.indices[n]
        for k in np.nonzero(alpha)[0]:
            psi[:, n] *= table[alpha[k], :, k]
    return psi


@dataclass(frozen=True)
class KernelMatrix:
    """Sparse expectation matrix of paired basis derivatives along (i, j).

    Entry (k, l) is E[d psi_k / d xi_i * d psi_l / d xi_j], stored as
    triplets; each row holds at most one nonzero.
    """

    i: int
    j: int
    size: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    def quad(self, c: np.ndarray) -> float:
        """The quadratic form c^T K c."""
        return float(np.dot(self.vals * c[self.rows], c[self.cols]))

    def toarray(self) -> np.ndarray:
        K = np.zeros((self.size, self.size))
        K[self.rows, self.cols] = self.vals
        return K


def _build_kernel(basis, i, j, active_i, lookup) -> KernelMatrix:
    alpha = basis.indices
    if i == j:
        vals = alpha[active_i, i].astype(np.float64)
        return KernelMatrix(i=i, j=j, size=basis.size,
                            rows=active_i.copy(), cols=active_i.copy(), vals=vals)
    rows, cols, vals = [], [], []
    for k in active_i:
        target = alpha[k].copy()
        target[i] -= 1
        target[j] += 1
        l = lookup.get(target.tobytes())
        if l is None:
            continue
        rows.append(k)
        cols.append(l)
        vals.append(math.sqrt(alpha[k, i] * alpha[l, j]))
    return KernelMatrix(
        i=i, j=j, size=basis.size,
        rows=np.asarray(rows, dtype=np.int64),
        cols=np.asarray(cols, dtype=np.int64),
        vals=np.asarray(vals, dtype=np.float64),
    )


def grad_kernel(basis: MultiIndexBasis, i: int, j: int) -> KernelMatrix:
    """Derivative-coupling kernel for dimensions ``i`` and ``j`` (0-based).

    For i != j the entry (k, l) is sqrt(alpha_k[i] * alpha_l[j]) precisely
    when alpha_l = alpha_k - e_i + e_j; for i == j the kernel is diagonal
    with entries alpha_k[i].  Both follow from
    d psi_alpha / d xi_i = sqrt(alpha_i) psi_{alpha - e_i}.
    """
    d = basis.dim
    if not (0 <= i < d and 0 <= j < d):
        raise InvalidArgumentError(f"dimension index out of range for d={d}")
    alpha = basis.indices
    active_i = np.nonzero(alpha[:, i] > 0)[0]
    lookup = {row.tobytes(): n for n, row in enumerate(alpha)}
    return _build_kernel(basis, i, j, active_i, lookup)


class GradientKernels:
    """All d*d derivative-coupling kernels for one basis, built once.

    The triplet storage keeps total memory proportional to the number of
    nonzero couplings, which for a total-degree basis is roughly N*P per
    dimension pair row set rather than N^2.
    """

    def __init__(self, basis: MultiIndexBasis):
        self.basis = basis
        d = basis.dim
        alpha = basis.indices
        lookup = {row.tobytes(): n for n, row in enumerate(alpha)}
        active = [np.nonzero(alpha[:, i] > 0)[0] for i in range(d)]
        self._kernels = {
            (i, j): _build_kernel(basis, i, j, active[i], lookup)
            for i in range(d)
            for j in range(d)
        }

    def __getitem__(self, key) -> KernelMatrix:
        return self._kernels[key]
