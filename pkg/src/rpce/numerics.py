"""Deterministic sampling, symmetric eigendecomposition, sparse SPD solves,
and bracketed root finding.

Everything here is reproducible: the random stream is a counter-based
generator with a fixed output transform, and the eigensolver applies a
deterministic ordering and sign convention so that rotation matrices built
from it are identical across runs.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq
from scipy.special import ndtri

from .errors import (
    BracketError,
    InvalidArgumentError,
    NumericalFailureError,
)

_U64 = np.uint64
_MASK64 = (1 << 64) - 1


class RngStream:
    """Reproducible random stream keyed by ``(seed, stream)``.

    Uses the Philox-4x64 counter-based generator keyed by the two 64-bit
    integers.  Raw 64-bit words are mapped to open-interval uniforms by
    ``u = ((w >> 12) + 0.5) * 2**-52`` and to standard normals through the
    inverse normal CDF.  Two streams with distinct ``(seed, stream)`` pairs
    are statistically independent; the same pair always reproduces the same
    sequence.

    Instances are stateful and single-owner: each draw advances the stream.
    Parallel workers must each construct their own stream id.
    """

    def __init__(self, seed: int, stream: int = 0):
        seed = int(seed)
        stream = int(stream)
        if not (0 <= seed <= _MASK64 and 0 <= stream <= _MASK64):
            raise InvalidArgumentError("seed and stream must fit in 64 bits")
        self.seed = seed
        self.stream = stream
        self._bitgen = np.random.Philox(key=[seed, stream])

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    def _raw(self, n: int) -> np.ndarray:
        if n == 0:
            return np.empty(0, dtype=_U64)
        return np.asarray(self._bitgen.random_raw(n), dtype=_U64)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform draws on the open interval (low, high)."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = ((self._raw(n) >> _U64(12)).astype(np.float64) + 0.5) * 2.0**-52
        return (low + (high - low) * u).reshape(shape)

    def standard_normal(self, shape) -> np.ndarray:
        """N(0,1) draws via the inverse-CDF transform of 52-bit uniforms."""
        return ndtri(self.uniform(shape))

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic random permutation of ``range(n)``.

        Implemented as the stable argsort of n uniform keys, so it depends
        only on this stream's word sequence.
        """
        return np.argsort(self.uniform(int(n)), kind="stable")


def sample_std_normal(rng: RngStream, M: int, d: int) -> np.ndarray:
    """Draw an ``M x d`` matrix of i.i.d. standard normal samples."""
    if M < 1 or d < 1:
        raise InvalidArgumentError(f"M and d must be positive, got M={M}, d={d}")
    return rng.standard_normal((int(M), int(d)))


@dataclass(frozen=True)
class SymEigen:
    """Eigendecomposition of a symmetric matrix.

    ``eigenvalues`` are sorted descending and ``eigenvectors[:, k]`` is the
    unit eigenvector paired with ``eigenvalues[k]``.  Each eigenvector is
    normalised so that its entry of largest magnitude (lowest index on ties)
    is non-negative.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def sym_eigen(A: np.ndarray) -> SymEigen:
    """Eigendecomposition of a symmetric real matrix, deterministically ordered.

    Raises
    ------
    InvalidArgumentError
        If ``A`` is not square and symmetric to 1e-12 relative tolerance.
    NumericalFailureError
        If the underlying iteration fails to converge.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {A.shape}")
    scale = np.max(np.abs(A)) if A.size else 0.0
    asym = np.max(np.abs(A - A.T)) if A.size else 0.0
    if asym > 1e-12 * max(scale, 1e-300):
        raise InvalidArgumentError("matrix is not symmetric within 1e-12 relative tolerance")
    try:
        w, Q = np.linalg.eigh((A + A.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"eigendecomposition failed: {exc}") from exc
    # eigh returns ascending order; stable reversal keeps ties deterministic
    order = np.argsort(-w, kind="stable")
    w = w[order]
    Q = Q[:, order]
    lead = np.argmax(np.abs(Q), axis=0)
    flip = Q[lead, np.arange(Q.shape[1])] < 0
    Q[:, flip] *= -1.0
    return SymEigen(eigenvalues=w, eigenvectors=Q)


def solve_sym_sparse(A, b: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Solve ``A x = b`` for sparse symmetric positive-definite ``A``.

    Conjugate gradient with a Jacobi preconditioner, iteration cap ``10 n``.
    The returned solution satisfies ``||A x - b|| <= 1e-10 ||b||``.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=np.float64)
    n = A.shape[0]
    if A.shape[0] != A.shape[1] or b.shape != (n,):
        raise InvalidArgumentError("dimension mismatch between A and b")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise NumericalFailureError("non-positive diagonal entry; matrix is not SPD")
    precond = spla.LinearOperator((n, n), matvec=lambda v: v / diag)
    x, info = spla.cg(A, b, rtol=rtol, atol=0.0, maxiter=10 * n, M=precond)
    resid = np.linalg.norm(A @ x - b)
    if info != 0 or not np.isfinite(resid) or resid > 1e-10 * bnorm:
        raise NumericalFailureError(
            f"conjugate gradient failed (info={info}, relative residual={resid / bnorm:.3e})"
        )
    return x


def find_roots_increasing(f, brackets) -> list[float]:
    """Find one root of ``f`` in each bracketing interval, returned sorted.

    Each interval must straddle a sign change (endpoints with ``f = 0``
    count as roots).
    """
    roots = []
    for a, b in brackets:
        fa, fb = f(a), f(b)
        if fa == 0.0:
            roots.append(float(a))
            continue
        if fb == 0.0:
            roots.append(float(b))
            continue
        if np.sign(fa) == np.sign(fb):
            raise BracketError(f"no sign change on bracket ({a}, {b})")
        roots.append(float(brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)))
    return sorted(roots)
