"""Sliced inverse regression.

Estimates the directions along which the conditional expectation of the
inputs given the output varies, by slicing the outputs into equal-count
bins and eigendecomposing the weighted covariance of the within-slice
input means.  Used both for rotation initialization (keep all d rows) and
for dimension reduction (keep the leading rows).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateOutputError, InvalidArgumentError
from .numerics import sym_eigen


@dataclass(frozen=True)
class SirResult:
    """Spectrum and directions of the sliced-mean covariance.

    ``directions`` is a d x d orthogonal matrix whose ROWS are the
    estimated directions, ordered by descending eigenvalue; ``eigenvalues``
    are non-negative up to round-off.  ``slice_counts`` records the number
    of samples that fell in each slice.
    """

    eigenvalues: np.ndarray
    directions: np.ndarray
    slice_counts: np.ndarray


def default_slice_count(M: int) -> int:
    """Slice-count rule keeping at least around 20 points per slice."""
    return max(5, min(10, M // 20))


def sir_fit(samples: np.ndarray, outputs: np.ndarray,
            n_slices: int | None = None, standardize: bool = False) -> SirResult:
    """Run sliced inverse regression on a training set.

    Outputs are ranked with a stable sort and split into ``n_slices``
    equal-count bins (the first ``M mod H`` bins take one extra point).
    The slice means of the inputs estimate the inverse regression curve;
    their weighted covariance ``V = sum_h (n_h / M) xibar_h xibar_h^T`` is
    eigendecomposed with deterministic ordering and signs.

    ``standardize`` centres and scales each input column first; it is
    meant for data that is not already standard normal and defaults off.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    outputs = np.asarray(outputs, dtype=np.float64).ravel()
    M, d = samples.shape
    if outputs.shape[0] != M:
        raise InvalidArgumentError("outputs length must match sample rows")
    H = default_slice_count(M) if n_slices is None else int(n_slices)
    if H < 2 or H > M:
        raise InvalidArgumentError(f"need 2 <= H <= M, got H={H}, M={M}")
    if np.min(outputs) == np.max(outputs):
        raise DegenerateOutputError("outputs are constant; slices are undefined")

    if standardize:
        std = np.std(samples, axis=0, ddof=1)
        std[std == 0.0] = 1.0
        samples = (samples - np.mean(samples, axis=0)) / std

    order = np.argsort(outputs, kind="stable")
    base, extra = divmod(M, H)
    counts = np.full(H, base, dtype=np.int64)
    counts[:extra] += 1

    V = np.zeros((d, d))
    start = 0
    for n_h in counts:
        idx = order[start:start + n_h]
        xbar = samples[idx].mean(axis=0)
        V += (n_h / M) * np.outer(xbar, xbar)
        start += n_h

    eig = sym_eigen(V)
    return SirResult(eigenvalues=eig.eigenvalues,
                     directions=eig.eigenvectors.T.copy(),
                     slice_counts=counts)


def reduce(result: SirResult, d_tilde: int) -> np.ndarray:
    """Reduction map: the leading ``d_tilde`` direction rows."""
    d = result.directions.shape[0]
    if not 1 <= d_tilde <= d:
        raise InvalidArgumentError(f"need 1 <= d_tilde <= {d}, got {d_tilde}")
    return result.directions[:d_tilde].copy()


def suggest_dtilde(result: SirResult, fraction: float) -> int:
    """Smallest dimension capturing the given fraction of the spectrum mass."""
    if not 0.0 < fraction < 1.0:
        raise InvalidArgumentError("fraction must lie in (0, 1)")
    lam = np.maximum(result.eigenvalues, 0.0)
    total = lam.sum()
    if total <= 0.0:
        raise DegenerateOutputError("all eigenvalues are zero")
    cum = np.cumsum(lam) / total
    cum[-1] = 1.0  # guard the last entry against round-off below `fraction`
    return int(np.searchsorted(cum, fraction) + 1)
