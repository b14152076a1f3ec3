"""Correlation matrix construction and Kronecker-structured linear algebra.

The column covariance of the model is sigma_s2 * (R_sp kron R_tp) with
R_sp an L x L spatial correlation matrix and R_tp a T x T AR(1) Toeplitz
correlation matrix.  Nothing in this module ever materializes the full
r x r Kronecker product: products and solves against it act blockwise on
matrices reshaped to (..., L, T), using the column ordering in which the
time index varies fastest.

Cholesky factorizations fail loudly on non-positive-definite input by
default.  An opt-in jitter escalation adds 1e-10 * mean(diag) to the
diagonal, escalating by a factor of 10 at most three times, and raises
once the cap is exhausted.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, toeplitz

from .errors import NumericalError
from .kernels import (
    matern_dnu,
    spatial_correlation,
    spatial_correlation_dphi,
)

JITTER_BASE = 1e-10
JITTER_ESCALATIONS = 3


def distance_matrix(coords: np.ndarray) -> np.ndarray:
    """Symmetric matrix of Euclidean distances between planar points."""
    coords = np.asarray(coords, dtype=float)
    diff = coords[:, None, :] - coords[None, :, :]
    h = np.sqrt((diff**2).sum(axis=2))
    np.fill_diagonal(h, 0.0)
    return h


def _eval_on_unique(h: np.ndarray, fn) -> np.ndarray:
    """Evaluate an elementwise kernel on the distinct distances only.

    Distance matrices, especially from gridded locations, repeat values
    heavily; Matern evaluations are expensive enough that deduplication
    pays off.
    """
    uniq, inverse = np.unique(h, return_inverse=True)
    return np.asarray(fn(uniq))[inverse].reshape(h.shape)


def build_spatial_correlation(
    h: np.ndarray, family: str, phi_s: float, nu: float | None = None
) -> np.ndarray:
    """Spatial correlation matrix from a distance matrix; unit diagonal."""
    r = _eval_on_unique(h, lambda u: spatial_correlation(family, u, phi_s, nu))
    np.fill_diagonal(r, 1.0)
    return 0.5 * (r + r.T)


def build_spatial_correlation_dphi(
    h: np.ndarray, family: str, phi_s: float, nu: float | None = None
) -> np.ndarray:
    d = _eval_on_unique(h, lambda u: spatial_correlation_dphi(family, u, phi_s, nu))
    np.fill_diagonal(d, 0.0)
    return 0.5 * (d + d.T)


def build_spatial_correlation_dnu(h: np.ndarray, phi_s: float, nu: float) -> np.ndarray:
    d = _eval_on_unique(h, lambda u: matern_dnu(u, phi_s, nu))
    np.fill_diagonal(d, 0.0)
    return 0.5 * (d + d.T)


def build_temporal_correlation(n_times: int, rho: float) -> np.ndarray:
    """AR(1) Toeplitz correlation matrix rho^|t - t'| on 1..n_times."""
    if n_times < 1:
        raise ValueError("n_times must be at least 1")
    if not abs(rho) < 1.0:
        raise ValueError("rho must satisfy |rho| < 1")
    return toeplitz(rho ** np.arange(n_times))


def build_temporal_correlation_drho(n_times: int, rho: float) -> np.ndarray:
    """Entrywise derivative |t - t'| rho^(|t - t'| - 1); zero diagonal."""
    lag = np.abs(np.arange(n_times)[:, None] - np.arange(n_times)[None, :])
    out = np.zeros((n_times, n_times))
    pos = lag > 0
    out[pos] = lag[pos] * rho ** (lag[pos] - 1.0)
    return out


class CholeskyFactor:
    """Cholesky factorization with cached log-determinant and solve."""

    def __init__(self, matrix: np.ndarray, jitter: bool = False, label: str = "matrix"):
        matrix = np.asarray(matrix, dtype=float)
        attempt = matrix
        eps = JITTER_BASE * float(np.mean(np.diag(matrix)))
        last_err = None
        for k in range(JITTER_ESCALATIONS + 1):
            try:
                self._factor = cho_factor(attempt, lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError as err:
                last_err = err
                if not jitter or k == JITTER_ESCALATIONS:
                    raise NumericalError(
                        f"{label} is not positive definite"
                        + (" after jitter escalation" if jitter else "")
                    ) from err
                attempt = matrix + eps * 10.0**k * np.eye(matrix.shape[0])
        else:  # pragma: no cover - loop always breaks or raises
            raise NumericalError(f"{label} is not positive definite") from last_err
        self.n = matrix.shape[0]
        self.log_det = 2.0 * float(np.sum(np.log(np.diag(self._factor[0]))))

    def solve(self, b: np.ndarray) -> np.ndarray:
        return cho_solve(self._factor, b, check_finite=False)


def kron_apply(a: np.ndarray, b: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Compute m @ (a kron b) without forming the Kronecker product.

    a is L x L, b is T x T, and m has L*T columns ordered with the time
    index fastest.  Both a and b are assumed symmetric (correlation-like),
    which is the only way they occur here.
    """
    n_loc, n_time = a.shape[0], b.shape[0]
    w = m.reshape(m.shape[0], n_loc, n_time)
    z = w @ b
    out = np.tensordot(z, a, axes=([1], [0])).transpose(0, 2, 1)
    return out.reshape(m.shape[0], n_loc * n_time)


def kron_solve(ca: CholeskyFactor, cb: CholeskyFactor, m: np.ndarray) -> np.ndarray:
    """Compute m @ (a kron b)^{-1} from the factors of a and b.

    Equivalent to kron_apply with the two inverses, but done with
    triangular solves on the reshaped axes.
    """
    n_loc, n_time = ca.n, cb.n
    p = m.shape[0]
    w = m.reshape(p, n_loc, n_time)
    # a^{-1} along the location axis
    z = ca.solve(w.transpose(1, 0, 2).reshape(n_loc, p * n_time))
    z = z.reshape(n_loc, p, n_time).transpose(1, 0, 2)
    # b^{-1} along the time axis
    out = cb.solve(z.reshape(p * n_loc, n_time).T).T
    return out.reshape(p, n_loc * n_time)


def kron_quad_trace(
    sigma_chol: CholeskyFactor, e: np.ndarray, f: np.ndarray
) -> float:
    """trace(Sigma^{-1} e f^T) for residual-shaped e, f."""
    return float(np.trace(sigma_chol.solve(e @ f.T)))
