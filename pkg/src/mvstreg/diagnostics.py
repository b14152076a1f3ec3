"""Residual standardization and outlier diagnostics.

Three granularities of residual checks, all invariant to the arbitrary
scale split between the row and column covariances:

    d_j^2 = E_j^T Sigma^{-1} E_j / psi_jj        column j, ref chi^2_p
    r_i^2 = E_i Psi^{-1} E_i^T / sigma_ii        row i,    ref chi^2_r
    z_ij  = e_ij / sqrt(sigma_ii psi_jj)         cell,     ref N(0, 1)

plus the two-sided whitened residual matrix
E* = Sigma^{-1/2} E Psi^{-1/2} whose squared entries sum to a global
statistic referenced to chi^2 with p*r degrees of freedom.  Matrix square
roots are symmetric (eigendecomposition based), and the column-covariance
root is applied through its Kronecker factors, never materialized.

Note that the squared column norms of E* equal d_j^2 only when the column
covariance is diagonal; right-whitening mixes columns otherwise, which is
why d_j^2 is computed from the raw residuals.
"""

from __future__ import annotations

import numpy as np

from .covariance import (
    CholeskyFactor,
    build_spatial_correlation,
    build_temporal_correlation,
    distance_matrix,
    kron_apply,
    kron_solve,
)
from .errors import NumericalError
from .model import CovarianceSpec, Dataset, DiagnosticsReport
from .special import chi_square_quantile, normal_quantile

DEFAULT_COLUMN_LEVEL = 0.975
DEFAULT_CELL_BAND = 1.96


def _inv_sqrt(mat: np.ndarray, label: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(np.asarray(mat, dtype=float))
    if np.any(vals <= 0.0):
        raise NumericalError(f"{label} is not positive definite")
    return (vecs / np.sqrt(vals)) @ vecs.T


def standardize_residuals(
    e: np.ndarray,
    sigma: np.ndarray,
    r_sp: np.ndarray,
    r_tp: np.ndarray,
    sigma_s2: float,
) -> np.ndarray:
    """Two-sided whitening E* = Sigma^{-1/2} E Psi^{-1/2}.

    At the generating parameters the entries of E* are iid standard
    normal.
    """
    left = _inv_sqrt(sigma, "row covariance matrix")
    sp_half = _inv_sqrt(r_sp, "spatial correlation matrix")
    tp_half = _inv_sqrt(r_tp, "temporal correlation matrix")
    return kron_apply(sp_half, tp_half, left @ e) / np.sqrt(sigma_s2)


def _psi_diagonal(r_sp: np.ndarray, r_tp: np.ndarray, sigma_s2: float) -> np.ndarray:
    """Diagonal of the column covariance in column order (time fastest)."""
    return sigma_s2 * np.repeat(np.diag(r_sp), r_tp.shape[0]) * np.tile(
        np.diag(r_tp), r_sp.shape[0]
    )


def column_distances(e: np.ndarray, sigma: np.ndarray, psi_diag: np.ndarray) -> np.ndarray:
    """Per-column Mahalanobis distances d_j^2."""
    sigma_chol = CholeskyFactor(np.asarray(sigma, dtype=float), label="row covariance matrix")
    return np.einsum("ij,ij->j", e, sigma_chol.solve(e)) / psi_diag


def row_distances(
    e: np.ndarray,
    r_sp: np.ndarray,
    r_tp: np.ndarray,
    sigma_s2: float,
    sigma_diag: np.ndarray,
) -> np.ndarray:
    """Per-row distances r_i^2 against the column covariance."""
    if np.any(sigma_diag <= 0.0):
        raise NumericalError("row covariance diagonal must be positive")
    csp = CholeskyFactor(r_sp, label="spatial correlation matrix")
    ctp = CholeskyFactor(r_tp, label="temporal correlation matrix")
    f = kron_solve(csp, ctp, e) / sigma_s2
    return np.einsum("ij,ij->i", e, f) / sigma_diag


def cell_residuals(e: np.ndarray, sigma_diag: np.ndarray, psi_diag: np.ndarray) -> np.ndarray:
    """Cell-wise standardized residuals z_ij."""
    if np.any(sigma_diag <= 0.0) or np.any(psi_diag <= 0.0):
        raise NumericalError("covariance diagonals must be positive for cell residuals")
    return e / np.sqrt(np.outer(sigma_diag, psi_diag))


def qq_points(e_star: np.ndarray) -> np.ndarray:
    """(theoretical, observed) pairs of the whitened residuals against N(0, 1).

    The reference quantiles treat the entries as an iid normal sample,
    which is exact only at the generating parameters; with estimated
    parameters the pairs are an informal check.
    """
    obs = np.sort(e_star.ravel())
    n = obs.size
    theo = np.array([normal_quantile((k - 0.5) / n) for k in range(1, n + 1)])
    return np.column_stack([theo, obs])


def diagnose(
    dataset: Dataset,
    b: np.ndarray,
    sigma: np.ndarray,
    spec: CovarianceSpec,
    column_level: float = DEFAULT_COLUMN_LEVEL,
    cell_band: float = DEFAULT_CELL_BAND,
) -> DiagnosticsReport:
    """Full diagnostics of a fitted (or true) parameter set on a dataset.

    column_level sets the chi-squared quantile used to flag columns (and
    rows, against chi^2 with r degrees of freedom); cell_band flags cells
    with |z| beyond it.
    """
    layout = dataset.layout
    params = spec.params
    e = dataset.y - np.asarray(b, dtype=float) @ dataset.x
    p, r = e.shape
    h = distance_matrix(layout.coordinates())
    r_sp = build_spatial_correlation(h, spec.family, params.phi_s, params.nu)
    r_tp = build_temporal_correlation(layout.n_times, params.rho)

    e_star = standardize_residuals(e, sigma, r_sp, r_tp, params.sigma_s2)
    psi_diag = _psi_diagonal(r_sp, r_tp, params.sigma_s2)
    sigma_diag = np.diag(np.asarray(sigma, dtype=float))
    d_sq = column_distances(e, sigma, psi_diag)
    r_sq = row_distances(e, r_sp, r_tp, params.sigma_s2, sigma_diag)
    z = cell_residuals(e, sigma_diag, psi_diag)

    d_threshold = chi_square_quantile(column_level, p)
    r_threshold = chi_square_quantile(column_level, r)
    thresholds = {
        "column_level": column_level,
        "d_sq": d_threshold,
        "r_sq": r_threshold,
        "z": cell_band,
    }
    flags = {
        "columns": tuple(int(j) for j in np.nonzero(d_sq > d_threshold)[0] + 1),
        "rows": tuple(int(i) for i in np.nonzero(r_sq > r_threshold)[0] + 1),
        "cells": tuple(
            (int(i) + 1, int(j) + 1) for i, j in zip(*np.nonzero(np.abs(z) > cell_band))
        ),
    }
    return DiagnosticsReport(
        e_star=e_star,
        d_sq=d_sq,
        r_sq=r_sq,
        z=z,
        global_stat=float(np.sum(e_star**2)),
        thresholds=thresholds,
        flags=flags,
    )
