"""Special functions used by the covariance kernels and diagnostics.

Thin wrappers around scipy.special with the argument checks this package
relies on.  ``bessel_k`` is the modified Bessel function of the second
kind K_nu(x), needed by the Matern kernel; ``digamma`` appears in the
Matern smoothness score; ``chi_square_quantile`` provides the reference
quantiles for the residual diagnostics.
"""

from __future__ import annotations

import numpy as np
from scipy import special as _sp


def bessel_k(nu: float, x):
    """Modified Bessel function of the second kind, K_nu(x) for x > 0.

    Accepts scalar or array ``x``; the order may be any real number
    (K_{-nu} = K_nu).
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise ValueError("bessel_k requires x > 0")
    out = _sp.kv(nu, x)
    return float(out) if out.ndim == 0 else out


def digamma(x):
    """Digamma function psi(x) = d/dx log Gamma(x)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise ValueError("digamma requires x > 0")
    out = _sp.psi(x)
    return float(out) if out.ndim == 0 else out


def gamma_ln(x):
    """Natural log of the gamma function for x > 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise ValueError("gamma_ln requires x > 0")
    out = _sp.gammaln(x)
    return float(out) if out.ndim == 0 else out


def chi_square_quantile(p: float, k: int) -> float:
    """Quantile function of the chi-squared distribution with k degrees of freedom.

    Inverts the regularized incomplete gamma function: the quantile q solves
    P(k/2, q/2) = p.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("chi_square_quantile requires 0 < p < 1")
    if k < 1:
        raise ValueError("chi_square_quantile requires k >= 1")
    return float(2.0 * _sp.gammaincinv(0.5 * k, p))


def normal_quantile(p: float) -> float:
    """Standard normal quantile (inverse CDF)."""
    if not 0.0 < p < 1.0:
        raise ValueError("normal_quantile requires 0 < p < 1")
    return float(_sp.ndtri(p))
