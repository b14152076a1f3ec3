"""Spatial and temporal correlation kernels and their parameter derivatives.

Five spatial families are supported, all written as correlations R(h) in
the distance h with range parameter phi (and smoothness nu for Matern):

    exponential   R(h) = exp(-h / phi)
    gaussian      R(h) = exp(-h^2 / phi^2)
    cubic         R(h) = 1 - 7u^2 + (35/4)u^3 - (7/2)u^5 + (3/4)u^7,
                  u = h / (2 phi), supported on h <= 2 phi (0 beyond)
    spherical     R(h) = 1 - (3/2)v + (1/2)v^3, v = h / phi,
                  supported on h <= phi (0 beyond)
    matern        R(h) = 2^(1-nu)/Gamma(nu) * s^nu * K_nu(s),
                  s = sqrt(2 nu) h / phi

The Matern family reduces to the exponential at nu = 0.5 and approaches
the gaussian kernel as nu grows.  Temporal dependence is an AR(1)
correlation rho^|lag| on integer time indices.

Derivatives with respect to phi, nu and rho are the analytic derivatives
of the kernels above.  They feed the score equations of the estimation
module and are certified against central finite differences in the test
suite.  For Matern, d/dphi uses the identity d/ds [s^nu K_nu(s)] =
-s^nu K_{nu-1}(s); d/dnu has no closed form for the order derivative of
K_nu, which is evaluated by a central difference in the order (all other
terms are analytic).
"""

from __future__ import annotations

import numpy as np

from .special import bessel_k, digamma, gamma_ln

SPATIAL_FAMILIES = ("exponential", "gaussian", "cubic", "spherical", "matern")

# Below this scaled distance the Matern correlation differs from 1 by less
# than machine precision for the nu ranges used here; short-circuiting also
# avoids overflow of K_nu at tiny arguments.
_MATERN_TINY = 1e-10

_NU_FD_STEP = 1e-6


def _check_spatial_args(family: str, h, phi: float, nu) -> np.ndarray:
    if family not in SPATIAL_FAMILIES:
        raise ValueError(f"unknown spatial family {family!r}")
    h = np.asarray(h, dtype=float)
    if np.any(h < 0.0):
        raise ValueError("distances must be nonnegative")
    if not phi > 0.0:
        raise ValueError("range parameter phi must be positive")
    if family == "matern":
        if nu is None or not nu > 0.0:
            raise ValueError("matern requires smoothness nu > 0")
    return h


def _matern(h: np.ndarray, phi: float, nu: float) -> np.ndarray:
    out = np.ones_like(h)
    s = np.sqrt(2.0 * nu) * h / phi
    pos = s > _MATERN_TINY
    if np.any(pos):
        sp = s[pos]
        amp = np.exp((1.0 - nu) * np.log(2.0) - gamma_ln(nu))
        vals = amp * sp**nu * bessel_k(nu, sp)
        out[pos] = np.minimum(vals, 1.0)
    return out


def spatial_correlation(family: str, h, phi: float, nu: float | None = None):
    """Correlation value(s) of a spatial family at distance(s) h.

    Returns values in [0, 1]; exactly 1 at h = 0 and exactly 0 beyond the
    compact support of the cubic (2 phi) and spherical (phi) families.
    """
    h = _check_spatial_args(family, h, phi, nu)
    scalar = h.ndim == 0
    h = np.atleast_1d(h)

    if family == "exponential":
        out = np.exp(-h / phi)
    elif family == "gaussian":
        out = np.exp(-((h / phi) ** 2))
    elif family == "cubic":
        u = h / (2.0 * phi)
        out = np.where(
            u <= 1.0,
            1.0 - 7.0 * u**2 + 8.75 * u**3 - 3.5 * u**5 + 0.75 * u**7,
            0.0,
        )
    elif family == "spherical":
        v = h / phi
        out = np.where(v <= 1.0, 1.0 - 1.5 * v + 0.5 * v**3, 0.0)
    else:
        out = _matern(h, phi, nu)

    return float(out[0]) if scalar else out


def spatial_correlation_dphi(family: str, h, phi: float, nu: float | None = None):
    """Derivative of the spatial correlation with respect to the range phi."""
    h = _check_spatial_args(family, h, phi, nu)
    scalar = h.ndim == 0
    h = np.atleast_1d(h)

    if family == "exponential":
        out = (h / phi**2) * np.exp(-h / phi)
    elif family == "gaussian":
        out = (2.0 * h**2 / phi**3) * np.exp(-((h / phi) ** 2))
    elif family == "cubic":
        u = h / (2.0 * phi)
        out = np.where(
            u <= 1.0,
            (14.0 * u**2 - 26.25 * u**3 + 17.5 * u**5 - 5.25 * u**7) / phi,
            0.0,
        )
    elif family == "spherical":
        v = h / phi
        out = np.where(v <= 1.0, 1.5 * (v / phi) * (1.0 - v**2), 0.0)
    else:
        out = np.zeros_like(h)
        s = np.sqrt(2.0 * nu) * h / phi
        pos = s > _MATERN_TINY
        if np.any(pos):
            sp = s[pos]
            amp = np.exp((1.0 - nu) * np.log(2.0) - gamma_ln(nu))
            out[pos] = amp * sp ** (nu + 1.0) * bessel_k(nu - 1.0, sp) / phi
    return float(out[0]) if scalar else out


def matern_dnu(h, phi: float, nu: float):
    """Derivative of the Matern correlation with respect to the smoothness nu.

    All nu-dependence is handled analytically except the order derivative
    of K_nu, which uses a central difference (step scaled to nu).
    """
    h = _check_spatial_args("matern", h, phi, nu)
    scalar = h.ndim == 0
    h = np.atleast_1d(h)

    out = np.zeros_like(h)
    s = np.sqrt(2.0 * nu) * h / phi
    pos = s > _MATERN_TINY
    if np.any(pos):
        k_nu = bessel_k(nu, s[pos])
        # K_nu underflows at large arguments, where the correlation and its
        # nu-sensitivity are both numerically zero anyway.
        pos[pos] = k_nu > 0.0
        k_nu = k_nu[k_nu > 0.0]
    if np.any(pos):
        sp = s[pos]
        amp = np.exp((1.0 - nu) * np.log(2.0) - gamma_ln(nu))
        r = np.minimum(amp * sp**nu * k_nu, 1.0)
        # d/ds K_nu(s) = -(K_{nu-1} + K_{nu+1}) / 2; the chain through
        # s = sqrt(2 nu) h / phi contributes ds/dnu = s / (2 nu).
        dk_ds = -0.5 * (bessel_k(nu - 1.0, sp) + bessel_k(nu + 1.0, sp))
        delta = min(_NU_FD_STEP * max(1.0, nu), 0.5 * nu)
        dk_dorder = (bessel_k(nu + delta, sp) - bessel_k(nu - delta, sp)) / (2.0 * delta)
        dlog = (
            -np.log(2.0)
            - digamma(nu)
            + np.log(sp)
            + 0.5
            + (dk_dorder + dk_ds * sp / (2.0 * nu)) / k_nu
        )
        out[pos] = r * dlog
    return float(out[0]) if scalar else out


def _check_rho(rho: float) -> None:
    if not abs(rho) < 1.0:
        raise ValueError("AR(1) autocorrelation must satisfy |rho| < 1")


def temporal_correlation(t1: int, t2: int, rho: float) -> float:
    """AR(1) correlation rho^|t1 - t2| between integer time indices."""
    _check_rho(rho)
    return float(rho ** abs(int(t1) - int(t2)))


def temporal_correlation_drho(t1: int, t2: int, rho: float) -> float:
    """Derivative of the AR(1) correlation with respect to rho."""
    _check_rho(rho)
    lag = abs(int(t1) - int(t2))
    if lag == 0:
        return 0.0
    return float(lag * rho ** (lag - 1))
