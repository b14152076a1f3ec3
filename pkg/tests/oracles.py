"""Independent reference implementations used to check the fast paths.

Everything here is deliberately naive: dense Kronecker products, full
covariance solves, brute-force normal equations, and central finite
differences.  Tests compare the package's structured algorithms against
these oracles; the oracles never share code with the paths they check.
"""

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def dense_loglik(y, mean, sigma, psi):
    """Log density of vec(y) under N(vec(mean), psi kron sigma), column-major vec."""
    d = (y - mean).flatten(order="F")
    cov = np.kron(psi, sigma)
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return -0.5 * (d.size * LOG_2PI + logdet + d @ np.linalg.solve(cov, d))


def vec_gls(y, x, sigma, psi):
    """Minimizer of tr[Sigma^{-1} (Y - BX) Psi^{-1} (Y - BX)^T] over dense B."""
    p = y.shape[0]
    q = x.shape[0]
    sigma_inv = np.linalg.inv(sigma)
    psi_inv = np.linalg.inv(psi)
    h = np.kron(x @ psi_inv @ x.T, sigma_inv)
    g = (sigma_inv @ y @ psi_inv @ x.T).flatten(order="F")
    return np.linalg.solve(h, g).reshape((p, q), order="F")


def masked_gls(y, x, sigma, psi, mask, ridge=0.0):
    """vec_gls restricted to the free entries of a boolean mask."""
    sigma_inv = np.linalg.inv(sigma)
    psi_inv = np.linalg.inv(psi)
    h_full = np.kron(x @ psi_inv @ x.T, sigma_inv)
    g_full = (sigma_inv @ y @ psi_inv @ x.T).flatten(order="F")
    idx = np.flatnonzero(mask.flatten(order="F"))
    h = h_full[np.ix_(idx, idx)] + ridge * np.eye(idx.size)
    beta = np.linalg.solve(h, g_full[idx])
    out = np.zeros(mask.size)
    out[idx] = beta
    return out.reshape(mask.shape, order="F")


def fd_scalar(fn, x, step=1e-6):
    """Central finite difference of a scalar function."""
    return (fn(x + step) - fn(x - step)) / (2.0 * step)


def fd_matrix_gradient(fn, mat, step=1e-6, symmetric=False):
    """Entrywise central differences of a scalar function of a matrix.

    With symmetric=True, entries (i, j) and (j, i) are perturbed together
    (what a derivative with respect to a symmetric matrix means here).
    """
    mat = np.asarray(mat, dtype=float)
    grad = np.zeros_like(mat)
    for i in range(mat.shape[0]):
        for j in range(mat.shape[1]):
            if symmetric and j < i:
                continue
            delta = np.zeros_like(mat)
            delta[i, j] = step
            if symmetric and i != j:
                delta[j, i] = step
            grad[i, j] = (fn(mat + delta) - fn(mat - delta)) / (2.0 * step)
            if symmetric and i != j:
                grad[j, i] = grad[i, j]
    return grad


def bessel_k_half(order, x):
    """Closed forms of K_nu at half-integer orders 1/2, 3/2, 5/2."""
    x = np.asarray(x, dtype=float)
    base = np.sqrt(np.pi / (2.0 * x)) * np.exp(-x)
    if order == 0.5:
        return base
    if order == 1.5:
        return base * (1.0 + 1.0 / x)
    if order == 2.5:
        return base * (1.0 + 3.0 / x + 3.0 / x**2)
    raise ValueError(order)


def random_spd(rng, n, scale=1.0):
    a = rng.standard_normal((n, n))
    return scale * (a @ a.T + n * np.eye(n))


def random_correlation(rng, n):
    s = random_spd(rng, n)
    d = 1.0 / np.sqrt(np.diag(s))
    return s * np.outer(d, d)
