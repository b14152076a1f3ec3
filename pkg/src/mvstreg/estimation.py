"""Maximum likelihood estimation by alternating conditional maximization.

The log-likelihood of the model Y = B X + E with row covariance Sigma and
separable column covariance Psi = sigma_s2 * (R_sp kron R_tp) is

    l = -(p r / 2) log 2 pi - (r / 2) log|Sigma| - (p / 2) log|Psi|
        - (1/2) tr[Sigma^{-1} E Psi^{-1} E^T],

with log|Psi| = T (L log sigma_s2 + log|R_sp|) + L log|R_tp|.  The scale
split between Sigma and Psi is not identified (a Sigma, a^{-1} Psi gives
the same likelihood), so Sigma is normalized to Sigma[0, 0] = 1 after
every update, with the scale folded into sigma_s2.

Each fit cycle maximizes one parameter block conditional on the rest:

    B (closed form per structure)  ->  Sigma (closed form + normalization)
    ->  sigma_s2 (closed form)  ->  phi_s  ->  nu (Matern only)  ->  rho.

The scalar covariance parameters solve their score equations, e.g. for
the spatial range

    (p T / 2) tr(R_sp^{-1} dR_sp/dphi)
        = (1 / 2 sigma_s2) tr[Sigma^{-1} E (R_sp^{-1} dR_sp/dphi R_sp^{-1}
                                            kron R_tp^{-1}) E^T],

by bracketing and Brent root finding, with a golden-section maximization
of the 1-d profile likelihood as fallback so a cycle can never decrease
the likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .covariance import (
    CholeskyFactor,
    build_spatial_correlation,
    build_spatial_correlation_dnu,
    build_spatial_correlation_dphi,
    build_temporal_correlation,
    build_temporal_correlation_drho,
    distance_matrix,
    kron_apply,
    kron_solve,
)
from .errors import NumericalError
from .model import (
    CoefficientStructure,
    CovarianceParams,
    CovarianceSpec,
    Dataset,
    FitOptions,
    FittedModel,
    augment_covariates,
)

LOG_2PI = math.log(2.0 * math.pi)

_GRID_POINTS = 9
_MAX_DIAGONAL_SWEEPS = 500


# ---------------------------------------------------------------------------
# likelihood


def _loglik_from_factors(e, sigma_chol, csp, ctp, sigma_s2, p, n_loc, n_time):
    r = n_loc * n_time
    quad = float(np.trace(sigma_chol.solve(kron_solve(csp, ctp, e) @ e.T))) / sigma_s2
    log_det_psi = n_time * (n_loc * math.log(sigma_s2) + csp.log_det) + n_loc * ctp.log_det
    return -0.5 * (p * r * LOG_2PI + r * sigma_chol.log_det + p * log_det_psi + quad)


def log_likelihood(
    dataset: Dataset,
    b: np.ndarray,
    sigma: np.ndarray,
    spec: CovarianceSpec,
    allow_jitter: bool = False,
) -> float:
    """Full log density of the dataset at the given parameters."""
    b = np.asarray(b, dtype=float)
    if b.shape != (dataset.n_responses, dataset.n_covariates):
        raise ValueError(
            f"b has shape {b.shape}, expected "
            f"({dataset.n_responses}, {dataset.n_covariates})"
        )
    layout = dataset.layout
    params = spec.params
    h = distance_matrix(layout.coordinates())
    csp = CholeskyFactor(
        build_spatial_correlation(h, spec.family, params.phi_s, params.nu),
        jitter=allow_jitter,
        label="spatial correlation matrix",
    )
    ctp = CholeskyFactor(
        build_temporal_correlation(layout.n_times, params.rho),
        jitter=allow_jitter,
        label="temporal correlation matrix",
    )
    sigma_chol = CholeskyFactor(np.asarray(sigma, dtype=float), jitter=allow_jitter,
                                label="row covariance matrix")
    e = dataset.y - b @ dataset.x
    return _loglik_from_factors(
        e, sigma_chol, csp, ctp, params.sigma_s2,
        dataset.n_responses, layout.n_locations, layout.n_times,
    )


# ---------------------------------------------------------------------------
# coefficient updates


def update_b_dense(y: np.ndarray, x: np.ndarray, psi_solve) -> np.ndarray:
    """Closed-form GLS estimate B = Y Psi^{-1} X^T (X Psi^{-1} X^T)^{-1}."""
    q, r = x.shape
    if q > r:
        raise NumericalError(
            f"dense estimation needs at least as many columns as covariate rows "
            f"(q={q} > r={r})"
        )
    xpi = psi_solve(x)
    w = xpi @ x.T
    c = y @ xpi.T
    try:
        return np.linalg.solve(w, c.T).T
    except np.linalg.LinAlgError as err:
        rank = np.linalg.matrix_rank(w)
        raise NumericalError(
            f"covariate cross-product matrix is singular (rank {rank} < {q})"
        ) from err


def update_b_diagonal(
    y: np.ndarray,
    x: np.ndarray,
    sigma_inv: np.ndarray,
    psi_solve,
    tol: float = 1e-9,
    b0: np.ndarray | None = None,
) -> np.ndarray:
    """Diagonal coefficients by cyclic sweeps of the coupled closed forms.

    The stationarity condition for entry t reads, with G = X Psi^{-1} Y^T
    and W = X Psi^{-1} X^T,

        sigma^{tt} (G_tt - beta_t W_tt)
            + sum_{j != t} sigma^{tj} (G_tj - beta_j W_tj) = 0,

    so each sweep solves for beta_t given the others.  The sweeps converge
    because the objective is a positive-definite quadratic in the
    diagonal; when Sigma^{-1} is diagonal the coupling term vanishes and a
    single sweep gives the per-row weighted least squares solution.
    """
    p = y.shape[0]
    xpi = psi_solve(x)
    g = xpi @ y.T  # g[t, j] = sum_{k,l} x_{tk} psi^{kl} y_{jl}
    w = xpi @ x.T
    beta = np.zeros(p) if b0 is None else np.array(np.diag(b0), dtype=float)
    denom = np.diag(sigma_inv) * np.diag(w)
    if np.any(denom == 0.0):
        raise NumericalError("zero denominator in diagonal coefficient update")
    for _ in range(_MAX_DIAGONAL_SWEEPS):
        delta = 0.0
        for t in range(p):
            cross = 0.0
            for j in range(p):
                if j != t:
                    cross += sigma_inv[t, j] * (g[t, j] - beta[j] * w[t, j])
            new = (sigma_inv[t, t] * g[t, t] + cross) / denom[t]
            delta = max(delta, abs(new - beta[t]))
            beta[t] = new
        if delta <= tol:
            break
    return np.diag(beta)


def update_b_sparse(
    y: np.ndarray,
    x: np.ndarray,
    sigma_inv: np.ndarray,
    psi_solve,
    mask: np.ndarray,
    ridge_lambda: float = 0.0,
) -> np.ndarray:
    """Free coefficients of a sparsity pattern from their joint linear system.

    Solves (H + lambda I) beta_free = g where H gathers the entries of
    (X Psi^{-1} X^T kron Sigma^{-1}) indexed by the free set and g the
    matching entries of Sigma^{-1} Y Psi^{-1} X^T.  The Kronecker product
    is never materialized.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("sparse mask has no free entries")
    xpi = psi_solve(x)
    w = xpi @ x.T
    m = sigma_inv @ (y @ xpi.T)
    cols, rows = np.nonzero(mask.T)  # column-major enumeration of free entries
    hmat = w[np.ix_(cols, cols)] * sigma_inv[np.ix_(rows, rows)]
    g = m[rows, cols]
    hmat = hmat + ridge_lambda * np.eye(len(g))
    try:
        beta = np.linalg.solve(hmat, g)
    except np.linalg.LinAlgError as err:
        raise NumericalError(
            "sparse coefficient system is singular; set a positive ridge_lambda"
        ) from err
    if not np.all(np.isfinite(beta)):
        raise NumericalError(
            "sparse coefficient system is singular; set a positive ridge_lambda"
        )
    out = np.zeros(mask.shape)
    out[rows, cols] = beta
    return out


def update_b_block(
    y: np.ndarray, x: np.ndarray, psi_solve, blocks
) -> np.ndarray:
    """Blockwise GLS: each block is a dense problem on its row/column slice."""
    out = np.zeros((y.shape[0], x.shape[0]))
    for (r0, r1), (c0, c1) in blocks:
        try:
            out[r0 - 1 : r1, c0 - 1 : c1] = update_b_dense(
                y[r0 - 1 : r1], x[c0 - 1 : c1], psi_solve
            )
        except NumericalError as err:
            raise NumericalError(
                f"block rows {r0}-{r1} x cols {c0}-{c1}: {err}"
            ) from err
    return out


# ---------------------------------------------------------------------------
# covariance updates


def update_sigma(e: np.ndarray, psi_solve, r: int) -> tuple[np.ndarray, float]:
    """Row covariance update E Psi^{-1} E^T / r with the unit-entry normalization.

    Returns the normalized matrix (first diagonal entry exactly 1) and the
    scale c that was divided out; callers fold c into sigma_s2 so the
    likelihood is unchanged.
    """
    raw = (psi_solve(e) @ e.T) / r
    raw = 0.5 * (raw + raw.T)
    c = float(raw[0, 0])
    if c <= 0.0:
        raise NumericalError(
            "first response has zero residual variance; reorder the responses "
            "so the first row has positive residual variance"
        )
    out = raw / c
    out[0, 0] = 1.0
    return out, c


def update_sigma_s2(
    e: np.ndarray,
    sigma_chol: CholeskyFactor,
    csp: CholeskyFactor,
    ctp: CholeskyFactor,
    p: int,
    n_loc: int,
    n_time: int,
) -> float:
    """Closed-form spatial variance tr(Sigma^{-1} E (R_sp kron R_tp)^{-1} E^T) / (p L T)."""
    f = kron_solve(csp, ctp, e)
    val = float(np.trace(sigma_chol.solve(f @ e.T))) / (p * n_loc * n_time)
    if not val > 0.0:
        raise NumericalError("spatial variance update produced a nonpositive value")
    return val


# ---------------------------------------------------------------------------
# score equations for the scalar covariance parameters


@dataclass
class ScoreState:
    """Everything the scalar score equations need, with cached factors.

    Holds the current residuals, the factorized row covariance, the
    distance matrix, and the current covariance parameters.  Factors for
    the correlation matrices are rebuilt lazily when a parameter moves.
    """

    e: np.ndarray
    sigma: np.ndarray
    family: str
    params: CovarianceParams
    h: np.ndarray
    n_times: int
    allow_jitter: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.e = np.asarray(self.e, dtype=float)
        self.p = self.e.shape[0]
        self.n_loc = self.h.shape[0]
        self._sigma_chol = CholeskyFactor(
            np.asarray(self.sigma, dtype=float), jitter=self.allow_jitter,
            label="row covariance matrix",
        )

    @property
    def sigma_chol(self) -> CholeskyFactor:
        return self._sigma_chol

    def set_params(self, params: CovarianceParams) -> None:
        self.params = params
        self._cache.clear()

    def _spatial(self, phi: float, nu: float | None):
        key = ("sp", phi, nu)
        if key not in self._cache:
            r = build_spatial_correlation(self.h, self.family, phi, nu)
            self._cache[key] = (r, CholeskyFactor(r, jitter=self.allow_jitter,
                                                  label="spatial correlation matrix"))
        return self._cache[key]

    def _temporal(self, rho: float):
        key = ("tp", rho)
        if key not in self._cache:
            r = build_temporal_correlation(self.n_times, rho)
            self._cache[key] = (r, CholeskyFactor(r, jitter=self.allow_jitter,
                                                  label="temporal correlation matrix"))
        return self._cache[key]

    def _temporal_inverse(self, rho: float) -> np.ndarray:
        key = ("tpinv", rho)
        if key not in self._cache:
            _, ctp = self._temporal(rho)
            self._cache[key] = ctp.solve(np.eye(self.n_times))
        return self._cache[key]

    def _spatial_inverse(self, phi: float, nu: float | None) -> np.ndarray:
        key = ("spinv", phi, nu)
        if key not in self._cache:
            _, csp = self._spatial(phi, nu)
            self._cache[key] = csp.solve(np.eye(self.n_loc))
        return self._cache[key]

    def _quad_trace(self, a_mid: np.ndarray, b_mid: np.ndarray) -> float:
        f = kron_apply(a_mid, b_mid, self.e)
        return float(np.trace(self._sigma_chol.solve(f @ self.e.T)))

    # -- profile likelihoods (other parameters held at self.params) --------

    def profile(self, **replacements) -> float:
        params = self.params.replace(**replacements)
        _, csp = self._spatial(params.phi_s, params.nu)
        _, ctp = self._temporal(params.rho)
        return _loglik_from_factors(
            self.e, self._sigma_chol, csp, ctp, params.sigma_s2,
            self.p, self.n_loc, self.n_times,
        )

    # -- scores -------------------------------------------------------------

    def _spatial_score(self, dr: np.ndarray, phi: float, nu: float | None) -> tuple[float, float]:
        r_sp, csp = self._spatial(phi, nu)
        inner = csp.solve(dr)
        term1 = 0.5 * self.p * self.n_times * float(np.trace(inner))
        a_mid = csp.solve(inner.T)
        rtp_inv = self._temporal_inverse(self.params.rho)
        term2 = self._quad_trace(a_mid, rtp_inv) / (2.0 * self.params.sigma_s2)
        return term2 - term1, max(1.0, abs(term1), abs(term2))

    def score_phi(self, phi: float) -> float:
        """d loglik / d phi_s at phi, all other parameters fixed."""
        dr = build_spatial_correlation_dphi(self.h, self.family, phi, self.params.nu)
        return self._spatial_score(dr, phi, self.params.nu)[0]

    def score_phi_scaled(self, phi: float) -> float:
        dr = build_spatial_correlation_dphi(self.h, self.family, phi, self.params.nu)
        score, scale = self._spatial_score(dr, phi, self.params.nu)
        return score / scale

    def score_nu(self, nu: float) -> float:
        """d loglik / d nu at nu (Matern only)."""
        dr = build_spatial_correlation_dnu(self.h, self.params.phi_s, nu)
        return self._spatial_score(dr, self.params.phi_s, nu)[0]

    def score_nu_scaled(self, nu: float) -> float:
        dr = build_spatial_correlation_dnu(self.h, self.params.phi_s, nu)
        score, scale = self._spatial_score(dr, self.params.phi_s, nu)
        return score / scale

    def _rho_score(self, rho: float) -> tuple[float, float]:
        r_tp, ctp = self._temporal(rho)
        dr = build_temporal_correlation_drho(self.n_times, rho)
        inner = ctp.solve(dr)
        term1 = 0.5 * self.p * self.n_loc * float(np.trace(inner))
        b_mid = ctp.solve(inner.T)
        rsp_inv = self._spatial_inverse(self.params.phi_s, self.params.nu)
        term2 = self._quad_trace(rsp_inv, b_mid) / (2.0 * self.params.sigma_s2)
        return term2 - term1, max(1.0, abs(term1), abs(term2))

    def score_rho(self, rho: float) -> float:
        """d loglik / d rho at rho, all other parameters fixed."""
        return self._rho_score(rho)[0]

    def score_rho_scaled(self, rho: float) -> float:
        score, scale = self._rho_score(rho)
        return score / scale


def _solve_scalar(
    score,
    profile,
    bounds: tuple[float, float],
    x0: float,
    tol: float,
    log_scale: bool = False,
) -> tuple[float, bool]:
    """Root of a score equation inside bounds, never decreasing the profile.

    Brackets the score on a grid, refines sign changes with Brent, and
    falls back to a bounded maximization of the profile likelihood when no
    root improves on the incoming value.  Returns (value, at_boundary).
    """
    lo, hi = bounds
    x0 = min(max(x0, lo), hi)

    def safe(fn, x):
        try:
            v = fn(x)
        except NumericalError:
            return np.nan
        return v if np.isfinite(v) else np.nan

    if log_scale:
        grid = np.geomspace(lo, hi, _GRID_POINTS)
    else:
        grid = np.linspace(lo, hi, _GRID_POINTS)
    grid = np.unique(np.concatenate([grid, [x0]]))
    svals = np.array([safe(score, g) for g in grid])

    roots: list[float] = []
    for i in range(len(grid) - 1):
        s0, s1 = svals[i], svals[i + 1]
        if np.isnan(s0) or np.isnan(s1):
            continue
        if s0 == 0.0:
            roots.append(float(grid[i]))
        elif s0 * s1 < 0.0:
            try:
                roots.append(
                    float(brentq(lambda t: safe(score, t), grid[i], grid[i + 1], xtol=tol))
                )
            except (ValueError, RuntimeError):
                continue
    if svals[-1] == 0.0 and not np.isnan(svals[-1]):
        roots.append(float(grid[-1]))

    candidates = [x0] + roots
    boundary_candidates = [] if roots else [lo, hi]
    vals = {x: safe(profile, x) for x in candidates + boundary_candidates}
    best = max(vals, key=lambda x: -np.inf if np.isnan(vals[x]) else vals[x])

    needs_fallback = (not roots) or np.isnan(vals[best]) or (
        not np.isnan(vals[x0]) and vals[best] < vals[x0]
    )
    if needs_fallback:
        def neg_profile(t):
            v = safe(profile, t)
            return -v if np.isfinite(v) else np.inf

        res = minimize_scalar(
            neg_profile,
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": max(tol, 1e-10)},
        )
        cand = float(res.x)
        vals[cand] = safe(profile, cand)
        best = max(vals, key=lambda x: -np.inf if np.isnan(vals[x]) else vals[x])

    if np.isnan(vals[best]):
        raise NumericalError("score solve found no evaluable parameter value")
    at_boundary = bool(np.isclose(best, lo) or np.isclose(best, hi))
    return float(best), at_boundary


def solve_score_phi(state: ScoreState, bounds: tuple[float, float], tol: float = 1e-9):
    """Spatial range solving its score equation; returns (phi, at_boundary)."""
    return _solve_scalar(
        state.score_phi,
        lambda v: state.profile(phi_s=v),
        bounds,
        state.params.phi_s,
        tol,
        log_scale=True,
    )


def solve_score_nu(state: ScoreState, bounds: tuple[float, float], tol: float = 1e-9):
    """Matern smoothness solving its score equation; returns (nu, at_boundary)."""
    return _solve_scalar(
        state.score_nu,
        lambda v: state.profile(nu=v),
        bounds,
        state.params.nu,
        tol,
        log_scale=True,
    )


def solve_score_rho(state: ScoreState, bounds: tuple[float, float], tol: float = 1e-9):
    """AR(1) autocorrelation solving its score equation; returns (rho, at_boundary)."""
    return _solve_scalar(
        state.score_rho,
        lambda v: state.profile(rho=v),
        bounds,
        state.params.rho,
        tol,
        log_scale=False,
    )


# ---------------------------------------------------------------------------
# parameter counting and BIC


def count_parameters(structure: CoefficientStructure, p: int, q: int, family: str) -> int:
    """Free parameters: coefficients + row covariance (less the fixed entry)
    + scalar covariance parameters."""
    sigma_free = p * (p + 1) // 2 - 1
    cov_free = 4 if family == "matern" else 3
    return structure.n_free(p, q) + sigma_free + cov_free


def bic_value(log_lik: float, n_parameters: int, n: int) -> float:
    """Bayesian information criterion k log(n) - 2 loglik; lower is better."""
    return n_parameters * math.log(n) - 2.0 * log_lik


# ---------------------------------------------------------------------------
# the fit driver


def _identity_psi_solve(m: np.ndarray) -> np.ndarray:
    return m


def _make_psi_solve(csp, ctp, sigma_s2):
    return lambda m: kron_solve(csp, ctp, m) / sigma_s2


def _update_b(structure, y, x, sigma_inv, psi_solve, options, b_current):
    kind = structure.kind
    if kind == "identity":
        return b_current
    if kind == "dense":
        return update_b_dense(y, x, psi_solve)
    if kind == "diagonal":
        return update_b_diagonal(y, x, sigma_inv, psi_solve,
                                 tol=options.score_tol, b0=b_current)
    if kind == "sparse":
        return update_b_sparse(y, x, sigma_inv, psi_solve, structure.mask,
                               options.ridge_lambda)
    return update_b_block(y, x, psi_solve, structure.blocks)


def _initial_values(y, x, structure, options, h, n_loc, n_time, family):
    p, r = y.shape
    sigma_inv0 = np.eye(p)
    b0 = np.eye(p) if structure.kind == "identity" else _update_b(
        structure, y, x, sigma_inv0, _identity_psi_solve, options, np.eye(p)
    )
    e0 = y - b0 @ x
    raw = (e0 @ e0.T) / r
    c = float(raw[0, 0])
    if c <= 0.0:
        raise NumericalError(
            "first response has zero residual variance; reorder the responses "
            "so the first row has positive residual variance"
        )
    pos = h[h > 0]
    if options.init == "moment":
        sigma0 = 0.5 * (raw / c + raw.T / c)
        sigma0[0, 0] = 1.0
        sigma_s2 = c
        phi = float(np.median(pos)) if pos.size else 1.0
        ebar = e0.mean(axis=0).reshape(n_loc, n_time)
        if n_time > 1:
            num = float(np.sum(ebar[:, :-1] * ebar[:, 1:]))
            den = float(np.sum(ebar**2))
            rho = num / den if den > 0 else 0.0
        else:
            rho = 0.0
    else:
        sigma0 = np.eye(p)
        sigma_s2 = 1.0
        phi = float(np.mean(pos)) if pos.size else 1.0
        rho = 0.0
    return b0, sigma0, sigma_s2, phi, rho, 1.0


def fit(
    dataset: Dataset,
    structure: CoefficientStructure,
    family: str,
    options: FitOptions = FitOptions(),
) -> FittedModel:
    """Fit the model by cyclic conditional maximization.

    Convergence is declared when the likelihood gain over a full cycle
    drops below tol_loglik relative to the likelihood magnitude.  The
    per-cycle likelihood trace is checked for monotone ascent; a decrease
    beyond tolerance aborts with a diagnostic.
    """
    y = dataset.y
    x, structure = augment_covariates(dataset.x, structure)
    p, r = y.shape
    q = x.shape[0]
    structure.validate(p, q)
    layout = dataset.layout
    n_loc, n_time = layout.n_locations, layout.n_times
    is_matern = family == "matern"

    h = distance_matrix(layout.coordinates())
    pos = h[h > 0]
    if options.phi_bounds is not None:
        phi_bounds = options.phi_bounds
    elif pos.size:
        dmax = float(pos.max())
        phi_bounds = (1e-3 * dmax, 20.0 * dmax)
    else:
        phi_bounds = (0.5, 2.0)  # single location: range is immaterial

    b, sigma, sigma_s2, phi, rho, nu = _initial_values(
        y, x, structure, options, h, n_loc, n_time, family
    )
    phi = min(max(phi, phi_bounds[0]), phi_bounds[1])
    rho = min(max(rho, options.rho_bounds[0]), options.rho_bounds[1])
    nu_val = min(max(nu, options.nu_bounds[0]), options.nu_bounds[1]) if is_matern else None
    params = CovarianceParams(sigma_s2=sigma_s2, phi_s=phi, rho=rho, nu=nu_val)

    jit = options.allow_jitter

    def spatial_chol(prm):
        return CholeskyFactor(
            build_spatial_correlation(h, family, prm.phi_s, prm.nu),
            jitter=jit, label="spatial correlation matrix",
        )

    def temporal_chol(prm):
        return CholeskyFactor(
            build_temporal_correlation(n_time, prm.rho),
            jitter=jit, label="temporal correlation matrix",
        )

    csp = spatial_chol(params)
    ctp = temporal_chol(params)
    sigma_chol = CholeskyFactor(sigma, jitter=jit, label="row covariance matrix")
    e = y - b @ x

    trace = [
        _loglik_from_factors(e, sigma_chol, csp, ctp, params.sigma_s2, p, n_loc, n_time)
    ]
    converged = False
    boundary: tuple = ()
    n_iter = 0

    for it in range(1, options.max_iter + 1):
        n_iter = it
        try:
            psi_solve = _make_psi_solve(csp, ctp, params.sigma_s2)
            sigma_inv = sigma_chol.solve(np.eye(p))
            b = _update_b(structure, y, x, sigma_inv, psi_solve, options, b)
            e = y - b @ x

            sigma, scale = update_sigma(e, psi_solve, r)
            sigma_chol = CholeskyFactor(sigma, jitter=jit, label="row covariance matrix")
            params = params.replace(sigma_s2=params.sigma_s2 * scale)

            params = params.replace(
                sigma_s2=update_sigma_s2(e, sigma_chol, csp, ctp, p, n_loc, n_time)
            )

            flags = []
            state = ScoreState(
                e=e, sigma=sigma, family=family, params=params,
                h=h, n_times=n_time, allow_jitter=jit,
            )
            if pos.size:
                new_phi, at_b = solve_score_phi(state, phi_bounds, options.score_tol)
                if at_b:
                    flags.append("phi_s")
                params = params.replace(phi_s=new_phi)
                state.set_params(params)
            if is_matern and pos.size:
                new_nu, at_b = solve_score_nu(state, options.nu_bounds, options.score_tol)
                if at_b:
                    flags.append("nu")
                params = params.replace(nu=new_nu)
                state.set_params(params)
            if n_time > 1:
                new_rho, at_b = solve_score_rho(state, options.rho_bounds, options.score_tol)
                if at_b:
                    flags.append("rho")
                params = params.replace(rho=new_rho)
            boundary = tuple(flags)

            csp = spatial_chol(params)
            ctp = temporal_chol(params)
        except NumericalError as err:
            raise NumericalError(f"fit failed at iteration {it}: {err}") from err

        ll = _loglik_from_factors(e, sigma_chol, csp, ctp, params.sigma_s2, p, n_loc, n_time)
        prev = trace[-1]
        trace.append(ll)
        if ll < prev - 1e-8 * max(1.0, abs(prev)):
            raise NumericalError(
                f"log-likelihood decreased at iteration {it}: {prev:.10g} -> {ll:.10g} "
                f"(params {params})"
            )
        if abs(ll - prev) <= options.tol_loglik * max(1.0, abs(prev)):
            converged = True
            break

    k = count_parameters(structure, p, q, family)
    log_lik = trace[-1]
    spec = CovarianceSpec(family=family, params=params)
    return FittedModel(
        b_hat=b,
        sigma_hat=sigma,
        spec=spec,
        log_lik=log_lik,
        bic=bic_value(log_lik, k, p * r),
        n_parameters=k,
        n_iter=n_iter,
        converged=converged,
        trace=np.array(trace),
        boundary_flags=boundary,
    )
