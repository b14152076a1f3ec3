"""Domain types for the spatio-temporal matrix regression model.

The model regresses a p x r response matrix Y on a q x r covariate matrix
X through Y = B X + E, where the r = L*T columns enumerate all
location/time combinations and the error matrix E has a separable column
covariance (spatial factor x temporal AR(1) factor) together with an
unstructured p x p row covariance.

Column ordering contract
------------------------
Columns are location-major with time varying fastest:

    j = (l - 1) * T + t,   l in 1..L,  t in 1..T   (1-based)

This ordering is what makes the column covariance the Kronecker product
``spatial (L x L)  x  temporal (T x T)`` in that factor order, and it is
the ordering every file format of this package uses.

All types are immutable value objects; arrays are stored as read-only
copies, so instances can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError

STRUCTURE_KINDS = ("identity", "diagonal", "dense", "sparse", "block")


def _frozen_array(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SpaceTimeLayout:
    """Locations, time labels, and the column-index bijection.

    locations: sequence of (id, x, y) with unique ids and finite planar
    coordinates.  times: increasing numeric labels; AR(1) lags always use
    the integer positions 1..T, not the label values.
    """

    locations: tuple
    times: tuple

    def __post_init__(self):
        locs = tuple((str(i), float(x), float(y)) for i, x, y in self.locations)
        times = tuple(float(t) for t in self.times)
        if len(locs) < 1 or len(times) < 1:
            raise DataError("layout needs at least one location and one time point")
        ids = [i for i, _, _ in locs]
        if len(set(ids)) != len(ids):
            raise DataError("location ids must be unique")
        coords = np.array([(x, y) for _, x, y in locs])
        if not np.all(np.isfinite(coords)):
            raise DataError("location coordinates must be finite")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DataError("time labels must be strictly increasing")
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "times", times)

    @property
    def n_locations(self) -> int:
        return len(self.locations)

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def n_columns(self) -> int:
        return self.n_locations * self.n_times

    def coordinates(self) -> np.ndarray:
        """(L, 2) array of location coordinates, in layout order."""
        return np.array([(x, y) for _, x, y in self.locations])

    def column_index(self, loc: int, time: int) -> int:
        """1-based column index j for 1-based location loc and time index time."""
        if not 1 <= loc <= self.n_locations:
            raise IndexError(f"location index {loc} outside 1..{self.n_locations}")
        if not 1 <= time <= self.n_times:
            raise IndexError(f"time index {time} outside 1..{self.n_times}")
        return (loc - 1) * self.n_times + time

    def location_time(self, j: int) -> tuple[int, int]:
        """Inverse of column_index: 1-based (location, time) for column j."""
        if not 1 <= j <= self.n_columns:
            raise IndexError(f"column index {j} outside 1..{self.n_columns}")
        return (j - 1) // self.n_times + 1, (j - 1) % self.n_times + 1


@dataclass(frozen=True)
class Dataset:
    """Response matrix y (p x r), covariate matrix x (q x r), and their layout."""

    y: np.ndarray
    x: np.ndarray
    layout: SpaceTimeLayout

    def __post_init__(self):
        y = _frozen_array(self.y)
        x = _frozen_array(self.x)
        if y.ndim != 2 or x.ndim != 2:
            raise DataError("y and x must be 2-d matrices")
        r = self.layout.n_columns
        if y.shape[1] != r:
            raise DataError(f"y has {y.shape[1]} columns, layout implies {r}")
        if x.shape[1] != r:
            raise DataError(f"x has {x.shape[1]} columns, layout implies {r}")
        if y.shape[0] < 1 or x.shape[0] < 1:
            raise DataError("y and x need at least one row")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise DataError("y and x entries must be finite")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n_responses(self) -> int:
        return self.y.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.x.shape[0]

    @property
    def n_columns(self) -> int:
        return self.y.shape[1]


# Augmentation rules are tuples with 1-based covariate row indices:
#   ("intercept",), ("interaction", i, j), ("power", i, d)


def _validate_rules(rules, q: int) -> tuple:
    seen = set()
    out = []
    for rule in rules:
        rule = tuple(rule)
        kind = rule[0]
        if kind == "intercept":
            if len(rule) != 1:
                raise DataError("intercept rule takes no arguments")
        elif kind == "interaction":
            if len(rule) != 3:
                raise DataError("interaction rule needs two row indices")
            i, j = int(rule[1]), int(rule[2])
            if not (1 <= i <= q and 1 <= j <= q):
                raise DataError(f"interaction({i},{j}) references rows outside 1..{q}")
            if i == j:
                raise DataError("interaction rows must differ (use power for squares)")
            rule = ("interaction", min(i, j), max(i, j))
        elif kind == "power":
            if len(rule) != 3:
                raise DataError("power rule needs a row index and a degree")
            i, d = int(rule[1]), int(rule[2])
            if not 1 <= i <= q:
                raise DataError(f"power({i},{d}) references a row outside 1..{q}")
            if d < 2:
                raise DataError("power degree must be at least 2")
            rule = ("power", i, d)
        else:
            raise DataError(f"unknown augmentation rule {kind!r}")
        if rule in seen:
            raise DataError(f"duplicate augmentation rule {rule!r}")
        seen.add(rule)
        out.append(rule)
    return tuple(out)


@dataclass(frozen=True)
class CoefficientStructure:
    """Declared shape of the coefficient matrix B.

    kind selects one of: identity (B = I, nothing estimated), diagonal,
    dense, sparse (free entries given by a boolean p x q mask), or block
    (list of ((row_lo, row_hi), (col_lo, col_hi)) 1-based inclusive ranges
    that tile all rows; entries outside every block are fixed at zero).
    augmentation holds covariate-derivation rules applied before fitting.
    """

    kind: str
    mask: np.ndarray | None = None
    blocks: tuple | None = None
    augmentation: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in STRUCTURE_KINDS:
            raise DataError(f"unknown structure kind {self.kind!r}")
        if self.kind == "sparse":
            if self.mask is None:
                raise DataError("sparse structure needs a boolean mask")
            mask = _frozen_array(self.mask, dtype=bool)
            if mask.ndim != 2 or not mask.any():
                raise DataError("sparse mask must be 2-d with at least one free entry")
            object.__setattr__(self, "mask", mask)
        elif self.mask is not None:
            raise DataError(f"mask is only valid for sparse structures, not {self.kind}")
        if self.kind == "block":
            if not self.blocks:
                raise DataError("block structure needs at least one block")
            blocks = tuple(
                ((int(r0), int(r1)), (int(c0), int(c1)))
                for (r0, r1), (c0, c1) in self.blocks
            )
            for (r0, r1), (c0, c1) in blocks:
                if r0 < 1 or c0 < 1 or r1 < r0 or c1 < c0:
                    raise DataError(f"invalid block ranges (({r0},{r1}),({c0},{c1}))")
            object.__setattr__(self, "blocks", blocks)
        elif self.blocks is not None:
            raise DataError(f"blocks are only valid for block structures, not {self.kind}")
        if self.augmentation and self.kind not in ("dense", "sparse"):
            raise DataError("augmentation is supported for dense and sparse structures only")
        object.__setattr__(self, "augmentation", tuple(tuple(r) for r in self.augmentation))

    def validate(self, p: int, q: int) -> None:
        """Check compatibility with a p x q coefficient matrix."""
        if self.kind in ("identity", "diagonal") and p != q:
            raise DataError(f"{self.kind} structure requires p = q, got p={p}, q={q}")
        if self.kind == "sparse" and self.mask.shape != (p, q):
            raise DataError(
                f"sparse mask shape {self.mask.shape} does not match (p, q)=({p}, {q})"
            )
        if self.kind == "block":
            rows = np.zeros(p, dtype=int)
            for (r0, r1), (c0, c1) in self.blocks:
                if r1 > p or c1 > q:
                    raise DataError(f"block (({r0},{r1}),({c0},{c1})) exceeds ({p}, {q})")
                rows[r0 - 1 : r1] += 1
            if np.any(rows > 1):
                raise DataError("block row ranges overlap")
            if np.any(rows == 0):
                raise DataError("block row ranges must cover all response rows")
            cols = np.zeros(q, dtype=int)
            for (_, _), (c0, c1) in self.blocks:
                cols[c0 - 1 : c1] += 1
            if np.any(cols > 1):
                raise DataError("block column ranges overlap")

    def free_mask(self, p: int, q: int) -> np.ndarray:
        """Boolean p x q matrix of free (estimated) coefficient entries."""
        self.validate(p, q)
        if self.kind == "identity":
            return np.zeros((p, q), dtype=bool)
        if self.kind == "diagonal":
            return np.eye(p, dtype=bool)
        if self.kind == "dense":
            return np.ones((p, q), dtype=bool)
        if self.kind == "sparse":
            return np.array(self.mask, dtype=bool)
        out = np.zeros((p, q), dtype=bool)
        for (r0, r1), (c0, c1) in self.blocks:
            out[r0 - 1 : r1, c0 - 1 : c1] = True
        return out

    def n_free(self, p: int, q: int) -> int:
        """Number of free coefficients; this is what the BIC penalty counts."""
        return int(self.free_mask(p, q).sum())


def augment_covariates(
    x: np.ndarray, structure: CoefficientStructure
) -> tuple[np.ndarray, CoefficientStructure]:
    """Append derived covariate rows and expand the structure to match.

    Row order is deterministic: original rows, then the intercept row of
    ones (if requested), then interaction rows x_i * x_j in lexicographic
    (i, j) order, then power rows x_i^d sorted by (degree, row).  Sparse
    masks gain all-free columns for the derived rows.  With no rules the
    inputs are returned unchanged.
    """
    x = np.asarray(x, dtype=float)
    q = x.shape[0]
    rules = _validate_rules(structure.augmentation, q)
    if not rules:
        return x, structure

    rows = [x]
    if ("intercept",) in rules:
        rows.append(np.ones((1, x.shape[1])))
    interactions = sorted(r[1:] for r in rules if r[0] == "interaction")
    for i, j in interactions:
        rows.append((x[i - 1] * x[j - 1])[None, :])
    powers = sorted((r[2], r[1]) for r in rules if r[0] == "power")
    for d, i in powers:
        rows.append((x[i - 1] ** d)[None, :])
    x_aug = np.vstack(rows)

    n_extra = x_aug.shape[0] - q
    if structure.kind == "sparse":
        p = structure.mask.shape[0]
        mask_aug = np.hstack([structure.mask, np.ones((p, n_extra), dtype=bool)])
        expanded = CoefficientStructure("sparse", mask=mask_aug)
    else:
        expanded = CoefficientStructure("dense")
    return x_aug, expanded


@dataclass(frozen=True)
class CovarianceParams:
    """Parameters of the separable covariance.

    sigma_s2 and phi_s are the spatial variance and range, rho the AR(1)
    autocorrelation, nu the Matern smoothness (present only for that
    family).  The temporal variance is fixed at 1: the temporal factor is
    a pure correlation matrix, which is what makes the overall scale
    identifiable together with the unit first diagonal of the row
    covariance.
    """

    sigma_s2: float
    phi_s: float
    rho: float
    nu: float | None = None

    def __post_init__(self):
        if not self.sigma_s2 > 0.0:
            raise DataError("sigma_s2 must be positive")
        if not self.phi_s > 0.0:
            raise DataError("phi_s must be positive")
        if not abs(self.rho) < 1.0:
            raise DataError("rho must satisfy |rho| < 1")
        if self.nu is not None and not self.nu > 0.0:
            raise DataError("nu must be positive when present")

    def replace(self, **kw) -> "CovarianceParams":
        vals = {
            "sigma_s2": self.sigma_s2,
            "phi_s": self.phi_s,
            "rho": self.rho,
            "nu": self.nu,
        }
        vals.update(kw)
        return CovarianceParams(**vals)


@dataclass(frozen=True)
class CovarianceSpec:
    """A spatial family choice (temporal is always AR(1)) plus parameters."""

    family: str
    params: CovarianceParams

    def __post_init__(self):
        from .kernels import SPATIAL_FAMILIES

        if self.family not in SPATIAL_FAMILIES:
            raise DataError(f"unknown spatial family {self.family!r}")
        if self.family == "matern" and self.params.nu is None:
            raise DataError("matern covariance requires nu")
        if self.family != "matern" and self.params.nu is not None:
            raise DataError(f"nu is only meaningful for matern, not {self.family}")

    @property
    def n_parameters(self) -> int:
        """Count of scalar covariance parameters (sigma_s2, phi_s, rho, [nu])."""
        return 4 if self.family == "matern" else 3


@dataclass(frozen=True)
class FitOptions:
    """Knobs of the alternating-maximization fit.

    Bounds set to None are derived from the data at fit time (range bounds
    from the pairwise distances).  ridge_lambda stabilizes the sparse
    coefficient system.  init selects the starting-value policy: "moment"
    (data-driven starting values) or "neutral" (identity covariances).
    allow_jitter enables the capped diagonal jitter escalation when a
    correlation matrix fails to factorize; the default fails loudly.
    """

    max_iter: int = 200
    tol_loglik: float = 1e-8
    ridge_lambda: float = 1e-8
    score_tol: float = 1e-9
    phi_bounds: tuple[float, float] | None = None
    nu_bounds: tuple[float, float] = (0.1, 10.0)
    rho_bounds: tuple[float, float] = (-0.999, 0.999)
    init: str = "moment"
    allow_jitter: bool = False

    def __post_init__(self):
        if self.max_iter < 1:
            raise DataError("max_iter must be at least 1")
        if not (self.tol_loglik > 0 and self.score_tol > 0):
            raise DataError("tolerances must be positive")
        if self.ridge_lambda < 0:
            raise DataError("ridge_lambda must be nonnegative")
        for name in ("phi_bounds", "nu_bounds", "rho_bounds"):
            b = getattr(self, name)
            if b is not None:
                lo, hi = float(b[0]), float(b[1])
                if not lo < hi:
                    raise DataError(f"{name} must be an ordered pair")
                object.__setattr__(self, name, (lo, hi))
        if self.init not in ("moment", "neutral"):
            raise DataError("init must be 'moment' or 'neutral'")


@dataclass(frozen=True)
class FittedModel:
    """Result of a fit: estimates, likelihood, BIC, and the iteration trace."""

    b_hat: np.ndarray
    sigma_hat: np.ndarray
    spec: CovarianceSpec
    log_lik: float
    bic: float
    n_parameters: int
    n_iter: int
    converged: bool
    trace: np.ndarray
    boundary_flags: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "b_hat", _frozen_array(self.b_hat))
        object.__setattr__(self, "sigma_hat", _frozen_array(self.sigma_hat))
        object.__setattr__(self, "trace", _frozen_array(self.trace))

    @property
    def cov_params(self) -> CovarianceParams:
        return self.spec.params


@dataclass(frozen=True)
class DiagnosticsReport:
    """Standardized residuals and the three residual diagnostics.

    e_star is the two-sided whitened residual matrix; d_sq the per-column
    Mahalanobis distances (chi-squared, p dof reference); r_sq the per-row
    distances (chi-squared, r dof); z the cell-wise residuals (standard
    normal).  global_stat is the sum of squared whitened residuals,
    referenced to chi-squared with p*r dof.
    """

    e_star: np.ndarray
    d_sq: np.ndarray
    r_sq: np.ndarray
    z: np.ndarray
    global_stat: float
    thresholds: dict
    flags: dict

    def __post_init__(self):
        for name in ("e_star", "d_sq", "r_sq", "z"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        if np.any(self.d_sq < 0) or np.any(self.r_sq < 0):
            raise NumericalError("squared distances must be nonnegative")
