"""Exact model sampling and the Monte Carlo parameter-recovery harness.

Sampling uses the factorization Y = M + A Z C^T with A A^T = Sigma and
C C^T = Psi: for Z a p x r matrix of iid standard normals, the vectorized
draw has covariance Psi kron Sigma.  The Kronecker factor C is never
formed; with C_sp, C_tp the Cholesky factors of the spatial and temporal
parts, each row of Z reshaped to (L, T) is mapped to C_sp W C_tp^T.

Studies are driven by a counter-based Philox generator with one substream
per replication (plus one for the layout draw), so results are
reproducible independently of execution order and can be dispatched to a
worker pool.  Locations are drawn once per scenario; replications redraw
the covariates and the noise.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .covariance import build_spatial_correlation, build_temporal_correlation, distance_matrix
from .errors import DataError, NumericalError
from .estimation import fit
from .model import (
    CoefficientStructure,
    CovarianceParams,
    Dataset,
    FitOptions,
    SpaceTimeLayout,
    _frozen_array,
)

GRID_SIDE = 10  # locations are sampled from the integer lattice [1, 10] x [1, 10]


def sample_matrix_normal(
    mean: np.ndarray,
    sigma: np.ndarray,
    psi_sp: np.ndarray,
    psi_tp: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """One draw from the matrix-normal with separable column covariance."""
    mean = np.asarray(mean, dtype=float)
    p = mean.shape[0]
    n_loc = psi_sp.shape[0]
    n_time = psi_tp.shape[0]
    if mean.shape[1] != n_loc * n_time:
        raise ValueError("mean has wrong number of columns for the factors")
    try:
        a = np.linalg.cholesky(np.asarray(sigma, dtype=float))
        c_sp = np.linalg.cholesky(np.asarray(psi_sp, dtype=float))
        c_tp = np.linalg.cholesky(np.asarray(psi_tp, dtype=float))
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"sampler covariance factorization failed: {err}") from err
    z = rng.standard_normal((p, n_loc, n_time))
    cols = np.tensordot(z @ c_tp.T, c_sp, axes=([1], [1])).transpose(0, 2, 1)
    return mean + a @ cols.reshape(p, n_loc * n_time)


def sample_grid_locations(n: int, rng: np.random.Generator) -> tuple:
    """n distinct lattice points from [1, GRID_SIDE]^2, as (id, x, y) triples."""
    total = GRID_SIDE * GRID_SIDE
    if not 1 <= n <= total:
        raise DataError(f"can sample at most {total} distinct grid locations")
    picks = rng.choice(total, size=n, replace=False)
    return tuple(
        (f"s{k + 1}", float(idx // GRID_SIDE + 1), float(idx % GRID_SIDE + 1))
        for k, idx in enumerate(picks)
    )


@dataclass(frozen=True)
class SimulationScenario:
    """Generating truth and design of one Monte Carlo study.

    Provide either an explicit layout or n_grid_locations (locations then
    drawn once, without replacement, from the integer grid).  Covariates
    are iid standard normal in every replication.
    """

    true_b: np.ndarray
    true_sigma: np.ndarray
    family: str
    params: CovarianceParams
    n_times: int
    n_replications: int
    seed: int
    layout: SpaceTimeLayout | None = None
    n_grid_locations: int | None = None
    structure: CoefficientStructure = field(default_factory=lambda: CoefficientStructure("dense"))
    fit_options: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self):
        object.__setattr__(self, "true_b", _frozen_array(self.true_b))
        object.__setattr__(self, "true_sigma", _frozen_array(self.true_sigma))
        if (self.layout is None) == (self.n_grid_locations is None):
            raise DataError("provide exactly one of layout or n_grid_locations")
        if self.n_times < 1 or self.n_replications < 1:
            raise DataError("n_times and n_replications must be positive")
        try:
            np.linalg.cholesky(np.asarray(self.true_sigma))
        except np.linalg.LinAlgError as err:
            raise DataError("true_sigma must be symmetric positive definite") from err
        if self.family == "matern" and self.params.nu is None:
            raise DataError("matern scenario requires nu in params")


def _substream(seed: int, key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(key,))))


def resolve_layout(scenario: SimulationScenario) -> SpaceTimeLayout:
    """The scenario's layout, drawing grid locations from the seed if needed."""
    times = tuple(range(1, scenario.n_times + 1))
    if scenario.layout is not None:
        return scenario.layout
    rng = _substream(scenario.seed, 0)
    return SpaceTimeLayout(sample_grid_locations(scenario.n_grid_locations, rng), times)


def simulate_dataset(
    scenario: SimulationScenario, layout: SpaceTimeLayout, rng: np.random.Generator
) -> Dataset:
    """Draw covariates and a response matrix from the scenario's truth."""
    prm = scenario.params
    h = distance_matrix(layout.coordinates())
    psi_sp = prm.sigma_s2 * build_spatial_correlation(h, scenario.family, prm.phi_s, prm.nu)
    psi_tp = build_temporal_correlation(layout.n_times, prm.rho)
    q = scenario.true_b.shape[1]
    x = rng.standard_normal((q, layout.n_columns))
    y = sample_matrix_normal(scenario.true_b @ x, scenario.true_sigma, psi_sp, psi_tp, rng)
    return Dataset(y=y, x=x, layout=layout)


_SCALAR_FIELDS = ("sigma_s2", "phi_s", "rho", "nu")


def fit_separate_rows(dataset: Dataset) -> np.ndarray:
    """Independent per-response regressions: ordinary least squares row by row.

    This is the baseline the joint model is compared against.  Each row of
    y is regressed on x assuming iid errors, so the stacked estimate
    ignores both the cross-response and the spatio-temporal dependence.
    With shared regressors the rows decouple, so one normal-equation solve
    covers all of them.
    """
    x = dataset.x
    try:
        return np.linalg.solve(x @ x.T, (dataset.y @ x.T).T).T
    except np.linalg.LinAlgError as err:
        raise NumericalError("per-response least squares system is singular") from err


def _run_replication(scenario: SimulationScenario, layout: SpaceTimeLayout,
                     rep: int, compare_separate: bool) -> dict:
    rng = _substream(scenario.seed, rep + 1)
    record: dict = {"replication": rep}
    try:
        dataset = simulate_dataset(scenario, layout, rng)
        model = fit(dataset, scenario.structure, scenario.family, scenario.fit_options)
        record.update(
            frob_b=float(np.linalg.norm(model.b_hat - scenario.true_b)),
            frob_sigma=float(np.linalg.norm(model.sigma_hat - scenario.true_sigma)),
            sigma_s2=model.cov_params.sigma_s2,
            phi_s=model.cov_params.phi_s,
            rho=model.cov_params.rho,
            nu=model.cov_params.nu if model.cov_params.nu is not None else float("nan"),
            log_lik=model.log_lik,
            bic=model.bic,
            n_iter=model.n_iter,
            converged=model.converged,
            error=None,
        )
        if compare_separate:
            b_sep = fit_separate_rows(dataset)
            record["frob_b_separate"] = float(np.linalg.norm(b_sep - scenario.true_b))
    except NumericalError as err:
        record["error"] = str(err)
    return record


@dataclass(frozen=True)
class StudyResult:
    """Per-replication errors and estimates of a finished study."""

    scenario: SimulationScenario
    layout: SpaceTimeLayout
    records: tuple

    @property
    def n_ok(self) -> int:
        return sum(1 for rec in self.records if rec.get("error") is None)

    def column(self, name: str) -> np.ndarray:
        return np.array(
            [rec[name] for rec in self.records if rec.get("error") is None], dtype=float
        )

    @property
    def failures(self) -> tuple:
        return tuple(
            (rec["replication"], rec["error"]) for rec in self.records if rec.get("error")
        )

    def summary(self) -> dict:
        """Medians of the matrix errors and MSEs of the scalar estimates.

        Matrix errors are reported both as raw Frobenius norms and per
        entry (norm divided by the entry count), the scale on which
        recovery quality is quoted.
        """
        p, q = self.scenario.true_b.shape
        truth = {
            "sigma_s2": self.scenario.params.sigma_s2,
            "phi_s": self.scenario.params.phi_s,
            "rho": self.scenario.params.rho,
            "nu": self.scenario.params.nu,
        }
        out = {
            "n_replications": self.scenario.n_replications,
            "n_ok": self.n_ok,
            "median_frob_b": float(np.median(self.column("frob_b"))),
            "median_frob_b_per_entry": float(np.median(self.column("frob_b"))) / (p * q),
            "median_frob_sigma": float(np.median(self.column("frob_sigma"))),
            "median_frob_sigma_per_entry": float(np.median(self.column("frob_sigma")))
            / (p * p),
            "fraction_converged": float(np.mean(self.column("converged"))),
        }
        for name in _SCALAR_FIELDS:
            if truth[name] is None:
                continue
            vals = self.column(name)
            if np.all(np.isnan(vals)):
                continue
            out[f"median_{name}"] = float(np.median(vals))
            out[f"mse_{name}"] = float(np.mean((vals - truth[name]) ** 2))
        if self.records and "frob_b_separate" in self.records[0]:
            sep = self.column("frob_b_separate")
            out["median_frob_b_separate"] = float(np.median(sep))
            out["median_frob_b_separate_per_entry"] = out["median_frob_b_separate"] / (p * q)
        return out


def run_study(
    scenario: SimulationScenario,
    n_workers: int | None = None,
    compare_separate: bool = False,
) -> StudyResult:
    """Run all replications of a scenario, optionally on a process pool.

    Individual replication failures are recorded, not fatal; the study
    aborts only if more than 10 percent of replications fail.
    """
    layout = resolve_layout(scenario)
    n_workers = n_workers or os.cpu_count() or 1
    reps = range(scenario.n_replications)
    if n_workers > 1 and scenario.n_replications > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            records = list(
                pool.map(
                    _run_replication,
                    [scenario] * scenario.n_replications,
                    [layout] * scenario.n_replications,
                    reps,
                    [compare_separate] * scenario.n_replications,
                )
            )
    else:
        records = [_run_replication(scenario, layout, i, compare_separate) for i in reps]
    records.sort(key=lambda rec: rec["replication"])
    result = StudyResult(scenario=scenario, layout=layout, records=tuple(records))
    n_failed = scenario.n_replications - result.n_ok
    if n_failed > 0.1 * scenario.n_replications:
        raise NumericalError(
            f"{n_failed} of {scenario.n_replications} replications failed; "
            f"first failure: {result.failures[0][1]}"
        )
    return result


def compare_joint_vs_separate(
    scenario: SimulationScenario, n_workers: int | None = None
) -> StudyResult:
    """Paired joint vs per-response fits on identical simulated data."""
    return run_study(scenario, n_workers=n_workers, compare_separate=True)
