"""File formats: long-format CSV ingestion, JSON outputs, plot data.

Input contract
--------------
Three CSV files describe a dataset:

    locations.csv   header  id,x,y
    y.csv           header  variable,location_id,time,value
    x.csv           header  covariate,location_id,time,value

Every (variable, location, time) combination must appear exactly once in
y.csv, and likewise for covariates in x.csv.  Variables and covariates
are ordered by first appearance, locations by their order in
locations.csv, time labels numerically ascending.  Matrices are assembled
in the package's column order: location-major, time fastest.

Output contract
---------------
Structured results are JSON with every real number serialized at 17
significant digits, which makes outputs byte-identical across runs and
round-trips doubles exactly.  Plot-ready data are plain CSVs.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .diagnostics import qq_points
from .errors import DataError
from .model import (
    CoefficientStructure,
    CovarianceParams,
    CovarianceSpec,
    Dataset,
    FitOptions,
    FittedModel,
    SpaceTimeLayout,
)
from .simulation import SimulationScenario, StudyResult

# ---------------------------------------------------------------------------
# canonical JSON


def _canonical(obj) -> str:
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (float, np.floating)):
        return format(float(obj), ".17g")
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_canonical(v) for v in obj) + "]"
    if isinstance(obj, dict):
        return (
            "{"
            + ", ".join(f"{json.dumps(str(k))}: {_canonical(v)}" for k, v in obj.items())
            + "}"
        )
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj) -> str:
    """Deterministic JSON text with reals at 17 significant digits."""
    return _canonical(obj) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_json(obj))


# ---------------------------------------------------------------------------
# CSV ingestion


def _read_rows(path, expected_header: list[str]) -> list[list[str]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header != expected_header:
            raise DataError(
                f"{path}: header must be {','.join(expected_header)}, "
                f"got {','.join(header)}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected_header):
                raise DataError(f"{path}:{lineno}: expected {len(expected_header)} fields")
            rows.append([c.strip() for c in row])
    return rows


def load_locations(path) -> tuple:
    """(id, x, y) triples from a locations CSV, in file order."""
    rows = _read_rows(path, ["id", "x", "y"])
    if not rows:
        raise DataError(f"{path}: no locations")
    out = []
    seen = set()
    for row in rows:
        loc_id = row[0]
        if loc_id in seen:
            raise DataError(f"{path}: duplicate location id {loc_id!r}")
        seen.add(loc_id)
        try:
            out.append((loc_id, float(row[1]), float(row[2])))
        except ValueError:
            raise DataError(f"{path}: non-numeric coordinate for location {loc_id!r}") from None
    return tuple(out)


def _load_long(path, kind: str, loc_ids: list[str]):
    rows = _read_rows(path, [kind, "location_id", "time", "value"])
    names: list[str] = []
    times: set[float] = set()
    cells: dict = {}
    loc_set = set(loc_ids)
    for row in rows:
        name, loc, time_s, value_s = row
        if loc not in loc_set:
            raise DataError(f"{path}: unknown location id {loc!r}")
        try:
            time = float(time_s)
        except ValueError:
            raise DataError(f"{path}: non-numeric time {time_s!r}") from None
        try:
            value = float(value_s)
        except ValueError:
            raise DataError(
                f"{path}: non-numeric value {value_s!r} for {kind} {name!r}, "
                f"location {loc}, time {time_s}"
            ) from None
        if name not in names:
            names.append(name)
        key = (name, loc, time)
        if key in cells:
            raise DataError(
                f"{path}: duplicate row for {kind} {name!r}, location {loc}, time {time_s}"
            )
        cells[key] = value
        times.add(time)
    if not cells:
        raise DataError(f"{path}: no data rows")
    return names, sorted(times), cells


def _assemble(names, loc_ids, times, cells, path, kind) -> np.ndarray:
    n_time = len(times)
    out = np.empty((len(names), len(loc_ids) * n_time))
    for i, name in enumerate(names):
        for li, loc in enumerate(loc_ids):
            for ti, time in enumerate(times):
                key = (name, loc, time)
                if key not in cells:
                    raise DataError(
                        f"{path}: missing value for {kind} {name!r}, "
                        f"location {loc}, time {time:g}"
                    )
                out[i, li * n_time + ti] = cells[key]
    return out


def load_dataset(y_path, x_path, loc_path, y_scale=None, x_scale=None):
    """Assemble a Dataset from the three CSV files.

    Returns (dataset, variable_names, covariate_names).  y_scale / x_scale
    are optional per-row multipliers (length p and q) applied after
    loading; by default no scaling is applied.
    """
    locations = load_locations(loc_path)
    loc_ids = [i for i, _, _ in locations]
    y_names, y_times, y_cells = _load_long(y_path, "variable", loc_ids)
    x_names, x_times, x_cells = _load_long(x_path, "covariate", loc_ids)
    if y_times != x_times:
        raise DataError(
            f"time labels differ between {y_path} ({len(y_times)} points) "
            f"and {x_path} ({len(x_times)} points)"
        )
    y = _assemble(y_names, loc_ids, y_times, y_cells, y_path, "variable")
    x = _assemble(x_names, loc_ids, x_times, x_cells, x_path, "covariate")
    if y_scale is not None:
        y_scale = np.asarray(y_scale, dtype=float)
        if y_scale.shape != (y.shape[0],):
            raise DataError(f"y_scale needs {y.shape[0]} entries, got {y_scale.size}")
        y = y * y_scale[:, None]
    if x_scale is not None:
        x_scale = np.asarray(x_scale, dtype=float)
        if x_scale.shape != (x.shape[0],):
            raise DataError(f"x_scale needs {x.shape[0]} entries, got {x_scale.size}")
        x = x * x_scale[:, None]
    layout = SpaceTimeLayout(locations, tuple(y_times))
    dataset = Dataset(y=y, x=x, layout=layout)
    return dataset, y_names, x_names


# ---------------------------------------------------------------------------
# structures and scenarios


def structure_to_dict(structure: CoefficientStructure) -> dict:
    out: dict = {"kind": structure.kind}
    if structure.mask is not None:
        out["mask"] = structure.mask.astype(int)
    if structure.blocks is not None:
        out["blocks"] = [list(map(list, b)) for b in structure.blocks]
    if structure.augmentation:
        out["augmentation"] = [list(r) for r in structure.augmentation]
    return out


def structure_from_dict(d: dict) -> CoefficientStructure:
    mask = np.asarray(d["mask"], dtype=bool) if "mask" in d else None
    blocks = (
        tuple((tuple(b[0]), tuple(b[1])) for b in d["blocks"]) if "blocks" in d else None
    )
    aug = tuple(tuple(r) for r in d.get("augmentation", ()))
    return CoefficientStructure(d["kind"], mask=mask, blocks=blocks, augmentation=aug)


def params_to_dict(params: CovarianceParams) -> dict:
    return {
        "sigma_s2": params.sigma_s2,
        "phi_s": params.phi_s,
        "rho": params.rho,
        "nu": params.nu,
    }


def params_from_dict(d: dict) -> CovarianceParams:
    return CovarianceParams(
        sigma_s2=float(d["sigma_s2"]),
        phi_s=float(d["phi_s"]),
        rho=float(d["rho"]),
        nu=None if d.get("nu") is None else float(d["nu"]),
    )


def fit_to_dict(model: FittedModel, structure: CoefficientStructure) -> dict:
    return {
        "b_hat": model.b_hat,
        "sigma_hat": model.sigma_hat,
        "family": model.spec.family,
        "cov_params": params_to_dict(model.cov_params),
        "log_lik": model.log_lik,
        "bic": model.bic,
        "n_parameters": model.n_parameters,
        "n_iter": model.n_iter,
        "converged": model.converged,
        "boundary_flags": list(model.boundary_flags),
        "trace": model.trace,
        "structure": structure_to_dict(structure),
    }


def write_fit(path, model: FittedModel, structure: CoefficientStructure) -> None:
    write_json(path, fit_to_dict(model, structure))


def load_fit(path) -> dict:
    """Reload a fit file: arrays, covariance spec, and declared structure."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise DataError(f"cannot read fit file {path}: {err}") from None
    spec = CovarianceSpec(raw["family"], params_from_dict(raw["cov_params"]))
    return {
        "b_hat": np.asarray(raw["b_hat"], dtype=float),
        "sigma_hat": np.asarray(raw["sigma_hat"], dtype=float),
        "spec": spec,
        "log_lik": float(raw["log_lik"]),
        "bic": float(raw["bic"]),
        "n_parameters": int(raw["n_parameters"]),
        "structure": structure_from_dict(raw["structure"]),
    }


def scenario_from_json(path) -> SimulationScenario:
    """Parse a simulation scenario description file."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise DataError(f"cannot read scenario file {path}: {err}") from None
    try:
        layout = None
        if "locations" in raw:
            layout = SpaceTimeLayout(
                tuple((str(i), float(x), float(y)) for i, x, y in raw["locations"]),
                tuple(range(1, int(raw["n_times"]) + 1)),
            )
        structure = (
            structure_from_dict(raw["structure"])
            if "structure" in raw
            else CoefficientStructure("dense")
        )
        options = FitOptions(**raw.get("fit_options", {}))
        return SimulationScenario(
            true_b=np.asarray(raw["true_b"], dtype=float),
            true_sigma=np.asarray(raw["true_sigma"], dtype=float),
            family=raw["family"],
            params=params_from_dict(raw["params"]),
            n_times=int(raw["n_times"]),
            n_replications=int(raw["n_replications"]),
            seed=int(raw["seed"]),
            layout=layout,
            n_grid_locations=(
                int(raw["n_grid_locations"]) if "n_grid_locations" in raw else None
            ),
            structure=structure,
            fit_options=options,
        )
    except KeyError as err:
        raise DataError(f"scenario file {path} is missing key {err}") from None


# ---------------------------------------------------------------------------
# study outputs

_REPLICATION_COLUMNS = (
    "replication",
    "frob_b",
    "frob_b_per_entry",
    "frob_sigma",
    "frob_sigma_per_entry",
    "sigma_s2",
    "phi_s",
    "rho",
    "nu",
    "log_lik",
    "bic",
    "n_iter",
    "converged",
    "frob_b_separate",
    "error",
)


def write_study(out_dir, result: StudyResult, label: str = "study") -> None:
    """Per-replication CSV, summary JSON, and a boxplot-ready long CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    p, q = result.scenario.true_b.shape

    with open(out_dir / "replications.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_REPLICATION_COLUMNS)
        for rec in result.records:
            if rec.get("error"):
                writer.writerow([rec["replication"]] + [""] * 13 + [rec["error"]])
                continue
            writer.writerow(
                [
                    rec["replication"],
                    f"{rec['frob_b']:.17g}",
                    f"{rec['frob_b'] / (p * q):.17g}",
                    f"{rec['frob_sigma']:.17g}",
                    f"{rec['frob_sigma'] / (p * p):.17g}",
                    f"{rec['sigma_s2']:.17g}",
                    f"{rec['phi_s']:.17g}",
                    f"{rec['rho']:.17g}",
                    f"{rec['nu']:.17g}",
                    f"{rec['log_lik']:.17g}",
                    f"{rec['bic']:.17g}",
                    rec["n_iter"],
                    int(rec["converged"]),
                    f"{rec['frob_b_separate']:.17g}" if "frob_b_separate" in rec else "",
                    "",
                ]
            )

    write_json(out_dir / "summary.json", result.summary())

    quantities = ["frob_b", "frob_sigma", "sigma_s2", "phi_s", "rho"]
    if result.scenario.family == "matern":
        quantities.append("nu")
    if result.records and "frob_b_separate" in result.records[0]:
        quantities.append("frob_b_separate")
    with open(out_dir / "boxplot_long.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "quantity", "replication", "value"])
        for rec in result.records:
            if rec.get("error"):
                continue
            for name in quantities:
                writer.writerow([label, name, rec["replication"], f"{rec[name]:.17g}"])


# ---------------------------------------------------------------------------
# comparison outputs


def comparison_table(entries: list[dict]) -> str:
    """Plain-text ranking table, BIC ascending (best model first)."""
    show_structure = len({e.get("structure", "dense") for e in entries}) > 1
    rows = []
    for e in sorted(entries, key=lambda d: d["bic"]):
        label = e["family"].capitalize()
        if show_structure:
            label += f" [{e.get('structure', 'dense')}]"
        rows.append((label, f"{e['bic']:.3f}"))
    width = max(len("Correlation"), max(len(r[0]) for r in rows))
    lines = [f"{'Correlation':<{width}}  BIC", f"{'-' * width}  {'-' * 12}"]
    lines += [f"{name:<{width}}  {bic}" for name, bic in rows]
    return "\n".join(lines) + "\n"


def write_comparison(out_dir, entries: list[dict]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ranked = sorted(entries, key=lambda d: d["bic"])
    write_json(out_dir / "comparison.json", ranked)
    (out_dir / "comparison.txt").write_text(comparison_table(entries))


# ---------------------------------------------------------------------------
# diagnostics outputs


def write_diagnostics(out_dir, report, dataset: Dataset, svg: bool = False) -> None:
    """Report JSON plus plot-ready CSVs (and optional SVG renderings)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layout = dataset.layout
    write_json(
        out_dir / "diagnostics.json",
        {
            "global_stat": report.global_stat,
            "thresholds": report.thresholds,
            "flags": {
                "columns": list(report.flags["columns"]),
                "rows": list(report.flags["rows"]),
                "cells": [list(c) for c in report.flags["cells"]],
            },
            "d_sq": report.d_sq,
            "r_sq": report.r_sq,
            "z": report.z,
            "e_star": report.e_star,
        },
    )

    with open(out_dir / "column_distances.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["column", "location_id", "time", "d_sq", "threshold"])
        for j, val in enumerate(report.d_sq, start=1):
            loc, t = layout.location_time(j)
            writer.writerow(
                [
                    j,
                    layout.locations[loc - 1][0],
                    f"{layout.times[t - 1]:g}",
                    f"{val:.17g}",
                    f"{report.thresholds['d_sq']:.17g}",
                ]
            )

    with open(out_dir / "row_distances.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "r_sq", "threshold"])
        for i, val in enumerate(report.r_sq, start=1):
            writer.writerow([i, f"{val:.17g}", f"{report.thresholds['r_sq']:.17g}"])

    with open(out_dir / "cell_residuals.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "column", "location_id", "time", "z", "band"])
        p, r = report.z.shape
        for i in range(1, p + 1):
            for j in range(1, r + 1):
                loc, t = layout.location_time(j)
                writer.writerow(
                    [
                        i,
                        j,
                        layout.locations[loc - 1][0],
                        f"{layout.times[t - 1]:g}",
                        f"{report.z[i - 1, j - 1]:.17g}",
                        f"{report.thresholds['z']:.17g}",
                    ]
                )

    qq = qq_points(report.e_star)
    with open(out_dir / "qq.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theoretical", "observed"])
        for theo, obs in qq:
            writer.writerow([f"{theo:.17g}", f"{obs:.17g}"])

    if svg:
        _render_svg(out_dir, report)


def _render_svg(out_dir: Path, report) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    r = report.d_sq.size
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.vlines(np.arange(1, r + 1), 0.0, report.d_sq, color="steelblue", lw=1)
    ax.axhline(report.thresholds["d_sq"], color="firebrick", ls="--", lw=1)
    ax.set_xlabel("space-time column")
    ax.set_ylabel("column distance")
    fig.tight_layout()
    fig.savefig(out_dir / "column_distances.svg")
    plt.close(fig)

    p = report.r_sq.size
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(np.arange(1, p + 1), report.r_sq, color="steelblue")
    ax.axhline(report.thresholds["r_sq"], color="firebrick", ls="--", lw=1)
    ax.set_xlabel("response row")
    ax.set_ylabel("row distance")
    fig.tight_layout()
    fig.savefig(out_dir / "row_distances.svg")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 3))
    for i in range(report.z.shape[0]):
        ax.plot(np.arange(1, r + 1), report.z[i], lw=0.8, label=f"row {i + 1}")
    band = report.thresholds["z"]
    ax.axhline(band, color="firebrick", ls="--", lw=1)
    ax.axhline(-band, color="firebrick", ls="--", lw=1)
    ax.set_xlabel("space-time column")
    ax.set_ylabel("cell residual")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_dir / "cell_residuals.svg")
    plt.close(fig)
