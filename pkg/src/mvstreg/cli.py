"""Command-line interface: fit, compare, simulate, diagnose.

Every option can also be supplied through an INI-style config file
(``--config``) whose keys match the long flag names; explicit flags win.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Failures print a single line ``mvstreg: error: <kind>: <reason>`` on
stderr.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
from pathlib import Path

import numpy as np

from .data_io import (
    fit_to_dict,
    load_dataset,
    load_fit,
    scenario_from_json,
    write_comparison,
    write_diagnostics,
    write_json,
    write_study,
)
from .diagnostics import diagnose
from .errors import DataError, NumericalError
from .estimation import bic_value, fit, log_likelihood
from .kernels import SPATIAL_FAMILIES
from .model import (
    CoefficientStructure,
    Dataset,
    FitOptions,
    augment_covariates,
)
from .simulation import run_study


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_structure(text: str) -> CoefficientStructure:
    kind, _, arg = text.partition(":")
    kind = kind.strip().lower()
    if kind in ("dense", "identity", "diagonal"):
        return CoefficientStructure(kind)
    if kind == "sparse":
        if not arg:
            raise UsageError("sparse structure needs a mask file: sparse:<mask.csv>")
        path = Path(arg)
        if not path.exists():
            raise DataError(f"mask file not found: {path}")
        try:
            mask = np.loadtxt(path, delimiter=",", ndmin=2)
        except ValueError as err:
            raise DataError(f"cannot parse mask file {path}: {err}") from None
        return CoefficientStructure("sparse", mask=mask.astype(bool))
    if kind == "block":
        if not arg:
            raise UsageError("block structure needs ranges: block:1-2x1-2;3-4x3-3")
        blocks = []
        for part in arg.split(";"):
            try:
                row_part, col_part = part.lower().split("x")
                r0, r1 = (int(v) for v in row_part.split("-"))
                c0, c1 = (int(v) for v in col_part.split("-"))
            except ValueError:
                raise UsageError(f"cannot parse block range {part!r}") from None
            blocks.append(((r0, r1), (c0, c1)))
        return CoefficientStructure("block", blocks=tuple(blocks))
    raise UsageError(f"unknown structure {text!r}")


def _parse_augment(text: str) -> tuple:
    rules = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        bits = part.split(":")
        name = bits[0].lower()
        if name == "intercept":
            rules.append(("intercept",))
        elif name in ("interaction", "power"):
            if len(bits) != 3:
                raise UsageError(f"{name} rule needs two arguments: {name}:<i>:<j>")
            try:
                rules.append((name, int(bits[1]), int(bits[2])))
            except ValueError:
                raise UsageError(f"non-integer argument in rule {part!r}") from None
        else:
            raise UsageError(f"unknown augmentation rule {part!r}")
    return tuple(rules)


def _parse_bounds(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"bounds must be 'lo,hi', got {text!r}") from None
    return lo, hi


def _parse_scales(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"scale list must be comma-separated reals, got {text!r}") from None


def _add_data_args(sp):
    sp.add_argument("--y", help="response CSV (variable,location_id,time,value)")
    sp.add_argument("--x", help="covariate CSV (covariate,location_id,time,value)")
    sp.add_argument("--locations", help="locations CSV (id,x,y)")
    sp.add_argument("--y-scale", help="comma list of per-response multipliers")
    sp.add_argument("--x-scale", help="comma list of per-covariate multipliers")


def _add_model_args(sp):
    sp.add_argument(
        "--structure",
        default=None,
        help="dense | identity | diagonal | sparse:<mask.csv> | block:<r0-r1xc0-c1;...>",
    )
    sp.add_argument("--augment", help="rules: intercept,interaction:<i>:<j>,power:<i>:<d>")
    sp.add_argument("--max-iter", type=int)
    sp.add_argument("--tol-loglik", type=float)
    sp.add_argument("--ridge-lambda", type=float)
    sp.add_argument("--score-tol", type=float)
    sp.add_argument("--phi-bounds", help="lo,hi")
    sp.add_argument("--nu-bounds", help="lo,hi")
    sp.add_argument("--rho-bounds", help="lo,hi")
    sp.add_argument("--init", choices=["moment", "neutral"])
    sp.add_argument("--jitter", action="store_true", default=None,
                    help="allow capped diagonal jitter on factorization failure")
    sp.add_argument("--bic-n", choices=["pr", "r"],
                    help="BIC sample-size convention (default pr)")


def build_parser() -> _Parser:
    parser = _Parser(prog="mvstreg",
                     description="Matrix-variate spatio-temporal regression")
    parser.add_argument("--config", help="INI config file; flags override its keys")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one model and write fit.json")
    _add_data_args(p_fit)
    _add_model_args(p_fit)
    p_fit.add_argument("--family", choices=list(SPATIAL_FAMILIES))
    p_fit.add_argument("--out", help="output directory")

    p_cmp = sub.add_parser("compare", help="fit several models and rank them by BIC")
    _add_data_args(p_cmp)
    _add_model_args(p_cmp)
    p_cmp.add_argument("--family", default="all",
                       help="one family or 'all' (default all five)")
    p_cmp.add_argument("--structures",
                       help="semicolon-separated structure specs to compare")
    p_cmp.add_argument("--out", help="output directory")

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo study from a scenario file")
    p_sim.add_argument("--scenario", help="scenario JSON file")
    p_sim.add_argument("--out", help="output directory")
    p_sim.add_argument("--workers", type=int, help="worker processes (default: cores)")
    p_sim.add_argument("--compare-separate", action="store_true", default=None,
                       help="also fit per-response models on the same draws")
    p_sim.add_argument("--label", help="scenario label in the long-format CSV")

    p_diag = sub.add_parser("diagnose", help="residual diagnostics for a fitted model")
    _add_data_args(p_diag)
    _add_model_args(p_diag)
    p_diag.add_argument("--family", choices=list(SPATIAL_FAMILIES))
    p_diag.add_argument("--fit", dest="fit_file", help="existing fit.json (skips refitting)")
    p_diag.add_argument("--level", type=float,
                        help="chi-squared flag level for distances (default 0.975)")
    p_diag.add_argument("--z-band", type=float,
                        help="absolute bound flagging cell residuals (default 1.96)")
    p_diag.add_argument("--svg", action="store_true", default=None,
                        help="also render SVG plots")
    p_diag.add_argument("--out", help="output directory")
    return parser


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    if not args.config:
        return args
    path = Path(args.config)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as err:
        raise DataError(f"cannot parse config file {path}: {err}") from None
    flat: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            flat[key.replace("-", "_")] = value
    for key, value in flat.items():
        if not hasattr(args, key):
            raise DataError(f"config key {key!r} matches no known option")
        if getattr(args, key) is None:
            if value.lower() in ("true", "false"):
                setattr(args, key, value.lower() == "true")
            else:
                setattr(args, key, value)
    return args


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise UsageError(f"missing required option --{name.replace('_', '-')}")


def _fit_options(args) -> FitOptions:
    kwargs = {}
    if args.max_iter is not None:
        kwargs["max_iter"] = int(args.max_iter)
    if args.tol_loglik is not None:
        kwargs["tol_loglik"] = float(args.tol_loglik)
    if args.ridge_lambda is not None:
        kwargs["ridge_lambda"] = float(args.ridge_lambda)
    if args.score_tol is not None:
        kwargs["score_tol"] = float(args.score_tol)
    if args.phi_bounds is not None:
        kwargs["phi_bounds"] = _parse_bounds(args.phi_bounds)
    if args.nu_bounds is not None:
        kwargs["nu_bounds"] = _parse_bounds(args.nu_bounds)
    if args.rho_bounds is not None:
        kwargs["rho_bounds"] = _parse_bounds(args.rho_bounds)
    if args.init is not None:
        kwargs["init"] = args.init
    if args.jitter is not None:
        kwargs["allow_jitter"] = bool(args.jitter)
    return FitOptions(**kwargs)


def _load_cli_dataset(args) -> Dataset:
    _require(args, "y", "x", "locations")
    y_scale = _parse_scales(args.y_scale) if args.y_scale else None
    x_scale = _parse_scales(args.x_scale) if args.x_scale else None
    dataset, _, _ = load_dataset(args.y, args.x, args.locations, y_scale, x_scale)
    return dataset


def _structure(args) -> CoefficientStructure:
    structure = _parse_structure(args.structure) if args.structure else CoefficientStructure("dense")
    if args.augment:
        structure = CoefficientStructure(
            structure.kind,
            mask=structure.mask,
            blocks=structure.blocks,
            augmentation=_parse_augment(args.augment),
        )
    return structure


def _maybe_rescale_bic(model, dataset, convention):
    if convention in (None, "pr"):
        return model.bic
    return bic_value(model.log_lik, model.n_parameters, dataset.n_columns)


def _cmd_fit(args) -> int:
    _require(args, "family", "out")
    dataset = _load_cli_dataset(args)
    structure = _structure(args)
    model = fit(dataset, structure, args.family, _fit_options(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = fit_to_dict(model, structure)
    payload["bic"] = _maybe_rescale_bic(model, dataset, args.bic_n)
    write_json(out / "fit.json", payload)
    print(f"wrote {out / 'fit.json'} (loglik {model.log_lik:.6f}, BIC {payload['bic']:.6f})")
    return 0


def _cmd_compare(args) -> int:
    _require(args, "out")
    dataset = _load_cli_dataset(args)
    families = (
        list(SPATIAL_FAMILIES) if args.family in (None, "all") else [args.family]
    )
    if args.family not in (None, "all") and args.family not in SPATIAL_FAMILIES:
        raise UsageError(f"unknown family {args.family!r}")
    if args.structures:
        structures = [_parse_structure(s) for s in args.structures.split(";") if s.strip()]
    else:
        structures = [_structure(args)]
    options = _fit_options(args)
    entries = []
    for family in families:
        for structure in structures:
            model = fit(dataset, structure, family, options)
            entries.append(
                {
                    "family": family,
                    "structure": structure.kind,
                    "bic": _maybe_rescale_bic(model, dataset, args.bic_n),
                    "log_lik": model.log_lik,
                    "n_parameters": model.n_parameters,
                    "converged": model.converged,
                    "cov_params": {
                        "sigma_s2": model.cov_params.sigma_s2,
                        "phi_s": model.cov_params.phi_s,
                        "rho": model.cov_params.rho,
                        "nu": model.cov_params.nu,
                    },
                }
            )
    out = Path(args.out)
    write_comparison(out, entries)
    best = min(entries, key=lambda e: e["bic"])
    print(f"wrote {out / 'comparison.json'}; best: {best['family']} (BIC {best['bic']:.6f})")
    return 0


def _cmd_simulate(args) -> int:
    _require(args, "scenario", "out")
    scenario = scenario_from_json(args.scenario)
    workers = int(args.workers) if args.workers is not None else None
    result = run_study(
        scenario,
        n_workers=workers,
        compare_separate=bool(args.compare_separate),
    )
    label = args.label or Path(args.scenario).stem
    write_study(args.out, result, label=label)
    summary = result.summary()
    print(
        f"wrote {Path(args.out) / 'replications.csv'} "
        f"({summary['n_ok']}/{summary['n_replications']} replications ok, "
        f"median coefficient error {summary['median_frob_b']:.6f})"
    )
    return 0


def _cmd_diagnose(args) -> int:
    _require(args, "out")
    dataset = _load_cli_dataset(args)
    if args.fit_file:
        loaded = load_fit(args.fit_file)
        structure = loaded["structure"]
        b_hat = loaded["b_hat"]
        sigma_hat = loaded["sigma_hat"]
        spec = loaded["spec"]
    else:
        _require(args, "family")
        structure = _structure(args)
        model = fit(dataset, structure, args.family, _fit_options(args))
        b_hat = model.b_hat
        sigma_hat = model.sigma_hat
        spec = model.spec
    x_aug, _ = augment_covariates(dataset.x, structure)
    diag_dataset = Dataset(y=dataset.y, x=x_aug, layout=dataset.layout)
    report = diagnose(
        diag_dataset,
        b_hat,
        sigma_hat,
        spec,
        column_level=args.level if args.level is not None else 0.975,
        cell_band=args.z_band if args.z_band is not None else 1.96,
    )
    write_diagnostics(args.out, report, diag_dataset, svg=bool(args.svg))
    print(
        f"wrote {Path(args.out) / 'diagnostics.json'} "
        f"(global statistic {report.global_stat:.4f}, "
        f"{len(report.flags['columns'])} flagged columns)"
    )
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "compare": _cmd_compare,
    "simulate": _cmd_simulate,
    "diagnose": _cmd_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _merge_config(args)
        return _COMMANDS[args.command](args)
    except UsageError as err:
        print(f"mvstreg: error: usage: {err}", file=sys.stderr)
        return 1
    except DataError as err:
        print(f"mvstreg: error: data: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"mvstreg: error: numerical: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
