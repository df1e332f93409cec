"""Command-line front end.

Subcommands: `fit` (CSV in, JSON out), `simulate` / `sweep-h` /
`sweep-lambda` (JSON config in, CSV out plus a ratio table), and `theory`
(population ratio curve to CSV).  Validation problems exit 2 before any
heavy computation; solver failures exit 3.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction

import numpy as np

from .dgps import DGP_NAMES, get_dgp, population_quantities, theoretical_ratio_curve
from .errors import EstimationError
from .estimators import OutriggerConfig, fit_outrigger, fit_plugin
from .kernels import KERNEL_NAMES, KernelSpec, lambda0, lq_norm
from .localpoly import Dataset, fit_lp, predict_lp_many
from .score import fit_conditional_score
from .simulate import (
    ESTIMATOR_NAMES,
    ExperimentConfig,
    bandwidth_sweep,
    lambda_sweep,
    run_experiment,
)

EXIT_VALIDATION = 2
EXIT_SOLVER = 3


class ValidationError(Exception):
    pass


def _fmt(x) -> str:
    return format(float(x), ".12g")


def _emit_json(obj, out=None) -> str:
    """Deterministic JSON: insertion-ordered keys, floats at 12 significant
    digits so re-parsing and re-emitting reproduces identical bytes."""

    def render(v):
        if isinstance(v, dict):
            return "{" + ", ".join(f"{json.dumps(k)}: {render(x)}" for k, x in v.items()) + "}"
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(render(x) for x in v) + "]"
        if isinstance(v, bool) or v is None:
            return json.dumps(v)
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return _fmt(v)
        return json.dumps(v)

    text = render(obj)
    print(text, file=out or sys.stdout)
    return text


def _read_csv_dataset(path) -> Dataset:
    try:
        with open(path, newline="") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise ValidationError(f"{path}: empty file; missing header x1,...,xd,y")
    header = [c.strip() for c in lines[0].split(",")]
    d = len(header) - 1
    expected = [f"x{j + 1}" for j in range(d)] + ["y"]
    if d < 1 or header != expected:
        raise ValidationError(
            f"{path}: missing header; expected 'x1,...,xd,y', got {lines[0]!r}"
        )
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != d + 1:
            raise ValidationError(f"{path}: row {i} has {len(cells)} columns, expected {d + 1}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise ValidationError(f"{path}: row {i}: non-numeric cell ({exc})") from exc
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=float)
    return Dataset(arr[:, :d], arr[:, d])


def _lambda_message(lam: float, kernel: KernelSpec) -> str:
    lam0 = lambda0(kernel)
    frac = Fraction(lam0).limit_denominator(1000)
    nice = f" (= {frac.numerator}/{frac.denominator})" if abs(float(frac) - lam0) < 1e-9 else ""
    return (
        f"lambda = {lam:g} must exceed the variance-neutral threshold "
        f"lambda0 = {lam0:.6g}{nice} for the {kernel.name} kernel"
    )


def _cmd_fit(args) -> int:
    kernel = KernelSpec(args.kernel, 1)
    data = _read_csv_dataset(args.csv)
    if data.d != 1 and args.estimator != "lp":
        raise ValidationError("outrigger/plugin fitting is implemented for d = 1 data")
    kernel = KernelSpec(args.kernel, data.d)
    x0 = np.asarray([float(v) for v in args.x0.split(",")], dtype=float)
    if x0.size != data.d:
        raise ValidationError(f"--x0 needs {data.d} coordinates, got {x0.size}")
    if args.h <= 0:
        raise ValidationError("--h must be positive")
    lam0 = lambda0(kernel)
    if args.estimator == "outrigger" and args.lam <= lam0:
        raise ValidationError(_lambda_message(args.lam, kernel))

    config_echo = {
        "command": "fit",
        "input": args.csv,
        "estimator": args.estimator,
        "x0": [float(v) for v in x0],
        "h": args.h,
        "lambda": args.lam,
        "degree": args.degree,
        "kernel": args.kernel,
        "folds": args.folds,
        "t": args.t,
        "seed": args.seed,
        "level": args.level,
    }
    if args.print_config:
        _emit_json(config_echo)
        return 0

    try:
        if args.estimator == "lp":
            fit = fit_lp(data, x0, args.h, args.degree, kernel)
            payload = {
                "estimate": fit.estimate,
                "pilot_estimate": fit.estimate,
                "theta": [float(v) for v in fit.theta],
                "iterations": 0,
                "converged": True,
                "v_lambda_hat": None,
            }
        elif args.estimator == "outrigger":
            oc = OutriggerConfig(
                h=args.h,
                lam=args.lam,
                p=args.degree,
                kernel=kernel,
                n_folds=args.folds,
                t=args.t,
                seed=args.seed,
            )
            fit = fit_outrigger(data, x0, oc, ci_level=args.level)
            payload = _fit_payload(fit)
        else:  # plugin
            t = args.t if args.t is not None else args.h
            local = lq_norm(data.X - x0, kernel.q) <= t
            idx = np.nonzero(local)[0]
            if idx.size == 0:
                raise EstimationError("no points in the score localization window")
            pred = predict_lp_many(data, data.X[idx], args.h, args.degree, kernel)
            model = fit_conditional_score(
                data.take(idx), data.Y[idx] - pred, x0, t, q=kernel.q, seed=args.seed
            )
            fit = fit_plugin(data, x0, args.h, args.degree, kernel, model)
            payload = _fit_payload(fit)
    except EstimationError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    _emit_json(payload)
    return 0


def _fit_payload(fit) -> dict:
    payload = {
        "estimate": fit.estimate,
        "pilot_estimate": fit.pilot_estimate,
        "theta": [float(v) for v in fit.theta],
        "iterations": fit.iterations,
        "converged": bool(fit.converged),
        "v_lambda_hat": None,
    }
    if fit.ci is not None:
        lo, hi, level = fit.ci
        payload["ci"] = {"lower": lo, "upper": hi, "level": level}
    return payload


def _config_from_file(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    known = {
        "dgp", "n", "reps", "base_seed", "x0", "estimators", "h", "lam",
        "h_grid", "lambda_grid", "p", "kernel", "n_folds", "t", "workers",
        "out", "force_gaussian_score",
    }
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"{path}: unknown config keys {sorted(unknown)}")
    for key in ("estimators", "h_grid", "lambda_grid"):
        if key in raw and raw[key] is not None:
            raw[key] = tuple(raw[key])
    try:
        config = ExperimentConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    cap = os.environ.get("OUTRIGGER_THREADS")
    if cap:
        try:
            config = _replace_workers(config, min(config.workers, max(1, int(cap))))
        except ValueError as exc:
            raise ValidationError(f"OUTRIGGER_THREADS: {exc}") from exc
    return config


def _replace_workers(config: ExperimentConfig, workers: int) -> ExperimentConfig:
    from dataclasses import replace

    return replace(config, workers=workers)


def _config_echo(config: ExperimentConfig) -> dict:
    return {
        "dgp": config.dgp,
        "n": config.n,
        "reps": config.reps,
        "base_seed": config.base_seed,
        "x0": config.x0,
        "estimators": list(config.estimators),
        "h": config.h,
        "lam": config.lam,
        "h_grid": list(config.h_grid) if config.h_grid else None,
        "lambda_grid": list(config.lambda_grid) if config.lambda_grid else None,
        "p": config.p,
        "kernel": config.kernel,
        "n_folds": config.n_folds,
        "t": config.t,
        "workers": config.workers,
        "out": config.out,
        "force_gaussian_score": config.force_gaussian_score,
    }


def _cmd_sim(args, runner, needs: str | None) -> int:
    config = _config_from_file(args.config)
    if needs == "h_grid" and config.h_grid is None:
        raise ValidationError("config must define h_grid for sweep-h")
    if needs == "lambda_grid" and config.lambda_grid is None:
        raise ValidationError("config must define lambda_grid for sweep-lambda")
    if needs is None and (config.h_grid is not None or config.lambda_grid is not None):
        raise ValidationError("simulate expects a single-cell config (no grids)")
    if args.print_config:
        _emit_json(_config_echo(config))
        return 0
    out_path = args.out or config.out
    if not out_path:
        raise ValidationError("no output path: set --out or the config's 'out' field")
    try:
        result = runner(config)
    except EstimationError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    result.to_csv(out_path)
    print(f"wrote {out_path}")
    print(result.ratio_table())
    return 0


def _cmd_theory(args) -> int:
    spec = get_dgp(args.dgp)
    kernel = KernelSpec(args.kernel, 1)
    grid = [float(v) for v in args.lambda_grid.split(",")]
    pq = population_quantities(spec, args.x0, kernel)
    if not pq.info_finite:
        raise ValidationError(
            f"{args.dgp}: infinite Fisher information at x0={args.x0:g}; no theory curve"
        )
    try:
        rows = theoretical_ratio_curve(spec, args.x0, grid, kernel)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    lines = ["lambda,v_lambda,ratio"]
    for lam, ratio in rows:
        lines.append(f"{_fmt(lam)},{_fmt(pq.v_lambda(lam))},{_fmt(ratio)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="outrigger",
        description="Distribution-adaptive local polynomial regression.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit at x0 from a CSV file (header x1,...,xd,y)")
    fit.add_argument("csv", help="input CSV path")
    fit.add_argument("--x0", default="0.0", help="comma-separated coordinates of x0")
    fit.add_argument("--h", type=float, required=True, help="bandwidth")
    fit.add_argument("--lambda", dest="lam", type=float, default=8.0, help="outrigger parameter")
    fit.add_argument("--degree", type=int, default=0, help="polynomial degree")
    fit.add_argument("--kernel", choices=KERNEL_NAMES, default="epanechnikov")
    fit.add_argument("--folds", type=int, default=2, help="cross-fitting folds")
    fit.add_argument("--t", type=float, default=None, help="score localization radius (default: h)")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--level", type=float, default=None, help="confidence level, e.g. 0.95")
    fit.add_argument("--estimator", choices=("outrigger", "lp", "plugin"), default="outrigger")
    fit.add_argument("--print-config", action="store_true")

    for name, help_text in (
        ("simulate", "Monte-Carlo comparison at one (h, lambda) cell"),
        ("sweep-h", "paired bandwidth sweep"),
        ("sweep-lambda", "paired lambda sweep with the theory column"),
    ):
        cp = sub.add_parser(name, help=help_text)
        cp.add_argument("config", help="JSON experiment config")
        cp.add_argument("--out", default=None, help="output CSV (overrides config)")
        cp.add_argument("--print-config", action="store_true")

    th = sub.add_parser("theory", help="population ratio curve over lambda")
    th.add_argument("--dgp", choices=DGP_NAMES, required=True)
    th.add_argument("--x0", type=float, default=0.0)
    th.add_argument("--lambda-grid", required=True, help="comma-separated lambda values")
    th.add_argument("--kernel", choices=KERNEL_NAMES, default="epanechnikov")
    th.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "simulate":
            return _cmd_sim(args, run_experiment, None)
        if args.command == "sweep-h":
            return _cmd_sim(args, bandwidth_sweep, "h_grid")
        if args.command == "sweep-lambda":
            return _cmd_sim(args, lambda_sweep, "lambda_grid")
        if args.command == "theory":
            return _cmd_theory(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    raise AssertionError(args.command)  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())
