"""Monte-Carlo benchmark harness.

Replications are paired: rep r always draws the dataset with seed
base_seed + r, so every estimator and every grid point sees the same data.
Replications may run in a process pool; results are merged by rep index, so
worker count never changes the output.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dgps import get_dgp, oracle_score, population_quantities, regression_f, sample
from .errors import EstimationError
from .estimators import OutriggerConfig, fit_oracle_ll, fit_outrigger, fit_plugin
from .kernels import KernelSpec, lambda0, lq_norm
from .localpoly import fit_lp, predict_lp_many
from .score import ScoreFitConfig, fit_conditional_score

ESTIMATOR_NAMES = ("lp", "outrigger", "oracle_ll", "plugin")


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte-Carlo experiment: a DGP, estimators, and an (h, lambda) grid.

    Exactly one sweep axis may be given; with neither, `h` and `lam` define a
    single cell.  `t` overrides the score localization radius (default: the
    bandwidth of the cell).
    """

    dgp: str
    n: int
    reps: int
    base_seed: int
    x0: float = 0.0
    estimators: tuple[str, ...] = ("lp", "outrigger")
    h: float | None = None
    lam: float | None = None
    h_grid: tuple[float, ...] | None = None
    lambda_grid: tuple[float, ...] | None = None
    p: int = 0
    kernel: str = "epanechnikov"
    n_folds: int = 2
    t: float | None = None
    workers: int = 1
    out: str | None = None
    force_gaussian_score: bool = False
    score_config: ScoreFitConfig = field(default_factory=ScoreFitConfig)

    def __post_init__(self):
        get_dgp(self.dgp)
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        bad = [e for e in self.estimators if e not in ESTIMATOR_NAMES]
        if bad:
            raise ValueError(f"unknown estimators {bad}; choose from {ESTIMATOR_NAMES}")
        if self.h_grid is not None and self.lambda_grid is not None:
            raise ValueError("give at most one of h_grid and lambda_grid")
        for grid, name in ((self.h_grid, "h_grid"), (self.lambda_grid, "lambda_grid")):
            if grid is not None:
                g = tuple(float(v) for v in grid)
                if not g or list(g) != sorted(g):
                    raise ValueError(f"{name} must be non-empty and sorted")
                object.__setattr__(self, name, g)
        if self.h_grid is None and self.h is None:
            raise ValueError("need h or h_grid")
        if self.lambda_grid is None and self.lam is None and (
            "outrigger" in self.estimators
        ):
            raise ValueError("need lam or lambda_grid for the outrigger estimator")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    def grid(self) -> list[tuple[float, float | None]]:
        if self.h_grid is not None:
            return [(float(h), self.lam) for h in self.h_grid]
        if self.lambda_grid is not None:
            return [(float(self.h), float(l)) for l in self.lambda_grid]
        return [(float(self.h), self.lam)]

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(self.kernel, 1)


@dataclass(frozen=True)
class CellResult:
    """Aggregates for one (estimator, grid point) cell."""

    estimator: str
    h: float
    lam: float | None
    mse: float
    mse_se: float
    bias: float
    variance: float
    failures: int
    reps: int
    theory_ratio: float | None = None


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    cells: tuple[CellResult, ...]
    rep_checksums: tuple[str, ...]

    def cell(self, estimator: str, h: float, lam=None) -> CellResult:
        for c in self.cells:
            if c.estimator == estimator and abs(c.h - h) < 1e-12:
                if lam is None or c.lam is None or abs(c.lam - lam) < 1e-12:
                    return c
        raise KeyError((estimator, h, lam))

    def mse_ratio(self, h: float, lam=None, num: str = "outrigger", den: str = "lp") -> float:
        return self.cell(num, h, lam).mse / self.cell(den, h, lam).mse

    def min_mse(self, estimator: str) -> float:
        return min(c.mse for c in self.cells if c.estimator == estimator)

    def argmin_h(self, estimator: str) -> float:
        best = min(
            (c for c in self.cells if c.estimator == estimator), key=lambda c: c.mse
        )
        return best.h

    def csv_text(self) -> str:
        cols = [
            "dgp", "estimator", "h", "lambda", "n", "reps",
            "mse", "mse_se", "bias", "variance", "failures", "theory_ratio",
        ]
        lines = [",".join(cols)]
        for c in self.cells:
            row = [
                self.config.dgp,
                c.estimator,
                _fmt(c.h),
                _fmt(c.lam) if c.lam is not None else "",
                str(self.config.n),
                str(c.reps),
                _fmt(c.mse),
                _fmt(c.mse_se),
                _fmt(c.bias),
                _fmt(c.variance),
                str(c.failures),
                _fmt(c.theory_ratio) if c.theory_ratio is not None else "",
            ]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    def ratio_table(self) -> str:
        """Plain-text outrigger/lp MSE ratio per grid point, when both ran."""
        have = {c.estimator for c in self.cells}
        if not {"lp", "outrigger"} <= have:
            return "(ratio table needs both lp and outrigger)"
        lines = ["h        lambda   mse_lp        mse_outrig    ratio"]
        for h, lam in self.config.grid():
            lp = self.cell("lp", h, lam)
            outg = self.cell("outrigger", h, lam)
            lam_s = f"{lam:<8.4g}" if lam is not None else "-       "
            lines.append(
                f"{h:<8.4g} {lam_s} {lp.mse:<13.6g} {outg.mse:<13.6g} {outg.mse / lp.mse:.4f}"
            )
        return "\n".join(lines)


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def _checksum(data) -> str:
    hsh = hashlib.sha256()
    hsh.update(np.ascontiguousarray(data.X).tobytes())
    hsh.update(np.ascontiguousarray(data.Y).tobytes())
    return hsh.hexdigest()[:16]


def _fit_one(config: ExperimentConfig, data, h: float, lam, estimator: str, rep: int) -> float:
    spec = get_dgp(config.dgp)
    K = config.kernel_spec()
    x0 = np.array([config.x0])
    if estimator == "lp":
        return fit_lp(data, x0, h, config.p, K).estimate
    if estimator == "outrigger":
        oc = OutriggerConfig(
            h=h,
            lam=float(lam),
            p=config.p,
            kernel=K,
            n_folds=config.n_folds,
            score=config.score_config,
            t=config.t,
            seed=[config.base_seed, rep],
            force_gaussian_score=config.force_gaussian_score,
        )
        res = fit_outrigger(data, x0, oc)
        if not res.converged:
            raise EstimationError("outrigger scoring did not converge")
        return res.estimate
    if estimator == "oracle_ll":
        res = fit_oracle_ll(data, x0, h, config.p, K, lambda e, x: oracle_score(spec, e, x))
        if not res.converged:
            raise EstimationError("oracle scoring did not converge")
        return res.estimate
    if estimator == "plugin":
        t = config.t if config.t is not None else h
        local = lq_norm(data.X - x0, K.q) <= t
        idx = np.nonzero(local)[0]
        if idx.size == 0:
            raise EstimationError("no points in the score localization window")
        pred = predict_lp_many(data, data.X[idx], h, config.p, K)
        resid = data.Y[idx] - pred
        model = fit_conditional_score(
            data.take(idx), resid, x0, t, config.score_config,
            q=K.q, seed=[config.base_seed, rep, 23],
        )
        res = fit_plugin(data, x0, h, config.p, K, model)
        if not res.converged:
            raise EstimationError("plug-in scoring did not converge")
        return res.estimate
    raise AssertionError(estimator)  # pragma: no cover


def _run_rep(config: ExperimentConfig, rep: int):
    """One replication: paired dataset, every estimator at every grid point.

    Returns (checksum, estimates) with NaN marking failures.
    """
    spec = get_dgp(config.dgp)
    data = sample(spec, config.n, config.base_seed + rep)
    grid = config.grid()
    est = np.full((len(grid), len(config.estimators)), np.nan)
    for gi, (h, lam) in enumerate(grid):
        for ei, name in enumerate(config.estimators):
            try:
                est[gi, ei] = _fit_one(config, data, h, lam, name, rep)
            except EstimationError:
                pass
    return _checksum(data), est


def _run(config: ExperimentConfig) -> ExperimentResult:
    grid = config.grid()
    if "outrigger" in config.estimators:
        lam0 = lambda0(config.kernel_spec())
        for _, lam in grid:
            if lam is not None and lam <= lam0:
                raise ValueError(f"lambda {lam} must exceed lambda0 = {lam0:.6g}")
    reps = config.reps
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_rep, [config] * reps, range(reps), chunksize=8))
    else:
        results = [_run_rep(config, r) for r in range(reps)]
    checksums = tuple(r[0] for r in results)
    stack = np.stack([r[1] for r in results])  # (reps, grid, est)

    theory = _theory_column(config, grid)
    f0 = float(regression_f(config.x0))
    cells = []
    for gi, (h, lam) in enumerate(grid):
        for ei, name in enumerate(config.estimators):
            vals = stack[:, gi, ei]
            ok = np.isfinite(vals)
            n_ok = int(ok.sum())
            if n_ok == 0:
                raise EstimationError(
                    f"all {reps} replications failed for {name} at h={h}, lambda={lam}"
                )
            v = vals[ok]
            err2 = (v - f0) ** 2
            mse = float(err2.mean())
            se = float(err2.std(ddof=1) / np.sqrt(n_ok)) if n_ok > 1 else 0.0
            bias = float(v.mean() - f0)
            variance = float(((v - v.mean()) ** 2).mean())
            cells.append(
                CellResult(
                    estimator=name,
                    h=h,
                    lam=lam,
                    mse=mse,
                    mse_se=se,
                    bias=bias,
                    variance=variance,
                    failures=reps - n_ok,
                    reps=reps,
                    theory_ratio=theory[gi],
                )
            )
    return ExperimentResult(config=config, cells=tuple(cells), rep_checksums=checksums)


def _theory_column(config: ExperimentConfig, grid) -> list[float | None]:
    if config.lambda_grid is None:
        return [None] * len(grid)
    spec = get_dgp(config.dgp)
    pq = population_quantities(spec, config.x0, config.kernel_spec())
    if not pq.info_finite:
        return [None] * len(grid)
    return [float(pq.asymptotic_ratio(lam)) for _, lam in grid]


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Paired Monte-Carlo comparison at a single (h, lambda) cell."""
    if config.h_grid is not None or config.lambda_grid is not None:
        raise ValueError("run_experiment expects a single cell; use a sweep")
    return _run(config)


def bandwidth_sweep(config: ExperimentConfig) -> ExperimentResult:
    """Paired sweep over the h grid at fixed lambda."""
    if config.h_grid is None:
        raise ValueError("bandwidth_sweep needs h_grid")
    return _run(config)


def lambda_sweep(config: ExperimentConfig) -> ExperimentResult:
    """Paired sweep over the lambda grid at fixed h, with the predicted
    ratio curve alongside when the information is finite."""
    if config.lambda_grid is None:
        raise ValueError("lambda_sweep needs lambda_grid")
    lam0 = lambda0(config.kernel_spec())
    if all(l <= lam0 for l in config.lambda_grid):
        raise ValueError(f"lambda grid lies entirely at or below lambda0 = {lam0:.6g}")
    grid = tuple(l for l in config.lambda_grid if l > lam0)
    return _run(replace(config, lambda_grid=grid))
