"""Conditional score estimation by penalised score-matching splines.

The fitted curve minimises  mean_i { rho(e_i)^2 + 2 rho'(e_i) } + eta * int rho''^2
over natural cubic splines with knots at residual quantiles.  Natural boundary
conditions make the curve linear (C^1) beyond the residual range, which is also
the weight window of the curvature penalty.  The objective needs no normalising
constant, so it can be fit directly on regression residuals.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

from .errors import SingularGram, TooFewResiduals
from .kernels import lq_norm
from .localpoly import Dataset

_GL2 = np.polynomial.legendre.leggauss(2)


def _default_eta_grid() -> np.ndarray:
    return np.logspace(-6.0, 2.0, 25)


@dataclass(frozen=True)
class ScoreFitConfig:
    """Tuning knobs for the spline score fit."""

    eta_grid: np.ndarray = field(default_factory=_default_eta_grid)
    cv_folds: int = 10
    max_interior_knots: int = 50
    min_samples: int = 10

    def __post_init__(self):
        grid = np.sort(np.asarray(self.eta_grid, dtype=float))
        object.__setattr__(self, "eta_grid", grid)
        if grid.size == 0 or np.any(grid <= 0):
            raise ValueError("eta_grid must be non-empty and positive")


@dataclass(frozen=True)
class _SplineSystem:
    """Natural cubic spline space on a padded knot vector.

    `Z` maps natural coordinates to raw B-spline coefficients; the columns of
    the raw design multiplied by Z give the natural basis used in all linear
    algebra, so the quadratic's stationarity holds in that basis exactly.
    """

    sites: np.ndarray
    t: np.ndarray
    Z: np.ndarray

    @classmethod
    def from_sites(cls, sites: np.ndarray) -> "_SplineSystem":
        sites = np.asarray(sites, dtype=float)
        a0, b0 = sites[0], sites[-1]
        t = np.concatenate([[a0] * 4, sites[1:-1], [b0] * 4])
        n_b = t.size - 4
        spl = BSpline(t, np.eye(n_b), 3, extrapolate=True)
        C = spl.derivative(2)(np.array([a0, b0]))
        Z = linalg.null_space(C)
        return cls(sites=sites, t=t, Z=Z)

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    def raw_design(self, e: np.ndarray, deriv: int = 0):
        spl = BSpline(self.t, np.eye(self.t.size - 4), 3, extrapolate=True)
        if deriv:
            spl = spl.derivative(deriv)
        return spl(np.asarray(e, dtype=float))

    def design(self, e: np.ndarray, deriv: int = 0) -> np.ndarray:
        return self.raw_design(e, deriv) @ self.Z

    def curvature_penalty(self) -> np.ndarray:
        """Exact int_{a0}^{b0} N''(e) N''(e)' de; second derivatives are
        piecewise linear so two Gauss nodes per knot interval are exact."""
        gx, gw = _GL2
        lo, hi = self.sites[:-1], self.sites[1:]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        nodes = (mid[:, None] + half[:, None] * gx).ravel()
        wts = (half[:, None] * gw).ravel()
        D2 = self.design(nodes, deriv=2)
        return (wts[:, None] * D2).T @ D2


def knot_sites(residuals: np.ndarray, max_interior: int) -> np.ndarray:
    """Boundary knots at the residual range, interior knots at quantiles."""
    res = np.asarray(residuals, dtype=float)
    a0, b0 = float(res.min()), float(res.max())
    n_int = min(max_interior, max(1, int(np.ceil(np.sqrt(res.size)))))
    qs = np.linspace(0.0, 1.0, n_int + 2)[1:-1]
    interior = np.quantile(res, qs)
    sites = np.unique(np.concatenate([[a0], interior, [b0]]))
    return sites


@dataclass(frozen=True)
class ScoreModel:
    """Fitted score curve rho(e) with derivative, C^1-extended linearly
    outside the residual range [a0, b0].

    When `fallback` is set the model is the Gaussian moment score
    rho(e) = -(e - mean) / variance.
    """

    range_: tuple[float, float]
    knots: np.ndarray | None = None
    coefficients: np.ndarray | None = None
    fold_id: int | None = None
    localization_radius: float | None = None
    fallback: bool = False
    fallback_mean: float = 0.0
    fallback_var: float = 1.0
    eta: float | None = None
    stationarity: float | None = None
    _system: _SplineSystem | None = field(default=None, repr=False)
    _gamma: np.ndarray | None = field(default=None, repr=False)

    @cached_property
    def _spl(self):
        return BSpline(self._system.t, self.coefficients, 3, extrapolate=True)

    @cached_property
    def _spl_d1(self):
        return self._spl.derivative()

    @cached_property
    def _edges(self):
        a0, b0 = self.range_
        return (
            float(self._spl(a0)), float(self._spl_d1(a0)),
            float(self._spl(b0)), float(self._spl_d1(b0)),
        )

    def eval(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        if not np.isfinite(e).all():
            raise ValueError("score evaluated at non-finite point")
        if self.fallback:
            return -(e - self.fallback_mean) / self.fallback_var
        a0, b0 = self.range_
        va, sa, vb, sb = self._edges
        vals = self._spl(np.clip(e, a0, b0))
        lo = e < a0
        hi = e > b0
        if np.any(lo):
            vals = np.where(lo, va + sa * (e - a0), vals)
        if np.any(hi):
            vals = np.where(hi, vb + sb * (e - b0), vals)
        return vals

    def eval_deriv(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        if not np.isfinite(e).all():
            raise ValueError("score derivative evaluated at non-finite point")
        if self.fallback:
            return np.full_like(e, -1.0 / self.fallback_var)
        a0, b0 = self.range_
        return self._spl_d1(np.clip(e, a0, b0))


def eval_score(model: ScoreModel, e) -> float:
    return float(model.eval(e))


def eval_score_deriv(model: ScoreModel, e) -> float:
    return float(model.eval_deriv(e))


def gaussian_fallback(
    residuals=None,
    mean: float | None = None,
    var: float | None = None,
    fold_id: int | None = None,
    t: float | None = None,
) -> ScoreModel:
    """Gaussian moment score from residuals or explicit (mean, var)."""
    if residuals is not None:
        res = np.asarray(residuals, dtype=float)
        mean = float(res.mean())
        var = float(max(res.var(), 1e-12))
        rng = (float(res.min()), float(res.max()))
    else:
        if mean is None or var is None:
            raise ValueError("need residuals or explicit (mean, var)")
        rng = (-np.inf, np.inf)
    return ScoreModel(
        range_=rng,
        fallback=True,
        fallback_mean=float(mean),
        fallback_var=float(var),
        fold_id=fold_id,
        localization_radius=t,
    )


def _assemble(system: _SplineSystem, residuals: np.ndarray):
    B = system.design(residuals)
    B1 = system.design(residuals, deriv=1)
    M = B.T @ B / residuals.size
    dbar = B1.mean(axis=0)
    return B, B1, M, dbar


def fit_score_spline(
    residuals,
    eta: float,
    *,
    min_samples: int = 10,
    max_interior_knots: int = 50,
    knots: np.ndarray | None = None,
    fold_id: int | None = None,
    t: float | None = None,
) -> ScoreModel:
    """Exact minimiser of the penalised empirical score-matching loss.

    The quadratic (M + eta Omega) gamma = -dbar is solved in the natural
    spline basis; the returned model records the stationarity residual
    ||(M + eta Omega) gamma + dbar||_inf.
    """
    res = np.sort(np.asarray(residuals, dtype=float).ravel())
    if eta <= 0:
        raise ValueError("penalty eta must be positive")
    if res.size < min_samples:
        raise TooFewResiduals(f"{res.size} residuals < min_samples={min_samples}")
    if res[-1] - res[0] < 1e-12 * (1.0 + abs(res[0])):
        raise TooFewResiduals("residuals are degenerate (zero range)")
    sites = np.asarray(knots, dtype=float) if knots is not None else knot_sites(res, max_interior_knots)
    if sites.size < 2:
        raise TooFewResiduals("need at least two distinct knot sites")
    system = _SplineSystem.from_sites(sites)
    _, _, M, dbar = _assemble(system, res)
    omega = system.curvature_penalty()
    A = M + eta * omega
    try:
        cf = linalg.cho_factor(A)
        gamma = linalg.cho_solve(cf, -dbar)
    except linalg.LinAlgError:
        A = A + (1e-12 * np.trace(A) / A.shape[0]) * np.eye(A.shape[0])
        try:
            cf = linalg.cho_factor(A)
            gamma = linalg.cho_solve(cf, -dbar)
        except linalg.LinAlgError as exc:
            raise SingularGram(f"singular penalised score system: {exc}") from exc
    stat = float(np.max(np.abs(A @ gamma + dbar)))
    return ScoreModel(
        range_=(float(res[0]), float(res[-1])),
        knots=sites,
        coefficients=system.Z @ gamma,
        fold_id=fold_id,
        localization_radius=t,
        eta=float(eta),
        stationarity=stat,
        _system=system,
        _gamma=gamma,
    )


def cv_select_eta(residuals, config: ScoreFitConfig, seed=0) -> float:
    """Penalty selected by K-fold cross-validation of the score-matching loss.

    Fold assignment is a seeded permutation; ties go to the smallest eta.
    """
    res = np.sort(np.asarray(residuals, dtype=float).ravel())
    m = res.size
    folds = config.cv_folds
    if m < folds:
        raise TooFewResiduals(f"{m} residuals < {folds} folds")
    etas = config.eta_grid
    if etas.size == 1:
        return float(etas[0])
    sites = knot_sites(res, config.max_interior_knots)
    system = _SplineSystem.from_sites(sites)
    B, B1, _, _ = _assemble(system, res)
    omega = system.curvature_penalty()
    k = system.dim

    rng = np.random.default_rng(seed)
    assignment = np.array_split(rng.permutation(m), folds)
    M_tot = B.T @ B
    d_tot = B1.sum(axis=0)

    n_eta = etas.size
    A = np.empty((folds, n_eta, k, k))
    rhs = np.empty((folds, n_eta, k))
    for f, idx in enumerate(assignment):
        Bf, B1f = B[idx], B1[idx]
        m_tr = m - idx.size
        M_tr = (M_tot - Bf.T @ Bf) / m_tr
        d_tr = (d_tot - B1f.sum(axis=0)) / m_tr
        A[f] = M_tr[None, :, :] + etas[:, None, None] * omega[None, :, :]
        rhs[f] = -d_tr
    gam = np.linalg.solve(A.reshape(-1, k, k), rhs.reshape(-1, k)[..., None])[..., 0]
    gam = gam.reshape(folds, n_eta, k)

    losses = np.zeros(n_eta)
    for f, idx in enumerate(assignment):
        vals = B[idx] @ gam[f].T
        der = B1[idx] @ gam[f].T
        losses += (vals**2 + 2.0 * der).mean(axis=0)
    losses /= folds
    return float(etas[int(np.argmin(losses))])


def fit_conditional_score(
    data: Dataset,
    pilot_residuals,
    x0,
    t: float,
    config: ScoreFitConfig | None = None,
    *,
    q: float = 2.0,
    seed=0,
    fold_id: int | None = None,
) -> ScoreModel:
    """Score fitted on residuals of points within distance t of x0.

    Falls back to the Gaussian moment model when the local window holds
    fewer than `min_samples` residuals (using the local ones if any exist,
    otherwise all), or when the CV-selected spline has non-negative slope
    over the whole residual range (which would defeat root finding).
    """
    config = config or ScoreFitConfig()
    if t <= 0:
        raise ValueError("localization radius t must be positive")
    res = np.asarray(pilot_residuals, dtype=float).ravel()
    if res.size != data.n:
        raise ValueError("pilot_residuals must align with data rows")
    if res.size == 0:
        raise TooFewResiduals("no residuals available")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    local = lq_norm(data.X - x0, q) <= t
    sel = res[local]
    if sel.size < config.min_samples:
        pool = sel if sel.size else res
        return gaussian_fallback(pool, fold_id=fold_id, t=t)
    sel = np.sort(sel)
    try:
        eta = cv_select_eta(sel, config, seed=seed)
        model = fit_score_spline(
            sel,
            eta,
            min_samples=config.min_samples,
            max_interior_knots=config.max_interior_knots,
            fold_id=fold_id,
            t=t,
        )
    except (TooFewResiduals, SingularGram):
        return gaussian_fallback(sel, fold_id=fold_id, t=t)
    a0, b0 = model.range_
    grid = np.linspace(a0, b0, 257)
    if np.all(model.eval_deriv(grid) >= 0.0):
        return gaussian_fallback(sel, fold_id=fold_id, t=t)
    return model


def dump_score_curve(model: ScoreModel, path, n_points: int = 201, lo=None, hi=None) -> None:
    """Write (e, rho, rho_prime) rows for plotting a fitted score curve."""
    a0, b0 = model.range_
    if not np.isfinite(a0):
        a0, b0 = model.fallback_mean - 4.0, model.fallback_mean + 4.0
    lo = a0 if lo is None else lo
    hi = b0 if hi is None else hi
    grid = np.linspace(lo, hi, n_points)
    rho = model.eval(grid)
    rhop = model.eval_deriv(grid)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["e", "rho", "rho_prime"])
        for e, r, rp in zip(grid, rho, rhop):
            writer.writerow([f"{e:.12g}", f"{r:.12g}", f"{rp:.12g}"])
