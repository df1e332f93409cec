"""The outrigger estimator and its baselines.

The point estimate at x0 is the root of a cross-fitted nonlinear estimating
equation: inner-window points enter through the primary kernel and polynomial
basis, shell points enter through the outrigger kernel, and each fold's score
curve, pilot fit and shell weighting are built out-of-fold so the score noise
cannot bias the equation.  Fisher scoring from the full-sample pilot solves it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, stats

from .errors import (
    EmptyAnnulus,
    InsufficientLocalData,
    NonConvergence,
    SingularJacobian,
)
from .kernels import (
    KernelSpec,
    OutriggerKernel,
    PolyBasisSpec,
    kernel_weights,
    lambda0,
    lq_norm,
    outrigger_weights,
    r2_kernel,
)
from .localpoly import COND_LIMIT, JITTER_SCALE, Dataset, LpFit, fit_lp, predict_lp_many
from .score import ScoreFitConfig, ScoreModel, fit_conditional_score, gaussian_fallback

MAX_HALVINGS = 20


@dataclass(frozen=True)
class OutriggerConfig:
    """Inputs of the outrigger solve at a point.

    `lam` must exceed the variance-neutral threshold lambda0 of the primary
    kernel; the shell kernel is derived from (lam, kernel) when not given.
    The localization radius of the conditional score defaults to h.
    """

    h: float
    lam: float
    p: int = 0
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("epanechnikov", 1))
    kappa: OutriggerKernel | None = None
    n_folds: int = 2
    score: ScoreFitConfig = field(default_factory=ScoreFitConfig)
    t: float | None = None
    max_iters: int = 50
    tol: float = 1e-8
    seed: object = 0
    force_gaussian_score: bool = False
    refit_with_debiased_residuals: bool = False

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("bandwidth must be positive")
        if self.p < 0:
            raise ValueError("polynomial degree must be non-negative")
        if self.n_folds < 2:
            raise ValueError("cross-fitting needs at least 2 folds")
        lam0 = lambda0(self.kernel)
        if self.lam <= lam0:
            raise ValueError(
                f"outrigger parameter lambda={self.lam} must exceed lambda0 = {lam0:.6g}"
            )
        if self.kappa is None:
            object.__setattr__(
                self, "kappa", OutriggerKernel(self.lam, self.kernel.d, self.kernel.q)
            )
        elif abs(self.kappa.lam - self.lam) > 1e-12 or self.kappa.d != self.kernel.d:
            raise ValueError("shell kernel inconsistent with (lambda, kernel)")

    @property
    def t_effective(self) -> float:
        return self.h if self.t is None else self.t


@dataclass(frozen=True)
class FoldArtifacts:
    """Per-fold ingredients of the estimating equation.

    `pilot_infold` holds the out-of-fold pilot's predictions at the fold's
    shell points, aligned with `annulus_rows` (positions into the fold's
    index set `idx`).
    """

    k: int
    idx: np.ndarray
    mu_hat: np.ndarray
    c_hat: float
    score: ScoreModel
    annulus_rows: np.ndarray
    pilot_infold: np.ndarray


@dataclass(frozen=True)
class FitResult:
    """Point estimate with solver diagnostics."""

    theta: np.ndarray
    estimate: float
    iterations: int
    score_residual: float
    converged: bool
    pilot_estimate: float
    ci: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class VariancePieces:
    """Plug-in pieces of the asymptotic variance at x0."""

    p_hat: float
    sigma2_hat: float
    i_hat: float
    v_hat: float
    clamped: bool = False
    r2_kernel: float = 0.6


def partition_folds(n: int, n_folds: int, seed) -> list[np.ndarray]:
    """Seeded random partition of range(n) into n_folds sets whose sizes
    differ by at most one."""
    if n < n_folds:
        raise ValueError(f"cannot split {n} points into {n_folds} folds")
    rng = np.random.default_rng(seed)
    return [np.sort(part) for part in np.array_split(rng.permutation(n), n_folds)]


def compute_mu_hat(
    data: Dataset,
    fold_complement: np.ndarray,
    x0,
    h: float,
    lam: float,
    p: int,
    K: KernelSpec,
    kappa: OutriggerKernel,
) -> np.ndarray:
    """Out-of-fold shell weighting: (sum kappa_h)^-1 (sum K_h Q_h)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    U = data.X[fold_complement] - x0
    wk = outrigger_weights(kappa, h, U)
    denom = float(wk.sum())
    if denom <= 0.0:
        raise EmptyAnnulus("no out-of-fold observations in the shell window")
    w = kernel_weights(K, h, U)
    Q = PolyBasisSpec(p, data.d).eval_many(U / h)
    return (w[:, None] * Q).sum(axis=0) / denom


def compute_c_hat(
    data: Dataset,
    fold: np.ndarray,
    pilot_predictions: np.ndarray,
    x0,
    h: float,
    lam: float,
    kappa: OutriggerKernel,
) -> float:
    """In-fold shell-weighted average pilot residual (pilot debias term).

    `pilot_predictions` aligns with `fold`; only shell-weighted entries are
    read, so rows outside the shell may hold any placeholder.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    U = data.X[fold] - x0
    wk = outrigger_weights(kappa, h, U)
    denom = float(wk.sum())
    if denom <= 0.0:
        raise EmptyAnnulus("no in-fold observations in the shell window")
    live = wk > 0.0
    resid = data.Y[fold][live] - np.asarray(pilot_predictions, dtype=float)[live]
    return float(np.dot(wk[live], resid) / denom)


class _Prepared:
    """Compacted per-fold arrays so each scoring iteration is a few matvecs.

    Everything that does not involve theta (all shell contributions, the
    inner-window weights and basis rows) is computed once up front.
    """

    def __init__(self, data: Dataset, folds: list[FoldArtifacts], x0, config: OutriggerConfig):
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        K, kappa, h = config.kernel, config.kappa, config.h
        basis = PolyBasisSpec(config.p, data.d)
        self.n = data.n
        self.p_bar = basis.p_bar
        self.inner_Q = []
        self.inner_wQ = []
        self.inner_pi_w = []
        self.inner_Y = []
        self.inner_X = []
        self.scores = []
        self.const = np.zeros(basis.p_bar)
        for art in folds:
            rows = art.idx
            U = data.X[rows] - x0
            w = kernel_weights(K, h, U)
            live = w > 0.0
            Q = basis.eval_many(U[live] / h)
            self.inner_Q.append(Q)
            self.inner_wQ.append(w[live, None] * Q)
            self.inner_pi_w.append(w[live])
            self.inner_Y.append(data.Y[rows][live])
            self.inner_X.append(data.X[rows][live])
            self.scores.append(art.score)
            # shell points contribute a theta-free constant through the
            # debiased intermediate fit f_tilde = pilot + c_hat
            if art.annulus_rows.size:
                sub = rows[art.annulus_rows]
                wk = outrigger_weights(kappa, h, data.X[sub] - x0)
                ftilde = art.pilot_infold + art.c_hat
                rho = art.score.eval(data.Y[sub] - ftilde)
                self.const -= art.mu_hat * float(np.dot(wk, rho))

    def score_vector(self, theta: np.ndarray) -> np.ndarray:
        s = self.const.copy()
        for Q, wQ, y, model in zip(self.inner_Q, self.inner_wQ, self.inner_Y, self.scores):
            if y.size:
                rho = model.eval(y - Q @ theta)
                s = s + wQ.T @ rho
        return s / self.n

    def info_matrix(self, theta: np.ndarray) -> np.ndarray:
        """Observed information -sum pi_h rho', falling back to the always-PSD
        squared-score surrogate sum pi_h rho^2 when the observed matrix is not
        usable (e.g. a score with positive slope)."""
        newton = np.zeros((self.p_bar, self.p_bar))
        fisher = np.zeros((self.p_bar, self.p_bar))
        for Q, w, y, model in zip(self.inner_Q, self.inner_pi_w, self.inner_Y, self.scores):
            if y.size:
                resid = y - Q @ theta
                rho_p = model.eval_deriv(resid)
                newton += ((w * -rho_p)[:, None] * Q).T @ Q
                rho2 = model.eval(resid) ** 2
                fisher += ((w * rho2)[:, None] * Q).T @ Q
        return _usable_information(newton / self.n, fisher / self.n)


def estimating_equation(
    theta, data: Dataset, folds: list[FoldArtifacts], x0, config: OutriggerConfig
) -> np.ndarray:
    """Value of the cross-fitted estimating equation at theta (mean over n)."""
    theta = np.asarray(theta, dtype=float)
    prep = _Prepared(data, folds, x0, config)
    return prep.score_vector(theta)


def _usable_information(newton: np.ndarray, fisher: np.ndarray) -> np.ndarray:
    """Prefer the observed information when positive definite and decently
    conditioned; otherwise return the squared-score surrogate."""
    if newton.shape == (1, 1):
        return newton if newton[0, 0] > 0.0 else fisher
    try:
        linalg.cho_factor(newton)
    except linalg.LinAlgError:
        return fisher
    cond = float(np.linalg.cond(newton))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        return fisher
    return newton


def _solve_info(J: np.ndarray, s: np.ndarray) -> np.ndarray:
    pb = J.shape[0]
    tr = np.trace(J)
    if tr <= 0.0:
        raise SingularJacobian("information matrix has non-positive trace")
    if pb == 1:
        return s / J[0, 0]
    cond = float(np.linalg.cond(J))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        J = J + (JITTER_SCALE * tr / pb) * np.eye(pb)
        cond = float(np.linalg.cond(J))
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise SingularJacobian(f"information condition {cond:.3e} after jitter")
    try:
        return linalg.cho_solve(linalg.cho_factor(J), s)
    except linalg.LinAlgError as exc:
        raise SingularJacobian(f"information factorisation failed: {exc}") from exc


def _bracket_root_1d(theta, score_fn, target, scale, it):
    """Fallback when damping stalls on a wiggly scalar equation: bracket the
    sign change nearest the current iterate and hand the interval to Brent."""
    from scipy import optimize

    f = lambda v: float(score_fn(np.array([v]))[0])
    c = float(theta[0])
    fc = f(c)
    span = max(scale, 1e-3 * (1.0 + abs(c)))
    probes = [c + sgn * frac * span for frac in (0.05, 0.15, 0.4, 1.0, 2.0, 4.0) for sgn in (1.0, -1.0)]
    lo = hi = None
    for pt in sorted(probes, key=lambda v: abs(v - c)):
        fp = f(pt)
        if np.sign(fp) != np.sign(fc) and np.isfinite(fp):
            lo, hi = (min(c, pt), max(c, pt))
            break
    if lo is None:
        return None
    root = optimize.brentq(f, lo, hi, xtol=1e-13, rtol=8.9e-16, maxiter=200)
    resid = abs(f(root))
    return np.array([root]), it, resid, resid <= target


def _score_iterate(theta0, score_fn, info_fn, tol, max_iters, bracket_scale=None):
    """Damped scoring iterations; returns (theta, iters, residual, converged).

    Convergence is sup-norm of the scoring vector relative to its value at
    the start; step halving (up to MAX_HALVINGS) guards each update.  Scalar
    equations fall back to bracketed root finding if damping stalls between
    roots of a wiggly fitted score.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    s = score_fn(theta)
    s0 = float(np.max(np.abs(s)))
    if s0 == 0.0:
        return theta, 0, 0.0, True
    target = tol * s0
    best_theta, best_norm = theta.copy(), s0
    cur = s0
    for it in range(1, max_iters + 1):
        step = _solve_info(info_fn(theta), s)
        alpha = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = theta - alpha * step
            s_cand = score_fn(cand)
            norm_cand = float(np.max(np.abs(s_cand)))
            if norm_cand < cur:
                break
            alpha *= 0.5
        else:
            if theta.size == 1 and bracket_scale is not None:
                hit = _bracket_root_1d(best_theta, score_fn, target, bracket_scale, it)
                if hit is not None:
                    return hit
            return best_theta, it, best_norm, best_norm <= target
        theta, s, cur = cand, s_cand, norm_cand
        if cur < best_norm:
            best_theta, best_norm = theta.copy(), cur
        if cur <= target:
            return theta, it, cur, True
    if theta.size == 1 and bracket_scale is not None and best_norm > target:
        hit = _bracket_root_1d(best_theta, score_fn, target, bracket_scale, max_iters)
        if hit is not None:
            return hit
    return best_theta, max_iters, best_norm, best_norm <= target


def fisher_scoring(
    theta0, data: Dataset, folds: list[FoldArtifacts], x0, config: OutriggerConfig
) -> FitResult:
    """Scoring iterations for the outrigger equation from a given start."""
    prep = _Prepared(data, folds, x0, config)
    theta0 = np.asarray(theta0, dtype=float)
    scale = _inner_residual_scale(data, x0, config, theta0)
    theta, iters, resid, conv = _score_iterate(
        theta0, prep.score_vector, prep.info_matrix, config.tol, config.max_iters,
        bracket_scale=scale,
    )
    return FitResult(
        theta=theta,
        estimate=float(theta[0]),
        iterations=iters,
        score_residual=resid,
        converged=conv,
        pilot_estimate=float(np.asarray(theta0, dtype=float)[0]),
    )


def _build_fold(
    data: Dataset, idx: np.ndarray, idx_c: np.ndarray, k: int, x0, config: OutriggerConfig
) -> FoldArtifacts:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    h, lam, K, kappa = config.h, config.lam, config.kernel, config.kappa
    train = data.take(idx_c)

    mu = compute_mu_hat(data, idx_c, x0, h, lam, config.p, K, kappa)

    U_in = data.X[idx] - x0
    wk_in = outrigger_weights(kappa, h, U_in)
    ann_rows = np.nonzero(wk_in > 0.0)[0]
    if ann_rows.size == 0:
        raise EmptyAnnulus(f"fold {k}: no in-fold observations in the shell window")
    pilot_ann = predict_lp_many(train, data.X[idx[ann_rows]], h, config.p, K)
    full_pred = np.full(idx.size, np.nan)
    full_pred[ann_rows] = pilot_ann
    c_hat = compute_c_hat(data, idx, full_pred, x0, h, lam, kappa)

    t = config.t_effective
    loc = lq_norm(data.X[idx_c] - x0, K.q) <= t
    if config.force_gaussian_score:
        pool_idx = idx_c[loc] if loc.any() else idx_c
        pool_pred = predict_lp_many(train, data.X[pool_idx], h, config.p, K)
        score = gaussian_fallback(data.Y[pool_idx] - pool_pred, fold_id=k, t=t)
    elif loc.sum() >= 1:
        loc_idx = idx_c[loc]
        loc_pred = predict_lp_many(train, data.X[loc_idx], h, config.p, K)
        resid = data.Y[loc_idx] - loc_pred
        score = fit_conditional_score(
            data.take(loc_idx), resid, x0, t, config.score, q=K.q,
            seed=_derived_seed(config.seed, k, 7), fold_id=k,
        )
    else:
        pred_all = predict_lp_many(train, data.X[idx_c], h, config.p, K)
        score = fit_conditional_score(
            data.take(idx_c), data.Y[idx_c] - pred_all, x0, t, config.score, q=K.q,
            seed=_derived_seed(config.seed, k, 7), fold_id=k,
        )

    return FoldArtifacts(
        k=k,
        idx=idx,
        mu_hat=mu,
        c_hat=c_hat,
        score=score,
        annulus_rows=ann_rows,
        pilot_infold=pilot_ann,
    )


def _derived_seed(seed, *tags) -> list:
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return base + [int(t) for t in tags]


def build_fold_artifacts(
    data: Dataset, x0, config: OutriggerConfig, folds: list[np.ndarray] | None = None
) -> list[FoldArtifacts]:
    """Pilot fits, score curves and shell weightings for every fold."""
    if folds is None:
        folds = partition_folds(data.n, config.n_folds, _derived_seed(config.seed, 1))
    all_idx = np.arange(data.n)
    out = []
    for k, idx in enumerate(folds):
        idx = np.asarray(idx, dtype=int)
        mask = np.ones(data.n, dtype=bool)
        mask[idx] = False
        out.append(_build_fold(data, idx, all_idx[mask], k, x0, config))
    return out


def _select_root(candidates: list[np.ndarray], anchor: np.ndarray) -> np.ndarray:
    dists = [float(np.max(np.abs(c - anchor))) for c in candidates]
    dmin = min(dists)
    tied = [c for c, dd in zip(candidates, dists) if dd <= dmin + 1e-12 * (1.0 + dmin)]
    return min(tied, key=lambda c: tuple(c.tolist()))


def fit_outrigger(
    data: Dataset,
    x0,
    config: OutriggerConfig,
    *,
    folds: list[np.ndarray] | None = None,
    ci_level: float | None = None,
) -> FitResult:
    """Distribution-adaptive local polynomial fit at x0.

    Orchestrates the cross-fitted pipeline: fold partition, out-of-fold
    pilots and score curves, shell weightings, then Fisher scoring from the
    full-sample pilot.  Among converged roots (the pilot start plus four
    deterministic perturbations) the one nearest the pilot in sup-norm wins,
    ties broken lexicographically.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    order = data.canonical_order()
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    data = data.take(order)
    if folds is not None:
        folds = [np.sort(inv[np.asarray(fidx, dtype=int)]) for fidx in folds]

    pilot = fit_lp(data, x0, config.h, config.p, config.kernel)
    artifacts = build_fold_artifacts(data, x0, config, folds)

    result = _solve_from_artifacts(data, x0, config, artifacts, pilot)

    if config.refit_with_debiased_residuals:
        artifacts = _refit_scores_debiased(data, x0, config, artifacts)
        result = _solve_from_artifacts(data, x0, config, artifacts, pilot)

    if ci_level is not None:
        pieces = _pooled_variance_pieces(data, x0, config, artifacts, pilot)
        lo, hi = confidence_interval(result, pieces, data.n, config.h, data.d, ci_level)
        result = replace(result, ci=(lo, hi, ci_level))
    return result


def _solve_from_artifacts(data, x0, config, artifacts, pilot: LpFit) -> FitResult:
    prep = _Prepared(data, artifacts, x0, config)
    theta_lp = pilot.theta
    sigma_scale = _inner_residual_scale(data, x0, config, theta_lp)
    starts = [theta_lp]
    for delta in (0.1, -0.1, 0.2, -0.2):
        shift = np.zeros_like(theta_lp)
        shift[0] = delta * sigma_scale
        starts.append(theta_lp + shift)

    roots, best = [], None
    for s0 in starts:
        theta, iters, resid, conv = _score_iterate(
            s0, prep.score_vector, prep.info_matrix, config.tol, config.max_iters,
            bracket_scale=sigma_scale,
        )
        run = (theta, iters, resid, conv)
        if conv:
            roots.append(run)
        if best is None or resid < best[2]:
            best = run
    if not roots:
        raise NonConvergence(
            f"no scoring run converged; best residual {best[2]:.3e} after {best[1]} iterations"
        )
    chosen = _select_root([r[0] for r in roots], theta_lp)
    for theta, iters, resid, conv in roots:
        if np.array_equal(theta, chosen):
            return FitResult(
                theta=theta,
                estimate=float(theta[0]),
                iterations=iters,
                score_residual=resid,
                converged=True,
                pilot_estimate=pilot.estimate,
            )
    raise AssertionError("selected root missing from candidate set")


def _inner_residual_scale(data, x0, config, theta_lp) -> float:
    U = data.X - x0
    w = kernel_weights(config.kernel, config.h, U)
    live = w > 0.0
    Q = PolyBasisSpec(config.p, data.d).eval_many(U[live] / config.h)
    resid = data.Y[live] - Q @ theta_lp
    if resid.size < 2:
        return 1.0
    return float(max(resid.std(), 1e-8))


def _refit_scores_debiased(data, x0, config, artifacts) -> list[FoldArtifacts]:
    """Optional second pass: score curves refit on residuals against the
    shell-debiased intermediate fit (pilot + c_hat) instead of the raw pilot."""
    out = []
    for art in artifacts:
        idx = art.idx
        mask = np.ones(data.n, dtype=bool)
        mask[idx] = False
        idx_c = np.arange(data.n)[mask]
        train = data.take(idx_c)
        t = config.t_effective
        loc = lq_norm(data.X[idx_c] - x0, config.kernel.q) <= t
        loc_idx = idx_c[loc] if loc.any() else idx_c
        pred = predict_lp_many(train, data.X[loc_idx], config.h, config.p, config.kernel)
        resid = data.Y[loc_idx] - (pred + art.c_hat)
        score = fit_conditional_score(
            data.take(loc_idx), resid, x0, t, config.score, q=config.kernel.q,
            seed=_derived_seed(config.seed, art.k, 11), fold_id=art.k,
        )
        out.append(replace(art, score=score))
    return out


def _pooled_variance_pieces(data, x0, config, artifacts, pilot: LpFit) -> VariancePieces:
    """Variance pieces from cross-fitted local residuals pooled over folds."""
    t = config.t_effective
    pooled_idx, pooled_res = [], []
    for art in artifacts:
        mask = np.ones(data.n, dtype=bool)
        mask[art.idx] = False
        idx_c = np.arange(data.n)[mask]
        loc = lq_norm(data.X[idx_c] - x0, config.kernel.q) <= max(t, config.h)
        if not loc.any():
            continue
        loc_idx = idx_c[loc]
        pred = predict_lp_many(data.take(art.idx), data.X[loc_idx], config.h, config.p, config.kernel)
        pooled_idx.append(loc_idx)
        pooled_res.append(data.Y[loc_idx] - pred)
    if not pooled_idx:
        raise InsufficientLocalData("no local residuals available for variance pieces")
    idx = np.concatenate(pooled_idx)
    res = np.concatenate(pooled_res)
    if config.force_gaussian_score or res.size < config.score.min_samples:
        score = gaussian_fallback(res, t=t)
    else:
        score = fit_conditional_score(
            data.take(idx), res, x0, max(t, config.h), config.score,
            q=config.kernel.q, seed=_derived_seed(config.seed, 13),
        )
    return estimate_variance_pieces(
        data.take(idx), x0, config.h, config.kernel, res, score, config.lam
    )


def _wrap_score(score) -> callable:
    """Normalise a ScoreModel or an (e, x) -> (rho, rho') callable."""
    if isinstance(score, ScoreModel):
        return lambda e, x: (score.eval(e), score.eval_deriv(e))
    if callable(score):
        return score
    raise TypeError("score must be a ScoreModel or a callable (e, x) -> (rho, rho')")


def _fit_local_likelihood(data, x0, h, p, K, rho_fn, tol, max_iters) -> FitResult:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    order = data.canonical_order()
    data = data.take(order)
    pilot = fit_lp(data, x0, h, p, K)
    U = data.X - x0
    w = kernel_weights(K, h, U)
    live = w > 0.0
    if not live.any():
        raise SingularJacobian("no kernel-weighted observations at x0")
    basis = PolyBasisSpec(p, data.d)
    Q = basis.eval_many(U[live] / h)
    wv = w[live]
    wQ = wv[:, None] * Q
    y = data.Y[live]
    X = data.X[live]
    n = data.n

    def score_fn(theta):
        rho, _ = rho_fn(y - Q @ theta, X)
        return wQ.T @ np.asarray(rho, dtype=float) / n

    def info_fn(theta):
        rho, rho_p = rho_fn(y - Q @ theta, X)
        rho2 = np.asarray(rho, dtype=float) ** 2
        newton = ((wv * -np.asarray(rho_p, dtype=float))[:, None] * Q).T @ Q / n
        fisher = ((wv * rho2)[:, None] * Q).T @ Q / n
        return _usable_information(newton, fisher)

    resid0 = y - Q @ pilot.theta
    scale = float(max(resid0.std(), 1e-8)) if resid0.size > 1 else 1.0
    theta, iters, resid, conv = _score_iterate(
        pilot.theta, score_fn, info_fn, tol, max_iters, bracket_scale=scale
    )
    return FitResult(
        theta=theta,
        estimate=float(theta[0]),
        iterations=iters,
        score_residual=resid,
        converged=conv,
        pilot_estimate=pilot.estimate,
    )


def fit_oracle_ll(
    data: Dataset, x0, h: float, p: int, K: KernelSpec, oracle_score,
    tol: float = 1e-8, max_iters: int = 50,
) -> FitResult:
    """Local likelihood fit given the true conditional score (e, x) -> (rho, rho')."""
    return _fit_local_likelihood(data, x0, h, p, K, oracle_score, tol, max_iters)


def fit_plugin(
    data: Dataset, x0, h: float, p: int, K: KernelSpec, score,
    tol: float = 1e-8, max_iters: int = 50,
) -> FitResult:
    """Naive plug-in fit: local likelihood with an estimated score in place of
    the truth.  Kept as a baseline because the score-estimation bias leaks
    straight into the estimate."""
    return _fit_local_likelihood(data, x0, h, p, K, _wrap_score(score), tol, max_iters)


def estimate_variance_pieces(
    data: Dataset, x0, h: float, K: KernelSpec, residuals, score: ScoreModel, lam: float
) -> VariancePieces:
    """Kernel-weighted plug-in estimates of density, variance, information and
    the shell-interpolated variance V_hat at the given lambda."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    res = np.asarray(residuals, dtype=float).ravel()
    if res.size != data.n:
        raise ValueError("residuals must align with data rows")
    w = kernel_weights(K, h, data.X - x0)
    total = float(w.sum())
    if total <= 0.0:
        raise InsufficientLocalData("zero total kernel weight at x0")
    p_hat = total / data.n
    sigma2 = float(np.dot(w, res**2) / total)
    rho = score.eval(res)
    i_hat = float(np.dot(w, rho**2) / total)
    ratio = OutriggerKernel(lam, K.d, K.q).r2 / r2_kernel(K)
    v = 1.0 / i_hat + (sigma2 - 1.0 / i_hat) * ratio
    clamped = v < 1e-12
    return VariancePieces(
        p_hat=p_hat,
        sigma2_hat=sigma2,
        i_hat=i_hat,
        v_hat=max(v, 1e-12),
        clamped=clamped,
        r2_kernel=r2_kernel(K),
    )


def confidence_interval(
    fit: FitResult, pieces: VariancePieces, n: int, h: float, d: int, level: float
) -> tuple[float, float]:
    """Normal-approximation interval; valid under undersmoothing (the
    smoothing bias is ignored)."""
    if not (0.0 < level < 1.0):
        raise ValueError("level must lie in (0, 1)")
    if pieces.clamped:
        warnings.warn("variance estimate clamped at floor; interval is degenerate")
    z = float(stats.norm.ppf(0.5 * (1.0 + level)))
    half = z * float(np.sqrt(pieces.r2_kernel * pieces.v_hat / (pieces.p_hat * n * h**d)))
    return fit.estimate - half, fit.estimate + half
