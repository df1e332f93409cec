"""Standard local polynomial fitting at a point (pilot and baseline)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InsufficientLocalData, SingularGram
from .kernels import KernelSpec, PolyBasisSpec, kernel_weights

COND_LIMIT = 1e12
JITTER_SCALE = 1e-10


@dataclass(frozen=True)
class Dataset:
    """Covariate matrix X (n, d) and response vector Y (n,)."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.shape[0] == 1 and np.asarray(self.X).ndim == 1 and np.asarray(self.Y).size > 1:
            X = X.T
        Y = np.asarray(self.Y, dtype=float).ravel()
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y must have the same number of rows")
        if self.X.shape[0] < 1:
            raise ValueError("dataset must contain at least one observation")
        if not (np.isfinite(self.X).all() and np.isfinite(self.Y).all()):
            raise ValueError("dataset contains non-finite entries")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def canonical_order(self) -> np.ndarray:
        """Permutation sorting rows lexicographically by (X, Y).

        Fitting routines sum over rows in this order, so outputs are
        bit-identical under any permutation of the input rows.
        """
        keys = (self.Y,) + tuple(self.X[:, j] for j in reversed(range(self.d)))
        return np.lexsort(keys)

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.X[idx], self.Y[idx])


@dataclass(frozen=True)
class LpFit:
    """Solution of the weighted least-squares estimating equation at x0."""

    theta: np.ndarray
    estimate: float
    n_effective: int
    gram_condition: float


def _solve_gram(G: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """SPD solve with a one-shot jitter fallback; raises SingularGram."""
    pb = G.shape[0]
    cond = float(np.linalg.cond(G))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        G = G + (JITTER_SCALE * np.trace(G) / pb) * np.eye(pb)
        cond = float(np.linalg.cond(G))
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise SingularGram(f"gram condition {cond:.3e} exceeds {COND_LIMIT:.0e} after jitter")
    try:
        c, low = linalg.cho_factor(G)
        theta = linalg.cho_solve((c, low), b)
    except linalg.LinAlgError as exc:
        raise SingularGram(f"gram factorisation failed: {exc}") from exc
    return theta, cond


def fit_lp(data: Dataset, x0, h: float, p: int, K: KernelSpec) -> LpFit:
    """Local polynomial fit at x0.

    Solves sum_i K_h(X_i - x0) Q_h(X_i - x0) (Y_i - Q_h(X_i - x0)' theta) = 0
    over theta; the first coefficient is the regression estimate at x0.

    Raises
    ------
    InsufficientLocalData
        if fewer weighted points than coefficients fall in the window.
    SingularGram
        if the local Gram matrix stays ill-conditioned after jitter.
    """
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != data.d:
        raise ValueError(f"x0 must have length {data.d}")
    basis = PolyBasisSpec(p, data.d)
    order = data.canonical_order()
    U = data.X[order] - x0
    w = kernel_weights(K, h, U)
    live = w > 0.0
    n_eff = int(live.sum())
    if n_eff < basis.p_bar:
        raise InsufficientLocalData(
            f"{n_eff} weighted points < {basis.p_bar} coefficients at x0={x0}"
        )
    U, w, y = U[live], w[live], data.Y[order][live]
    Q = basis.eval_many(U / h)
    G = (w[:, None] * Q).T @ Q
    b = Q.T @ (w * y)
    theta, cond = _solve_gram(G, b)
    return LpFit(theta=theta, estimate=float(theta[0]), n_effective=n_eff, gram_condition=cond)


def _predict_lc_scan(Xs: np.ndarray, Ys: np.ndarray, pts: np.ndarray, h: float, K: KernelSpec):
    """Local-constant predictions along sorted 1-d data via windowed moment
    sums: the quadratic kernel profile expands into powers of (X - x), so
    each window's weighted sums come from cumulative sums over a narrow
    slice recentred to kill cancellation.  Same estimating equation as
    fit_lp with p = 0, evaluated in O(n + m)."""
    uniform = K.name == "uniform"
    out = np.empty(pts.size)
    counts = np.empty(pts.size, dtype=int)
    start = 0
    m = pts.size
    while start < m:
        stop = int(np.searchsorted(pts, pts[start] + 2.0 * h, side="right"))
        stop = max(stop, start + 1)
        block = pts[start:stop]
        lo = int(np.searchsorted(Xs, block[0] - h, side="left" if uniform else "right"))
        hi = int(np.searchsorted(Xs, block[-1] + h, side="right" if uniform else "left"))
        Xw, Yw = Xs[lo:hi], Ys[lo:hi]
        i0 = np.searchsorted(Xw, block - h, side="left" if uniform else "right")
        i1 = np.searchsorted(Xw, block + h, side="right" if uniform else "left")
        counts[start:stop] = i1 - i0
        if uniform:
            c0 = np.concatenate([[0.0], np.cumsum(Yw)])
            n0 = np.concatenate([[0.0], np.cumsum(np.ones_like(Yw))])
            num = c0[i1] - c0[i0]
            den = n0[i1] - n0[i0]
        else:
            c = 0.5 * (block[0] + block[-1])
            Xc = Xw - c
            ones = np.ones_like(Yw)
            cums = [np.concatenate([[0.0], np.cumsum(v)]) for v in
                    (Yw, Xc * Yw, Xc * Xc * Yw, ones, Xc, Xc * Xc)]
            s0y, s1y, s2y, s0, s1, s2 = (cc[i1] - cc[i0] for cc in cums)
            xc = block - c
            a = 1.0 - xc * xc / (h * h)
            b = 2.0 * xc / (h * h)
            num = a * s0y + b * s1y - s2y / (h * h)
            den = a * s0 + b * s1 - s2 / (h * h)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[start:stop] = num / den
        start = stop
    return out, counts


def predict_lp_many(
    data_train: Dataset,
    points: np.ndarray,
    h: float,
    p: int,
    K: KernelSpec,
    chunk: int = 512,
) -> np.ndarray:
    """Per-point local polynomial estimates at each row of `points`.

    Vectorised over evaluation points; failures report the offending
    point index.
    """
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.size == 0:
        return np.empty(0)
    if points.shape[1] != data_train.d:
        raise ValueError(f"points must have {data_train.d} columns")
    if p == 0 and data_train.d == 1 and K.name in ("epanechnikov", "uniform"):
        order = data_train.canonical_order()
        Xs, Ys = data_train.X[order, 0], data_train.Y[order]
        eval_order = np.argsort(points[:, 0], kind="stable")
        preds, counts = _predict_lc_scan(Xs, Ys, points[eval_order, 0], h, K)
        bad = np.nonzero(counts < 1)[0]
        if bad.size:
            i = int(eval_order[int(bad[0])])
            raise InsufficientLocalData(f"point {i}: 0 weighted points < 1 coefficients")
        inv = np.empty_like(eval_order)
        inv[eval_order] = np.arange(points.shape[0])
        return preds[inv]
    basis = PolyBasisSpec(p, data_train.d)
    pb = basis.p_bar
    order = data_train.canonical_order()
    Xt, Yt = data_train.X[order], data_train.Y[order]
    m = points.shape[0]
    # evaluate in sorted order so each chunk touches a narrow training window
    eval_order = np.argsort(points[:, 0], kind="stable")
    points = points[eval_order]
    out = np.empty(m)
    windowed = data_train.d == 1
    for start in range(0, m, chunk):
        pts = points[start : start + chunk]
        if windowed:
            lo = np.searchsorted(Xt[:, 0], pts[0, 0] - h, side="left")
            hi = np.searchsorted(Xt[:, 0], pts[-1, 0] + h, side="right")
            Xw, Yw = Xt[lo:hi], Yt[lo:hi]
        else:
            Xw, Yw = Xt, Yt
        D = pts[:, None, :] - Xw[None, :, :]
        W = kernel_weights(K, h, D)
        n_eff = (W > 0.0).sum(axis=1)
        bad = np.nonzero(n_eff < pb)[0]
        if bad.size:
            i = int(eval_order[int(bad[0]) + start])
            raise InsufficientLocalData(
                f"point {i}: {int(n_eff[bad[0]])} weighted points < {pb} coefficients"
            )
        if p == 0:
            out[start : start + chunk] = (W @ Yw) / W.sum(axis=1)
            continue
        Q = basis.eval_many((D / h).reshape(-1, data_train.d)).reshape(pts.shape[0], -1, pb)
        G = np.einsum("cn,cnj,cnk->cjk", W, Q, Q, optimize=True)
        b = np.einsum("cn,cnj->cj", W * Yw[None, :], Q, optimize=True)
        cond = np.linalg.cond(G)
        shaky = ~np.isfinite(cond) | (cond > COND_LIMIT)
        if shaky.any():
            tr = np.trace(G, axis1=1, axis2=2) / pb
            G = G + (JITTER_SCALE * tr * shaky)[:, None, None] * np.eye(pb)
            cond = np.linalg.cond(G)
            still = np.nonzero(~np.isfinite(cond) | (cond > COND_LIMIT))[0]
            if still.size:
                i = int(eval_order[int(still[0]) + start])
                raise SingularGram(f"point {i}: singular local gram")
        theta = np.linalg.solve(G, b[..., None])[..., 0]
        out[start : start + chunk] = theta[:, 0]
    inv = np.empty_like(eval_order)
    inv[eval_order] = np.arange(m)
    return out[inv]
