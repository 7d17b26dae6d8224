"""Border-level test statistics.

The monthly difference series, its autoregressive intercept fit by ordinary
least squares, the naive normal-theory p-value, and the exact binomial test
used for negative-control outcomes. Pure functions, concurrently invocable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps


class DegenerateFitError(ValueError):
    """The fit is undefined: collinear design or zero standard error."""


class InsufficientDataError(ValueError):
    """Not enough usable observations after masking."""


ZERO_DENOMINATOR = "zero-denominator"


@dataclass
class DiffSeries:
    """Monthly difference statistic z_t for one border and buffer width.

    ``valid`` marks usable months; masked months carry a reason code in
    ``mask_reasons`` keyed by 0-based position.
    """

    z: np.ndarray
    mode: str  # "count" or "rate"
    valid: np.ndarray
    mask_reasons: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float).reshape(-1)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        if self.z.shape != self.valid.shape:
            raise ValueError("z and valid mask disagree in length")

    def __len__(self) -> int:
        return self.z.shape[0]


def diff_series(side1_counts, side0_counts) -> DiffSeries:
    """Count difference z_t = Y_t(side1) - Y_t(side0); no masking."""
    s1 = np.asarray(side1_counts, dtype=float).reshape(-1)
    s0 = np.asarray(side0_counts, dtype=float).reshape(-1)
    if s1.shape != s0.shape:
        raise ValueError(f"length mismatch: {s1.shape[0]} vs {s0.shape[0]}")
    return DiffSeries(s1 - s0, "count", np.ones(s1.shape[0], dtype=bool))


def rate_diff_series(arrests1, crimes1, arrests0, crimes0) -> DiffSeries:
    """Rate difference z_t = a1_t/c1_t - a0_t/c0_t.

    Months with zero crimes on either side are masked with the
    zero-denominator reason code rather than smoothed away.
    """
    a1, c1, a0, c0 = (np.asarray(v, dtype=float).reshape(-1) for v in (arrests1, crimes1, arrests0, crimes0))
    if not (a1.shape == c1.shape == a0.shape == c0.shape):
        raise ValueError("all four series must have equal length")
    valid = (c1 > 0) & (c0 > 0)
    z = np.zeros(a1.shape[0])
    z[valid] = a1[valid] / c1[valid] - a0[valid] / c0[valid]
    reasons = {int(i): ZERO_DENOMINATOR for i in np.nonzero(~valid)[0]}
    return DiffSeries(z, "rate", valid, reasons)


@dataclass
class ArFit:
    """OLS fit of z_t = c + sum_q rho_q z_{t-q} + eps_t."""

    c_hat: float
    rho: np.ndarray
    se_c: float
    Q: int
    n_eff: int


def _lagged_rows(z: np.ndarray, valid: np.ndarray, Q: int):
    """Design rows [1, z_{t-1}, ..., z_{t-Q}] from runs of consecutive valid months."""
    T = z.shape[0]
    rows = [t for t in range(Q, T) if valid[t - Q : t + 1].all()]
    if not rows:
        return np.empty((0, Q + 1)), np.empty(0)
    idx = np.asarray(rows)
    X = np.ones((idx.shape[0], Q + 1))
    for q in range(1, Q + 1):
        X[:, q] = z[idx - q]
    return X, z[idx]


def fit_ar(series, Q: int = 1) -> ArFit:
    """Fit the order-Q autoregression by ordinary least squares.

    Q = 0 reduces to the sample mean and its standard error. Raises
    InsufficientDataError when fewer than Q + 2 usable rows remain and
    DegenerateFitError for a rank-deficient design, naming the collinear
    columns.
    """
    if isinstance(series, DiffSeries):
        z, valid = series.z, series.valid
    else:
        z = np.asarray(series, dtype=float).reshape(-1)
        valid = np.ones(z.shape[0], dtype=bool)
    if Q < 0:
        raise ValueError("Q must be non-negative")
    X, y = _lagged_rows(z, valid, Q)
    n = y.shape[0]
    if n < Q + 2:
        raise InsufficientDataError(
            f"need at least {Q + 2} usable rows for AR({Q}), found {n}"
        )
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < Q + 1:
        names = ["intercept"] + [f"lag-{q}" for q in range(1, Q + 1)]
        stds = X.std(axis=0)
        collinear = [names[j] for j in range(1, Q + 1) if stds[j] == 0.0] or names[1:]
        raise DegenerateFitError(
            f"rank-deficient AR design; collinear columns: {', '.join(collinear)}"
        )
    resid = y - X @ beta
    dof = n - (Q + 1)
    sigma2 = float(resid @ resid) / dof
    XtX_inv = np.linalg.inv(X.T @ X)
    se_c = float(np.sqrt(sigma2 * XtX_inv[0, 0]))
    return ArFit(float(beta[0]), np.asarray(beta[1:]), se_c, Q, n)


def fit_ar_batch(Z: np.ndarray, Q: int = 1):
    """Vectorized AR(Q) intercept fit over many fully-valid series.

    Parameters
    ----------
    Z : ndarray, shape (n_series, T)
    Q : lag order

    Returns
    -------
    (c_hat, se_c) arrays of shape (n_series,); entries are NaN where the
    per-series design is singular or the residual degrees of freedom vanish.
    """
    Z = np.asarray(Z, dtype=float)
    n_series, T = Z.shape
    m = T - Q
    if m < Q + 2:
        raise InsufficientDataError(f"series too short for AR({Q})")
    X = np.ones((n_series, m, Q + 1))
    for q in range(1, Q + 1):
        X[:, :, q] = Z[:, Q - q : T - q]
    y = Z[:, Q:]
    G = np.einsum("ntk,ntl->nkl", X, X)
    b = np.einsum("ntk,nt->nk", X, y)
    c = np.full(n_series, np.nan)
    se = np.full(n_series, np.nan)
    dof = m - (Q + 1)
    try:
        beta = np.linalg.solve(G, b)
        ok = np.ones(n_series, dtype=bool)
    except np.linalg.LinAlgError:
        beta = np.full((n_series, Q + 1), np.nan)
        ok = np.zeros(n_series, dtype=bool)
        for i in range(n_series):
            try:
                beta[i] = np.linalg.solve(G[i], b[i])
                ok[i] = True
            except np.linalg.LinAlgError:
                pass
    resid = y - np.einsum("ntk,nk->nt", X, beta)
    sigma2 = np.einsum("nt,nt->n", resid, resid) / dof
    with np.errstate(invalid="ignore", divide="ignore"):
        ginv00 = np.array([np.linalg.inv(G[i])[0, 0] if ok[i] else np.nan for i in range(n_series)]) \
            if not ok.all() else np.linalg.inv(G)[:, 0, 0]
        se_all = np.sqrt(sigma2 * ginv00)
    c[ok] = beta[ok, 0]
    se[ok] = se_all[ok]
    se[~np.isfinite(se)] = np.nan
    c[~np.isfinite(c)] = np.nan
    return c, se


def naive_p(fit: ArFit) -> float:
    """Two-sided p-value treating c_hat / se_c as standard normal."""
    if not np.isfinite(fit.se_c) or fit.se_c <= 0:
        raise DegenerateFitError("zero or undefined intercept standard error")
    return float(2.0 * sps.norm.sf(abs(fit.c_hat) / fit.se_c))


def naive_p_batch(c_hat: np.ndarray, se_c: np.ndarray) -> np.ndarray:
    """Vectorized :func:`naive_p`; NaN where the fit failed."""
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.abs(c_hat) / se_c
    p = 2.0 * sps.norm.sf(z)
    p[~np.isfinite(z) | (se_c <= 0)] = np.nan
    return p


def binom_test(y1: int, y0: int) -> float:
    """Exact two-sided equal-split binomial test on two side counts.

    Under the no-difference null, y1 ~ Binomial(y1 + y0, 1/2); the two-sided
    p-value sums the probabilities of all outcomes no more likely than the
    observed one.
    """
    y1, y0 = int(y1), int(y0)
    if y1 < 0 or y0 < 0:
        raise ValueError("counts must be non-negative")
    n = y1 + y0
    if n == 0:
        raise DegenerateFitError("binomial test undefined for zero total count")
    return float(sps.binomtest(y1, n, 0.5).pvalue)
