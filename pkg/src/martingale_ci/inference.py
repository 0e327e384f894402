"""Test statistics with robust covariance, plus the closed-form baselines.

The statistic for testing a coefficient value runs the full selection
pipeline on the supplied response: greedy selection with the BIC-style
stopping rule, factor estimation, projected-design estimation, and a
sandwich variance. A response for which the target column is not selected
returns a sentinel (0 for two-sided use, -inf for one-sided use) so that
quantiles can condition on selection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr
from scipy.stats import norm, t as t_dist

from .factor_model import estimate_factors
from .iv_estimator import IvEstimate, iv_estimate, solve_gram
from .oga import SelectionResult, oga_hdbic

COV_UNCORRELATED = "uncorrelated"
COV_HAC = "hac"

SIDE_ONE = "one"
SIDE_TWO = "two"


class InvalidTruncationError(ValueError):
    """Raised when a truncation interval has a >= b."""


@dataclass
class CovEstimate:
    """Sandwich covariance V = n (X~'X~)^-1 S (X~'X~)^-1."""

    V: np.ndarray
    S: np.ndarray
    mode: str
    q: int = 0


@dataclass(frozen=True)
class StatConfig:
    """Knobs shared by every statistic evaluation."""

    kmax: int = 5
    q: int = 1
    cov_mode: str = COV_HAC
    side: str = SIDE_ONE
    kn: int | None = None

    @property
    def sentinel(self) -> float:
        return -np.inf if self.side == SIDE_ONE else 0.0


@dataclass
class IntervalReport:
    """One confidence bound (or pair) for one selected coefficient."""

    j: int
    method: str
    lower: float
    upper: float
    alpha: float
    diagnostics: dict = field(default_factory=dict)


def covariance(
    est: IvEstimate,
    mode: str = COV_HAC,
    q: int = 1,
    squared_residuals: bool = True,
) -> CovEstimate:
    """Robust covariance of the projected-design estimator.

    ``uncorrelated`` uses S = X~' diag(w^2) X~ (set ``squared_residuals``
    False for the first-power variant, which is not positive semidefinite
    and is kept only for sensitivity checks). ``hac`` adds Bartlett-weighted
    autocovariances of g_t = w_t x~_t up to lag q.
    """
    x_tilde = est.x_tilde
    w = est.residuals
    n = x_tilde.shape[0]
    if x_tilde.shape[1] == 0:
        empty = np.zeros((0, 0))
        return CovEstimate(V=empty, S=empty, mode=mode, q=q if mode == COV_HAC else 0)
    if mode == COV_UNCORRELATED:
        diag = w**2 if squared_residuals else w
        S = x_tilde.T @ (x_tilde * diag[:, None])
    elif mode == COV_HAC:
        if q < 0:
            raise ValueError("q must be nonnegative")
        G = x_tilde * w[:, None]
        S = G.T @ G
        for nu in range(1, q + 1):
            A = G[nu:].T @ G[:-nu]
            S = S + (1.0 - nu / (q + 1.0)) * (A + A.T)
    else:
        raise ValueError(f"unknown covariance mode {mode!r}")

    inv_gram_s = solve_gram(est.gram, S)
    V = n * solve_gram(est.gram, inv_gram_s.T).T
    V = 0.5 * (V + V.T)
    return CovEstimate(V=V, S=S, mode=mode, q=q if mode == COV_HAC else 0)


@dataclass
class PipelineFit:
    """Selection + estimate + per-coefficient scale for one response."""

    selection: SelectionResult
    estimate: IvEstimate
    cov: CovEstimate
    sigma: np.ndarray  # sqrt(V_jj / n) per selected coefficient

    @property
    def j_hat(self) -> np.ndarray:
        return self.selection.j_hat

    def position(self, j: int) -> int | None:
        hits = np.flatnonzero(self.j_hat == j)
        return int(hits[0]) if len(hits) else None


def fit_pipeline(X: np.ndarray, Y: np.ndarray, cfg: StatConfig) -> PipelineFit:
    """Run selection, factor projection, estimation and variance once."""
    sel = oga_hdbic(X, Y, cfg.kn)
    fe = estimate_factors(X, min(cfg.kmax, min(X.shape)))
    est = iv_estimate(X, Y, sel.j_hat, fe.F_hat)
    cov = covariance(est, cfg.cov_mode, cfg.q)
    n = X.shape[0]
    sigma = np.sqrt(np.diag(cov.V) / n)
    return PipelineFit(selection=sel, estimate=est, cov=cov, sigma=sigma)


def test_statistic(
    X: np.ndarray, Y: np.ndarray, j: int, theta: float, cfg: StatConfig
) -> float:
    """Standardized statistic for the hypothesis that coefficient j equals theta.

    Selection is part of the statistic: when column j is not selected the
    sentinel is returned (0 two-sided, -inf one-sided).
    """
    fit = fit_pipeline(X, Y, cfg)
    pos = fit.position(j)
    if pos is None:
        return cfg.sentinel
    value = (fit.estimate.beta_tilde[pos] - theta) / fit.sigma[pos]
    return abs(value) if cfg.side == SIDE_TWO else value


def t_interval(
    X: np.ndarray,
    Y: np.ndarray,
    j_hat: np.ndarray,
    j: int,
    alpha: float,
    side: str = SIDE_ONE,
) -> IntervalReport:
    """Classical t interval from the least-squares fit on the selected columns.

    Ignores both the data-driven selection and any signal left outside the
    selected set; kept as a baseline.
    """
    j_hat = np.asarray(j_hat, dtype=int)
    n = X.shape[0]
    m = len(j_hat)
    if m >= n:
        raise ValueError("need |J| < n for the t interval")
    X_J = X[:, j_hat]
    gram = X_J.T @ X_J
    beta = solve_gram(gram, X_J.T @ Y)
    rss = float(np.sum((Y - X_J @ beta) ** 2))
    dof = n - m
    s = math.sqrt(rss / dof)
    pos = int(np.flatnonzero(j_hat == j)[0])
    c_jj = float(solve_gram(gram, np.eye(m)[:, pos])[pos])
    half = t_dist.ppf(1.0 - alpha, dof) * s * math.sqrt(c_jj)
    lower = beta[pos] - half
    upper = np.inf if side == SIDE_ONE else beta[pos] + half
    return IntervalReport(j=j, method="t", lower=float(lower), upper=float(upper),
                          alpha=alpha)


def iv_interval(
    est: IvEstimate,
    cov: CovEstimate,
    j: int,
    alpha: float,
    side: str = SIDE_ONE,
) -> IntervalReport:
    """Normal-theory interval for the projected-design estimator."""
    pos = int(np.flatnonzero(est.j == j)[0])
    n = est.x_tilde.shape[0]
    sigma = math.sqrt(cov.V[pos, pos] / n)
    z = norm.ppf(1.0 - alpha)
    lower = est.beta_tilde[pos] - z * sigma
    upper = np.inf if side == SIDE_ONE else est.beta_tilde[pos] + z * sigma
    return IntervalReport(j=j, method="iv", lower=float(lower), upper=float(upper),
                          alpha=alpha)


def _log_phi_diff(lo: float, hi: float) -> float:
    """log(Phi(hi) - Phi(lo)) computed stably for extreme arguments."""
    if hi <= lo:
        return -np.inf
    if hi <= 0.0:
        a, b = log_ndtr(hi), log_ndtr(lo)
    elif lo >= 0.0:
        a, b = log_ndtr(-lo), log_ndtr(-hi)
    else:
        val = norm.cdf(hi) - norm.cdf(lo)
        return math.log(val) if val > 0.0 else -np.inf
    # a >= b here; log(exp(a) - exp(b)) = a + log1p(-exp(b - a)).
    d = b - a
    if d >= 0.0:
        return -np.inf
    return float(a + math.log1p(-math.exp(d)))


def truncnorm_cdf(x: float, mu: float, sigma: float, a: float, b: float) -> float:
    """CDF of a normal(mu, sigma^2) truncated to [a, b], tail-stable."""
    if not a < b:
        raise InvalidTruncationError(f"need a < b, got a={a}, b={b}")
    if sigma <= 0.0:
        raise InvalidTruncationError("sigma must be positive")
    if x <= a:
        return 0.0
    if x >= b:
        return 1.0
    za = -np.inf if a == -np.inf else (a - mu) / sigma
    zb = np.inf if b == np.inf else (b - mu) / sigma
    zx = (x - mu) / sigma
    num = _log_phi_diff(za, zx)
    den = _log_phi_diff(za, zb)
    if den == -np.inf:
        # No mass in [a, b] at this mu: resolve by which side x sits on.
        return 0.0 if zx <= 0.5 * (za + zb) else 1.0
    if num == -np.inf:
        return 0.0
    return float(min(1.0, math.exp(num - den)))


def truncnorm_sf(x: float, mu: float, sigma: float, a: float, b: float) -> float:
    """Survival function 1 - F of the truncated normal, tail-stable."""
    if not a < b:
        raise InvalidTruncationError(f"need a < b, got a={a}, b={b}")
    if x <= a:
        return 1.0
    if x >= b:
        return 0.0
    za = -np.inf if a == -np.inf else (a - mu) / sigma
    zb = np.inf if b == np.inf else (b - mu) / sigma
    zx = (x - mu) / sigma
    num = _log_phi_diff(zx, zb)
    den = _log_phi_diff(za, zb)
    if den == -np.inf:
        return 1.0 if zx <= 0.5 * (za + zb) else 0.0
    if num == -np.inf:
        return 0.0
    return float(min(1.0, math.exp(num - den)))
