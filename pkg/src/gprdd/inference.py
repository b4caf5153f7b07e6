"""Posterior summaries: means, marginal intervals, batch-means covariance,
the simultaneous credible ellipsoid, and the two ellipsoid-based tests.

The simultaneous region is the Mahalanobis ball (in the batch-means metric)
whose empirical content over the retained draws first reaches the nominal
level; its critical radius gets a tiny relative nudge so the strict
inequality defining the region holds at exactly that count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .linalg import chol_forward, jittered_cholesky
from .sampler import Chain

__all__ = [
    "PosteriorSummary",
    "SharpNullResult",
    "HomogeneousNullResult",
    "summarize",
    "marginal_intervals",
    "batch_means_cov",
    "mahalanobis_sq",
    "critical_radius",
    "region_volume",
    "test_sharp_null",
    "test_homogeneous_null",
]

RADIUS_NUDGE = 1e-12


@dataclass
class PosteriorSummary:
    """Effect summaries at one credibility level."""

    delta_mean: np.ndarray
    marginal_intervals: np.ndarray  # (J, 2) lower/upper
    sigma_hat: np.ndarray
    r_alpha: float
    volume: float
    region_level: float

    @property
    def J(self) -> int:
        return int(self.delta_mean.shape[0])


@dataclass(frozen=True)
class SharpNullResult:
    statistic: float
    reject: bool


@dataclass(frozen=True)
class HomogeneousNullResult:
    c_star: float
    statistic: float
    reject: bool


def marginal_intervals(draws: np.ndarray, alpha: float) -> np.ndarray:
    """Per-coordinate (alpha/2, 1-alpha/2) empirical quantile intervals,
    linear interpolation between order statistics; returns (J, 2)."""
    lo, hi = np.quantile(draws, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0, method="linear")
    return np.column_stack([lo, hi])


def batch_means_cov(delta_draws: np.ndarray) -> np.ndarray:
    """Batch-means covariance of the effect draws.

    Batch size is floor(sqrt(T)); trailing draws beyond a whole number of
    batches are dropped.  For an iid chain this estimates the posterior
    covariance; autocorrelation inflates it accordingly.
    """
    draws = np.atleast_2d(np.asarray(delta_draws, dtype=float))
    if draws.ndim != 2:
        raise ValueError("expected a T x J array of draws")
    T = draws.shape[0]
    if T < 4:
        raise ValueError("batch-means needs at least 4 draws (two batches)")
    b = int(math.floor(math.sqrt(T)))
    a = T // b
    batches = draws[: a * b].reshape(a, b, -1).mean(axis=1)
    centered = batches - batches.mean(axis=0)
    return (b / (a - 1)) * (centered.T @ centered)


def mahalanobis_sq(draws: np.ndarray, center: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Squared Mahalanobis distance of each draw from ``center`` under ``cov``
    (jitter-factorized)."""
    lower, _ = jittered_cholesky(np.asarray(cov, dtype=float))
    diffs = np.atleast_2d(draws) - np.asarray(center, dtype=float)
    white = chol_forward(lower, diffs.T)
    return np.einsum("ij,ij->j", white, white)


def critical_radius(delta_draws: np.ndarray, delta_mean: np.ndarray, sigma_hat: np.ndarray, alpha: float) -> float:
    """Smallest radius whose open Mahalanobis ball holds at least a
    ceil((1-alpha) T) share of the draws.

    The returned value is the qualifying order statistic plus a relative
    nudge of 1e-12 so the strict inequality holds at that count.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie strictly between 0 and 1")
    stats = mahalanobis_sq(delta_draws, delta_mean, sigma_hat)
    T = stats.shape[0]
    m = math.ceil((1.0 - alpha) * T)
    q = float(np.partition(stats, m - 1)[m - 1])
    return q + RADIUS_NUDGE * max(q, 1.0)


def region_volume(sigma_hat: np.ndarray, r_alpha: float, p: int) -> float:
    """Volume of the Mahalanobis ellipsoid of squared radius ``r_alpha`` in
    dimension ``p``: (2 pi^{p/2} / (p Gamma(p/2))) r^{p/2} |Sigma|^{1/2}."""
    if r_alpha < 0:
        raise ValueError("r_alpha must be nonnegative")
    sign, logdet = np.linalg.slogdet(np.asarray(sigma_hat, dtype=float))
    if sign <= 0 or r_alpha == 0.0:
        return 0.0
    log_vol = (
        math.log(2.0)
        + 0.5 * p * math.log(math.pi)
        - math.log(p)
        - gammaln(0.5 * p)
        + 0.5 * p * math.log(r_alpha)
        + 0.5 * logdet
    )
    return float(math.exp(log_vol))


def summarize(chain: Chain, alpha: float = 0.05) -> PosteriorSummary:
    """Posterior mean, marginal quantile intervals (linear interpolation),
    batch-means covariance and the simultaneous region at level 1 - alpha."""
    if len(chain) == 0:
        raise ValueError("empty chain")
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie strictly between 0 and 1")
    draws = chain.delta_draws
    mean = draws.mean(axis=0)
    sigma_hat = batch_means_cov(draws)
    r_alpha = critical_radius(draws, mean, sigma_hat, alpha)
    volume = region_volume(sigma_hat, r_alpha, chain.J)
    return PosteriorSummary(
        delta_mean=mean,
        marginal_intervals=marginal_intervals(draws, alpha),
        sigma_hat=sigma_hat,
        r_alpha=r_alpha,
        volume=volume,
        region_level=alpha,
    )


def test_sharp_null(summary: PosteriorSummary) -> SharpNullResult:
    """Reject when the zero vector falls outside the simultaneous region."""
    stat = float(mahalanobis_sq(np.zeros((1, summary.J)), summary.delta_mean, summary.sigma_hat)[0])
    return SharpNullResult(statistic=stat, reject=bool(stat >= summary.r_alpha))


def test_homogeneous_null(summary: PosteriorSummary) -> HomogeneousNullResult:
    """Reject when no constant vector c * 1 lies inside the region.

    The minimizing constant has the closed form
    c* = (1' S^{-1} m) / (1' S^{-1} 1) in the batch-means metric.
    """
    ones = np.ones(summary.J)
    lower, _ = jittered_cholesky(summary.sigma_hat)
    w_ones = chol_forward(lower, ones)
    w_mean = chol_forward(lower, summary.delta_mean)
    c_star = float(w_ones @ w_mean) / float(w_ones @ w_ones)
    stat = float(
        mahalanobis_sq((c_star * ones)[None, :], summary.delta_mean, summary.sigma_hat)[0]
    )
    return HomogeneousNullResult(c_star=c_star, statistic=stat, reject=bool(stat >= summary.r_alpha))
