"""ATE estimators over completed histories.

The central object is the per-round score: an inverse-propensity-weighted
residual contrast, importance-weighted by the reciprocal covariate density
ratio, plus the plug-in expectation of the estimated effect under q.
Averaging the scores gives the estimator; their sample variance feeds the
normal confidence interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

__all__ = [
    "ScoreRecord",
    "EstimateReport",
    "aipwiw_score",
    "aipwiw_estimate",
    "aipw_estimate",
    "difference_in_means",
    "policy_value_score",
]


@dataclass(frozen=True)
class ScoreRecord:
    t: int
    psi: float
    ipw_term_1: float
    ipw_term_0: float
    plugin_term: float
    density_ratio_used: float


@dataclass(frozen=True)
class EstimateReport:
    theta_hat: float
    variance_hat: float  # variance of sqrt(T) * (theta_hat - theta)
    ci_lo: float
    ci_hi: float
    T: int
    alpha: float

    @property
    def ci_width(self) -> float:
        return self.ci_hi - self.ci_lo

    def covers(self, theta: float) -> bool:
        return self.ci_lo <= theta <= self.ci_hi


def aipwiw_score(y: float, a: int, x: np.ndarray, model,
                 design, plugin_expectation: float, t: int = 0) -> ScoreRecord:
    """One round's score given the fitted mean model and the round's design.

    `model` needs only predict_mean(a, x); `design` needs propensity(a, x)
    and density_ratio(x). Exactly one of the two inverse-propensity terms is
    nonzero because a single treatment is observed.
    """
    xq = np.atleast_2d(np.asarray(x, dtype=float))
    w1 = float(np.asarray(design.propensity(1, xq)).ravel()[0])
    w0 = float(np.asarray(design.propensity(0, xq)).ravel()[0])
    ratio = float(np.asarray(design.density_ratio(xq)).ravel()[0])
    if w1 <= 0 or w0 <= 0:
        raise ValueError("propensity must be strictly positive at x")
    if ratio <= 0:
        raise ValueError("density ratio must be strictly positive at x")
    mu_a = float(np.asarray(model.predict_mean(a, xq)).ravel()[0])
    resid = y - mu_a
    ipw1 = resid / w1 if a == 1 else 0.0
    ipw0 = resid / w0 if a == 0 else 0.0
    psi = (ipw1 - ipw0) / ratio + plugin_expectation
    return ScoreRecord(t=t, psi=psi, ipw_term_1=ipw1, ipw_term_0=ipw0,
                       plugin_term=plugin_expectation,
                       density_ratio_used=ratio)


def _normal_interval(theta: float, variance: float, T: int, alpha: float
                     ) -> tuple[float, float]:
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    half = z * math.sqrt(max(variance, 0.0) / T)
    return theta - half, theta + half


def aipwiw_estimate(scores: Sequence[ScoreRecord] | np.ndarray,
                    alpha: float = 0.05) -> EstimateReport:
    """Average the scores; variance is their unbiased sample variance."""
    if len(scores) and isinstance(scores[0], ScoreRecord):
        psi = np.asarray([s.psi for s in scores], dtype=float)
    else:
        psi = np.asarray(scores, dtype=float)
    T = psi.size
    if T < 2:
        raise ValueError("need at least two scores")
    theta = float(psi.mean())
    var = float(psi.var(ddof=1))
    lo, hi = _normal_interval(theta, var, T, alpha)
    return EstimateReport(theta_hat=theta, variance_hat=var, ci_lo=lo,
                          ci_hi=hi, T=T, alpha=alpha)


class _UnitRatio:
    """Design wrapper that drops the importance weight (ratio == 1)."""

    def __init__(self, design):
        self.propensity = design.propensity

    @staticmethod
    def density_ratio(x):
        return np.ones(np.atleast_2d(x).shape[0])


def aipw_estimate(history, models: Sequence, designs: Sequence,
                  q_plugins: Sequence[float], alpha: float = 0.05
                  ) -> EstimateReport:
    """AIPW estimator without importance weighting.

    `models`, `designs`, and `q_plugins` are per-round (index s gives the
    quantities that were measurable before round s+1 was observed).
    """
    T = history.length
    scores = []
    for s in range(T):
        rec = aipwiw_score(
            y=float(history.y[s]), a=int(history.a[s]), x=history.x[s],
            model=models[s], design=_UnitRatio(designs[s]),
            plugin_expectation=float(q_plugins[s]), t=s + 1,
        )
        scores.append(rec)
    return aipwiw_estimate(scores, alpha=alpha)


def difference_in_means(history, alpha: float = 0.05) -> EstimateReport:
    """Sample-average contrast; variance reported on the sqrt(T) scale."""
    T = history.length
    y, a = history.y[:T], history.a[:T]
    y1, y0 = y[a == 1], y[a == 0]
    if y1.size < 2 or y0.size < 2:
        raise ValueError("both arms need at least two observations")
    theta = float(y1.mean() - y0.mean())
    var_theta = y1.var(ddof=1) / y1.size + y0.var(ddof=1) / y0.size
    var = float(T * var_theta)
    lo, hi = _normal_interval(theta, var, T, alpha)
    return EstimateReport(theta_hat=theta, variance_hat=var, ci_lo=lo,
                          ci_hi=hi, T=T, alpha=alpha)


def policy_value_score(y: float, a: int, x: np.ndarray, model, design,
                       policy: Callable[[int, np.ndarray], np.ndarray],
                       plugin_expectation: float,
                       num_treatments: int, t: int = 0) -> float:
    """K-treatment generalization of the score for a policy value target.

    sum_b 1[a = b] pi(b|x) (y - mu_hat(b)(x)) / w(b|x) / e(x) + plugin.
    At K = 2 with pi(1|x) = 1 and pi(0|x) = -1 this reduces to the ATE
    score exactly.
    """
    xq = np.atleast_2d(np.asarray(x, dtype=float))
    ratio = float(np.asarray(design.density_ratio(xq)).ravel()[0])
    w_a = float(np.asarray(design.propensity(a, xq)).ravel()[0])
    pi_a = float(np.asarray(policy(a, xq)).ravel()[0])
    mu_a = float(np.asarray(model.predict_mean(a, xq)).ravel()[0])
    return pi_a * (y - mu_a) / w_a / ratio + plugin_expectation
