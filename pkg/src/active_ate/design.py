"""Efficient propensities, efficient covariate densities, and bound arithmetic.

The standard-deviation-proportional propensity and the covariate density
proportional to the root of the propensity-weighted variance sum jointly
minimize the asymptotic-variance lower bound for the average treatment
effect; this module evaluates both, their plug-in estimates, the bound at
arbitrary configurations, and the sample-size formula built on the bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .scenario import CovariateLaw, Scenario

__all__ = [
    "DesignProbabilities",
    "BoundReport",
    "neyman_propensity",
    "efficient_density_ratio",
    "estimated_design",
    "efficiency_bound",
    "bound_report",
    "sample_size",
    "oracle_design",
]

SigmaFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DesignProbabilities:
    """A propensity w(a|x) and a covariate density ratio e(x) = p(x)/q(x).

    `normalizer` is the expectation under q that scales the ratio so p
    integrates to one; `ratio_bound` dominates e(x) everywhere.
    """

    propensity: Callable[[int, np.ndarray], np.ndarray]
    density_ratio: Callable[[np.ndarray], np.ndarray]
    normalizer: float
    ratio_bound: float

    def __post_init__(self) -> None:
        if self.normalizer <= 0:
            raise ValueError("normalizer must be positive")
        if self.ratio_bound <= 0:
            raise ValueError("ratio_bound must be positive")


@dataclass(frozen=True)
class BoundReport:
    tau_uniform: float
    tau_tilde: float
    tau_star: float
    gain_propensity: float
    gain_density: float
    # Monte Carlo standard errors of the three bound estimates
    se_uniform: float
    se_tilde: float
    se_star: float
    mc_budget: int

    def to_dict(self) -> dict:
        return {
            "tau_uniform": self.tau_uniform,
            "tau_tilde": self.tau_tilde,
            "tau_star": self.tau_star,
            "gain_propensity": self.gain_propensity,
            "gain_density": self.gain_density,
            "se_uniform": self.se_uniform,
            "se_tilde": self.se_tilde,
            "se_star": self.se_star,
            "mc_budget": self.mc_budget,
        }


def neyman_propensity(sigma: Sequence[SigmaFn]
                      ) -> Callable[[int, np.ndarray], np.ndarray]:
    """Standard-deviation-proportional propensity over K >= 2 treatments.

    w(a|x) = sigma_a(x) / sum_b sigma_b(x); requires every sigma positive.
    """
    sigma = tuple(sigma)

    def w(a: int, x: np.ndarray) -> np.ndarray:
        vals = np.array([np.asarray(s(x), dtype=float) for s in sigma])
        if np.any(vals <= 0):
            raise ValueError("propensity requires strictly positive sigma")
        return vals[a] / vals.sum(axis=0)

    return w


def _root_weighted_sum(sigma: Sequence[SigmaFn],
                       w: Callable[[int, np.ndarray], np.ndarray],
                       x: np.ndarray) -> np.ndarray:
    """sqrt(sum_a sigma_a(x)^2 / w(a|x)) evaluated rowwise."""
    total = None
    for a, s in enumerate(sigma):
        term = np.asarray(s(x), dtype=float) ** 2 / w(a, x)
        total = term if total is None else total + term
    return np.sqrt(total)


def efficient_density_ratio(sigma: Sequence[SigmaFn],
                            w: Callable[[int, np.ndarray], np.ndarray],
                            q: CovariateLaw,
                            mc_budget: int,
                            rng: np.random.Generator,
                            ratio_bound: float | None = None,
                            ) -> tuple[Callable[[np.ndarray], np.ndarray], float]:
    """Density ratio of the bound-minimizing covariate density against q.

    ratio(x) = sqrt(sum_a sigma_a^2(x) / w(a|x)) / N with N the mean of the
    numerator under q, estimated from `mc_budget` draws.
    """
    if mc_budget < 1000:
        raise ValueError("mc_budget must be at least 1000")
    sigma = tuple(sigma)
    draws = q.sample(rng, mc_budget)
    normalizer = float(_root_weighted_sum(sigma, w, draws).mean())

    def ratio(x: np.ndarray) -> np.ndarray:
        r = _root_weighted_sum(sigma, w, x) / normalizer
        if ratio_bound is not None:
            r = np.minimum(r, ratio_bound)
        return r

    return ratio, normalizer


def oracle_design(scenario: Scenario, mc_budget: int,
                  rng: np.random.Generator) -> DesignProbabilities:
    """The analytic efficient design for a scenario with known variances.

    Variances are thresholded to the scenario clamp so the density ratio is
    provably dominated by sqrt(clamp_hi / clamp_lo).
    """
    lo, hi = scenario.clamp
    sigmas = [_clamped_sigma(scenario.outcome.sigma2[a], lo, hi)
              for a in range(scenario.num_treatments)]
    w = neyman_propensity(sigmas)
    bound = math.sqrt(hi / lo)
    ratio, normalizer = efficient_density_ratio(
        sigmas, w, scenario.q, mc_budget, rng, ratio_bound=bound)
    return DesignProbabilities(propensity=w, density_ratio=ratio,
                               normalizer=normalizer, ratio_bound=bound)


def _clamped_sigma(sigma2_fn, lo: float, hi: float) -> SigmaFn:
    return lambda x: np.sqrt(np.clip(np.asarray(sigma2_fn(x), dtype=float),
                                     lo, hi))


def estimated_design(model, q: CovariateLaw, normalizer_mode: str,
                     history, rng: np.random.Generator,
                     mc_budget: int = 1024) -> DesignProbabilities:
    """Plug-in efficient design from fitted nuisances.

    normalizer_mode "fresh_mc" estimates the scaling expectation from new
    draws of q; "running_average" uses the importance-weighted average of
    the estimated sigma sums over past covariates, which needs no draws
    from q (and hence no knowledge of it).
    """
    k = model.num_treatments
    sigmas = [(lambda a: (lambda x: model.predict_sigma(a, x)))(a)
              for a in range(k)]
    w = neyman_propensity(sigmas)
    lo, hi = model.clamp
    bound = math.sqrt(hi / lo)

    def sigma_sum(x: np.ndarray) -> np.ndarray:
        return sum(np.asarray(s(x), dtype=float) for s in sigmas)

    if normalizer_mode == "fresh_mc":
        draws = q.sample(rng, mc_budget)
        normalizer = float(sigma_sum(draws).mean())
    elif normalizer_mode == "running_average":
        if history is None or history.length == 0:
            raise ValueError("running_average requires a non-empty history")
        t = history.length
        # q(X_s) / p_s(X_s) is the reciprocal of each round's stored ratio
        weights = 1.0 / history.ratio_used[:t]
        normalizer = float(np.mean(sigma_sum(history.x[:t]) * weights))
    else:
        raise ValueError(f"unknown normalizer mode {normalizer_mode!r}")

    def ratio(x: np.ndarray) -> np.ndarray:
        return np.minimum(sigma_sum(x) / normalizer, bound)

    return DesignProbabilities(propensity=w, density_ratio=ratio,
                               normalizer=normalizer, ratio_bound=bound)


def efficiency_bound(sigma2: Sequence[Callable[[np.ndarray], np.ndarray]],
                     w: Callable[[int, np.ndarray], np.ndarray],
                     ratio: Callable[[np.ndarray], np.ndarray],
                     q: CovariateLaw,
                     mc_budget: int,
                     rng: np.random.Generator,
                     return_se: bool = False):
    """Monte Carlo estimate of E_q[(sum_a sigma2_a(X)/w(a|X)) / ratio(X)]."""
    draws = q.sample(rng, mc_budget)
    r = np.asarray(ratio(draws), dtype=float)
    if np.any(r <= 0):
        raise ValueError("density ratio must be positive on the support of q")
    integrand = sum(np.asarray(s2(draws), dtype=float) / w(a, draws)
                    for a, s2 in enumerate(sigma2)) / r
    est = float(integrand.mean())
    if return_se:
        se = float(integrand.std(ddof=1) / math.sqrt(mc_budget))
        return est, se
    return est


def bound_report(scenario: Scenario, mc_budget: int,
                 rng: np.random.Generator) -> BoundReport:
    """Bounds at the uniform, propensity-only, and jointly efficient designs.

    tau_uniform >= tau_tilde >= tau_star up to Monte Carlo error; each
    estimate uses its own sub-stream of `rng`.
    """
    k = scenario.num_treatments
    sigma2 = [scenario.outcome.sigma2[a] for a in range(k)]
    sigma = [scenario.sigma(a) for a in range(k)]

    def uniform_w(a: int, x: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(x).shape[0], 1.0 / k)

    unit_ratio = lambda x: np.ones(np.atleast_2d(x).shape[0])

    w_star = neyman_propensity(sigma)
    tau_u, se_u = efficiency_bound(sigma2, uniform_w, unit_ratio, scenario.q,
                                   mc_budget, rng, return_se=True)
    tau_t, se_t = efficiency_bound(sigma2, w_star, unit_ratio, scenario.q,
                                   mc_budget, rng, return_se=True)
    # tau_star = (E_q[sum_a sigma_a])^2; delta-method standard error
    draws = scenario.q.sample(rng, mc_budget)
    g = sum(np.asarray(s(draws), dtype=float) for s in sigma)
    mean_g = float(g.mean())
    se_g = float(g.std(ddof=1) / math.sqrt(mc_budget))
    tau_s = mean_g ** 2
    se_s = 2.0 * mean_g * se_g
    return BoundReport(
        tau_uniform=tau_u, tau_tilde=tau_t, tau_star=tau_s,
        gain_propensity=tau_u - tau_t, gain_density=tau_t - tau_s,
        se_uniform=se_u, se_tilde=se_t, se_star=se_s, mc_budget=mc_budget,
    )


def sample_size(V: float, delta: float, alpha: float, beta: float,
                squared: bool = False) -> float:
    """Minimum sample size for detecting an effect of size `delta`.

    The default follows the source formula verbatim:
    (V / delta^2) * (z_{1-alpha/2} - z_beta). With `squared=True` the
    conventional squared form (V / delta^2) * (z_{1-alpha/2} + z_{1-beta})^2
    is returned instead.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not 0 < alpha < 1 or not 0 < beta < 1:
        raise ValueError("alpha and beta must lie in (0, 1)")
    z_a = stats.norm.ppf(1.0 - alpha / 2.0)
    if squared:
        return (V / delta ** 2) * (z_a + stats.norm.ppf(1.0 - beta)) ** 2
    return (V / delta ** 2) * (z_a - stats.norm.ppf(beta))


def policy_value_target(scenario: Scenario,
                        policy: Callable[[int, np.ndarray], np.ndarray],
                        mc_budget: int, rng: np.random.Generator) -> float:
    """Monte Carlo value of a K-treatment evaluation policy under q."""
    draws = scenario.q.sample(rng, mc_budget)
    total = sum(np.asarray(policy(a, draws), dtype=float)
                * np.asarray(scenario.outcome.mu[a](draws), dtype=float)
                for a in range(scenario.num_treatments))
    return float(np.mean(total))
