"""Single-trial execution of each experimental design.

A trial runs T rounds of covariate draw, treatment assignment, and outcome
observation, with design probabilities recomputed each round from the
history so far, then produces the design's estimate. All randomness flows
from one seed split into named sub-streams, so a trial is bit-reproducible.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nuisance
from .design import DesignProbabilities, oracle_design
from .estimators import EstimateReport, aipwiw_estimate, difference_in_means
from .sampler import RejectionCapExceeded
from .scenario import CovariateLaw, Scenario, sample_outcome

__all__ = ["DesignKind", "EngineConfig", "History", "run_trial",
           "assign_treatment", "replay_design"]

# fixed sub-stream order: changing it would silently break reproducibility
_STREAMS = ("covariates", "xi", "outcomes", "plugin", "normalizer", "accept")


class DesignKind(str, enum.Enum):
    DRCT = "DRCT"
    RCT = "RCT"
    AS_AIPW = "AS_AIPW"
    AAS_AIPWIW = "AAS_AIPWIW"
    AS_AIPW_ORACLE = "AS_AIPW_ORACLE"
    AAS_AIPWIW_ORACLE = "AAS_AIPWIW_ORACLE"
    AAS_AIPWIW_REJECTION = "AAS_AIPWIW_REJECTION"


_ORACLE_KINDS = {DesignKind.AS_AIPW_ORACLE, DesignKind.AAS_AIPWIW_ORACLE}
_SHIFTED_KINDS = {DesignKind.AAS_AIPWIW, DesignKind.AAS_AIPWIW_ORACLE,
                  DesignKind.AAS_AIPWIW_REJECTION}
_SIMPLE_KINDS = {DesignKind.DRCT, DesignKind.RCT}


@dataclass
class EngineConfig:
    burn_in: int = 25
    clamp: tuple[float, float] | None = None  # override scenario clamp
    plugin_mc: int = 1024
    normalizer_mode: str = "fresh_mc"  # or "running_average"
    normalizer_mc: int = 1024
    rejection_cap: int = 10 ** 6
    alpha: float = 0.05
    bandwidth_scale: float = 1.06
    grid_size: int = 513
    # fix mu-hat at constants (arm1, arm0) instead of fitting; used for
    # robustness experiments
    frozen_means: tuple[float, float] | None = None
    oracle_normalizer_mc: int = 100_000


@dataclass
class History:
    """Per-round log: the filtration, plus score diagnostics."""

    x: np.ndarray  # (T, d)
    a: np.ndarray  # (T,)
    y: np.ndarray  # (T,)
    w_used: np.ndarray  # (T,) propensity of the assigned-arm-1 probability
    ratio_used: np.ndarray  # (T,)
    rejected_proposals: np.ndarray  # (T,)
    normalizer_used: np.ndarray  # (T,)
    psi: np.ndarray | None = None  # (T,) scores, AIPW-family designs only
    plugin: np.ndarray | None = None
    length: int = 0

    @classmethod
    def empty(cls, T: int, d: int) -> "History":
        return cls(
            x=np.zeros((T, d)), a=np.zeros(T, dtype=np.int64),
            y=np.zeros(T), w_used=np.zeros(T), ratio_used=np.ones(T),
            rejected_proposals=np.zeros(T, dtype=np.int64),
            normalizer_used=np.ones(T),
        )


def assign_treatment(w1: float, xi: float) -> int:
    """Arm 1 iff xi <= w1 (inclusive at the boundary)."""
    if not 0.0 <= xi <= 1.0:
        raise ValueError("xi must lie in [0, 1]")
    return 1 if xi <= w1 else 0


class _FrozenMeans:
    """Constant per-arm mean predictor for robustness experiments."""

    def __init__(self, c1: float, c0: float, bound: float):
        self.c = (min(max(c0, -bound), bound), min(max(c1, -bound), bound))

    def predict_mean(self, a: int, x) -> np.ndarray:
        return np.full(np.atleast_2d(x).shape[0], self.c[a])


def _trial_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    return {name: np.random.default_rng(ss)
            for name, ss in zip(_STREAMS, children)}


def _grid_range(q: CovariateLaw) -> tuple[float, float]:
    if q.kind == "gaussian":
        sd = math.sqrt(q.variance)
        return q.mean - 8.0 * sd, q.mean + 8.0 * sd
    if q.kind == "uniform":
        pad = 1e-6 * (q.hi - q.lo)
        return q.lo - pad, q.hi + pad
    pts = np.asarray(q.points)[:, 0]
    pad = 0.05 * (pts.max() - pts.min() + 1.0)
    return float(pts.min() - pad), float(pts.max() + pad)


def _simple_trial(scenario: Scenario, kind: DesignKind, T: int,
                  config: EngineConfig, streams) -> tuple[History, EstimateReport]:
    d = scenario.q.dimension
    hist = History.empty(T, d)
    x = scenario.q.sample(streams["covariates"], T)
    if kind is DesignKind.DRCT:
        a = np.arange(1, T + 1) % 2  # odd rounds treated
        w = np.full(T, 0.5)
    else:
        xi = streams["xi"].uniform(size=T)
        a = (xi <= 0.5).astype(np.int64)
        w = np.full(T, 0.5)
    y = np.empty(T)
    for arm in (0, 1):
        sel = a == arm
        y[sel] = sample_outcome(scenario.outcome, arm, x[sel],
                                streams["outcomes"])
    hist.x[:], hist.a[:], hist.y[:], hist.w_used[:] = x, a, y, w
    hist.length = T
    report = difference_in_means(hist, alpha=config.alpha)
    return hist, report


def run_trial(scenario: Scenario, kind: DesignKind | str, T: int,
              config: EngineConfig | None = None, seed: int = 0,
              ) -> tuple[History, EstimateReport]:
    """Execute one experiment of T rounds and estimate the ATE."""
    kind = DesignKind(kind)
    config = config or EngineConfig()
    clamp = config.clamp or scenario.clamp
    if config.clamp is not None:
        scenario = replace(scenario, clamp=config.clamp)
    burn_in = config.burn_in
    if kind not in _SIMPLE_KINDS and not (2 <= burn_in < T):
        raise ValueError("burn_in must satisfy 2 <= burn_in < T")
    streams = _trial_streams(seed)
    if kind in _SIMPLE_KINDS:
        return _simple_trial(scenario, kind, T, config, streams)
    if scenario.q.dimension != 1:
        raise NotImplementedError(
            "adaptive designs currently support one-dimensional covariates")
    if kind is DesignKind.AAS_AIPWIW_REJECTION \
            and config.normalizer_mode != "running_average":
        config = replace(config, normalizer_mode="running_average")
    return _adaptive_trial(scenario, kind, T, config, clamp, streams)


def _adaptive_trial(scenario: Scenario, kind: DesignKind, T: int,
                    config: EngineConfig, clamp: tuple[float, float],
                    streams) -> tuple[History, EstimateReport]:
    lo_c, hi_c = clamp
    mean_bound = hi_c
    ratio_bound = math.sqrt(hi_c / lo_c)
    burn_in = config.burn_in
    d = 1
    hist = History.empty(T, d)
    hist.psi = np.zeros(T)
    hist.plugin = np.zeros(T)

    frozen = None
    if config.frozen_means is not None:
        frozen = _FrozenMeans(*config.frozen_means, bound=mean_bound)

    lo_g, hi_g = _grid_range(scenario.q)
    nuis = nuisance.OnlineNuisance(
        lo_g, hi_g, config.grid_size, clamp=clamp, mean_bound=mean_bound,
        bandwidth_scale=config.bandwidth_scale)

    oracle = None
    if kind in _ORACLE_KINDS:
        oracle = oracle_design(scenario, config.oracle_normalizer_mc,
                               streams["normalizer"])

    shifted = kind in _SHIFTED_KINDS
    running_avg = config.normalizer_mode == "running_average"

    def sigma_hat_sum(xq: np.ndarray) -> np.ndarray:
        return nuis.predict_sigma(0, xq) + nuis.predict_sigma(1, xq)

    def mu_hat(a: int, xq: np.ndarray) -> np.ndarray:
        if frozen is not None:
            return frozen.predict_mean(a, xq)
        return nuis.predict_mean(a, xq)

    for t in range(1, T + 1):
        i = t - 1
        adaptive = t > burn_in

        # --- design probabilities for this round (F_{t-1}-measurable) ---
        normalizer = 1.0
        if adaptive:
            if kind in _ORACLE_KINDS:
                w_fn = oracle.propensity
                ratio_fn = oracle.density_ratio if shifted else None
                normalizer = oracle.normalizer
            else:
                if running_avg:
                    weights = 1.0 / hist.ratio_used[:i]
                    normalizer = float(np.mean(
                        sigma_hat_sum(hist.x[:i, 0]) * weights))
                else:
                    draws = scenario.q.sample(streams["normalizer"],
                                              config.normalizer_mc)
                    normalizer = float(np.mean(sigma_hat_sum(draws[:, 0])))

                def w_fn(a, xq, _n=normalizer):
                    s1 = nuis.predict_sigma(1, xq)
                    s0 = nuis.predict_sigma(0, xq)
                    return (s1 if a == 1 else s0) / (s1 + s0)

                def ratio_fn(xq, _n=normalizer):
                    return np.minimum(sigma_hat_sum(xq) / _n, ratio_bound)
        else:
            w_fn = None
            ratio_fn = None

        # --- covariate draw ---
        rejected = 0
        if adaptive and shifted:
            accepted = None
            acc_rng = streams["accept"]
            cov_rng = streams["covariates"]
            while accepted is None:
                if rejected >= config.rejection_cap:
                    raise RejectionCapExceeded(
                        f"round {t}: no acceptance within "
                        f"{config.rejection_cap} proposals")
                m = 64
                props = scenario.q.sample(cov_rng, m)
                us = acc_rng.uniform(size=m)
                ratios = np.asarray(ratio_fn(props[:, 0]), dtype=float)
                ok = us < ratios / ratio_bound
                if ok.any():
                    hit = int(np.argmax(ok))
                    rejected += hit
                    accepted = props[hit]
                    x_ratio = float(ratios[hit])
                else:
                    rejected += m
            x_t = accepted
        else:
            x_t = scenario.q.sample(streams["covariates"], 1)[0]
            x_ratio = 1.0  # covariates come from q; no importance weight

        xq = x_t[0:1]  # 1-d scalar view for the grid estimators

        # --- treatment assignment ---
        if t == 1:
            a_t, w1 = 1, 0.5
        elif t == 2:
            a_t, w1 = 0, 0.5
        else:
            if adaptive:
                w1 = float(np.asarray(w_fn(1, xq)).ravel()[0])
            else:
                w1 = 0.5
            xi = float(streams["xi"].uniform())
            a_t = assign_treatment(w1, xi)

        # --- outcome ---
        y_t = float(sample_outcome(scenario.outcome, a_t, x_t[None, :],
                                   streams["outcomes"])[0])

        # --- score, using only F_{t-1} nuisances; burn-in rounds collect
        # data for the first fit and carry no score ---
        if adaptive or frozen is not None:
            mu1 = float(mu_hat(1, xq)[0])
            mu0 = float(mu_hat(0, xq)[0])
            mu_a = mu1 if a_t == 1 else mu0
            w_a = w1 if a_t == 1 else 1.0 - w1
            contrast = (y_t - mu_a) / w_a * (1 if a_t == 1 else -1)

            if frozen is not None:
                plugin = frozen.c[1] - frozen.c[0]
            else:
                draws = scenario.q.sample(streams["plugin"], config.plugin_mc)
                plugin = float(np.mean(mu_hat(1, draws[:, 0])
                                       - mu_hat(0, draws[:, 0])))

            if kind is DesignKind.AAS_AIPWIW_REJECTION:
                theta_x = mu1 - mu0
                psi = (contrast + theta_x) / x_ratio
            else:
                psi = contrast / x_ratio + plugin
        else:
            plugin = 0.0
            psi = np.nan

        # --- record and update the filtration ---
        hist.x[i, 0] = x_t[0]
        hist.a[i] = a_t
        hist.y[i] = y_t
        hist.w_used[i] = w1
        hist.ratio_used[i] = x_ratio
        hist.rejected_proposals[i] = rejected
        hist.normalizer_used[i] = normalizer
        hist.psi[i] = psi
        hist.plugin[i] = plugin
        hist.length = t
        if frozen is None:
            nuis.add(a_t, float(x_t[0]), y_t)

    start = 0 if frozen is not None else burn_in
    report = aipwiw_estimate(hist.psi[start:], alpha=config.alpha)
    return hist, report


def replay_design(history: History, scenario: Scenario, kind: DesignKind | str,
                  config: EngineConfig | None = None
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Recompute each adaptive round's (w_used, ratio_used) from the prefix.

    Feeds the logged rounds back through the estimated-design path using the
    logged normalizers, proving the recorded probabilities depended only on
    earlier rounds. Oracle and simple designs replay trivially.
    """
    kind = DesignKind(kind)
    config = config or EngineConfig()
    clamp = config.clamp or scenario.clamp
    lo_g, hi_g = _grid_range(scenario.q)
    ratio_bound = math.sqrt(clamp[1] / clamp[0])
    nuis = nuisance.OnlineNuisance(
        lo_g, hi_g, config.grid_size, clamp=clamp, mean_bound=clamp[1],
        bandwidth_scale=config.bandwidth_scale)
    T = history.length
    w = np.full(T, 0.5)
    ratio = np.ones(T)
    for t in range(1, T + 1):
        i = t - 1
        xq = history.x[i, 0:1]
        if t > config.burn_in and kind not in _ORACLE_KINDS | _SIMPLE_KINDS:
            s1 = float(nuis.predict_sigma(1, xq)[0])
            s0 = float(nuis.predict_sigma(0, xq)[0])
            w[i] = s1 / (s1 + s0)
            if kind in _SHIFTED_KINDS:
                ratio[i] = min((s1 + s0) / history.normalizer_used[i],
                               ratio_bound)
        nuis.add(int(history.a[i]), float(history.x[i, 0]),
                 float(history.y[i]))
    return w, ratio
