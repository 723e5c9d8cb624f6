"""Allocation formulas, efficiency bounds, and sample-size arithmetic."""

import math

import numpy as np
import pytest
from scipy import stats

from active_ate.design import (
    bound_report,
    efficiency_bound,
    efficient_density_ratio,
    estimated_design,
    neyman_propensity,
    oracle_design,
    sample_size,
)
from active_ate.engine import History
from active_ate.nuisance import fit
from active_ate.scenario import build_paper_scenario, sample_outcome


def test_neyman_propensity_hand_formula():
    rng = np.random.default_rng(0)
    s1v, s0v = rng.uniform(0.2, 5.0, (2, 1000))
    xs = np.arange(1000.0)
    s1 = lambda x: np.interp(np.ravel(x), xs, s1v)
    s0 = lambda x: np.interp(np.ravel(x), xs, s0v)
    w = neyman_propensity([s0, s1])
    got1 = w(1, xs)
    got0 = w(0, xs)
    assert np.allclose(got1, s1v / (s1v + s0v), rtol=1e-12)
    assert np.allclose(got0 + got1, 1.0, rtol=1e-12)


def test_neyman_k_treatment_reduction():
    # the K-treatment formula with K = 2 is the binary formula exactly
    sig = [lambda x: np.full(np.ravel(x).shape, 2.0),
           lambda x: np.full(np.ravel(x).shape, 3.0),
           lambda x: np.full(np.ravel(x).shape, 5.0)]
    w3 = neyman_propensity(sig)
    x = np.zeros(4)
    assert np.allclose(w3(0, x), 0.2)
    assert np.allclose(w3(1, x), 0.3)
    assert np.allclose(w3(2, x), 0.5)
    w2 = neyman_propensity(sig[:2])
    assert np.allclose(w2(1, x), 3.0 / 5.0, rtol=1e-12)


def test_neyman_rejects_nonpositive_sigma():
    bad = [lambda x: np.zeros(np.ravel(x).shape),
           lambda x: np.ones(np.ravel(x).shape)]
    w = neyman_propensity(bad)
    with pytest.raises(ValueError):
        w(1, np.zeros(3))


def test_efficient_ratio_normalizes_p():
    # E_q[ratio] = 1 means p integrates to one
    scenario = build_paper_scenario("gaussian")
    design = oracle_design(scenario, 200_000, np.random.default_rng(1))
    draws = scenario.q.sample(np.random.default_rng(2), 200_000)
    assert design.density_ratio(draws).mean() == pytest.approx(1.0, abs=0.01)


def test_constant_sigma_gives_unit_ratio():
    sig = [lambda x: np.full(np.ravel(x).shape, 1.5)] * 2
    w = neyman_propensity(sig)
    scenario = build_paper_scenario("gaussian")
    ratio, normalizer = efficient_density_ratio(
        sig, w, scenario.q, 10_000, np.random.default_rng(3))
    x = np.linspace(-10, 10, 21)
    assert np.allclose(ratio(x), 1.0, rtol=1e-12)
    assert normalizer == pytest.approx(3.0, rel=1e-12)


def test_efficiency_bound_constant_case():
    # sigma^2 = s both arms, w = 1/2, ratio = 1 -> 4 s
    s = 2.3
    sigma2 = [lambda x: np.full(np.ravel(x).shape, s)] * 2
    w = lambda a, x: np.full(np.ravel(x).shape, 0.5)
    ratio = lambda x: np.ones(np.ravel(x).shape)
    scenario = build_paper_scenario("gaussian")
    got = efficiency_bound(sigma2, w, ratio, scenario.q, 5000,
                           np.random.default_rng(4))
    assert got == pytest.approx(4 * s, rel=1e-9)


def test_tau_star_and_tilde_identities():
    # independent high-budget MC of the closed forms
    scenario = build_paper_scenario("gaussian")
    rng = np.random.default_rng(5)
    rep = bound_report(scenario, 1_000_000, rng)
    draws = scenario.q.sample(np.random.default_rng(6), 2_000_000)
    lo, hi = scenario.clamp
    s1 = np.sqrt(np.clip(scenario.outcome.sigma2[1](draws), lo, hi))
    s0 = np.sqrt(np.clip(scenario.outcome.sigma2[0](draws), lo, hi))
    tau_star = float(np.mean(s1 + s0)) ** 2
    tau_tilde = float(np.mean((s1 + s0) ** 2))
    assert rep.tau_star == pytest.approx(tau_star, rel=0.005)
    assert rep.tau_tilde == pytest.approx(tau_tilde, rel=0.005)


@pytest.mark.parametrize("kind", ["gaussian", "uniform"])
def test_jensen_ordering(kind):
    scenario = build_paper_scenario(kind)
    rep = bound_report(scenario, 1_000_000, np.random.default_rng(7))
    assert rep.tau_star <= rep.tau_tilde + 3 * rep.se_tilde
    assert rep.tau_tilde <= rep.tau_uniform + 3 * rep.se_uniform
    # strict gap for heterogeneous sigma sums
    assert rep.tau_tilde - rep.tau_star > 3 * (rep.se_tilde + rep.se_star)


def test_homogeneous_gains_vanish():
    scenario = build_paper_scenario("gaussian", "homogeneous_variance")
    rep = bound_report(scenario, 500_000, np.random.default_rng(8))
    assert abs(rep.gain_density) <= 3 * (rep.se_tilde + rep.se_star) + 1e-9
    assert abs(rep.gain_propensity) <= 3 * (rep.se_uniform + rep.se_tilde) + 1e-9
    assert rep.tau_star == pytest.approx(8.0, rel=0.01)


def test_pointwise_uniform_minus_neyman_identity():
    # (sum sigma2/w at w uniform) - (at w*) == (sigma1 - sigma0)^2
    rng = np.random.default_rng(9)
    x = rng.normal(1, 5, 200)
    scenario = build_paper_scenario("gaussian")
    s1 = np.sqrt(scenario.outcome.sigma2[1](x))
    s0 = np.sqrt(scenario.outcome.sigma2[0](x))
    uniform = (s1 ** 2 + s0 ** 2) / 0.5
    neyman = (s1 + s0) ** 2
    assert np.allclose(uniform - neyman, (s1 - s0) ** 2, rtol=1e-12)


def test_pointwise_optimality_of_neyman():
    rng = np.random.default_rng(10)
    x = rng.normal(1, 5, 200)
    scenario = build_paper_scenario("gaussian")
    s1 = np.sqrt(scenario.outcome.sigma2[1](x))
    s0 = np.sqrt(scenario.outcome.sigma2[0](x))
    best = (s1 + s0) ** 2
    for w1 in rng.uniform(0.02, 0.98, 50):
        val = s1 ** 2 / w1 + s0 ** 2 / (1 - w1)
        assert np.all(val >= best - 1e-9)


def test_sample_size_printed_formula():
    assert sample_size(1.0, 1.0, 0.05, 0.2) == pytest.approx(
        2.801585, abs=1e-5)


def test_sample_size_scaling_properties():
    base = sample_size(1.0, 1.0, 0.05, 0.2)
    assert sample_size(3.0, 1.0, 0.05, 0.2) == pytest.approx(
        3 * base, rel=1e-12)
    assert sample_size(1.0, 0.5, 0.05, 0.2) == pytest.approx(
        4 * base, rel=1e-12)


def test_sample_size_squared_variant():
    z = stats.norm.ppf(0.975) - stats.norm.ppf(0.2)
    assert sample_size(1.0, 1.0, 0.05, 0.2, squared=True) == pytest.approx(
        z ** 2, rel=1e-12)


def _uniform_history(scenario, n, seed):
    rng = np.random.default_rng(seed)
    h = History.empty(n, 1)
    x = scenario.q.sample(rng, n)
    a = rng.integers(0, 2, n)
    y = np.empty(n)
    for arm in (0, 1):
        sel = a == arm
        y[sel] = sample_outcome(scenario.outcome, arm, x[sel], rng)
    h.x[:, 0] = x[:, 0]
    h.a[:] = a
    h.y[:] = y
    h.length = n
    return h


def test_running_average_matches_fresh_mc():
    # on a long uniform-design history the two normalizers agree within 5%
    scenario = build_paper_scenario("gaussian")
    h = _uniform_history(scenario, 4000, seed=11)
    model = fit(h, 4001, scenario.clamp, mean_bound=scenario.clamp[1])
    run = estimated_design(model, scenario.q, "running_average", h,
                           np.random.default_rng(12))
    fresh = estimated_design(model, scenario.q, "fresh_mc", None,
                             np.random.default_rng(13), mc_budget=1_000_000)
    assert run.normalizer == pytest.approx(fresh.normalizer, rel=0.05)


def test_estimated_design_ratio_bound():
    scenario = build_paper_scenario("gaussian")
    h = _uniform_history(scenario, 500, seed=14)
    model = fit(h, 501, scenario.clamp, mean_bound=scenario.clamp[1])
    design = estimated_design(model, scenario.q, "fresh_mc", None,
                              np.random.default_rng(15))
    x = np.linspace(-30, 30, 301)
    r = design.density_ratio(x)
    assert np.all(r <= design.ratio_bound + 1e-12)
    assert design.ratio_bound == pytest.approx(math.sqrt(200.0), rel=1e-12)
