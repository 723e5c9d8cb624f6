"""Data-generating processes: covariate laws, conditional outcome models,
and the built-in simulation scenarios.

A Scenario bundles an evaluation covariate law q, per-treatment conditional
means and variances, clamp constants, and (when known) the true average
treatment effect. Scenarios are immutable and safe to share across trial
workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "CovariateLaw",
    "OutcomeModel",
    "Scenario",
    "build_paper_scenario",
    "sample_covariate",
    "sample_outcome",
    "load_scenario",
    "save_scenario",
    "scenario_to_dict",
    "scenario_from_dict",
]

DEFAULT_CLAMP = (0.5, 100.0)

_GAUSS_NORM = 1.0 / math.sqrt(2.0 * math.pi)


class ScenarioError(ValueError):
    """Raised when a scenario file or configuration violates an invariant."""


@dataclass(frozen=True)
class CovariateLaw:
    """A covariate distribution: gaussian, uniform, or empirical points.

    Gaussian/uniform parameters are scalars applied independently per
    coordinate; empirical laws resample rows of `points` with replacement.
    """

    kind: str
    dimension: int = 1
    mean: float = 0.0
    variance: float = 1.0
    lo: float = 0.0
    hi: float = 1.0
    points: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "uniform", "empirical"):
            raise ScenarioError(f"unknown covariate kind {self.kind!r}")
        if self.dimension < 1:
            raise ScenarioError("dimension must be a positive integer")
        if self.kind == "gaussian" and self.variance <= 0:
            raise ScenarioError("gaussian variance must be > 0")
        if self.kind == "uniform" and not self.lo < self.hi:
            raise ScenarioError("uniform law requires lo < hi")
        if self.kind == "empirical":
            if not self.points:
                raise ScenarioError("empirical law requires non-empty points")
            for i, row in enumerate(self.points):
                if len(row) != self.dimension:
                    raise ScenarioError(
                        f"empirical point at row {i} has dimension "
                        f"{len(row)}, expected {self.dimension}"
                    )

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw `n` covariates, shape (n, dimension)."""
        d = self.dimension
        if self.kind == "gaussian":
            sd = math.sqrt(self.variance)
            return rng.normal(self.mean, sd, size=(n, d))
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, size=(n, d))
        pts = np.asarray(self.points, dtype=float)
        idx = rng.integers(0, pts.shape[0], size=n)
        return pts[idx]

    def density(self, x: np.ndarray) -> np.ndarray:
        """Pointwise density at query rows `x`, shape (n,).

        Empirical laws have no Lebesgue density; querying one is an error.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "gaussian":
            sd = math.sqrt(self.variance)
            z = (x - self.mean) / sd
            per_coord = _GAUSS_NORM / sd * np.exp(-0.5 * z * z)
            return per_coord.prod(axis=1)
        if self.kind == "uniform":
            inside = np.all((x >= self.lo) & (x <= self.hi), axis=1)
            return inside / (self.hi - self.lo) ** self.dimension
        raise ScenarioError("empirical covariate laws have no analytic density")

    def moment(self, k: int) -> float:
        """k-th raw moment of a single coordinate (analytic kinds only)."""
        if self.kind == "gaussian":
            m, v = self.mean, self.variance
            if k == 1:
                return m
            if k == 2:
                return v + m * m
        if self.kind == "uniform":
            lo, hi = self.lo, self.hi
            # integral of x^k / (hi - lo)
            return (hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * (hi - lo))
        raise ScenarioError(f"no closed-form moment {k} for kind {self.kind!r}")


@dataclass(frozen=True)
class OutcomeModel:
    """Per-treatment conditional means and variances plus a noise family.

    `mu[a]` and `sigma2[a]` map a batch of covariates (n, d) to (n,) arrays.
    """

    mu: tuple[Callable[[np.ndarray], np.ndarray], ...]
    sigma2: tuple[Callable[[np.ndarray], np.ndarray], ...]
    noise: str = "gaussian"

    def __post_init__(self) -> None:
        if len(self.mu) != len(self.sigma2):
            raise ScenarioError("mu and sigma2 must cover the same treatments")
        if self.noise not in ("gaussian", "uniform"):
            raise ScenarioError(f"unknown noise family {self.noise!r}")


@dataclass(frozen=True)
class Scenario:
    q: CovariateLaw
    outcome: OutcomeModel
    clamp: tuple[float, float] = DEFAULT_CLAMP
    num_treatments: int = 2
    true_ate: float | None = None
    # canonical serialized form, kept for bit-exact round-trips
    spec: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        lo, hi = self.clamp
        if not (0 < lo < hi):
            raise ScenarioError("clamp requires 0 < lo < hi")
        if self.num_treatments < 2:
            raise ScenarioError("num_treatments must be >= 2")

    @property
    def mean_bound(self) -> float:
        """Bound on |mu(a)(x)|; identified with the upper clamp constant."""
        return self.clamp[1]

    def sigma(self, a: int) -> Callable[[np.ndarray], np.ndarray]:
        f = self.outcome.sigma2[a]
        return lambda x: np.sqrt(f(x))


def sample_covariate(law: CovariateLaw, rng: np.random.Generator,
                     n: int = 1) -> np.ndarray:
    """Draw covariates from `law`; shape (n, d)."""
    return law.sample(rng, n)


def sample_outcome(model: OutcomeModel, a: int, x: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    """Draw Y(a) | X = x for each row of `x`; shape (n,)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mu = np.asarray(model.mu[a](x), dtype=float)
    sd = np.sqrt(np.asarray(model.sigma2[a](x), dtype=float))
    n = x.shape[0]
    if model.noise == "gaussian":
        eps = rng.standard_normal(n)
    else:  # uniform, scaled to unit variance
        eps = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=n)
    return mu + sd * eps


# ---------------------------------------------------------------------------
# Built-in outcome functions (simulation-study scenarios)
# ---------------------------------------------------------------------------

def _x1(x: np.ndarray) -> np.ndarray:
    """First coordinate; the built-in outcomes depend on x through it alone.

    A 1-d array is read as n points of a scalar covariate, a 2-d array as
    (n, d) rows.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        return np.ravel(x)
    return x[:, 0]


def _mu_treated(c1: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: c1 * (-_x1(x) + 3.0 * _x1(x) ** 2 - 1.0)


def _mu_control(c0: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: c0 * (0.1 * _x1(x) + 0.2)


def _mu_linear(c: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: c * _x1(x)


def _var_treated(x: np.ndarray) -> np.ndarray:
    u = _x1(x)
    return 2.0 + 1.2 * np.sin(2.0 * u) + (u + u * u) / 25.0


def _var_control(x: np.ndarray) -> np.ndarray:
    u = _x1(x)
    return 2.0 + 0.8 * np.cos(u / 2.0) + u * u / 50.0


def _var_homogeneous(x: np.ndarray) -> np.ndarray:
    """Constant variance shared by both arms; the efficient design then
    collapses to the uniform design over q."""
    return np.full(_x1(x).shape[0], 2.0)


def _solve_scale(target: float, base_mean: float) -> float:
    if abs(base_mean) < 1e-12:
        raise ScenarioError(
            "mean-target is unattainable: the base outcome function has "
            "zero expectation under this covariate law"
        )
    return target / base_mean


def _paper_scales(q: CovariateLaw, variance_mode: str) -> tuple[float, float]:
    """Solve the scale constants so E_q[mu(1)] = 10 and E_q[mu(0)] = 7."""
    m1, m2 = q.moment(1), q.moment(2)
    if variance_mode == "homogeneous_mean":
        # mu(a)(x) = C_a * x for both arms
        return _solve_scale(10.0, m1), _solve_scale(7.0, m1)
    base1 = -m1 + 3.0 * m2 - 1.0
    base0 = 0.1 * m1 + 0.2
    return _solve_scale(10.0, base1), _solve_scale(7.0, base0)


_VARIANCE_MODES = ("heterogeneous", "homogeneous_variance", "homogeneous_mean")

_MODE_TO_BUILTIN = {
    "heterogeneous": "paper_hetero",
    "homogeneous_variance": "paper_homo_var",
    "homogeneous_mean": "paper_homo_mean",
}
_BUILTIN_TO_MODE = {v: k for k, v in _MODE_TO_BUILTIN.items()}


def _paper_outcome(q: CovariateLaw, variance_mode: str) -> OutcomeModel:
    c1, c0 = _paper_scales(q, variance_mode)
    if variance_mode == "homogeneous_mean":
        mu = (_mu_linear(c0), _mu_linear(c1))
    else:
        mu = (_mu_control(c0), _mu_treated(c1))
    if variance_mode == "homogeneous_variance":
        sigma2 = (_var_homogeneous, _var_homogeneous)
    else:
        sigma2 = (_var_control, _var_treated)
    return OutcomeModel(mu=mu, sigma2=sigma2)


def build_paper_scenario(covariate_kind: str = "gaussian",
                         variance_mode: str = "heterogeneous",
                         clamp: tuple[float, float] = DEFAULT_CLAMP,
                         ) -> Scenario:
    """The simulation-study scenario: the ATE is 3 by construction.

    covariate_kind: "gaussian" (N(1, 25)) or "uniform" (U(-10, 10)).
    variance_mode: "heterogeneous", "homogeneous_variance", or
    "homogeneous_mean".
    """
    if covariate_kind == "gaussian":
        q = CovariateLaw(kind="gaussian", mean=1.0, variance=25.0)
    elif covariate_kind == "uniform":
        q = CovariateLaw(kind="uniform", lo=-10.0, hi=10.0)
    else:
        raise ScenarioError(f"unknown covariate kind {covariate_kind!r}")
    if variance_mode not in _VARIANCE_MODES:
        raise ScenarioError(f"unknown variance mode {variance_mode!r}")
    outcome = _paper_outcome(q, variance_mode)
    spec = {
        "covariate": _law_to_dict(q),
        "outcome": {
            "mu": {"builtin": _MODE_TO_BUILTIN[variance_mode]},
            "sigma2": {"builtin": _MODE_TO_BUILTIN[variance_mode]},
            "noise": "gaussian",
        },
        "clamp": {"lo": clamp[0], "hi": clamp[1]},
        "true_ate": 3.0,
        "num_treatments": 2,
    }
    return Scenario(q=q, outcome=outcome, clamp=clamp, true_ate=3.0, spec=spec)


def paper_scale_constants(covariate_kind: str,
                          variance_mode: str = "heterogeneous",
                          ) -> tuple[float, float]:
    """(C1, C0) for the built-in scenario; exposed for tests and reports."""
    if covariate_kind == "gaussian":
        q = CovariateLaw(kind="gaussian", mean=1.0, variance=25.0)
    else:
        q = CovariateLaw(kind="uniform", lo=-10.0, hi=10.0)
    return _paper_scales(q, variance_mode)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _law_to_dict(law: CovariateLaw) -> dict:
    if law.kind == "gaussian":
        return {"kind": "gaussian", "mean": law.mean, "variance": law.variance,
                "dimension": law.dimension}
    if law.kind == "uniform":
        return {"kind": "uniform", "lo": law.lo, "hi": law.hi,
                "dimension": law.dimension}
    return {"kind": "empirical", "points": [list(p) for p in law.points],
            "dimension": law.dimension}


def _law_from_dict(d: dict) -> CovariateLaw:
    kind = d.get("kind")
    dim = int(d.get("dimension", 1))
    if kind == "gaussian":
        return CovariateLaw(kind="gaussian", mean=float(d["mean"]),
                            variance=float(d["variance"]), dimension=dim)
    if kind == "uniform":
        return CovariateLaw(kind="uniform", lo=float(d["lo"]),
                            hi=float(d["hi"]), dimension=dim)
    if kind == "empirical":
        pts = tuple(tuple(float(v) for v in row) for row in d["points"])
        return CovariateLaw(kind="empirical", points=pts, dimension=dim)
    raise ScenarioError(f"unknown covariate kind {kind!r}")


def _poly_fn(coeffs: Sequence[float]) -> Callable[[np.ndarray], np.ndarray]:
    c = np.asarray(list(coeffs), dtype=float)
    return lambda x: np.polyval(c[::-1], _x1(x))


def _outcome_from_dict(d: dict, q: CovariateLaw) -> OutcomeModel:
    mu_spec = d.get("mu", {})
    s2_spec = d.get("sigma2", {})
    noise = d.get("noise", "gaussian")

    if "builtin" in mu_spec:
        name = mu_spec["builtin"]
        if name not in _BUILTIN_TO_MODE:
            raise ScenarioError(f"unknown builtin outcome {name!r}")
        mode = _BUILTIN_TO_MODE[name]
        c1, c0 = _paper_scales(q, mode)
        if mode == "homogeneous_mean":
            mu = (_mu_linear(c0), _mu_linear(c1))
        else:
            mu = (_mu_control(c0), _mu_treated(c1))
    elif "poly" in mu_spec:
        coeffs = mu_spec["poly"]  # {"0": [...], "1": [...], ...}
        arms = sorted(coeffs, key=int)
        mu = tuple(_poly_fn(coeffs[a]) for a in arms)
    else:
        raise ScenarioError("outcome.mu requires 'builtin' or 'poly'")

    if "builtin" in s2_spec:
        name = s2_spec["builtin"]
        if name not in _BUILTIN_TO_MODE:
            raise ScenarioError(f"unknown builtin variance {name!r}")
        if _BUILTIN_TO_MODE[name] == "homogeneous_variance":
            sigma2 = (_var_homogeneous,) * len(mu)
        else:
            sigma2 = (_var_control, _var_treated) + (_var_treated,) * (len(mu) - 2)
    elif "constant" in s2_spec:
        vals = [float(v) for v in s2_spec["constant"]]
        if any(v <= 0 for v in vals):
            raise ScenarioError("constant sigma2 values must be > 0")
        sigma2 = tuple(
            (lambda v: (lambda x: np.full(_x1(x).shape[0], v)))(v)
            for v in vals
        )
    else:
        raise ScenarioError("outcome.sigma2 requires 'builtin' or 'constant'")

    if len(sigma2) != len(mu):
        raise ScenarioError("sigma2 and mu must cover the same treatments")
    return OutcomeModel(mu=mu, sigma2=sigma2, noise=noise)


def scenario_from_dict(d: dict) -> Scenario:
    try:
        q = _law_from_dict(d["covariate"])
    except KeyError as e:
        raise ScenarioError(f"scenario is missing field {e}") from e
    clamp_d = d.get("clamp", {})
    clamp = (float(clamp_d.get("lo", DEFAULT_CLAMP[0])),
             float(clamp_d.get("hi", DEFAULT_CLAMP[1])))
    if not clamp[0] < clamp[1]:
        raise ScenarioError("clamp.lo must be < clamp.hi")
    outcome = _outcome_from_dict(d.get("outcome", {}), q)
    true_ate = d.get("true_ate")
    if true_ate == "unknown":
        true_ate = None
    elif true_ate is not None:
        true_ate = float(true_ate)
    num_treatments = int(d.get("num_treatments", len(outcome.mu)))
    return Scenario(q=q, outcome=outcome, clamp=clamp, true_ate=true_ate,
                    num_treatments=num_treatments, spec=d)


def scenario_to_dict(scenario: Scenario) -> dict:
    if scenario.spec:
        return scenario.spec
    raise ScenarioError("scenario has no serializable spec")


def load_scenario(path: str | Path) -> Scenario:
    """Parse a scenario JSON file; raises ScenarioError naming the bad field."""
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"cannot parse {path}: {e}") from e
    return scenario_from_dict(d)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(scenario_to_dict(scenario), indent=2, sort_keys=True) + "\n"
    )
