"""Online nonparametric nuisance estimation.

Conditional means, second moments, and clamped variances are estimated by
Nadaraya-Watson kernel regression over the history available strictly before
the current round. Two implementations share the same math:

* NuisanceModel — the exact estimator, refit from a history snapshot.
* OnlineNuisance — a grid-accelerated d = 1 variant used inside long trial
  loops; it maintains per-arm kernel sums on a fixed grid with O(grid)
  appends instead of O(t) per-query scans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["NuisanceModel", "OnlineNuisance", "fit", "predict_mean",
           "predict_variance", "thre", "silverman_bandwidth"]

BANDWIDTH_FLOOR = 1e-3
MASS_EPS = 1e-12


def thre(value, lo: float, hi: float):
    """Threshold operator: the value if inside [lo, hi], else the endpoint."""
    return np.clip(value, lo, hi)


def silverman_bandwidth(x: np.ndarray, scale: float = 1.06) -> np.ndarray:
    """Rule-of-thumb bandwidth per coordinate, floored away from zero.

    h_j = scale * std(x_j) * n^(-1/5).
    """
    x = np.atleast_2d(x)
    n = x.shape[0]
    sd = x.std(axis=0, ddof=1) if n >= 2 else np.zeros(x.shape[1])
    h = scale * sd * n ** (-0.2)
    return np.maximum(h, BANDWIDTH_FLOOR)


def _nw_raw(xtr: np.ndarray, ytr: np.ndarray, h: np.ndarray,
            xq: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Kernel-weighted first and second moments of y at query rows.

    Returns (mu_raw, nu_raw, mass); entries with vanishing mass are left as
    the caller's responsibility (mass below MASS_EPS).
    """
    m = xq.shape[0]
    mu = np.empty(m)
    nu = np.empty(m)
    mass = np.empty(m)
    yy = ytr * ytr
    # Chunk query rows so the (chunk, n, d) broadcast stays bounded even for
    # Monte Carlo sized query batches.
    chunk = max(1, int(4_000_000 // max(1, xtr.shape[0])))
    for lo in range(0, m, chunk):
        hi = min(m, lo + chunk)
        z = (xq[lo:hi, None, :] - xtr[None, :, :]) / h
        w = np.exp(-0.5 * np.einsum("mnd,mnd->mn", z, z))
        block = w.sum(axis=1)
        safe = np.maximum(block, MASS_EPS)
        mass[lo:hi] = block
        mu[lo:hi] = w @ ytr / safe
        nu[lo:hi] = w @ yy / safe
    return mu, nu, mass


@dataclass
class _ArmData:
    x: np.ndarray  # (n, d)
    y: np.ndarray  # (n,)
    bandwidth: np.ndarray  # (d,)


class NuisanceModel:
    """Exact Nadaraya-Watson nuisances fitted from rounds 1..t-1.

    Predictions clamp the mean to [-mean_bound, mean_bound] and the variance
    to [clamp_lo, clamp_hi]; queries with vanishing kernel mass fall back to
    the arm's sample moments.
    """

    def __init__(self, arms: list[_ArmData], clamp: tuple[float, float],
                 mean_bound: float, bandwidth_scale: float = 1.06):
        self.arms = arms
        self.clamp = clamp
        self.mean_bound = mean_bound
        self.bandwidth_scale = bandwidth_scale

    @property
    def num_treatments(self) -> int:
        return len(self.arms)

    def _moments(self, a: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        arm = self.arms[a]
        xq = np.atleast_2d(np.asarray(x, dtype=float))
        mu, nu, mass = _nw_raw(arm.x, arm.y, arm.bandwidth, xq)
        dead = mass < MASS_EPS
        if dead.any():
            mu[dead] = arm.y.mean()
            nu[dead] = np.mean(arm.y * arm.y)
        return mu, nu

    def predict_mean(self, a: int, x: np.ndarray) -> np.ndarray:
        mu, _ = self._moments(a, x)
        return thre(mu, -self.mean_bound, self.mean_bound)

    def predict_variance(self, a: int, x: np.ndarray) -> np.ndarray:
        mu, nu = self._moments(a, x)
        mu = thre(mu, -self.mean_bound, self.mean_bound)
        return thre(nu - mu * mu, *self.clamp)

    def predict_sigma(self, a: int, x: np.ndarray) -> np.ndarray:
        return np.sqrt(self.predict_variance(a, x))


def fit(history, t: int, clamp: tuple[float, float], mean_bound: float,
        num_treatments: int = 2, bandwidth_scale: float = 1.06,
        ) -> NuisanceModel:
    """Fit nuisances from history rounds with index < t (1-based rounds).

    Every arm must have at least one observation among those rounds.
    """
    x, a, y = history.x[: t - 1], history.a[: t - 1], history.y[: t - 1]
    arms = []
    for arm in range(num_treatments):
        sel = a == arm
        if not sel.any():
            raise ValueError(
                f"arm {arm} has no observations before round {t}; "
                "extend the burn-in"
            )
        xa = np.atleast_2d(x[sel])
        arms.append(_ArmData(x=xa, y=y[sel],
                             bandwidth=silverman_bandwidth(xa, bandwidth_scale)))
    return NuisanceModel(arms, clamp=clamp, mean_bound=mean_bound,
                         bandwidth_scale=bandwidth_scale)


def predict_mean(model: NuisanceModel, a: int, x: np.ndarray) -> np.ndarray:
    return model.predict_mean(a, x)


def predict_variance(model: NuisanceModel, a: int, x: np.ndarray) -> np.ndarray:
    return model.predict_variance(a, x)


class OnlineNuisance:
    """Grid-accelerated Nadaraya-Watson nuisances for one-dimensional x.

    Kernel sums against 1, y, and y^2 are maintained on a fixed grid and
    predictions interpolate the grid curves. Appending one observation costs
    O(grid). The bandwidth follows the same rule-of-thumb as NuisanceModel
    but is refreshed lazily: the grid is rebuilt from scratch only when the
    rule's value drifts more than `bandwidth_rtol` from the bandwidth in
    use, which keeps long adaptive loops near-linear in T.
    """

    def __init__(self, grid_lo: float, grid_hi: float, grid_size: int,
                 clamp: tuple[float, float], mean_bound: float,
                 num_treatments: int = 2, bandwidth_scale: float = 1.06,
                 bandwidth_rtol: float = 0.02):
        self.grid = np.linspace(grid_lo, grid_hi, grid_size)
        self.clamp = clamp
        self.mean_bound = mean_bound
        self.bandwidth_scale = bandwidth_scale
        self.bandwidth_rtol = bandwidth_rtol
        k = num_treatments
        self._x: list[list[float]] = [[] for _ in range(k)]
        self._y: list[list[float]] = [[] for _ in range(k)]
        self._sum: list[float] = [0.0] * k
        self._sumsq: list[float] = [0.0] * k
        self._sumx: list[float] = [0.0] * k
        self._sumxx: list[float] = [0.0] * k
        self._h: list[float] = [BANDWIDTH_FLOOR] * k
        self._s0 = np.zeros((k, grid_size))
        self._s1 = np.zeros((k, grid_size))
        self._s2 = np.zeros((k, grid_size))
        self._dirty = [False] * k  # grid curves stale?
        self._mu_grid = [np.zeros(grid_size) for _ in range(k)]
        self._var_grid = [np.full(grid_size, clamp[0]) for _ in range(k)]

    @property
    def num_treatments(self) -> int:
        return len(self._x)

    def count(self, a: int) -> int:
        return len(self._x[a])

    def _rule_bandwidth(self, a: int) -> float:
        n = len(self._x[a])
        if n < 2:
            return BANDWIDTH_FLOOR
        var = (self._sumxx[a] - self._sumx[a] ** 2 / n) / (n - 1)
        sd = math.sqrt(max(var, 0.0))
        return max(self.bandwidth_scale * sd * n ** (-0.2), BANDWIDTH_FLOOR)

    def _kernel(self, a: int, x: float) -> np.ndarray:
        z = (self.grid - x) / self._h[a]
        return np.exp(-0.5 * z * z)

    def _rebuild(self, a: int) -> None:
        self._h[a] = self._rule_bandwidth(a)
        xs = np.asarray(self._x[a])
        ys = np.asarray(self._y[a])
        z = (self.grid[:, None] - xs[None, :]) / self._h[a]
        w = np.exp(-0.5 * z * z)
        self._s0[a] = w.sum(axis=1)
        self._s1[a] = w @ ys
        self._s2[a] = w @ (ys * ys)

    def add(self, a: int, x: float, y: float) -> None:
        self._x[a].append(x)
        self._y[a].append(y)
        self._sum[a] += y
        self._sumsq[a] += y * y
        self._sumx[a] += x
        self._sumxx[a] += x * x
        rule = self._rule_bandwidth(a)
        if abs(rule - self._h[a]) > self.bandwidth_rtol * self._h[a]:
            self._rebuild(a)
        else:
            w = self._kernel(a, x)
            self._s0[a] += w
            self._s1[a] += w * y
            self._s2[a] += w * (y * y)
        self._dirty[a] = True

    def _refresh(self, a: int) -> None:
        if not self._dirty[a]:
            return
        n = len(self._x[a])
        mass = self._s0[a]
        safe = np.maximum(mass, MASS_EPS)
        mu = self._s1[a] / safe
        nu = self._s2[a] / safe
        dead = mass < MASS_EPS
        if dead.any() and n > 0:
            mu[dead] = self._sum[a] / n
            nu[dead] = self._sumsq[a] / n
        mu = thre(mu, -self.mean_bound, self.mean_bound)
        self._mu_grid[a] = mu
        self._var_grid[a] = thre(nu - mu * mu, *self.clamp)
        self._dirty[a] = False

    def predict_mean(self, a: int, x: np.ndarray) -> np.ndarray:
        self._refresh(a)
        xq = np.ravel(np.asarray(x, dtype=float))
        return np.interp(xq, self.grid, self._mu_grid[a])

    def predict_variance(self, a: int, x: np.ndarray) -> np.ndarray:
        self._refresh(a)
        xq = np.ravel(np.asarray(x, dtype=float))
        return np.interp(xq, self.grid, self._var_grid[a])

    def predict_sigma(self, a: int, x: np.ndarray) -> np.ndarray:
        return np.sqrt(self.predict_variance(a, x))
