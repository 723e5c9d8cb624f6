"""Rejection sampling of covariates from an adaptively chosen density.

Targets are expressed as a density ratio e(x) against a proposal law q with
a known dominating bound M: proposals from q are accepted with probability
e(x) / M, so accepted draws follow e(x) q(x).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .scenario import CovariateLaw

__all__ = ["RejectionSampler", "accept_decision", "RejectionCapExceeded"]

DEFAULT_PROPOSAL_CAP = 10 ** 6
_CHUNK = 32


class RejectionCapExceeded(RuntimeError):
    """Too many proposals without an acceptance; the bound is misconfigured."""


def accept_decision(x: np.ndarray, ratio: Callable[[np.ndarray], np.ndarray],
                    bound: float, u: float) -> bool:
    """Accept x iff u < e(x) / bound (strict at the boundary)."""
    if not 0.0 <= u <= 1.0:
        raise ValueError("u must lie in [0, 1]")
    r = float(np.asarray(ratio(np.atleast_2d(x)), dtype=float).ravel()[0])
    return u < r / bound


@dataclass
class RejectionSampler:
    proposal: CovariateLaw
    ratio: Callable[[np.ndarray], np.ndarray]
    bound: float
    cap: int = DEFAULT_PROPOSAL_CAP
    proposals: int = field(default=0, init=False)
    acceptances: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        if self.bound <= 0:
            raise ValueError("bound must be positive")

    def draw(self, rng: np.random.Generator) -> tuple[np.ndarray, int]:
        """One accepted covariate plus the number of proposals consumed."""
        used = 0
        while used < self.cap:
            m = min(_CHUNK, self.cap - used)
            xs = self.proposal.sample(rng, m)
            us = rng.uniform(0.0, 1.0, size=m)
            acc = us < np.asarray(self.ratio(xs), dtype=float) / self.bound
            hit = int(np.argmax(acc)) if acc.any() else -1
            if hit >= 0:
                used += hit + 1
                self.proposals += used
                self.acceptances += 1
                return xs[hit], used
            used += m
        self.proposals += used
        raise RejectionCapExceeded(
            f"no acceptance within {self.cap} proposals; "
            "the ratio bound is likely too large or the ratio degenerate"
        )
