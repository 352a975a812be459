"""Numerical check of the two-fund decompositions.

For random states the direct feedback optimum ``pi* = c alpha*(z)`` is
compared with the per-asset dollars obtained by flattening the two-fund
split. The two routes share only the fund-vector inputs, so agreement to
rounding level confirms the algebra of both decompositions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fundalg import (
    ValueDerivatives,
    alpha_star_constrained,
    alpha_star_unconstrained,
    decompose_no_riskless,
    decompose_riskless,
)
from .market import MarketModel, sigma_bundle, validate

DEFAULT_THRESHOLD = 1e-10


@dataclass(frozen=True)
class ModeCheck:
    mode: str
    samples: int
    max_abs_residual: float
    max_wealth_gap: float


@dataclass(frozen=True)
class VerificationReport:
    checks: tuple[ModeCheck, ...]
    threshold: float = DEFAULT_THRESHOLD

    @property
    def max_residual(self) -> float:
        return max((c.max_abs_residual for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return all(c.max_abs_residual < self.threshold and c.max_wealth_gap < self.threshold
                   for c in self.checks)


def draw_state(rng: np.random.Generator):
    """Random ``(W, c, phi_z, phi_zz)`` with ``phi_z < 0 < phi_zz``."""
    W = rng.uniform(0.0, 50.0)
    c = rng.uniform(0.2, 5.0)
    first = -rng.uniform(1e-3, 1.0)
    second = rng.uniform(1e-3, 1.0)
    return W, c, first, second


def residual_no_riskless(model: MarketModel, W: float, c: float, first: float, second: float,
                         t: float = 0.0) -> tuple[float, float]:
    """(max |pi_direct - pi_two_fund|, |dollars_A + dollars_B - W|) without a riskless asset."""
    bundle = sigma_bundle(model, t)
    d = ValueDerivatives(first, second)
    direct = c * alpha_star_constrained(bundle, model.mu(t), model.b.scalar(t), W / c, d)
    split = decompose_no_riskless(model, t, W, -c * first / second, bundle)
    return float(np.max(np.abs(split.flatten() - direct))), abs(split.wealth - W)


def residual_riskless(model: MarketModel, W: float, c: float, first: float, second: float,
                      t: float = 0.0) -> tuple[float, float]:
    """Same check with the riskless asset; also compares the riskless remainder."""
    bundle = sigma_bundle(model, t)
    d = ValueDerivatives(first, second)
    risky = c * alpha_star_unconstrained(bundle, model.mu(t), model.r, model.b.scalar(t), W / c, d)
    direct = np.concatenate(([W - risky.sum()], risky))
    split = decompose_riskless(model, t, W, -c * first / second, bundle)
    return float(np.max(np.abs(split.flatten() - direct))), abs(split.wealth - W)


def verify_decomposition(model: MarketModel, samples: int = 10_000, seed: int = 0,
                         threshold: float = DEFAULT_THRESHOLD,
                         t: Optional[float] = 0.0) -> VerificationReport:
    """Max residuals over ``samples`` random states, per applicable market mode."""
    validate(model)
    rng = np.random.default_rng(seed)
    checks = []
    modes = [("no_riskless", residual_no_riskless)]
    if model.has_riskless:
        modes.append(("with_riskless", residual_riskless))
    states = [draw_state(rng) for _ in range(samples)]
    for name, fn in modes:
        worst = gap = 0.0
        for W, c, first, second in states:
            res, g = fn(model, W, c, first, second, t)
            worst = max(worst, res)
            gap = max(gap, g)
        checks.append(ModeCheck(name, samples, worst, gap))
    return VerificationReport(tuple(checks), threshold)
