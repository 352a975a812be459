"""Exact solution for constant coefficients and deterministic consumption.

With a riskless asset, constant ``mu``, ``sigma``, ``lam`` and ``b = 0`` the
minimum probability of lifetime ruin is

    psi(w) = (1 - r w / c) ** p      for 0 <= w <= c / r

where ``p`` is the larger root of ``r p^2 - (r + lam + m) p + lam = 0`` and
``m = 1/2 (mu - r e)^T Sigma^{-1} (mu - r e)``. The optimal risky position
is ``(c/r - w) / (p - 1) * Sigma^{-1} (mu - r e)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import NegativeWealth, NonpositiveRate, OutOfDomain, UnsupportedModel
from .fundalg import ValueDerivatives
from .market import MarketModel, sigma_bundle

MIN_EXPONENT_GAP = 1e-9


@dataclass(frozen=True)
class ClosedFormSolution:
    r: float
    lam: float
    c: float
    m: float
    p: float
    risky_direction: NDArray[np.float64]

    @property
    def safe_level(self) -> float:
        return self.c / self.r

    def quadratic_residual(self) -> float:
        return self.r * self.p**2 - (self.r + self.lam + self.m) * self.p + self.lam


def exponent(r: float, lam: float, m: float) -> float:
    """Larger root of ``r p^2 - (r + lam + m) p + lam``."""
    s = r + lam + m
    return (s + np.sqrt(s * s - 4.0 * r * lam)) / (2.0 * r)


def build(model: MarketModel, c: float = 1.0) -> ClosedFormSolution:
    if not model.has_riskless:
        raise UnsupportedModel("closed form needs a riskless asset")
    if not model.is_time_homogeneous:
        raise UnsupportedModel("closed form needs time-homogeneous coefficients")
    if model.b.scalar() != 0.0:
        raise UnsupportedModel(f"closed form needs deterministic consumption (b=0), got b={model.b.scalar()}")
    if model.r <= 0:
        raise NonpositiveRate(f"closed form needs r > 0, got r={model.r}")
    if not c > 0:
        raise UnsupportedModel(f"consumption rate must be > 0, got {c}")
    bundle = sigma_bundle(model)
    excess = model.mu() - model.r
    direction = bundle.SigmaInv @ excess
    m = 0.5 * float(excess @ direction)
    lam = model.lam.scalar()
    p = exponent(model.r, lam, m)
    if p <= 1.0 + MIN_EXPONENT_GAP:
        raise UnsupportedModel(f"exponent p={p} <= 1: optimal leverage is unbounded")
    return ClosedFormSolution(r=model.r, lam=lam, c=float(c), m=m, p=p, risky_direction=direction)


def psi(sol: ClosedFormSolution, w: ArrayLike) -> NDArray[np.float64]:
    """Minimum ruin probability at wealth ``w`` (0 at and above the safe level)."""
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0):
        raise NegativeWealth("wealth must be >= 0")
    x = np.clip(1.0 - sol.r * w / sol.c, 0.0, None)
    return x**sol.p


def psi_derivatives(sol: ClosedFormSolution, w: ArrayLike) -> ValueDerivatives:
    """``psi_w`` and ``psi_ww`` on the open interval ``(0, c/r)``."""
    w = np.asarray(w, dtype=np.float64)
    if np.any(w <= 0) or np.any(w >= sol.safe_level):
        raise OutOfDomain(
            "derivatives are defined on 0 < w < c/r; one-sided values: "
            "psi_w(0+) = -p r/c, psi_w(c/r-) = 0"
        )
    k = sol.r / sol.c
    x = 1.0 - k * w
    p = sol.p
    return ValueDerivatives(first=-p * k * x ** (p - 1), second=p * (p - 1) * k * k * x ** (p - 2))


def risky_dollars(sol: ClosedFormSolution, w: ArrayLike) -> NDArray[np.float64]:
    """``-psi_w / psi_ww = (c/r - w) / (p - 1)``, set to 0 above the safe level."""
    w = np.asarray(w, dtype=np.float64)
    return np.clip(sol.safe_level - w, 0.0, None) / (sol.p - 1.0)


def pi_star(sol: ClosedFormSolution, w: ArrayLike) -> NDArray[np.float64]:
    """Optimal dollars in each risky asset, shape ``w.shape + (n,)``."""
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0):
        raise OutOfDomain("pi_star needs w >= 0")
    return risky_dollars(sol, w)[..., None] * sol.risky_direction


def stationary_residual(sol: ClosedFormSolution, model: MarketModel, w: ArrayLike) -> NDArray[np.float64]:
    """Residual of the time-independent HJB equation at interior wealth levels.

    ``lam psi - [(r w - c) psi_w + pi^T (mu - r e) psi_w + 1/2 pi^T Sigma pi psi_ww]``
    evaluated with the closed-form ``psi`` and ``pi_star``.
    """
    w = np.asarray(w, dtype=np.float64)
    d = psi_derivatives(sol, w)
    pi = pi_star(sol, w)
    bundle = sigma_bundle(model)
    excess = model.mu() - sol.r
    quad = np.einsum("...i,ij,...j->...", pi, bundle.Sigma, pi)
    rhs = (sol.r * w - sol.c) * d.first + (pi @ excess) * d.first + 0.5 * quad * d.second
    return sol.lam * psi(sol, w) - rhs
