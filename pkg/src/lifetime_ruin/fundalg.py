"""Mutual-fund vectors, feedback controls and two-fund decompositions.

Vectors of length ``n`` live in the risky assets only. Vectors of length
``n + 1`` carry the riskless weight in entry 0 followed by the ``n`` risky
weights.

The optimal controls work in the reduced variable ``z = w / c`` and take
the derivatives of the reduced value function (``phi_z``, ``phi_zz``).
They broadcast: ``z`` and the derivatives may be arrays of shape ``(N,)``,
in which case the result has shape ``(N, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import (
    DegenerateNormalizer,
    DegenerateSecondDerivative,
    DimensionMismatch,
    NegativeWealth,
    UnsupportedModel,
)
from .market import MarketModel, SigmaBundle, sigma_bundle

SUM_TOL = 1e-12
NORMALIZER_TOL = 1e-14


@dataclass(frozen=True)
class RelativePortfolioVector:
    """Weights summing to one; defines a continually rebalanced fund."""

    weights: NDArray[np.float64]
    label: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if abs(w.sum() - 1.0) > SUM_TOL * max(1.0, np.abs(w).sum()):
            raise ValueError(f"relative portfolio weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", w)

    def __add__(self, other: "DifferenceVector") -> "RelativePortfolioVector":
        label = f"{self.label}+{other.label}" if self.label and other.label else ""
        return RelativePortfolioVector(self.weights + other.weights, label)


@dataclass(frozen=True)
class DifferenceVector:
    """Weights summing to zero; adding one to a fund vector gives another fund vector."""

    weights: NDArray[np.float64]
    label: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if abs(w.sum()) > SUM_TOL * max(1.0, np.abs(w).sum()):
            raise ValueError(f"difference vector weights sum to {w.sum()!r}, not 0")
        object.__setattr__(self, "weights", w)

    def __mul__(self, k: float) -> "DifferenceVector":
        return DifferenceVector(k * self.weights, self.label)

    __rmul__ = __mul__


@dataclass(frozen=True)
class FundDynamics:
    """Drift and volatility row of a fund's price process."""

    drift: float
    vol_row: NDArray[np.float64]


@dataclass(frozen=True)
class ValueDerivatives:
    """First and second derivative of the (reduced) ruin probability."""

    first: ArrayLike
    second: ArrayLike


@dataclass(frozen=True)
class TwoFundDecomposition:
    """Dollar split of wealth between two funds.

    ``dollars_A + dollars_B`` is the current wealth. Fund vectors are either
    both risky-only (length n) or both include the riskless asset (n + 1).
    """

    fund_A: RelativePortfolioVector
    fund_B: RelativePortfolioVector
    dollars_A: float
    dollars_B: float

    @property
    def wealth(self) -> float:
        return self.dollars_A + self.dollars_B

    def flatten(self) -> NDArray[np.float64]:
        """Per-asset dollar amounts (riskless first when present)."""
        return self.dollars_A * self.fund_A.weights + self.dollars_B * self.fund_B.weights


def compute_g(bundle: SigmaBundle) -> RelativePortfolioVector:
    """Minimum-variance fund ``Sigma^{-1} e / e^T Sigma^{-1} e``."""
    y = bundle.SigmaInv @ bundle.e
    return RelativePortfolioVector(y / y.sum(), "g")


def _projected(bundle: SigmaBundle, v: NDArray[np.float64]) -> NDArray[np.float64]:
    # Sigma^{-1} (v - (e^T Sigma^{-1} v / e^T Sigma^{-1} e) e)
    x = bundle.SigmaInv @ v
    y = bundle.SigmaInv @ bundle.e
    s = y.sum()
    x = x - (x.sum() / s) * y
    # second pass removes the cancellation error left when |x| >> |x.sum()|
    return x - (x.sum() / s) * y


def compute_f(bundle: SigmaBundle, mu: ArrayLike) -> DifferenceVector:
    return DifferenceVector(_projected(bundle, np.asarray(mu, dtype=np.float64)), "f")


def compute_h(bundle: SigmaBundle) -> DifferenceVector:
    """Consumption-hedge direction, projected onto zero-sum portfolios."""
    return DifferenceVector(_projected(bundle, bundle.sigma_rho), "h")


def compute_gtilde(bundle: SigmaBundle, b: float) -> RelativePortfolioVector:
    """Fund holding ``b Sigma^{-1} sigma rho`` in the risky assets, rest riskless."""
    risky = b * (bundle.SigmaInv @ bundle.sigma_rho)
    return RelativePortfolioVector(np.concatenate(([1.0 - risky.sum()], risky)), "gtilde")


def compute_ftilde(bundle: SigmaBundle, mu: ArrayLike, r: float, b: float) -> DifferenceVector:
    mu_tilde = np.asarray(mu, dtype=np.float64) - r * bundle.e - b * bundle.sigma_rho
    risky = bundle.SigmaInv @ mu_tilde
    return DifferenceVector(np.concatenate(([-risky.sum()], risky)), "ftilde")


def compute_ghat(bundle: SigmaBundle, mu: ArrayLike, r: float) -> RelativePortfolioVector:
    """Normalised excess-return (tangency) fund.

    Raises :class:`DegenerateNormalizer` when ``e^T Sigma^{-1} (mu - r e)``
    vanishes; the optimal risky position is then zero.
    """
    x = bundle.SigmaInv @ (np.asarray(mu, dtype=np.float64) - r * bundle.e)
    s = x.sum()
    if abs(s) < NORMALIZER_TOL:
        raise DegenerateNormalizer(f"e^T Sigma^-1 (mu - r e) = {s:.3g}; tangency fund undefined")
    return RelativePortfolioVector(x / s, "ghat")


def fund_dynamics(vec, model: MarketModel, t: float = 0.0) -> FundDynamics:
    """Drift and volatility row of the fund defined by ``vec``."""
    w = np.asarray(getattr(vec, "weights", vec), dtype=np.float64)
    mu, sigma = model.mu(t), model.sigma(t)
    if w.shape == (model.n,):
        return FundDynamics(float(w @ mu), w @ sigma)
    if w.shape == (model.n + 1,) and model.has_riskless:
        return FundDynamics(float(w[0] * model.r + w[1:] @ mu), w[1:] @ sigma)
    raise DimensionMismatch(
        f"fund vector of length {w.shape} does not match n={model.n}"
        + (" (+1 riskless)" if model.has_riskless else "")
    )


def _ratio(d: ValueDerivatives) -> NDArray[np.float64]:
    second = np.asarray(d.second, dtype=np.float64)
    if np.any(~(second > 0)):
        raise DegenerateSecondDerivative("second derivative must be > 0 for the feedback control")
    return np.asarray(d.first, dtype=np.float64) / second


def alpha_star_constrained(bundle: SigmaBundle, mu: ArrayLike, b: float, z: ArrayLike,
                           d: ValueDerivatives) -> NDArray[np.float64]:
    """Minimiser over ``e^T alpha = z`` of the reduced Hamiltonian (no riskless asset).

    Uses the Lagrange-multiplier form directly rather than the fund
    rearrangement, so it can serve as the reference for the decomposition.
    """
    mu = np.asarray(mu, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    first = np.asarray(d.first, dtype=np.float64)
    ratio = _ratio(d)
    second = np.asarray(d.second, dtype=np.float64)
    Si_mu = bundle.SigmaInv @ mu
    Si_sr = bundle.SigmaInv @ bundle.sigma_rho
    Si_e = bundle.SigmaInv @ bundle.e
    zpp = z * second + first
    ell = (z * second + first * Si_mu.sum() - zpp * b * Si_sr.sum()) / Si_e.sum()
    out = (-ratio[..., None] * Si_mu
           + ((z + ratio) * b)[..., None] * Si_sr
           + (ell / second)[..., None] * Si_e)
    return out


def alpha_star_unconstrained(bundle: SigmaBundle, mu: ArrayLike, r: float, b: float,
                             z: ArrayLike, d: ValueDerivatives) -> NDArray[np.float64]:
    """Minimiser of the reduced Hamiltonian when a riskless asset is available."""
    mu_tilde = np.asarray(mu, dtype=np.float64) - r * bundle.e - b * bundle.sigma_rho
    z = np.asarray(z, dtype=np.float64)
    ratio = _ratio(d)
    return ((z * b)[..., None] * (bundle.SigmaInv @ bundle.sigma_rho)
            - ratio[..., None] * (bundle.SigmaInv @ mu_tilde))


def reduced_hamiltonian(bundle: SigmaBundle, mu: ArrayLike, r: float, b: float, z: float,
                        d: ValueDerivatives, alpha: ArrayLike) -> NDArray[np.float64]:
    """Control-dependent part of the reduced HJB operator.

    ``alpha^T (mu - r e) v_z + 1/2 alpha^T Sigma alpha v_zz - b alpha^T sigma rho (z v_zz + v_z)``
    (use ``r=0`` for the market without a riskless asset).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    excess = np.asarray(mu, dtype=np.float64) - r * bundle.e
    quad = np.einsum("...i,ij,...j->...", alpha, bundle.Sigma, alpha)
    return (alpha @ excess * d.first + 0.5 * quad * d.second
            - b * (alpha @ bundle.sigma_rho) * (z * d.second + d.first))


def _check_wealth(W: float) -> None:
    if W < 0:
        raise NegativeWealth(f"wealth must be >= 0, got {W}")


def decompose_no_riskless(model: MarketModel, t: float, W: float, dollars_risk: float,
                          bundle: Optional[SigmaBundle] = None) -> TwoFundDecomposition:
    """Split ``W`` into ``dollars_risk`` in ``g + f`` and the rest in ``g + b h``.

    ``dollars_risk`` is ``-psi_w / psi_ww`` at the current state.
    """
    _check_wealth(W)
    bundle = sigma_bundle(model, t) if bundle is None else bundle
    g = compute_g(bundle)
    f = compute_f(bundle, model.mu(t))
    h = compute_h(bundle)
    b = model.b.scalar(t)
    return TwoFundDecomposition(fund_A=g + f, fund_B=g + b * h,
                                dollars_A=dollars_risk, dollars_B=W - dollars_risk)


def decompose_riskless(model: MarketModel, t: float, W: float, dollars_risk: float,
                       bundle: Optional[SigmaBundle] = None) -> TwoFundDecomposition:
    """Split ``W`` into ``dollars_risk`` in ``gtilde + ftilde`` and the rest in ``gtilde``."""
    if not model.has_riskless:
        raise UnsupportedModel("decompose_riskless requires a riskless asset")
    _check_wealth(W)
    bundle = sigma_bundle(model, t) if bundle is None else bundle
    b = model.b.scalar(t)
    gt = compute_gtilde(bundle, b)
    ft = compute_ftilde(bundle, model.mu(t), model.r, b)
    return TwoFundDecomposition(fund_A=gt + ft, fund_B=gt,
                                dollars_A=dollars_risk, dollars_B=W - dollars_risk)


def fund_vectors(model: MarketModel, t: float = 0.0) -> dict[str, NDArray[np.float64]]:
    """All fund and difference vectors defined for ``model`` at time ``t``.

    ``ghat`` is omitted when its normaliser vanishes.
    """
    bundle = sigma_bundle(model, t)
    mu = model.mu(t)
    out = {
        "g": compute_g(bundle).weights,
        "f": compute_f(bundle, mu).weights,
        "h": compute_h(bundle).weights,
    }
    if model.has_riskless:
        b = model.b.scalar(t)
        out["gtilde"] = compute_gtilde(bundle, b).weights
        out["ftilde"] = compute_ftilde(bundle, mu, model.r, b).weights
        try:
            out["ghat"] = compute_ghat(bundle, mu, model.r).weights
        except DegenerateNormalizer:
            pass
    return out
