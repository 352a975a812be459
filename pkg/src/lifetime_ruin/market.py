"""Market and mortality model: risky assets, optional riskless asset,
diffusive consumption and a deterministic death hazard.

All rates are annual. Time dependence is piecewise constant: every
coefficient is a :class:`ParameterCurve` whose last segment extends to
infinity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .errors import (
    CorrelationOutOfRange,
    DimensionMismatch,
    InvalidParameter,
    NotPositiveDefinite,
)

PD_RELATIVE_TOL = 1e-12
RHO_NORM_TOL = 1e-12


def _frozen(a) -> NDArray[np.float64]:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ParameterCurve:
    """Piecewise-constant function of time.

    ``times[j]`` is the start of segment ``j``; ``times[0]`` must be 0 and
    the last segment never ends. ``values[j]`` may be a scalar, vector or
    matrix, but all segments share one shape.
    """

    times: tuple[float, ...]
    values: tuple[NDArray[np.float64], ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        values = tuple(_frozen(v) for v in self.values)
        if len(values) == 0 or len(times) != len(values):
            raise InvalidParameter("curve needs one start time per segment and at least one segment")
        if times[0] != 0.0:
            raise InvalidParameter(f"first segment must start at t=0, got {times[0]}")
        if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
            raise InvalidParameter(f"segment start times must be strictly ascending: {times}")
        shape = values[0].shape
        if any(v.shape != shape for v in values):
            raise DimensionMismatch("all curve segments must have the same shape")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value) -> "ParameterCurve":
        return cls((0.0,), (value,))

    @classmethod
    def piecewise(cls, times: Sequence[float], values: Sequence) -> "ParameterCurve":
        return cls(tuple(times), tuple(values))

    @classmethod
    def coerce(cls, value) -> "ParameterCurve":
        return value if isinstance(value, cls) else cls.constant(value)

    @property
    def kind(self) -> str:
        return "constant" if len(self.values) == 1 else "piecewise-constant"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values[0].shape

    def segment(self, t: float) -> int:
        if t < 0:
            raise InvalidParameter(f"curve evaluated at negative time {t}")
        if len(self.times) == 1:
            return 0
        return int(np.searchsorted(self.times, t, side="right")) - 1

    def __call__(self, t: float = 0.0) -> NDArray[np.float64]:
        return self.values[self.segment(t)]

    def scalar(self, t: float = 0.0) -> float:
        return float(self(t))

    def integral(self, t: float) -> float:
        """Integral of a scalar curve over ``[0, t]``."""
        total = 0.0
        ends = self.times[1:] + (np.inf,)
        for start, end, v in zip(self.times, ends, self.values):
            if t <= start:
                break
            total += float(v) * (min(t, end) - start)
        return total

    def inverse_integral(self, level: NDArray[np.float64] | float) -> NDArray[np.float64]:
        """Smallest ``t`` with ``integral(t) == level`` (``inf`` if never reached).

        Vectorised over ``level``; used to invert a cumulative hazard.
        """
        level = np.asarray(level, dtype=np.float64)
        rates = np.array([float(v) for v in self.values])
        starts = np.array(self.times)
        widths = np.diff(starts)
        cum = np.concatenate(([0.0], np.cumsum(rates[:-1] * widths)))
        seg = np.searchsorted(cum, level, side="right") - 1
        # skip zero-rate segments whose cumulative value ties with the next one
        out = np.full(level.shape, np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = starts[seg] + (level - cum[seg]) / rates[seg]
        ok = rates[seg] > 0
        out[ok] = cand[ok]
        out[level == 0] = 0.0
        return out

    def __eq__(self, other):
        if not isinstance(other, ParameterCurve):
            return NotImplemented
        return self.times == other.times and all(
            np.array_equal(a, b) for a, b in zip(self.values, other.values)
        ) and len(self.values) == len(other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class MarketModel:
    """Complete problem description.

    Plain numbers/arrays passed for ``mu``, ``sigma``, ``a``, ``b`` and
    ``lam`` are promoted to constant curves. ``r=None`` means the market has
    no riskless asset (wealth must be fully invested in the risky assets).
    """

    mu: ParameterCurve
    sigma: ParameterCurve
    r: Optional[float] = None
    a: ParameterCurve = 0.0
    b: ParameterCurve = 0.0
    rho: NDArray[np.float64] = None
    lam: ParameterCurve = 0.04

    def __post_init__(self):
        mu = ParameterCurve.coerce(self.mu)
        sigma = ParameterCurve.coerce(self.sigma)
        if mu.shape == ():
            mu = ParameterCurve(mu.times, tuple(v.reshape(1) for v in mu.values))
        if len(sigma.shape) < 2:
            sigma = ParameterCurve(
                sigma.times, tuple(np.atleast_2d(v).reshape(mu.shape[0], -1) for v in sigma.values)
            )
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        for name in ("a", "b", "lam"):
            object.__setattr__(self, name, ParameterCurve.coerce(getattr(self, name)))
        k = sigma.shape[1] if len(sigma.shape) == 2 else 0
        rho = np.zeros(k) if self.rho is None else np.atleast_1d(self.rho)
        object.__setattr__(self, "rho", _frozen(rho))
        if self.r is not None:
            object.__setattr__(self, "r", float(self.r))

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def k(self) -> int:
        return self.sigma.shape[1]

    @property
    def has_riskless(self) -> bool:
        return self.r is not None

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Union of all curve segment starts."""
        ts = set()
        for c in (self.mu, self.sigma, self.a, self.b, self.lam):
            ts.update(c.times)
        return tuple(sorted(ts))

    @property
    def is_time_homogeneous(self) -> bool:
        return all(len(c.values) == 1 for c in (self.mu, self.sigma, self.a, self.b, self.lam))

    def replace(self, **changes) -> "MarketModel":
        fields = dict(mu=self.mu, sigma=self.sigma, r=self.r, a=self.a, b=self.b,
                      rho=self.rho, lam=self.lam)
        fields.update(changes)
        return MarketModel(**fields)

    def __eq__(self, other):
        if not isinstance(other, MarketModel):
            return NotImplemented
        return (self.mu == other.mu and self.sigma == other.sigma and self.r == other.r
                and self.a == other.a and self.b == other.b and self.lam == other.lam
                and np.array_equal(self.rho, other.rho))

    __hash__ = None


@dataclass(frozen=True)
class SigmaBundle:
    """Covariance matrix, its inverse and the consumption-hedge vector at one time."""

    Sigma: NDArray[np.float64]
    SigmaInv: NDArray[np.float64]
    sigma_rho: NDArray[np.float64]
    e: NDArray[np.float64] = field(repr=False, default=None)

    def __post_init__(self):
        if self.e is None:
            object.__setattr__(self, "e", np.ones(self.Sigma.shape[0]))

    @property
    def n(self) -> int:
        return self.Sigma.shape[0]


def _check_pd(Sigma: NDArray[np.float64], t: float) -> None:
    eig = np.linalg.eigvalsh(Sigma)
    if not (eig[0] > PD_RELATIVE_TOL * max(eig[-1], 0.0)) or eig[-1] <= 0:
        raise NotPositiveDefinite(
            f"Sigma(t) = sigma sigma^T is not positive definite at t={t} "
            f"(eigenvalues {eig[0]:.3g} .. {eig[-1]:.3g})",
            t=t,
        )


def validate(model: MarketModel) -> MarketModel:
    """Check every model invariant at t=0 and at each breakpoint.

    Returns the model unchanged; raises a :class:`ModelError` subclass naming
    the violated invariant (and the evaluation time where relevant).
    """
    n = model.n
    if len(model.mu.shape) != 1:
        raise DimensionMismatch(f"mu must be an n-vector, got shape {model.mu.shape}")
    if len(model.sigma.shape) != 2 or model.sigma.shape[0] != n:
        raise DimensionMismatch(f"sigma must be {n} x k, got shape {model.sigma.shape}")
    k = model.k
    if model.rho.shape != (k,):
        raise DimensionMismatch(f"rho must have length k={k}, got {model.rho.shape}")
    for name in ("a", "b", "lam"):
        if getattr(model, name).shape != ():
            raise DimensionMismatch(f"{name} must be scalar-valued")
    rr = float(model.rho @ model.rho)
    if rr > 1.0 + RHO_NORM_TOL:
        raise CorrelationOutOfRange(f"rho^T rho = {rr:.6g} > 1")
    if model.r is not None and not model.r >= 0:
        raise InvalidParameter(f"riskless rate r={model.r} must be >= 0")
    for t in model.breakpoints:
        for name in ("b", "lam"):
            v = getattr(model, name).scalar(t)
            if not v >= 0:
                raise InvalidParameter(f"{name}({t}) = {v} must be >= 0")
        if not np.all(np.isfinite(model.mu(t))) or not np.all(np.isfinite(model.sigma(t))):
            raise InvalidParameter(f"non-finite coefficients at t={t}")
        s = model.sigma(t)
        _check_pd(s @ s.T, t)
    return model


def sigma_bundle(model: MarketModel, t: float = 0.0) -> SigmaBundle:
    """Sigma, Sigma^{-1} (via Cholesky) and sigma @ rho at time ``t``."""
    s = model.sigma(t)
    Sigma = s @ s.T
    cf = scipy.linalg.cho_factor(Sigma, lower=True)
    SigmaInv = scipy.linalg.cho_solve(cf, np.eye(Sigma.shape[0]))
    SigmaInv = 0.5 * (SigmaInv + SigmaInv.T)
    return SigmaBundle(Sigma=Sigma, SigmaInv=SigmaInv, sigma_rho=s @ model.rho)


def random_model(rng: np.random.Generator, n: int, k: Optional[int] = None,
                 riskless: bool = True, b: Optional[float] = None) -> MarketModel:
    """Draw a well-conditioned random constant-coefficient model.

    Handy for property tests and the decomposition verifier.
    """
    k = n if k is None else k
    sigma = rng.uniform(-0.1, 0.1, size=(n, k))
    sigma[:, :n] += np.diag(rng.uniform(0.15, 0.35, size=n))
    rho = rng.normal(size=k)
    rho *= rng.uniform(0.0, 0.95) / np.linalg.norm(rho)
    return validate(MarketModel(
        mu=rng.uniform(0.02, 0.12, size=n),
        sigma=sigma,
        r=float(rng.uniform(0.0, 0.04)) if riskless else None,
        a=float(rng.uniform(-0.02, 0.04)),
        b=float(rng.uniform(0.0, 0.3)) if b is None else b,
        rho=rho,
        lam=float(rng.uniform(0.01, 0.1)),
    ))
