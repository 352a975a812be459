"""Policy-iteration solver for the reduced (one state variable) HJB equation.

The state is ``z = w / c``. For a frozen feedback control ``alpha(z)`` the
reduced ruin probability solves the linear ODE

    lam v = drift(z, alpha) v_z + diffusion(z, alpha) v_zz,
    v(0) = 1,  v(z_max) = 0,

with

    drift     = (r + b^2 - a) z - 1 + alpha^T (mu - r e - b sigma rho)
    diffusion = 1/2 (b^2 z^2 + alpha^T Sigma alpha - 2 b z alpha^T sigma rho)

(``r = 0`` when there is no riskless asset, in which case the control must
satisfy ``e^T alpha = z``). The first-order term is upwinded, so each frozen
policy gives a tridiagonal M-matrix and the discrete maximum principle keeps
``v`` in ``[0, 1]``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .errors import InstabilityDetected, InvalidParameter, NonConvergence, OutOfDomain, UnsupportedModel
from .fundalg import (
    ValueDerivatives,
    alpha_star_constrained,
    alpha_star_unconstrained,
    compute_g,
)
from .market import MarketModel, sigma_bundle, validate

logger = logging.getLogger(__name__)

MODES = ("no_riskless", "with_riskless")
SECOND_DERIVATIVE_FLOOR = 1e-12
BOUNDS_SLACK = 1e-9
DEFAULT_KAPPA = 3.0
DEFAULT_Z_MAX_NO_RISKLESS = 100.0


@dataclass(frozen=True)
class GridSpec:
    z_max: float
    nodes: int

    def __post_init__(self):
        if self.nodes < 3:
            raise InvalidParameter(f"grid needs at least 3 nodes, got {self.nodes}")
        if not self.z_max > 0:
            raise InvalidParameter(f"z_max must be > 0, got {self.z_max}")

    @property
    def dz(self) -> float:
        return self.z_max / (self.nodes - 1)

    @property
    def z(self) -> NDArray[np.float64]:
        return np.linspace(0.0, self.z_max, self.nodes)


@dataclass(frozen=True)
class RuinSolution:
    """Converged grid solution.

    ``risk_dollars[i]`` is ``-phi_z / phi_zz`` at node ``i`` as used by the
    final policy update, i.e. the dollars per unit consumption placed in the
    first fund of the two-fund split.
    """

    grid: GridSpec
    phi: NDArray[np.float64]
    policy: NDArray[np.float64]
    iterations: int
    residual: float
    mode: str
    risk_dollars: NDArray[np.float64] = field(repr=False, default=None)
    history: tuple[float, ...] = field(repr=False, default=())

    @property
    def z(self) -> NDArray[np.float64]:
        return self.grid.z

    def value_at(self, z) -> NDArray[np.float64]:
        z = np.asarray(z, dtype=np.float64)
        return np.interp(z, self.grid.z, self.phi, right=0.0)


class _Operator:
    """Frozen-coefficient pieces of the reduced equation for one model and mode."""

    def __init__(self, model: MarketModel, mode: str, grid: GridSpec):
        self.mode = mode
        self.bundle = sigma_bundle(model)
        self.mu = model.mu()
        self.r = model.r if mode == "with_riskless" else 0.0
        self.a = model.a.scalar()
        self.b = model.b.scalar()
        self.lam = model.lam.scalar()
        self.z = grid.z
        self.h = grid.dz
        self.excess = self.mu - self.r - self.b * self.bundle.sigma_rho
        self.base_drift = (self.r + self.b**2 - self.a) * self.z - 1.0

    def controls(self, z, first, second) -> NDArray[np.float64]:
        d = ValueDerivatives(first, second)
        if self.mode == "with_riskless":
            return alpha_star_unconstrained(self.bundle, self.mu, self.r, self.b, z, d)
        return alpha_star_constrained(self.bundle, self.mu, self.b, z, d)

    def initial_policy(self) -> NDArray[np.float64]:
        if self.mode == "with_riskless":
            return np.zeros((self.z.size, self.bundle.n))
        return self.z[:, None] * compute_g(self.bundle).weights

    def drift(self, alpha, idx=slice(None)):
        return self.base_drift[idx] + alpha @ self.excess

    def diffusion(self, alpha, idx=slice(None)):
        z = self.z[idx]
        quad = np.einsum("...i,ij,...j->...", alpha, self.bundle.Sigma, alpha)
        var = self.b**2 * z**2 + quad - 2.0 * self.b * z * (alpha @ self.bundle.sigma_rho)
        return 0.5 * np.maximum(var, 0.0)

    def hamiltonian(self, alpha, dp, dm, d2, idx):
        """Upwinded discrete generator ``L^alpha v`` at interior nodes."""
        dr = self.drift(alpha, idx)
        return np.maximum(dr, 0.0) * dp + np.minimum(dr, 0.0) * dm + self.diffusion(alpha, idx) * d2

    def solve_linear(self, alpha) -> NDArray[np.float64]:
        N, h = self.z.size, self.h
        inner = slice(1, N - 1)
        dr = self.drift(alpha[inner], inner)
        df = self.diffusion(alpha[inner], inner)
        lower = np.maximum(-dr, 0.0) / h + df / h**2
        upper = np.maximum(dr, 0.0) / h + df / h**2
        # interior unknowns only; Dirichlet values v(0)=1, v(z_max)=0 go to the rhs
        m = N - 2
        ab = np.zeros((3, m))
        ab[1] = self.lam + lower + upper
        ab[0, 1:] = -upper[:-1]
        ab[2, :-1] = -lower[1:]
        rhs = np.zeros(m)
        rhs[0] = lower[0]
        v = np.empty(N)
        v[0], v[-1] = 1.0, 0.0
        try:
            v[1:-1] = scipy.linalg.solve_banded((1, 1), ab, rhs)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise InstabilityDetected(f"frozen-policy system is singular: {exc}") from exc
        return v

    def controls_from_ratio(self, z, ratio) -> NDArray[np.float64]:
        # the minimiser depends on the derivatives only through phi_z / phi_zz
        return self.controls(z, -ratio, np.ones_like(ratio))

    def improve(self, v, alpha_old=None):
        """Policy update from the first-order condition on discrete derivatives.

        Each interior node tries the closed-form minimiser with the forward and
        with the backward first difference and keeps the one consistent with
        its own drift sign (lowest discrete generator if ambiguous). When
        ``alpha_old`` is given, a node only switches if that lowers the
        discrete generator, which makes the value iterates nonincreasing.

        Where the centred second difference is not above
        ``SECOND_DERIVATIVE_FLOOR`` the ratio ``-phi_z / phi_zz`` is carried
        over from the nearest node where it is defined.
        """
        N, h = self.z.size, self.h
        inner = slice(1, N - 1)
        zi = self.z[inner]
        dp = (v[2:] - v[1:-1]) / h
        dm = (v[1:-1] - v[:-2]) / h
        d2 = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
        curved = d2 > SECOND_DERIVATIVE_FLOOR
        safe_d2 = np.where(curved, d2, 1.0)
        r_f = _fill_nearest(-dp / safe_d2, curved)
        r_b = _fill_nearest(-dm / safe_d2, curved)
        a_f = self.controls_from_ratio(zi, r_f)
        a_b = self.controls_from_ratio(zi, r_b)
        h_f = self.hamiltonian(a_f, dp, dm, d2, inner)
        h_b = self.hamiltonian(a_b, dp, dm, d2, inner)
        ok_f = self.drift(a_f, inner) >= 0.0
        ok_b = self.drift(a_b, inner) <= 0.0
        use_f = np.where(ok_f != ok_b, ok_f, h_f < h_b)
        a_new = np.where(use_f[:, None], a_f, a_b)
        ratio = np.where(use_f, r_f, r_b)
        if alpha_old is not None:
            h_new = np.where(use_f, h_f, h_b)
            h_old = self.hamiltonian(alpha_old[inner], dp, dm, d2, inner)
            keep = ~(h_new < h_old)
            a_new = np.where(keep[:, None], alpha_old[inner], a_new)
        ratio = np.concatenate(([ratio[0]], ratio, [ratio[-1]]))
        alpha = np.empty((N, self.bundle.n))
        alpha[inner] = a_new
        # boundary nodes: one-sided limit of the interior ratio
        ends = np.array([0, N - 1])
        alpha[ends] = self.controls_from_ratio(self.z[ends], ratio[ends])
        return alpha, ratio


def _fill_nearest(values: NDArray[np.float64], valid: NDArray[np.bool_]) -> NDArray[np.float64]:
    if valid.all():
        return values
    if not valid.any():
        return np.zeros_like(values)
    idx = np.flatnonzero(valid)
    pos = np.arange(values.size)
    right = np.clip(np.searchsorted(idx, pos), 0, idx.size - 1)
    left = np.clip(right - 1, 0, idx.size - 1)
    nearest = np.where(np.abs(idx[left] - pos) <= np.abs(idx[right] - pos), idx[left], idx[right])
    return values[nearest]


def default_grid(model: MarketModel, mode: str, nodes: int = 2001,
                 kappa: float = DEFAULT_KAPPA) -> GridSpec:
    """Natural truncation for ``mode``.

    With a riskless asset and ``b = 0`` the safe level ``1/r`` closes the
    domain exactly; with ``b > 0`` the domain is cut at ``kappa / r``.
    Without a riskless asset there is no natural scale and a fixed
    ``z_max = 100`` years of consumption is used.
    """
    if mode == "with_riskless" and model.r and model.r > 0:
        b = model.b.scalar()
        return GridSpec(1.0 / model.r if b == 0.0 else kappa / model.r, nodes)
    return GridSpec(DEFAULT_Z_MAX_NO_RISKLESS, nodes)


def _check_mode(model: MarketModel, mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "with_riskless" and not model.has_riskless:
        raise UnsupportedModel("mode 'with_riskless' needs a riskless rate r")
    if not model.is_time_homogeneous:
        raise UnsupportedModel("the HJB solver handles time-homogeneous coefficients only")


def solve(model: MarketModel, mode: str = "with_riskless", grid: Optional[GridSpec] = None,
          tol: float = 1e-10, max_iter: int = 200) -> RuinSolution:
    """Solve the stationary reduced HJB equation by policy iteration."""
    validate(model)
    _check_mode(model, mode)
    grid = default_grid(model, mode) if grid is None else grid
    op = _Operator(model, mode, grid)

    alpha = op.initial_policy()
    v = op.solve_linear(alpha)
    history = []
    for it in range(1, max_iter + 1):
        alpha, _ = op.improve(v, alpha)
        v_new = op.solve_linear(alpha)
        if not np.all(np.isfinite(v_new)) or v_new.min() < -BOUNDS_SLACK or v_new.max() > 1 + BOUNDS_SLACK:
            raise InstabilityDetected(
                f"phi left [0, 1] at iteration {it}: range [{np.nanmin(v_new):.3g}, {np.nanmax(v_new):.3g}]"
            )
        delta = float(np.max(np.abs(v_new - v)))
        history.append(delta)
        v = v_new
        logger.debug("policy iteration %d: max change %.3e", it, delta)
        if delta < tol:
            break
    else:
        raise NonConvergence(f"no convergence after {max_iter} iterations (last change {history[-1]:.3e})")

    alpha, ratio = op.improve(v)
    sol = RuinSolution(grid=grid, phi=v, policy=alpha, iterations=it, residual=np.nan,
                       mode=mode, risk_dollars=ratio, history=tuple(history))
    res = hjb_residual(sol, model, mode)
    return RuinSolution(grid=grid, phi=v, policy=alpha, iterations=it,
                        residual=float(np.nanmax(np.abs(res))), mode=mode,
                        risk_dollars=ratio, history=tuple(history))


def hjb_residual(sol: RuinSolution, model: MarketModel, mode: Optional[str] = None) -> NDArray[np.float64]:
    """Pointwise residual of the nonlinear equation with centred differences.

    Uses the stored policy. Boundary entries are NaN (not part of the equation).
    """
    mode = sol.mode if mode is None else mode
    op = _Operator(model, mode, sol.grid)
    v, h = sol.phi, sol.grid.dz
    inner = slice(1, v.size - 1)
    d1 = (v[2:] - v[:-2]) / (2.0 * h)
    d2 = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    alpha = sol.policy[inner]
    gen = op.drift(alpha, inner) * d1 + op.diffusion(alpha, inner) * d2
    out = np.full(v.size, np.nan)
    out[inner] = op.lam * v[inner] - gen
    return out


def policy_at(sol: RuinSolution, z: float) -> NDArray[np.float64]:
    """Linear interpolation of the nodal policy."""
    if not 0.0 <= z <= sol.grid.z_max:
        raise OutOfDomain(f"z={z} outside [0, {sol.grid.z_max}]")
    zs = sol.grid.z
    return np.array([np.interp(z, zs, sol.policy[:, j]) for j in range(sol.policy.shape[1])])


@dataclass(frozen=True)
class TruncationReport:
    z_max: float
    max_change: float
    compared_up_to: float


def truncation_sensitivity(model: MarketModel, mode: str = "with_riskless",
                           grid: Optional[GridSpec] = None, **solve_kw) -> TruncationReport:
    """Re-solve with ``z_max`` doubled (same spacing) and compare on ``[0, z_max/2]``."""
    grid = default_grid(model, mode) if grid is None else grid
    wide = GridSpec(2.0 * grid.z_max, 2 * grid.nodes - 1)
    base = solve(model, mode, grid, **solve_kw)
    ext = solve(model, mode, wide, **solve_kw)
    half = grid.z <= 0.5 * grid.z_max
    change = float(np.max(np.abs(base.phi[half] - ext.phi[: grid.nodes][half])))
    return TruncationReport(z_max=grid.z_max, max_change=change, compared_up_to=0.5 * grid.z_max)


def write_csv(sol: RuinSolution, path, model: Optional[MarketModel] = None) -> None:
    """Columns ``z, phi, alpha_1..alpha_n, residual`` (residual blank at the boundaries)."""
    res = hjb_residual(sol, model) if model is not None else np.full(sol.phi.size, np.nan)
    n = sol.policy.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z", "phi"] + [f"alpha_{j + 1}" for j in range(n)] + ["residual"])
        for i, z in enumerate(sol.grid.z):
            r = "" if np.isnan(res[i]) else repr(float(res[i]))
            w.writerow([repr(float(z)), repr(float(sol.phi[i]))]
                       + [repr(float(x)) for x in sol.policy[i]] + [r])
