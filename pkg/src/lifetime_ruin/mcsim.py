"""Monte Carlo estimation of the probability of lifetime ruin.

Wealth is stepped with Euler-Maruyama under a feedback strategy,
consumption with exact log-Euler steps, and the death time is drawn up
front by inverting the cumulative hazard. A path is *ruined* if wealth is
observed at or below zero at a step end before death (or, with the
default ``bridge=True``, if the Brownian bridge between two positive step
ends dips below zero), *died solvent* if death comes first, and
*censored* if neither happens before the horizon (censored paths count as
not ruined).

Every path owns a SplitMix64 stream keyed by ``(seed, path index)``, so a
run is bit-reproducible whatever the number of worker threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np
from numpy.typing import ArrayLike, NDArray

from .closedform import ClosedFormSolution
from .errors import InvalidStrategy, ModelError
from .fundalg import RelativePortfolioVector, compute_g, compute_h, compute_gtilde
from .hjb import RuinSolution
from .market import MarketModel, ParameterCurve, sigma_bundle, validate

# the bundled TBB is too old for numba and only produces a warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

RUINED, DIED_SOLVENT, CENSORED = 0, 1, 2
OUTCOME_NAMES = ("ruined", "died_solvent", "censored")
CONSTRAINT_TOL = 1e-8
BRIDGE_CUTOFF = 40.0  # exp(-40) ~ 4e-18: crossing test skipped beyond this


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    dt: float = 1.0 / 250.0
    horizon: float = 200.0
    seed: int = 0
    antithetic: bool = False
    bridge: bool = True

    def __post_init__(self):
        if self.n_paths < 1:
            raise ModelError(f"n_paths must be >= 1, got {self.n_paths}")
        if not self.dt > 0:
            raise ModelError(f"dt must be > 0, got {self.dt}")
        if not self.horizon >= 100 * self.dt:
            raise ModelError(f"horizon {self.horizon} must be at least 100 * dt")
        if not 0 <= self.seed < 2**64:
            raise ModelError("seed must fit in an unsigned 64-bit integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class SimResult:
    ruin_estimate: float
    std_error: float
    counts: tuple[int, int, int]
    paths: int
    config: SimConfig = field(repr=False, default=None)
    outcome: Optional[NDArray[np.int8]] = field(repr=False, default=None)
    death_time: Optional[NDArray[np.float64]] = field(repr=False, default=None)
    ruin_time: Optional[NDArray[np.float64]] = field(repr=False, default=None)

    @classmethod
    def from_counts(cls, counts: Sequence[int], **kw) -> "SimResult":
        ruined, died, cens = (int(x) for x in counts)
        n = ruined + died + cens
        p = ruined / n
        return cls(ruin_estimate=p, std_error=math.sqrt(p * (1.0 - p) / n),
                   counts=(ruined, died, cens), paths=n, **kw)

    @property
    def censored_fraction(self) -> float:
        return self.counts[2] / self.paths


# --------------------------------------------------------------------------
# strategies

@dataclass(frozen=True)
class Strategy:
    """Feedback rule returning risky-asset dollars from ``(W, c, t)``.

    Build with one of the class methods; ``kind`` is one of
    ``closed_form_feedback``, ``hjb_policy``, ``fixed_mix``, ``two_fund``.
    """

    kind: str
    params: dict

    @classmethod
    def closed_form_feedback(cls, sol: ClosedFormSolution) -> "Strategy":
        # uses the current consumption rate, so it is valid for any c
        return cls("closed_form_feedback", dict(
            inv_r=1.0 / sol.r, inv_pm1=1.0 / (sol.p - 1.0), direction=np.array(sol.risky_direction)))

    @classmethod
    def fixed_mix(cls, weights: ArrayLike) -> "Strategy":
        """Constant fractions of wealth in each risky asset (rest riskless)."""
        return cls("fixed_mix", dict(weights=np.atleast_1d(np.asarray(weights, dtype=np.float64))))

    @classmethod
    def hjb_policy(cls, sol: RuinSolution, model: MarketModel) -> "Strategy":
        """Interpolated nodal policy ``pi = c * alpha(W / c)``.

        Beyond the grid the policy continues along the second fund of the
        two-fund split (the part not driven by ``-phi_z / phi_zz``).
        """
        bundle = sigma_bundle(model)
        b = model.b.scalar()
        if sol.mode == "with_riskless":
            ext = compute_gtilde(bundle, b).weights[1:]
        else:
            ext = (compute_g(bundle) + b * compute_h(bundle)).weights
        return cls("hjb_policy", dict(z_max=sol.grid.z_max, alpha=np.array(sol.policy), ext=ext))

    @classmethod
    def two_fund(cls, fund_A: RelativePortfolioVector, fund_B: RelativePortfolioVector,
                 z_grid: ArrayLike, risk_dollars: ArrayLike, includes_riskless: bool) -> "Strategy":
        """``c * R(W/c)`` dollars in ``fund_A``, the rest of wealth in ``fund_B``.

        ``risk_dollars`` tabulates ``R = -phi_z / phi_zz`` on the uniform grid
        ``z_grid`` (linear interpolation, held constant beyond the ends). With
        ``includes_riskless`` the fund vectors carry the riskless weight first.
        """
        skip = 1 if includes_riskless else 0
        z_grid = np.asarray(z_grid, dtype=np.float64)
        return cls("two_fund", dict(
            A=np.array(fund_A.weights[skip:]), B=np.array(fund_B.weights[skip:]),
            z_grid=z_grid, R=np.asarray(risk_dollars, dtype=np.float64)))

    @classmethod
    def two_fund_from_solution(cls, sol: RuinSolution, model: MarketModel) -> "Strategy":
        from .fundalg import decompose_no_riskless, decompose_riskless

        riskless = sol.mode == "with_riskless"
        split = decompose_riskless if riskless else decompose_no_riskless
        d = split(model, 0.0, 1.0, 0.0)
        return cls.two_fund(d.fund_A, d.fund_B, sol.grid.z, sol.risk_dollars, riskless)

    def pi(self, W: ArrayLike, c: ArrayLike, t: float = 0.0) -> NDArray[np.float64]:
        W = np.asarray(W, dtype=np.float64)
        c = np.asarray(c, dtype=np.float64)
        p = self.params
        if self.kind == "closed_form_feedback":
            x = np.clip(c * p["inv_r"] - W, 0.0, None) * p["inv_pm1"]
            return x[..., None] * p["direction"]
        if self.kind == "fixed_mix":
            return W[..., None] * p["weights"]
        if self.kind == "hjb_policy":
            z = W / c
            alpha = p["alpha"]
            zs = np.linspace(0.0, p["z_max"], alpha.shape[0])
            cols = [np.interp(z, zs, alpha[:, j]) for j in range(alpha.shape[1])]
            a = np.stack(cols, axis=-1) + np.clip(z - p["z_max"], 0.0, None)[..., None] * p["ext"]
            return c[..., None] * a
        if self.kind == "two_fund":
            D = c * np.interp(W / c, p["z_grid"], p["R"])
            return D[..., None] * p["A"] + (W - D)[..., None] * p["B"]
        raise ValueError(f"unknown strategy kind {self.kind!r}")

    def kernel_arrays(self, n: int):
        """Encode for the compiled kernel: (kind code, table, extension, scalars)."""
        p = self.params
        if self.kind == "closed_form_feedback":
            return 0, p["direction"][None, :].copy(), np.zeros(n), np.array([p["inv_r"], p["inv_pm1"], 0.0])
        if self.kind == "fixed_mix":
            return 2, p["weights"][None, :].copy(), np.zeros(n), np.zeros(3)
        if self.kind == "hjb_policy":
            return 1, np.ascontiguousarray(p["alpha"]), np.array(p["ext"]), np.array([p["z_max"], 0.0, 0.0])
        if self.kind == "two_fund":
            z = p["z_grid"]
            if z[0] != 0.0 or not np.allclose(np.diff(z), z[1] - z[0], rtol=1e-9, atol=0.0):
                raise InvalidStrategy("two_fund tables must live on a uniform grid starting at 0")
            table = p["R"][:, None] * p["A"] + (z - p["R"])[:, None] * p["B"]
            return 1, table, p["B"].copy(), np.array([z[-1], 0.0, 0.0])
        raise ValueError(f"unknown strategy kind {self.kind!r}")


def _check_dimensions(strategy: Strategy, model: MarketModel) -> None:
    probe = strategy.pi(np.array([1.0]), np.array([1.0]))
    if probe.shape[-1] != model.n:
        raise InvalidStrategy(f"strategy returns {probe.shape[-1]} positions for n={model.n} assets")


def check_budget(strategy: Strategy, model: MarketModel, c0: float, W_max: float) -> float:
    """Largest ``|e^T pi - W|`` over a probe set of states.

    In a market without a riskless asset any violation above 1e-8 (relative
    to wealth) raises :class:`InvalidStrategy`.
    """
    W = np.linspace(0.0, W_max, 257)
    c = np.full_like(W, c0)
    gap = np.abs(strategy.pi(W, c).sum(axis=-1) - W)
    worst = float(np.max(gap / np.maximum(1.0, W)))
    if not model.has_riskless and worst > CONSTRAINT_TOL:
        raise InvalidStrategy(f"strategy violates e^T pi = W by {worst:.3g} without a riskless asset")
    return worst


# --------------------------------------------------------------------------
# random primitives (numpy versions, used directly and as test references)

def correlated_increments(rng: np.random.Generator, rho: ArrayLike, dt: float,
                          size: Optional[int] = None):
    """Brownian increments ``dB`` (k-vector) and ``dB^c`` with ``corr(dB^c, dB_i) = rho_i``."""
    rho = np.asarray(rho, dtype=np.float64)
    k = rho.size
    shape = (k,) if size is None else (size, k)
    sq = math.sqrt(dt)
    dB = rng.standard_normal(shape) * sq
    perp = math.sqrt(max(0.0, 1.0 - float(rho @ rho)))
    extra = rng.standard_normal(() if size is None else (size,)) * sq
    dBc = dB @ rho + perp * extra
    return dB, dBc


def simulate_death(rng: np.random.Generator, lam: ParameterCurve, horizon: float,
                   size: Optional[int] = None) -> NDArray[np.float64]:
    """Death times by inverting the cumulative hazard; ``inf`` marks censoring."""
    E = rng.exponential(1.0, size=size)
    t = lam.inverse_integral(E)
    return np.where(t < horizon, t, np.inf)


# --------------------------------------------------------------------------
# compiled kernel

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


@numba.njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, inline="always")
def _uniform(state):
    # state is a length-1 uint64 array holding the SplitMix64 counter
    state[0] += _GOLDEN
    return (float(_mix64(state[0]) >> np.uint64(11)) + 0.5) * _INV53


@numba.njit(cache=True)
def _normals(state, spare, out):
    # Marsaglia polar method; ``spare`` = [has_value, value] carries the
    # second normal of each pair over to the next call
    for i in range(out.shape[0]):
        if spare[0] != 0.0:
            out[i] = spare[1]
            spare[0] = 0.0
            continue
        while True:
            u = 2.0 * _uniform(state) - 1.0
            v = 2.0 * _uniform(state) - 1.0
            q = u * u + v * v
            if 0.0 < q < 1.0:
                break
        f = math.sqrt(-2.0 * math.log(q) / q)
        out[i] = u * f
        spare[0] = 1.0
        spare[1] = v * f


@numba.njit(cache=True)
def _death_time(E, lam_start, lam_val):
    acc = 0.0
    S = lam_start.shape[0]
    for j in range(S):
        rate = lam_val[j]
        if j + 1 < S:
            width = lam_start[j + 1] - lam_start[j]
            if rate > 0.0 and acc + rate * width >= E:
                return lam_start[j] + (E - acc) / rate
            acc += rate * width
        elif rate > 0.0:
            return lam_start[j] + (E - acc) / rate
    return np.inf


@numba.njit(cache=True, parallel=True)
def _kernel(n_paths, n_steps, dt, seed, antithetic, bridge, W0, c0, r,
            seg_start, mu_s, sig_s, a_s, b_s, rho, rho_perp, lam_start, lam_val,
            kind, table, ext, scal, outcome, t_death, t_ruin):
    n = mu_s.shape[1]
    k = sig_s.shape[2]
    S = seg_start.shape[0]
    sqdt = math.sqrt(dt)
    horizon = n_steps * dt
    draw_c = False
    growth = np.empty(S)
    for j in range(S):
        growth[j] = math.exp(a_s[j] * dt)
        if b_s[j] != 0.0:
            draw_c = True
    n_table = table.shape[0]
    for i in numba.prange(n_paths):
        stream = i // 2 if antithetic else i
        sign = -1.0 if (antithetic and (i % 2 == 1)) else 1.0
        state = np.empty(1, dtype=np.uint64)
        spare = np.zeros(2)
        # separate stream for bridge draws keeps antithetic pairs aligned
        bstate = np.empty(1, dtype=np.uint64)
        state[0] = _mix64(np.uint64(seed) ^ _mix64(np.uint64(stream) + _GOLDEN))
        bstate[0] = _mix64(state[0] ^ _M2)
        u = _uniform(state)
        E = -math.log(1.0 - u) if sign < 0 else -math.log(u)
        td = _death_time(E, lam_start, lam_val)
        t_death[i] = td
        t_ruin[i] = np.inf
        if td >= horizon:
            steps = n_steps
        else:
            steps = int(math.floor(td / dt))
        z = np.empty(k + 1)
        pi = np.empty(n)
        W = W0
        c = c0
        seg = 0
        res = CENSORED if td >= horizon else DIED_SOLVENT
        for s in range(steps):
            t = s * dt
            while seg + 1 < S and seg_start[seg + 1] <= t:
                seg += 1
            # strategy
            if kind == 0:
                x = c * scal[0] - W
                if x < 0.0:
                    x = 0.0
                for q in range(n):
                    pi[q] = x * scal[1] * table[0, q]
            elif kind == 1:
                zz = W / c
                if zz >= scal[0]:
                    for q in range(n):
                        pi[q] = c * (table[n_table - 1, q] + (zz - scal[0]) * ext[q])
                else:
                    if zz < 0.0:
                        zz = 0.0
                    pos = zz / scal[0] * (n_table - 1)
                    j0 = int(pos)
                    if j0 >= n_table - 1:
                        j0 = n_table - 2
                    w1 = pos - j0
                    for q in range(n):
                        pi[q] = c * ((1.0 - w1) * table[j0, q] + w1 * table[j0 + 1, q])
            else:
                for q in range(n):
                    pi[q] = W * table[0, q]
            if draw_c:
                _normals(state, spare, z)
            else:
                _normals(state, spare, z[:k])
            drift = r * W - c
            for q in range(n):
                drift += pi[q] * (mu_s[seg, q] - r)
            shock = 0.0
            var = 0.0
            for col in range(k):
                exposure = 0.0
                for q in range(n):
                    exposure += pi[q] * sig_s[seg, q, col]
                shock += exposure * sign * z[col]
                var += exposure * exposure
            W_prev = W
            W = W + drift * dt + shock * sqdt
            if draw_c:
                bc = b_s[seg]
                dbc = rho_perp * sign * z[k]
                for col in range(k):
                    dbc += rho[col] * sign * z[col]
                c = c * math.exp((a_s[seg] - 0.5 * bc * bc) * dt + bc * dbc * sqdt)
            else:
                c = c * growth[seg]
            crossed = W <= 0.0
            if not crossed and bridge and var > 0.0:
                # Brownian-bridge probability of an unobserved dip below zero
                x = 2.0 * W_prev * W / (var * dt)
                if x < BRIDGE_CUTOFF:
                    crossed = _uniform(bstate) < math.exp(-x)
            if crossed:
                res = RUINED
                t_ruin[i] = (s + 1) * dt
                break
        outcome[i] = res


def _segments(model: MarketModel, horizon: float):
    starts = np.array([t for t in model.breakpoints if t < horizon] or [0.0])
    mu = np.array([model.mu(t) for t in starts])
    sig = np.array([model.sigma(t) for t in starts])
    a = np.array([model.a.scalar(t) for t in starts])
    b = np.array([model.b.scalar(t) for t in starts])
    return starts, mu, sig, a, b


def run(model: MarketModel, strategy: Strategy, W0: float, c0: float,
        cfg: SimConfig = SimConfig(), keep_paths: bool = False) -> SimResult:
    """Estimate the probability of lifetime ruin from ``(W0, c0)`` at time 0."""
    validate(model)
    if not W0 > 0 or not c0 > 0:
        raise ModelError(f"need W0 > 0 and c0 > 0, got W0={W0}, c0={c0}")
    _check_dimensions(strategy, model)
    check_budget(strategy, model, c0, max(2.0 * W0, 1.0))
    starts, mu, sig, a, b = _segments(model, cfg.horizon)
    kind, table, ext, scal = strategy.kernel_arrays(model.n)
    rho = np.array(model.rho)
    rho_perp = math.sqrt(max(0.0, 1.0 - float(rho @ rho)))
    lam_start = np.array(model.lam.times)
    lam_val = np.array([float(v) for v in model.lam.values])
    outcome = np.empty(cfg.n_paths, dtype=np.int8)
    t_death = np.empty(cfg.n_paths)
    t_ruin = np.empty(cfg.n_paths)
    _kernel(cfg.n_paths, cfg.n_steps, cfg.dt, np.uint64(cfg.seed), cfg.antithetic, cfg.bridge,
            float(W0), float(c0), float(model.r or 0.0), starts, mu, sig, a, b, rho, rho_perp,
            lam_start, lam_val, kind, np.ascontiguousarray(table, dtype=np.float64),
            np.asarray(ext, dtype=np.float64), np.asarray(scal, dtype=np.float64),
            outcome, t_death, t_ruin)
    counts = np.bincount(outcome, minlength=3)
    extra = dict(outcome=outcome, death_time=t_death, ruin_time=t_ruin) if keep_paths else {}
    return SimResult.from_counts(counts, config=cfg, **extra)


# --------------------------------------------------------------------------
# reporting

@dataclass(frozen=True)
class ComparisonRow:
    label: str
    estimate: float
    std_error: float
    z_score: float
    flagged: bool


@dataclass(frozen=True)
class ComparisonReport:
    oracle: float
    rows: tuple[ComparisonRow, ...]

    @property
    def any_flagged(self) -> bool:
        return any(r.flagged for r in self.rows)

    def to_text(self) -> str:
        lines = [f"{'label':<24}{'estimate':>12}{'se':>12}{'z':>9}  flag   (oracle {self.oracle:.6f})"]
        for r in self.rows:
            lines.append(f"{r.label:<24}{r.estimate:>12.6f}{r.std_error:>12.6f}{r.z_score:>9.2f}  "
                         + ("*" if r.flagged else ""))
        return "\n".join(lines)


def compare(results: Sequence[SimResult], oracle: float, labels: Optional[Sequence[str]] = None,
            threshold: float = 3.0) -> ComparisonReport:
    """z-scores of each estimate against ``oracle``; ``|z| > threshold`` is flagged."""
    if len(results) == 0:
        raise ValueError("compare needs at least one result")
    labels = labels or [f"run{i}" for i in range(len(results))]
    rows = []
    for lab, res in zip(labels, results):
        diff = res.ruin_estimate - oracle
        if res.std_error > 0:
            z = diff / res.std_error
        else:
            z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
        rows.append(ComparisonRow(lab, res.ruin_estimate, res.std_error, z, abs(z) > threshold))
    return ComparisonReport(oracle, tuple(rows))


SIM_CSV_COLUMNS = ("scenario", "estimate", "std_error", "ruined", "died_solvent",
                   "censored", "paths", "seed", "dt", "horizon")


def write_sim_csv(path, rows: Sequence[tuple[str, SimResult]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SIM_CSV_COLUMNS)
        for name, res in rows:
            cfg = res.config or SimConfig()
            w.writerow([name, repr(res.ruin_estimate), repr(res.std_error), *res.counts,
                        res.paths, cfg.seed, repr(cfg.dt), repr(cfg.horizon)])


def write_path_dump(path, res: SimResult) -> None:
    """Per-path outcomes for debugging; needs ``run(..., keep_paths=True)``."""
    if res.outcome is None:
        raise ValueError("result was produced without keep_paths=True")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "outcome", "death_time", "ruin_time"])
        for i, (o, td, tr) in enumerate(zip(res.outcome, res.death_time, res.ruin_time)):
            w.writerow([i, OUTCOME_NAMES[o], "" if np.isinf(td) else repr(float(td)),
                        "" if np.isinf(tr) else repr(float(tr))])
