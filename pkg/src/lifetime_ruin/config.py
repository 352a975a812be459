"""Scenario files.

Plain ``key = value`` text. Keys live in sections ``[market]``,
``[consumption]``, ``[mortality]`` and ``[scenario]``, or may be written
flat with a dotted prefix before any section header (``market.mu = 0.06``).
Vectors and matrices are comma lists (matrices row-major, ``n`` rows taken
from the length of ``mu``). A piecewise-constant coefficient separates its
segments with ``|`` and gives the segment start times in ``<key>.times``::

    [market]
    mu = 0.06, 0.08 | 0.05, 0.07
    mu.times = 0, 10
    sigma = 0.20, 0.00, 0.05, 0.29
    r = 0.02

    [consumption]
    a = 0.0
    b = 0.1
    rho = 0.4, 0.0
    c0 = 1.0

    [mortality]
    lambda = 0.04

    [scenario]
    W0 = 25
    tasks = funds, closed_form, hjb, simulate, verify_decomposition

Omitting ``r`` (or ``r = none``) gives the market without a riskless asset.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ModelError
from .market import MarketModel, ParameterCurve, validate

TASKS = ("funds", "closed_form", "hjb", "simulate", "verify_decomposition")
_TOP = "__top__"


class ConfigError(ModelError):
    code = "ConfigError"


@dataclass(frozen=True)
class Scenario:
    model: MarketModel
    W0: float
    c0: float
    tasks: tuple[str, ...]
    out_dir: Path = Path("out")
    mode: str = "with_riskless"
    seed: int = 0
    paths: int = 100_000
    dt: float = 1.0 / 250.0
    horizon: float = 200.0
    grid: int = 2001
    z_max: Optional[float] = None
    antithetic: bool = False
    bridge: bool = True
    verify_samples: int = 10_000
    source: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.tasks:
            raise ConfigError("scenario lists no tasks")
        bad = [t for t in self.tasks if t not in TASKS]
        if bad:
            raise ConfigError(f"unknown task(s) {bad}; choose from {TASKS}")
        if self.mode not in ("no_riskless", "with_riskless"):
            raise ConfigError(f"unknown mode {self.mode!r}")


def _flatten(text: str) -> dict[str, str]:
    parser = configparser.ConfigParser(default_section="__defaults__", interpolation=None,
                                       inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(f"[{_TOP}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    flat = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            name = key.lower() if section == _TOP else f"{section.lower()}.{key.lower()}"
            if name in flat:
                raise ConfigError(f"duplicate key {name}")
            flat[name] = value.strip()
    return flat


def _numbers(text: str, key: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.replace(" ", "").split(",") if x != ""])
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a comma list of numbers, got {text!r}") from exc


def _curve(flat: dict, key: str, default=None, reshape=None) -> ParameterCurve:
    if key not in flat:
        if default is None:
            raise ConfigError(f"missing required key {key}")
        return ParameterCurve.constant(default)
    pieces = [_numbers(p, key) for p in flat[key].split("|")]
    if reshape is not None:
        pieces = [reshape(p) for p in pieces]
    else:
        pieces = [p if p.size > 1 else p.reshape(()) for p in pieces]
    times_key = f"{key}.times"
    if times_key in flat:
        times = _numbers(flat[times_key], times_key)
    elif len(pieces) == 1:
        times = np.array([0.0])
    else:
        raise ConfigError(f"{key} has {len(pieces)} segments but no {times_key}")
    if len(times) != len(pieces):
        raise ConfigError(f"{times_key} has {len(times)} entries for {len(pieces)} segments")
    return ParameterCurve.piecewise(list(times), pieces)


def parse_model(flat: dict) -> MarketModel:
    mu = _curve(flat, "market.mu")
    mu = ParameterCurve(mu.times, tuple(np.atleast_1d(v) for v in mu.values))
    n = mu.shape[0]

    def as_matrix(v):
        if v.size % n:
            raise ConfigError(f"market.sigma has {v.size} entries, not a multiple of n={n}")
        return v.reshape(n, v.size // n)

    sigma = _curve(flat, "market.sigma", reshape=as_matrix)
    r_text = flat.get("market.r", "none").lower()
    r = None if r_text in ("", "none") else _get(flat, "market.r", float, None)
    k = sigma.shape[1]
    rho = _numbers(flat["consumption.rho"], "consumption.rho") if "consumption.rho" in flat else np.zeros(k)
    lam_key = "mortality.lam" if "mortality.lam" in flat else "mortality.lambda"
    model = MarketModel(
        mu=mu, sigma=sigma, r=r,
        a=_curve(flat, "consumption.a", 0.0),
        b=_curve(flat, "consumption.b", 0.0),
        rho=rho,
        lam=_curve(flat, lam_key),
    )
    return validate(model)


def _get(flat, key, cast, default):
    if key not in flat:
        return default
    try:
        return cast(flat[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {flat[key]!r}") from exc


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def parse_scenario(text: str, source: str = "") -> Scenario:
    flat = _flatten(text)
    model = parse_model(flat)
    c0 = _get(flat, "consumption.c0", float, _get(flat, "scenario.c0", float, 1.0))
    tasks = tuple(t.strip() for t in flat.get("scenario.tasks", ",".join(TASKS)).split(",") if t.strip())
    default_mode = "with_riskless" if model.has_riskless else "no_riskless"
    return Scenario(
        model=model,
        W0=_get(flat, "scenario.w0", float, 1.0),
        c0=c0,
        tasks=tasks,
        out_dir=Path(flat.get("scenario.out", "out")),
        mode=flat.get("scenario.mode", default_mode),
        seed=_get(flat, "scenario.seed", int, 0),
        paths=_get(flat, "scenario.paths", int, 100_000),
        dt=_get(flat, "scenario.dt", float, 1.0 / 250.0),
        horizon=_get(flat, "scenario.horizon", float, 200.0),
        grid=_get(flat, "scenario.grid", int, 2001),
        z_max=_get(flat, "scenario.z_max", float, None),
        antithetic=_get(flat, "scenario.antithetic", _bool, False),
        bridge=_get(flat, "scenario.bridge", _bool, True),
        verify_samples=_get(flat, "scenario.verify_samples", int, 10_000),
        source=source,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_scenario(text, source=str(path))
