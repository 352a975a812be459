import math

import numpy as np
import pytest

from lifetime_ruin.market import MarketModel, validate

# acceptance outcomes collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []

# single-asset scenario with a known exact solution, used across the suite
R, LAM, MU, SIG = 0.02, 0.04, 0.06, 0.20
P_EXAMPLE = 2.0 + math.sqrt(2.0)
PSI_25 = 0.5**P_EXAMPLE


@pytest.fixture
def example_model() -> MarketModel:
    return validate(MarketModel(mu=[MU], sigma=[[SIG]], r=R, lam=LAM))


@pytest.fixture
def two_asset_sigma() -> np.ndarray:
    return np.array([[0.20, 0.0], [0.05, math.sqrt(0.09 - 0.0025)]])


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
