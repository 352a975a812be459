import csv

import numpy as np
import pytest

from lifetime_ruin import closedform, hjb
from lifetime_ruin.errors import InvalidParameter, NonConvergence, OutOfDomain, UnsupportedModel
from lifetime_ruin.fundalg import ValueDerivatives, alpha_star_unconstrained
from lifetime_ruin.market import MarketModel, ParameterCurve, sigma_bundle, validate


@pytest.fixture(scope="module")
def oracle_case():
    model = validate(MarketModel(mu=[0.06], sigma=[[0.2]], r=0.02, lam=0.04))
    sols = {N: hjb.solve(model, "with_riskless", hjb.GridSpec(50.0, N)) for N in (1001, 2001, 4001)}
    return model, closedform.build(model, 1.0), sols


def test_grid_spec():
    g = hjb.GridSpec(10.0, 11)
    assert g.dz == 1.0 and g.z[0] == 0.0 and g.z[-1] == 10.0
    for bad in ((10.0, 2), (0.0, 11), (-1.0, 11)):
        with pytest.raises(InvalidParameter):
            hjb.GridSpec(*bad)


def test_matches_closed_form(oracle_case):
    _, cf, sols = oracle_case
    sol = sols[4001]
    assert np.max(np.abs(sol.phi - closedform.psi(cf, sol.z))) < 1e-3
    errs = [np.max(np.abs(s.phi - closedform.psi(cf, s.z))) for s in sols.values()]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 0.9)


def test_solution_invariants(oracle_case):
    for sol in oracle_case[2].values():
        assert sol.phi[0] == 1.0 and sol.phi[-1] == 0.0
        assert np.all((sol.phi >= 0) & (sol.phi <= 1))
        assert np.all(np.diff(sol.phi) <= 0)
        assert np.min(sol.phi[2:] - 2 * sol.phi[1:-1] + sol.phi[:-2]) >= -1e-8


def test_residual_small_and_shrinking(oracle_case):
    model, _, sols = oracle_case
    res = [np.nanmax(np.abs(hjb.hjb_residual(s, model))) for s in sols.values()]
    assert res[-1] < 1e-4
    assert res[0] > res[1] > res[2]
    r = hjb.hjb_residual(sols[1001], model)
    assert np.isnan(r[0]) and np.isnan(r[-1]) and np.all(np.isfinite(r[1:-1]))


def test_policy_close_to_closed_form(oracle_case):
    _, cf, sols = oracle_case
    sol = sols[4001]
    z = sol.z[200:-200]
    exact = closedform.pi_star(cf, z)[:, 0]
    assert np.max(np.abs(hjb.policy_at(sol, 25.0)[0] - closedform.pi_star(cf, 25.0)[0])) < 0.05
    assert np.max(np.abs(sol.policy[200:-200, 0] - exact)) < 0.1


def test_stored_policy_is_the_first_order_minimiser(oracle_case):
    model, _, sols = oracle_case
    sol = sols[2001]
    v, h = sol.phi, sol.grid.dz
    dp = (v[2:] - v[1:-1]) / h
    dm = (v[1:-1] - v[:-2]) / h
    d2 = (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
    B = sigma_bundle(model)
    z = sol.z[1:-1]
    ok = d2 > hjb.SECOND_DERIVATIVE_FLOOR
    fwd = alpha_star_unconstrained(B, model.mu(), model.r, 0.0, z[ok], ValueDerivatives(dp[ok], d2[ok]))
    bwd = alpha_star_unconstrained(B, model.mu(), model.r, 0.0, z[ok], ValueDerivatives(dm[ok], d2[ok]))
    stored = sol.policy[1:-1][ok]
    scale = np.maximum(1.0, np.abs(stored))
    gap = np.minimum(np.abs(stored - fwd), np.abs(stored - bwd)) / scale
    assert np.max(gap) < 1e-10


def test_policy_iteration_values_nonincreasing():
    model = validate(MarketModel(mu=[0.06, 0.09], sigma=[[0.2, 0.0], [0.05, 0.28]], r=0.02,
                                 b=0.15, rho=[0.3, -0.2], lam=0.04))
    grid = hjb.GridSpec(150.0, 801)
    op = hjb._Operator(model, "with_riskless", grid)
    alpha = op.initial_policy()
    v = op.solve_linear(alpha)
    for _ in range(30):
        alpha, _ = op.improve(v, alpha)
        v_new = op.solve_linear(alpha)
        assert np.all(v_new <= v + 1e-12)
        if np.max(np.abs(v_new - v)) < 1e-12:
            break
        v = v_new


def test_zero_risk_premium():
    # no premium: alpha = 0 and lam v = (r z - 1) v_z, so v = (1 - r z)^(lam / r)
    model = validate(MarketModel(mu=[0.02], sigma=[[0.2]], r=0.02, lam=0.04))
    sol = hjb.solve(model, "with_riskless", hjb.GridSpec(50.0, 2001))
    assert np.max(np.abs(sol.policy)) < 1e-12
    assert np.max(np.abs(sol.phi - (1 - 0.02 * sol.z) ** 2)) < 1e-3


def test_single_asset_without_riskless_is_fully_invested():
    model = validate(MarketModel(mu=[0.07], sigma=[[0.25]], b=0.1, rho=[0.3], lam=0.04))
    sol = hjb.solve(model, "no_riskless", hjb.GridSpec(100.0, 1001))
    np.testing.assert_allclose(sol.policy[:, 0], sol.z, rtol=0, atol=1e-10)
    assert sol.phi[0] == 1.0 and np.all(np.diff(sol.phi) <= 0)


def test_two_assets_without_riskless_meets_budget():
    model = validate(MarketModel(mu=[0.05, 0.09], sigma=[[0.15, 0.0], [0.06, 0.3]], b=0.1,
                                 rho=[0.2, 0.1], lam=0.04))
    sol = hjb.solve(model, "no_riskless", hjb.GridSpec(100.0, 1001))
    np.testing.assert_allclose(sol.policy.sum(axis=1), sol.z, rtol=0, atol=1e-10)
    assert np.all((sol.phi >= 0) & (sol.phi <= 1)) and np.all(np.diff(sol.phi) <= 0)


def test_stochastic_consumption_properties():
    model = validate(MarketModel(mu=[0.06], sigma=[[0.2]], r=0.02, b=0.1, rho=[0.4], lam=0.04))
    grid = hjb.default_grid(model, "with_riskless", nodes=1501)
    assert grid.z_max == pytest.approx(150.0)
    sol = hjb.solve(model, "with_riskless", grid)
    assert sol.phi[0] == 1.0 and np.all(np.diff(sol.phi) <= 0)
    assert np.min(sol.phi[2:] - 2 * sol.phi[1:-1] + sol.phi[:-2]) >= -1e-8
    assert np.all((sol.phi >= 0) & (sol.phi <= 1))


def test_policy_at_interpolates(oracle_case):
    sol = oracle_case[2][1001]
    zs = sol.z
    np.testing.assert_array_equal(hjb.policy_at(sol, zs[10]), sol.policy[10])
    mid = hjb.policy_at(sol, 0.25 * zs[10] + 0.75 * zs[11])
    np.testing.assert_allclose(mid, 0.25 * sol.policy[10] + 0.75 * sol.policy[11], rtol=1e-14)
    np.testing.assert_array_equal(hjb.policy_at(sol, 0.0), sol.policy[0])
    for z in (-0.1, 50.1):
        with pytest.raises(OutOfDomain):
            hjb.policy_at(sol, z)


def test_errors():
    model = validate(MarketModel(mu=[0.06], sigma=[[0.2]], r=0.02, lam=0.04))
    with pytest.raises(NonConvergence):
        hjb.solve(model, grid=hjb.GridSpec(50.0, 401), max_iter=1)
    with pytest.raises(UnsupportedModel):
        hjb.solve(model.replace(r=None), "with_riskless")
    with pytest.raises(UnsupportedModel):
        hjb.solve(model.replace(lam=ParameterCurve.piecewise([0, 5], [0.04, 0.05])))
    with pytest.raises(ValueError):
        hjb.solve(model, "sideways")


def test_write_csv(tmp_path, oracle_case):
    model, _, sols = oracle_case
    path = tmp_path / "phi.csv"
    hjb.write_csv(sols[1001], path, model)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["z", "phi", "alpha_1", "residual"]
    assert len(rows) == 1002
    assert rows[1][-1] == "" and rows[-1][-1] == ""
    assert float(rows[1][1]) == 1.0 and float(rows[500][3]) == pytest.approx(0.0, abs=1e-3)
