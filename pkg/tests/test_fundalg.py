import math

import numpy as np
import pytest
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from lifetime_ruin.errors import (
    DegenerateNormalizer,
    DegenerateSecondDerivative,
    DimensionMismatch,
    NegativeWealth,
    UnsupportedModel,
)
from lifetime_ruin.fundalg import (
    DifferenceVector,
    RelativePortfolioVector,
    ValueDerivatives,
    alpha_star_constrained,
    alpha_star_unconstrained,
    compute_f,
    compute_ftilde,
    compute_g,
    compute_gtilde,
    compute_ghat,
    compute_h,
    decompose_no_riskless,
    decompose_riskless,
    fund_dynamics,
    fund_vectors,
    reduced_hamiltonian,
)
from lifetime_ruin.market import MarketModel, random_model, sigma_bundle, validate

seeds = st.integers(0, 2**32 - 1)
dims = st.sampled_from([1, 2, 3, 5])


def bundle_of(sigma, rho=None):
    sigma = np.atleast_2d(sigma)
    n = sigma.shape[0]
    return sigma_bundle(validate(MarketModel(mu=np.zeros(n), sigma=sigma, rho=rho)))


def random_derivs(rng):
    return ValueDerivatives(-rng.uniform(1e-3, 1.0), rng.uniform(1e-3, 1.0))


def kkt_constrained(B, mu, b, z, d):
    # independent oracle: minimise the reduced Hamiltonian subject to e^T alpha = z
    n = B.n
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = d.second * B.Sigma
    K[:n, n] = K[n, :n] = 1.0
    rhs = np.concatenate((-mu * d.first + b * B.sigma_rho * (z * d.second + d.first), [z]))
    return np.linalg.solve(K, rhs)[:n]


# --------------------------------------------------------------------------
# fund vectors

def test_g_two_assets(two_asset_sigma):
    np.testing.assert_allclose(compute_g(bundle_of(two_asset_sigma)).weights, [8 / 11, 3 / 11], rtol=1e-13)


def test_g_trivial_cases():
    assert compute_g(bundle_of([[0.3]])).weights.tolist() == [1.0]
    np.testing.assert_allclose(compute_g(bundle_of(0.7 * np.eye(3))).weights, [1 / 3] * 3, rtol=1e-15)


def test_f_examples():
    assert compute_f(bundle_of([[0.2]]), [0.09]).weights.tolist() == [0.0]
    np.testing.assert_allclose(compute_f(bundle_of(np.eye(2)), [0.06, 0.02]).weights, [0.02, -0.02], atol=1e-16)


def test_h_examples():
    assert abs(compute_h(bundle_of([[0.2]], [0.5])).weights[0]) < 1e-15
    np.testing.assert_array_equal(compute_h(bundle_of(np.eye(3) * 0.2)).weights, np.zeros(3))


def test_gtilde_examples():
    B = bundle_of([[0.2]], [0.4])
    np.testing.assert_allclose(compute_gtilde(B, 0.1).weights, [0.8, 0.2], rtol=1e-14)
    np.testing.assert_array_equal(compute_gtilde(bundle_of(np.eye(3) * 0.2, [0.1, 0.2, 0.3]), 0.0).weights,
                                  [1.0, 0.0, 0.0, 0.0])


def test_ftilde_examples():
    B = bundle_of([[0.2]])
    np.testing.assert_allclose(compute_ftilde(B, [0.06], 0.02, 0.0).weights, [-1.0, 1.0], rtol=1e-14)
    np.testing.assert_array_equal(compute_ftilde(bundle_of(np.eye(2)), [0.03, 0.03], 0.03, 0.0).weights, 0.0)


def test_ghat_examples():
    assert compute_ghat(bundle_of([[0.2]]), [0.06], 0.02).weights.tolist() == [1.0]
    np.testing.assert_allclose(compute_ghat(bundle_of(np.eye(2)), [0.06, 0.03], 0.02).weights, [0.8, 0.2],
                               rtol=1e-14)
    with pytest.raises(DegenerateNormalizer):
        compute_ghat(bundle_of(np.eye(2)), [0.02, 0.02], 0.02)


def test_vector_types_enforce_sums():
    with pytest.raises(ValueError):
        RelativePortfolioVector(np.array([0.5, 0.4]))
    with pytest.raises(ValueError):
        DifferenceVector(np.array([0.5, -0.4]))
    v = RelativePortfolioVector(np.array([0.5, 0.5])) + 3.0 * DifferenceVector(np.array([0.1, -0.1]))
    np.testing.assert_allclose(v.weights, [0.8, 0.2])


@settings(max_examples=100, deadline=None)
@given(seed=seeds, n=dims, extra=st.integers(0, 2))
def test_sum_identities(seed, n, extra):
    m = random_model(np.random.default_rng(seed), n, n + extra)
    vecs = fund_vectors(m)
    for name in ("g", "gtilde", "ghat"):
        if name in vecs:
            assert abs(vecs[name].sum() - 1.0) <= 1e-12
    for name in ("f", "h", "ftilde"):
        assert abs(vecs[name].sum()) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=seeds, n=dims, scale=st.floats(1e-3, 1e3))
def test_sum_identities_scale_invariant(seed, n, scale):
    m = random_model(np.random.default_rng(seed), n)
    B = sigma_bundle(m)
    mu = m.r + scale * (m.mu() - m.r)
    B2 = type(B)(B.Sigma, B.SigmaInv, scale * B.sigma_rho)
    assert abs(compute_f(B, mu).weights.sum()) <= 1e-12 * max(1.0, scale)
    assert abs(compute_h(B2).weights.sum()) <= 1e-12 * max(1.0, scale)
    assert abs(compute_ftilde(B2, mu, m.r, m.b.scalar()).weights.sum()) <= 1e-12 * max(1.0, scale)


# --------------------------------------------------------------------------
# fund dynamics

def test_fund_dynamics_examples(two_asset_sigma):
    m = validate(MarketModel(mu=[0.06, 0.08], sigma=two_asset_sigma, r=0.02))
    d = fund_dynamics(np.array([1.0, 0.0, 0.0]), m)
    assert d.drift == 0.02 and np.all(d.vol_row == 0.0)
    g = compute_g(sigma_bundle(m))
    assert math.isclose(fund_dynamics(g, m).drift, 0.72 / 11, rel_tol=1e-13)
    with pytest.raises(DimensionMismatch):
        fund_dynamics(np.ones(4) / 4, m)


@settings(max_examples=50, deadline=None)
@given(seed=seeds, n=dims, extra=st.integers(0, 2))
def test_fund_vol_row_matches_products(seed, n, extra):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n, n + extra)
    w = rng.normal(size=n + 1)
    w /= w.sum()
    d = fund_dynamics(w, m)
    sigma = m.sigma()
    expected = [sum(w[1 + i] * sigma[i, j] for i in range(n)) for j in range(m.k)]
    np.testing.assert_allclose(d.vol_row, expected, rtol=1e-12, atol=1e-15)


# --------------------------------------------------------------------------
# controls

def test_constrained_trivial_cases(two_asset_sigma):
    B = bundle_of(two_asset_sigma, [0.3, 0.1])
    d = ValueDerivatives(-0.4, 0.2)
    np.testing.assert_allclose(alpha_star_constrained(B, [0.0, 0.0], 0.0, 7.0, d),
                               7.0 * compute_g(B).weights, rtol=1e-13)
    B1 = bundle_of([[0.25]], [0.5])
    for d in (ValueDerivatives(-3.0, 1e-4), ValueDerivatives(-1e-3, 5.0)):
        assert abs(alpha_star_constrained(B1, [0.07], 0.2, 4.5, d)[0] - 4.5) < 1e-10


@settings(max_examples=100, deadline=None)
@given(seed=seeds, n=dims, extra=st.integers(0, 2))
def test_constrained_matches_kkt_and_fund_form(seed, n, extra):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n, n + extra, riskless=False)
    B, mu, b = sigma_bundle(m), m.mu(), m.b.scalar()
    z, d = rng.uniform(0, 50), random_derivs(rng)
    alpha = alpha_star_constrained(B, mu, b, z, d)
    assert abs(alpha.sum() - z) < 1e-10
    np.testing.assert_allclose(alpha, kkt_constrained(B, mu, b, z, d), rtol=0, atol=1e-10)
    ratio = d.first / d.second
    fund_form = (z * compute_g(B).weights - ratio * compute_f(B, mu).weights
                 + (z + ratio) * b * compute_h(B).weights)
    np.testing.assert_allclose(alpha, fund_form, rtol=0, atol=1e-10)


def test_unconstrained_trivial_cases(two_asset_sigma):
    B = bundle_of(two_asset_sigma, [0.3, 0.1])
    d = ValueDerivatives(-0.4, 0.2)
    mu = np.array([0.06, 0.08])
    np.testing.assert_allclose(alpha_star_unconstrained(B, mu, 0.02, 0.0, 3.0, d),
                               2.0 * B.SigmaInv @ (mu - 0.02), rtol=1e-13)
    np.testing.assert_array_equal(alpha_star_unconstrained(B, [0.02, 0.02], 0.02, 0.0, 3.0, d), 0.0)


@settings(max_examples=60, deadline=None)
@given(seed=seeds, n=dims, extra=st.integers(0, 2))
def test_unconstrained_matches_numerical_minimiser(seed, n, extra):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n, n + extra)
    B, mu, b = sigma_bundle(m), m.mu(), m.b.scalar()
    z, d = rng.uniform(0, 50), random_derivs(rng)
    alpha = alpha_star_unconstrained(B, mu, m.r, b, z, d)

    def objective(a):
        return float(reduced_hamiltonian(B, mu, m.r, b, z, d, a))

    def gradient(a):
        return ((mu - m.r) * d.first + d.second * (B.Sigma @ a)
                - b * B.sigma_rho * (z * d.second + d.first))

    # trust-region with the exact Hessian; BFGS can stall on precision loss before 1e-8
    opt = scipy.optimize.minimize(objective, np.zeros(n), jac=gradient, hess=lambda a: d.second * B.Sigma,
                                  method="trust-exact", options=dict(gtol=1e-12, maxiter=1_000))
    assert opt.success, opt.message
    assert np.max(np.abs(opt.x - alpha)) < 1e-8 * max(1.0, np.max(np.abs(alpha)))
    # unique minimiser: any small perturbation increases the objective
    base = objective(alpha)
    for _ in range(10):
        delta = rng.normal(size=n)
        delta *= 1e-4 / np.linalg.norm(delta)
        assert objective(alpha + delta) > base


def test_second_derivative_must_be_positive():
    B = bundle_of([[0.2]])
    for second in (0.0, -1.0):
        with pytest.raises(DegenerateSecondDerivative):
            alpha_star_unconstrained(B, [0.06], 0.02, 0.0, 1.0, ValueDerivatives(-1.0, second))
        with pytest.raises(DegenerateSecondDerivative):
            alpha_star_constrained(B, [0.06], 0.0, 1.0, ValueDerivatives(-1.0, second))


# --------------------------------------------------------------------------
# decompositions

def test_decomposition_trivial_cases(two_asset_sigma):
    m = validate(MarketModel(mu=[0.06, 0.08], sigma=two_asset_sigma, r=0.02, b=0.0, rho=[0.3, 0.2]))
    B = sigma_bundle(m)
    d = decompose_no_riskless(m, 0.0, 10.0, 0.0)
    np.testing.assert_allclose(d.flatten(), 10.0 * d.fund_B.weights)
    np.testing.assert_array_equal(d.fund_B.weights, compute_g(B).weights)

    d = decompose_riskless(m, 0.0, 10.0, 4.0)
    np.testing.assert_array_equal(d.fund_B.weights, [1.0, 0.0, 0.0])
    flat = d.flatten()
    direction = B.SigmaInv @ (m.mu() - 0.02)
    np.testing.assert_allclose(flat[1:], 4.0 * direction, rtol=1e-13)
    assert math.isclose(flat[0], 10.0 - flat[1:].sum(), rel_tol=1e-13)
    # the risky part points along the tangency fund
    np.testing.assert_allclose(flat[1:] / flat[1:].sum(), compute_ghat(B, m.mu(), 0.02).weights, rtol=1e-12)

    d = decompose_riskless(m.replace(b=0.2), 0.0, 10.0, 0.0)
    np.testing.assert_allclose(d.flatten(), 10.0 * compute_gtilde(B, 0.2).weights)


def test_decomposition_errors():
    m = validate(MarketModel(mu=[0.06], sigma=[[0.2]]))
    with pytest.raises(UnsupportedModel):
        decompose_riskless(m, 0.0, 1.0, 0.5)
    with pytest.raises(NegativeWealth):
        decompose_no_riskless(m, 0.0, -1.0, 0.5)


@settings(max_examples=100, deadline=None)
@given(seed=seeds, n=dims, extra=st.integers(0, 2))
def test_decompositions_reproduce_direct_feedback(seed, n, extra):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n, n + extra)
    B, mu, b = sigma_bundle(m), m.mu(), m.b.scalar()
    W, c = rng.uniform(0, 50), rng.uniform(0.2, 5)
    d = random_derivs(rng)
    D = -c * d.first / d.second

    split = decompose_no_riskless(m, 0.0, W, D)
    assert abs(split.wealth - W) < 1e-10
    direct = c * kkt_constrained(B, mu, b, W / c, d)
    np.testing.assert_allclose(split.flatten(), direct, rtol=0, atol=1e-10)

    split = decompose_riskless(m, 0.0, W, D)
    assert abs(split.wealth - W) < 1e-10
    risky = c * alpha_star_unconstrained(B, mu, m.r, b, W / c, d)
    np.testing.assert_allclose(split.flatten(), np.concatenate(([W - risky.sum()], risky)), rtol=0, atol=1e-10)
