"""Fund vectors and the two-fund split for a two-asset market.

Run: python3 demos/01_fund_vectors.py
"""
# %%
import numpy as np

from lifetime_ruin.fundalg import (
    ValueDerivatives,
    alpha_star_unconstrained,
    decompose_riskless,
    fund_dynamics,
    fund_vectors,
)
from lifetime_ruin.market import MarketModel, sigma_bundle, validate

np.set_printoptions(precision=6, suppress=True)

# %% [markdown]
# Two risky assets with covariance [[0.04, 0.01], [0.01, 0.09]], a riskless
# rate of 2%, and consumption with 10% volatility correlated with asset 1.

# %%
sigma = np.array([[0.20, 0.0], [0.05, np.sqrt(0.09 - 0.0025)]])
model = validate(MarketModel(mu=[0.06, 0.08], sigma=sigma, r=0.02, b=0.1, rho=[0.4, 0.0], lam=0.04))
print("Sigma =\n", sigma_bundle(model).Sigma)

# %% [markdown]
# Each vector is either a fund (weights sum to one) or a difference
# portfolio (weights sum to zero). Vectors with a riskless entry list it first.

# %%
for name, v in fund_vectors(model).items():
    print(f"{name:>7}: {v}   sum = {v.sum():.15f}")

g = fund_vectors(model)["g"]
d = fund_dynamics(g, model)
print(f"\nminimum-variance fund: drift {d.drift:.6f}, volatility row {d.vol_row}")

# %% [markdown]
# The optimal dollars can be computed directly from the first-order
# condition or by splitting wealth between two fixed funds. Both routes give
# the same allocation.

# %%
W, c = 20.0, 1.0
derivs = ValueDerivatives(first=-0.03, second=0.004)
risky = c * alpha_star_unconstrained(sigma_bundle(model), model.mu(), model.r, 0.1, W / c, derivs)
direct = np.concatenate(([W - risky.sum()], risky))
split = decompose_riskless(model, 0.0, W, -c * derivs.first / derivs.second)
print("direct feedback   :", direct)
print("two-fund flattened:", split.flatten())
print(f"max difference    : {np.max(np.abs(direct - split.flatten())):.2e}")
print(f"dollars in fund A {split.dollars_A:.4f}, in fund B {split.dollars_B:.4f}")
