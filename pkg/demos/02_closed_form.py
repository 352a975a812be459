"""Exact ruin probability for one risky asset and deterministic consumption.

Run: python3 demos/02_closed_form.py
"""
# %%
import numpy as np

from lifetime_ruin import closedform
from lifetime_ruin.market import MarketModel, validate

model = validate(MarketModel(mu=[0.06], sigma=[[0.20]], r=0.02, lam=0.04))
sol = closedform.build(model, c=1.0)

# %% [markdown]
# With r = 2%, a 4% risk premium and 20% volatility, half the squared
# market price of risk is m = 0.02 and the exponent is p = 2 + sqrt(2).

# %%
print(f"m = {sol.m:.6f}, p = {sol.p:.6f} (2 + sqrt 2 = {2 + np.sqrt(2):.6f})")
print(f"quadratic residual {sol.quadratic_residual():.1e}, safe level c/r = {sol.safe_level:g}")

# %%
print(f"\n{'w':>6} {'psi(w)':>10} {'risky $':>10}")
for w in (0, 5, 10, 25, 40, 50, 60):
    print(f"{w:6g} {float(closedform.psi(sol, w)):10.6f} {float(closedform.pi_star(sol, w)[0]):10.4f}")

# %% [markdown]
# Substituting the formulas back into the stationary equation leaves only
# rounding error.

# %%
w = np.linspace(0, 50, 1002)[1:-1]
print(f"\nmax stationary residual on 1000 points: {np.max(np.abs(closedform.stationary_residual(sol, model, w))):.1e}")

# %% [markdown]
# Only the ratio of wealth to consumption matters.

# %%
for k in (1.0, 2.0, 4.0):
    s = closedform.build(model, c=k)
    print(f"c = {k:g}, w = {25 * k:g}: psi = {float(closedform.psi(s, 25 * k)):.10f}")
