"""Policy iteration on the reduced equation, checked against the exact solution.

Run: python3 demos/03_hjb_solver.py
"""
# %%
import numpy as np

from lifetime_ruin import closedform, hjb
from lifetime_ruin.market import MarketModel, validate

model = validate(MarketModel(mu=[0.06], sigma=[[0.20]], r=0.02, lam=0.04))
exact = closedform.build(model, 1.0)

# %% [markdown]
# The upwind scheme is first order, so halving the spacing halves the error.

# %%
prev = None
print(f"{'N':>6} {'max error':>12} {'order':>7} {'iters':>6} {'residual':>10}")
for N in (501, 1001, 2001, 4001, 8001):
    sol = hjb.solve(model, "with_riskless", hjb.GridSpec(50.0, N))
    err = np.max(np.abs(sol.phi - closedform.psi(exact, sol.z)))
    order = "" if prev is None else f"{np.log2(prev / err):.3f}"
    print(f"{N:6d} {err:12.3e} {order:>7} {sol.iterations:6d} {sol.residual:10.2e}")
    prev = err

# %% [markdown]
# The stored feedback policy tracks the exact risky dollar amount.

# %%
for z in (5.0, 25.0, 45.0):
    print(f"z = {z:4g}: solver {hjb.policy_at(sol, z)[0]:.4f}, exact {closedform.pi_star(exact, z)[0]:.4f}")

hjb.write_csv(sol, "phi_single_asset.csv", model)
print("\nwrote phi_single_asset.csv")
