"""
Implicit utility, Hicksian shares and the Marshallian fixed point
=================================================================

Budget shares depend on an implicit utility ``y`` that is itself a function
of the shares.  Solving that fixed point gives Marshallian demand.
"""

# %%
import numpy as np

from easi_lab.datagen import concave_params
from easi_lab.model import hicksian_shares, implicit_utility, log_cost, solve_marshallian_shares

params = concave_params(J=3, L=2, R=2, seed=11)
p = np.array([0.10, -0.05, 0.02])  # log prices relative to the base
z = np.array([0.3, -0.2])
x = 0.25  # log expenditure

# %%
# Marshallian shares and the implicit utility they imply.
w, y = solve_marshallian_shares(x, p, z, None, params)
print("shares", np.round(w, 6), "sum", w.sum())
print("y", y, "recomputed", implicit_utility(x, p, w, z, params))

# %%
# The log cost function inverts the implicit utility.
print("log cost at y:", log_cost(y, p, z, None, params), "x:", x)

# %%
# Homogeneity: shifting every log price and log expenditure by the same
# amount leaves shares unchanged.
w2, _ = solve_marshallian_shares(x + 0.7, p + 0.7, z, None, params)
print("max share change", np.abs(w2 - w).max())
print("Hicksian shares at y=0, p=0:", hicksian_shares(0.0, np.zeros(3), np.zeros(2), None, params))
