"""
Revenue-neutral progressive surcharges
======================================

Choose ordered per-stratum rates that raise the same collection with the
smallest total equivalent variation.
"""

# %%
import numpy as np

from easi_lab.datasets import colombian_electricity_tax_scenario
from easi_lab.taxopt import OptimizerConfig, compare_scenarios, optimize

baseline = colombian_electricity_tax_scenario()
res = optimize(baseline)
print("baseline theta %", np.round(100 * baseline.theta, 4))
print("optimal theta %", np.round(100 * res.theta, 4))
print("total EV", round(res.objective / 1e3, 2), "k vs", round(res.baseline_objective / 1e3, 2), "k")

# %%
# Summing EV per household without user weights spreads the rates much
# more evenly across strata.
flat = optimize(baseline, config=OptimizerConfig(weight_by_users=False))
print("unweighted theta %", np.round(100 * flat.theta, 4))
print(compare_scenarios(baseline, flat.alternative).round(3).to_string(index=False))
