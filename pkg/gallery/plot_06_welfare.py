"""
Equivalent variation of the electricity surcharge
=================================================

The flat surcharge of USD 0.0012 per kWh on strata 4 to 6, evaluated at
representative households.
"""

# %%
import numpy as np

from easi_lab.datasets import colombian_electricity_tax_scenario, quantity_table_scenario
from easi_lab.welfare import aggregate_ev, model_ev, revenue

rep = revenue(quantity_table_scenario())
for k, s in enumerate(rep.strata):
    print(f"stratum {s}: Q1 {rep.Q1[k]:.2f} kWh  collection {rep.revenue[k] / 1e3:.2f}k USD")
print("total collection", round(rep.revenue_sum / 1e3, 2), "k USD")

# %%
base = aggregate_ev(colombian_electricity_tax_scenario())
print("EV per household (cents)", np.round(100 * base.ev, 2))
print("total EV (thousand USD)", round(base.total_ev_sum / 1e3, 2))

# %%
# Exact and linearised EV for a model household facing a 0.76% price rise.
from easi_lab.datagen import concave_params

params = concave_params(J=3, L=2, R=2, seed=11)
P0, P1 = np.ones(3), np.array([1.0076, 1.0, 1.0])
print("exact", model_ev(1.3, P0, P1, params, mode="exact").ev)
print("linearized", model_ev(1.3, P0, P1, params, mode="linearized").ev)
