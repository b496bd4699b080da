"""
Semielasticities, Slutsky matrix and elasticities
=================================================

Evaluate every derivative object at the representative household using
the published representative-point coefficients.
"""

# %%
import numpy as np

from easi_lab.datasets import representative_params
from easi_lab.elasticity import compensated_price_semi, elasticity_report, engel_curve
from easi_lab.model import EvalPoint

params = representative_params()
base = EvalPoint(p=np.zeros(4), z=np.zeros(1), y=0.0)
rep = elasticity_report(base, params)

print("goods", params.goods)
print("compensated price effects\n", np.round(rep.Gamma, 4))
print("Slutsky eigenvalues", np.round(rep.S_eigenvalues, 4), "concave:", rep.concave)
print("own-price elasticities", np.round(rep.OPE, 4))
print("expenditure elasticities", np.round(rep.EE, 4))
print("Engel aggregation", rep.point.w @ rep.EE)

# %%
# The compensated own-price effect of electricity moves with real expenditure.
for y in (-1.098, 0.0, 0.28):
    G = compensated_price_semi(EvalPoint(p=np.zeros(4), z=np.zeros(1), y=y), params)
    print(f"y = {y:+.3f}: {G[0, 0]:.4f}")

# %%
# Engel curves at base prices.
grid = np.linspace(-1, 1, 5)
print(np.round(engel_curve(params, np.zeros(1), None, grid), 4))
