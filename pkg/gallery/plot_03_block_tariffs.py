"""
From utility bills to quantities and average prices
===================================================

Survey records report what households paid.  Subtracting the fixed charge
and inverting the increasing-block schedule recovers consumption and the
average price actually paid.
"""

# %%
from easi_lab.ingest import FX_COP_PER_USD, TariffSchedule, cra_water_schedule, invert_block_tariff, variable_expenditure

V, flag = variable_expenditure(19.61, 2.96)
print("variable water expenditure", round(V, 2), "fixed charge above bill:", flag)

# %%
# A two-block schedule: 16 m3 at 0.50 USD, then 0.80 USD.
sched = TariffSchedule("water", "provider", 4, ((16, 0.50), (None, 0.80)))
inv = invert_block_tariff(11.20, sched)
print("Q =", inv.Q, "m3, average price", inv.avg_price, "re-billed", sched.bill(inv.Q))

# %%
# Altitude-dependent water blocks.
for band in ("<1000", "1000-2000", ">2000"):
    s = cra_water_schedule(band, 0.45, 0.60, 0.90)
    q, avg = invert_block_tariff(15.0, s)
    print(f"{band:>10}: blocks {[ub for ub, _ in s.blocks[:-1]]}  Q={q:.2f}  avg={avg:.4f}")

print("COP 100000 =", round(100_000 / FX_COP_PER_USD, 2), "USD")
