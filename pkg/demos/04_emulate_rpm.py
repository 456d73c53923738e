# %% [markdown]
# Emulating the RPM deployment at several sizes
# ---------------------------------------------
# Each row gives element counts for (sensor, gateway, ingest, rt_analytics,
# storage).  5% of elements per layer misbehave, with at least one per layer,
# over three iterations.

# %%
import numpy as np

from slachain import EmulatorConfig, run_emulation

rows = [(2, 1, 1, 1, 1), (20, 10, 1, 1, 1), (100, 50, 1, 1, 1),
        (200, 100, 2, 2, 1), (500, 250, 3, 3, 2), (1000, 500, 5, 5, 4)]

results = []
for row in rows:
    report = run_emulation(EmulatorConfig.from_row(row, violation_ratio="0.05", floor_one_per_layer=True,
                                                   iterations=3, seed=42))
    results.append((report.transactions_performed, report.violations_injected,
                    report.violations_detected, report.elapsed))

table = np.array(results)
print(f"{'row':>24s} {'txs':>6s} {'injected':>9s} {'detected':>9s} {'secs':>6s}")
for row, (txs, inj, det, secs) in zip(rows, table):
    print(f"{str(row):>24s} {int(txs):6d} {int(inj):9d} {int(det):9d} {secs:6.2f}")

# %%
rate = table[:, 2] / table[:, 1]
print("detection rate per row:", rate)
print("throughput (tx/s):", np.round(table[:, 0] / table[:, 3]).astype(int))

# %% [markdown]
# The per-layer view shows where violations come from in the largest run.

# %%
for layer, s in report.per_layer.items():
    print(f"{layer:13s} elements={s['elements']:5d} methods={s['methods']} "
          f"violating/iter={s['violating_elements'] // 3:3d} injected={s['injected']:4d} detected={s['detected']:4d}")
