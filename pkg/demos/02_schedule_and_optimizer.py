"""Learning-rate schedule shapes and the Muon orthogonalisation step.

Run: python3 demos/02_schedule_and_optimizer.py
"""
import numpy as np

from qatlab.optim import newton_schulz
from qatlab.schedule import ScheduleConfig, lr_at, lr_magnitudes, warmdown_steps

T = 9000
for frac in (0.0, 0.10, 0.33, 0.50):
    print(f"warmdown {frac:.2f}: {warmdown_steps(T, frac)} decay steps at T={T}")

lin = ScheduleConfig(T, 0.33, 100, "linear")
cos = ScheduleConfig(T, 0.33, 100, "cosine")
print("\n  step   linear  cosine")
for t in (0, 50, 100, 6030, 6500, 7515, 8500, 9000):
    print(f"{t:6d}  {lr_at(t, lin):7.4f} {lr_at(t, cos):7.4f}")

print("\nlr1x magnitudes:", lr_magnitudes("lr1x"))

# Newton-Schulz pushes the singular values of a gradient towards 1
g = np.random.default_rng(1).standard_normal((6, 10))
print("\nsingular values before", np.linalg.svd(g, compute_uv=False).round(3))
print("after 5 quintic steps ", np.linalg.svd(newton_schulz(g), compute_uv=False).round(3))
# the tuned quintic trades exactness for speed: values land near 1, not on it
