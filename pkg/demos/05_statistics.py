"""Paired penalties, the log-size fit with prediction intervals, and footprint arithmetic.

Run: python3 demos/05_statistics.py
"""
from qatlab.stats import fit_log_linear, footprint, holdout_validate, paired_penalty, predict_interval

# paired difference over shared seeds, in mBPB
int6 = {1337: 1.22080, 42: 1.22125, 0: 1.22150, 7: 1.22100, 2024: 1.22095}
fp16 = {1337: 1.21790, 42: 1.21805, 0: 1.21830, 7: 1.21820, 2024: 1.21780}
p = paired_penalty(int6, fp16)
print(f"INT6 - FP16: {p.mean:+.2f} mBPB, SE {p.se:.2f}, z {p.z:.1f}, {p.verdict()}, "
      f"seeds where INT6 wins {p.votes}/{p.n}")

# penalty vs ln(size) on four sizes
points = [(15, 3.3), (30, 3.0), (50, 2.2), (100, 1.8)]
fit = fit_log_linear(points)
print(f"\npenalty = {fit.a:.3f} {fit.b:+.3f} ln(size)   slope SE {fit.slope_se:.3f}, sigma {fit.sigma:.3f}")

for size in (5, 30, 350):
    pred, half = predict_interval(fit, size)
    print(f"{size:4d}M  predicted {pred:5.2f} +- {half:.2f}")

# sizes the fit never saw
held = holdout_validate(fit, [(5, 4.50), (8, 3.98), (175, 1.24), (250, 1.20), (350, 1.34)])
for r in held.rows:
    print(f"{r.size:5.0f}M  measured {r.measured:5.2f}  residual {r.residual:+.2f}  inside {r.inside}")
print("inside the 95% interval:", held)

f = footprint(2020, 0.600, 0.30, 1.08, 132, 1.8)
print(f"\n2020 GPU-hours -> {f.energy_kwh:.0f} kWh, {f.co2_kg:.0f} kg CO2, {f.water_l:.0f} L water")
