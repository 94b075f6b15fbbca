"""SVG figures, and reading numbers back out of them.

Writes into ./demo_figures. Run: python3 demos/06_figures.py
"""
import re
from pathlib import Path

import numpy as np

from qatlab.report import AxisMap, scaling_figure, warmdown_figure
from qatlab.stats import predict_interval
from qatlab.trainer import RunRecord, RunSpec

out = Path("demo_figures")
out.mkdir(exist_ok=True)

# fake records: a bowl in warmdown fraction, offset by bit-width, plus seed noise
rng = np.random.default_rng(3)
records = []
for bits, offset in (("FP16", 0.0), ("INT6", 0.004), ("INT4", 0.035)):
    for wd in (0.0, 0.10, 0.33, 0.50):
        for seed in (1337, 42, 0):
            spec = RunSpec(size="desk-S", bits=bits, warmdown=wd, seed=seed)
            bpb = 2.35 + offset + 0.3 * (wd - 0.4) ** 2 + rng.normal(0, 0.002)
            records.append(RunRecord(spec=spec.to_dict(), key=spec.cell_key(), final_bpb=bpb, status="completed"))

(out / "warmdown.svg").write_text(warmdown_figure(records).render())

pts = {"15M": 3.3, "30M": 3.0, "50M": 2.2, "100M": 1.8, "5M": 4.5, "350M": 1.34}
fig, fit = scaling_figure([], heldout={"5M", "350M"}, points=pts)
svg = fig.render()
(out / "scaling.svg").write_text(svg)
print("wrote", sorted(p.name for p in out.iterdir()))

# every file declares its data-to-pixel map, so coordinates can be inverted
axes = AxisMap.parse(svg)
band = re.search(r'class="pi-band" points="([^"]+)"', svg).group(1).split()
px, py = map(float, band[0].split(","))
size = axes.inv_x(px)
pred, half = predict_interval(fit, size)
print(f"band corner: size {size:.3f}M, upper {axes.inv_y(py):.6f}  (predict_interval says {pred + half:.6f})")
