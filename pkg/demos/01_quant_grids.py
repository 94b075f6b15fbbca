"""Fake quantisation on a tiny weight matrix.

Run: python3 demos/01_quant_grids.py
"""
import numpy as np

from qatlab import numerics as nx
from qatlab.numerics import Tensor
from qatlab.quant import INT4, INT6, INT8, channel_scales, fake_quant, grid_distance_int6, quantize_codes

rng = np.random.default_rng(0)
w = rng.standard_normal((3, 8)).round(3)
print("weights\n", w)

# one scale per output row, max|w| / 127
s = channel_scales(w)
print("row scales", s)

# INT6 and INT4 live inside the INT8 code space on coarser strides
for mode in (INT8, INT6, INT4):
    codes = quantize_codes(w, mode)
    print(f"{mode.tag} codes row 0:", codes[0], " levels available:", len(mode.levels()))

# the dequantised tensor is what the forward pass sees
q = fake_quant(w, INT6)
print("INT6 fake-quantised row 0", q[0].round(4))
print("rms distance to the INT6 grid", grid_distance_int6(w))
print("... and of the quantised copy, with its own scales:", grid_distance_int6(q, scales=s))

# backward is the identity: the gradient w.r.t. w equals the gradient taken at q
x = rng.standard_normal((2, 8))
wt = Tensor(w, requires_grad=True)
loss = nx.cross_entropy_nats(nx.linear(Tensor(x), fake_quant(wt, INT4)), np.array([0, 2]))
nx.backward(loss)
print("loss through INT4", float(loss.data))
print("grad row 0", wt.grad[0].round(4))
