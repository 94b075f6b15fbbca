"""Train one small INT6 cell on the bundled corpus, then probe the checkpoint.

Takes about fifteen seconds. Run: python3 demos/03_train_one_cell.py
"""
import tempfile
from pathlib import Path

from qatlab.model import Model
from qatlab.trainer import RunSpec, describe, model_grid_distance, train_run

spec = RunSpec(size="desk-S", bits="INT6", warmdown=0.33, steps=300, warmup_steps=30,
               batch_tokens=512, seq_len=64, grad_accum_steps=1, val_bytes=8192, probe_every=50)
print("cell:", describe(spec))
print("key: ", spec.cell_key())

with tempfile.TemporaryDirectory() as d:
    ck = Path(d) / "final.npz"
    rec = train_run(spec, checkpoint_path=ck)
    model = Model.load(ck)

for step, bpb in zip(rec.eval_steps, rec.val_bpb):
    print(f"step {step:4d}  val bpb {bpb:.4f}")

# distance from the master weights to the INT6 grid, logged during training
for step, dist in zip(rec.probe_steps, rec.probe_distance):
    print(f"step {step:4d}  grid distance {dist:.6f}")

# the checkpoint holds full-precision master weights, so the last probe is reproducible offline
print("offline recompute", model_grid_distance(model), "logged", rec.probe_distance[-1])
print(f"{rec.status} in {rec.wall_time:.1f}s")
