"""A small factorial sweep: design file, parallel execution, resume, query.

Run: python3 demos/04_sweep_and_resume.py
"""
import json
import tempfile
from pathlib import Path

from qatlab.grid import enumerate_design, execute, query

work = Path(tempfile.mkdtemp())
design = work / "sweep.json"
design.write_text(json.dumps({
    "name": "demo",
    "base": {"steps": 40, "warmup_steps": 5, "batch_tokens": 256, "seq_len": 32,
             "grad_accum_steps": 1, "eval_count": 2, "val_bytes": 2048},
    "factors": {"bits": ["FP16", "INT6", "INT4"], "warmdown": ["wd00", "wd33"], "seed": [1337, 42]},
}))
specs = enumerate_design(str(design))
print(len(specs), "cells, first:", specs[0].cell_key())

results = work / "results.jsonl"
# run half the design, then all of it: the second call only trains what is missing
print("first pass ", execute(specs[:6], workers=2, results_path=results))
print("second pass", execute(specs, workers=2, results_path=results))

# a torn last line (e.g. a killed writer) gets moved aside on the next pass
with open(results, "a") as fh:
    fh.write('{"key": "bits=FP16|wd=')
print("third pass ", execute(specs, workers=2, results_path=results))
print("quarantine file:", (work / "results.jsonl.corrupt").read_text())

for rec in query(results, {"bits": "int4", "wd": "wd33"}):
    print(rec.key.split("|")[:5], round(rec.final_bpb, 4))
