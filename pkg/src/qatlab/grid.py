"""Factorial designs as RunSpec sets, plus a resumable worker-pool executor.

Paper-scale designs are only ever enumerated (``audit``). Desk designs reuse the
same factor tables with sizes and step counts mapped down and are meant to run.

Design files are JSON::

    {
      "name": "my-sweep",
      "base":   {"steps": 600, "batch_tokens": 4096},      # any RunSpec field
      "blocks": [                                           # union of cross products
        {"bits": ["FP16", "INT6"], "warmdown": ["wd00", "wd33"], "seed": [1337, 42]}
      ]
    }

Factor names are RunSpec field names. ``warmdown`` accepts tags ("wd33") or
fractions; ``bits`` is case-insensitive. ``"factors": {...}`` may be given
instead of ``blocks`` for a single block.
"""

from __future__ import annotations

import itertools
import json
import logging
import multiprocessing as mp
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from filelock import FileLock

from .numerics import ConfigError
from .quant import get_mode
from .schedule import parse_warmdown, warmdown_tag
from .trainer import FULL_SEEDS, REDUCED_SEEDS, RunRecord, RunSpec, load_corpus, default_corpus_path, train_run

log = logging.getLogger(__name__)

PHASE2_BITS = ("FP16", "INT8", "INT6")
WARMDOWNS = (0.0, 0.10, 0.33, 0.50)
LR_TAGS = ("lr05", "lr1x", "lr2x")
PHASE2_SIZES = ("15M", "30M", "50M", "100M")
HELDOUT_SIZES = ("5M", "8M", "175M", "250M", "350M")
SMALL_SIZES = ("3M", "5M", "8M", "10M")

PAPER_BASE = dict(steps=9000, batch_tokens=65536, seq_len=2048, grad_accum_steps=2,
                  warmup_steps=100, eval_count=6, lr="lr1x", shape="linear", optimizer="muon+adamw")

# Desk mapping: every paper size lands on one of two desk presets, T shrinks 6x.
DESK_SIZE_MAP = {
    "3M": "desk-S", "5M": "desk-S", "8M": "desk-S", "10M": "desk-S", "15M": "desk-S", "30M": "desk-S",
    "50M": "desk-M", "100M": "desk-M", "175M": "desk-M", "250M": "desk-M", "350M": "desk-M",
}
DESK_STEP_DIVISOR = 6
DESK_PROBE_EVERY = 50
DESK_BASE = dict(batch_tokens=8192, seq_len=256, grad_accum_steps=2)

# Small enough to finish the smoke sweep on one CPU core in well under half an hour.
SMOKE_BASE = dict(size="desk-S", steps=1500, batch_tokens=1024, seq_len=64, grad_accum_steps=1,
                  eval_count=6, val_bytes=32768)

_KEY_DEFAULTS = {"batch_tokens": 8192, "seq_len": 256, "grad_accum_steps": 2, "warmup_steps": 100,
                 "eval_count": 6, "val_bytes": 0}


@dataclass(frozen=True)
class GridDesign:
    name: str
    blocks: tuple[dict, ...]
    base: dict = field(default_factory=dict)

    def specs(self) -> list[RunSpec]:
        out: dict[str, RunSpec] = {}
        for block in self.blocks:
            names = list(block)
            for values in itertools.product(*(block[n] for n in names)):
                fields_ = {**self.base, **dict(zip(names, values))}
                if "warmdown" in fields_:
                    fields_["warmdown"] = parse_warmdown(fields_["warmdown"])
                spec = RunSpec(**fields_)
                out.setdefault(cell_key(spec), spec)
        return [out[k] for k in sorted(out)]

    @classmethod
    def from_dict(cls, d: dict) -> "GridDesign":
        if "name" not in d:
            raise ConfigError("design file needs a 'name'")
        blocks = d.get("blocks") or ([d["factors"]] if "factors" in d else None)
        if not blocks:
            raise ConfigError("design file needs 'blocks' or 'factors'")
        for b in blocks:
            for k, v in b.items():
                if not isinstance(v, list) or not v:
                    raise ConfigError(f"factor {k!r} must be a non-empty list")
        return cls(d["name"], tuple(blocks), dict(d.get("base", {})))

    @classmethod
    def from_file(cls, path: str | Path) -> "GridDesign":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"design file {path}: {e}") from None


def _paper_designs() -> dict[str, GridDesign]:
    full, reduced = list(FULL_SEEDS), list(REDUCED_SEEDS)
    wd, bits = list(WARMDOWNS), list(PHASE2_BITS)
    sizes = list(PHASE2_SIZES)
    return {
        "phase2": GridDesign("phase2", ({"bits": bits, "warmdown": wd, "lr": list(LR_TAGS),
                                         "size": sizes, "seed": full},), PAPER_BASE),
        "d1": GridDesign("d1", ({"bits": bits, "warmdown": wd, "size": sizes, "seed": full},),
                         {**PAPER_BASE, "optimizer": "all_adamw", "lr": "adamw_cal"}),
        "d2": GridDesign("d2", (
            {"size": ["30M"], "warmdown": wd, "bits": bits, "seed": reduced, "steps": [27000, 81000]},
            {"size": ["100M"], "warmdown": [0.33], "bits": bits, "seed": reduced, "steps": [27000]},
        ), PAPER_BASE),
        "d3": GridDesign("d3", ({"warmdown": [0.33], "bits": bits, "size": sizes, "seed": full},),
                         {**PAPER_BASE, "shape": "cosine"}),
        "d4": GridDesign("d4", ({"warmdown": [0.33], "bits": bits, "size": list(HELDOUT_SIZES),
                                 "seed": full},), PAPER_BASE),
        "d5": GridDesign("d5", ({"warmdown": wd, "size": sizes, "seed": full},), {**PAPER_BASE, "bits": "INT4"}),
        "d6": GridDesign("d6", ({"warmdown": wd, "size": list(SMALL_SIZES), "seed": full},),
                         {**PAPER_BASE, "bits": "INT4"}),
        "m2": GridDesign("m2", ({"bits": bits, "seed": reduced},),
                         {**PAPER_BASE, "size": "30M", "warmdown": 0.33, "probe_every": 200}),
    }


PAPER_DESIGNS = _paper_designs()
PAPER_COUNTS = {"phase2": 720, "d1": 240, "d2": 81, "d3": 60, "d4": 75, "d5": 80, "d6": 80, "m2": 9}

SMOKE_DESIGN = GridDesign("desk-smoke", (
    {"bits": ["FP16", "INT6"], "warmdown": [0.0, 0.33], "seed": list(REDUCED_SEEDS)},
    {"bits": ["INT4"], "warmdown": [0.33], "seed": list(REDUCED_SEEDS)},
), SMOKE_BASE)


def to_desk(spec: RunSpec) -> RunSpec:
    """Map a paper-scale cell onto its desk counterpart."""
    probe = DESK_PROBE_EVERY if spec.probe_every else 0
    return replace(spec, size=DESK_SIZE_MAP[spec.size], steps=spec.steps // DESK_STEP_DIVISOR,
                   probe_every=probe, **DESK_BASE)


def design_names() -> list[str]:
    return [*PAPER_DESIGNS, *(f"desk-{n}" for n in PAPER_DESIGNS), SMOKE_DESIGN.name]


def enumerate_design(name: str) -> list[RunSpec]:
    """All cells of a named design, ordered by cell key. ``name`` may also be a JSON file path."""
    if name in PAPER_DESIGNS:
        return PAPER_DESIGNS[name].specs()
    if name == SMOKE_DESIGN.name:
        return SMOKE_DESIGN.specs()
    if name.startswith("desk-") and name[5:] in PAPER_DESIGNS:
        uniq = {}
        for s in PAPER_DESIGNS[name[5:]].specs():
            d = to_desk(s)
            uniq.setdefault(cell_key(d), d)
        return [uniq[k] for k in sorted(uniq)]
    if name.endswith(".json") and Path(name).is_file():
        return GridDesign.from_file(name).specs()
    raise ConfigError(f"unknown design {name!r} (known: {', '.join(design_names())})")


# ---------------------------------------------------------------------------
# cell keys
# ---------------------------------------------------------------------------

def key_fields(spec: RunSpec) -> dict[str, str]:
    return {
        "bits": spec.bits,
        "wd": warmdown_tag(spec.warmdown),
        "lr": spec.lr,
        "size": spec.size,
        "seed": str(spec.seed),
        "T": str(spec.steps),
        "shape": spec.shape,
        "opt": spec.optimizer,
    }


def cell_key(spec: RunSpec) -> str:
    """Canonical string for a cell. Non-default plumbing knobs are appended so
    that differently-budgeted runs of the same cell never collide."""
    parts = [f"{k}={v}" for k, v in key_fields(spec).items()]
    if spec.probe_every:
        parts.append(f"probe={spec.probe_every}")
    for name, default in _KEY_DEFAULTS.items():
        value = getattr(spec, name)
        if value != default:
            parts.append(f"{name}={value}")
    return "|".join(parts)


def _canonical_filter(flt: dict) -> dict[str, str]:
    out = {}
    for k, v in flt.items():
        if v is None:
            continue
        if k in ("bits",):
            v = get_mode(str(v)).tag
        elif k in ("wd", "warmdown"):
            k, v = "wd", warmdown_tag(parse_warmdown(v))
        elif k in ("T", "steps"):
            k, v = "T", str(int(v))
        elif k in ("opt", "optimizer"):
            k = "opt"
        out[k] = str(v)
    return out


# ---------------------------------------------------------------------------
# results store
# ---------------------------------------------------------------------------

def read_results(path: str | Path) -> tuple[list[RunRecord], list[str]]:
    """Parse a JSONL results file. Returns (records, unparseable lines)."""
    records, bad = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                rec = RunRecord.from_json(line)
                if not rec.key:
                    raise ValueError("record without key")
                records.append(rec)
            except (ValueError, TypeError, KeyError):
                bad.append(line if line.endswith("\n") else line + "\n")
    return records, bad


def _quarantine(path: Path) -> tuple[dict[str, RunRecord], int]:
    """Load existing records, moving corrupt lines to ``<path>.corrupt``. Call under the lock."""
    if not path.exists():
        return {}, 0
    records, bad = read_results(path)
    if bad:
        with open(path.with_name(path.name + ".corrupt"), "a", encoding="utf-8") as fh:
            fh.writelines(bad)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text("".join(r.to_json() + "\n" for r in records), encoding="utf-8")
        tmp.replace(path)
        log.warning("quarantined %d corrupt line(s) from %s", len(bad), path)
    return {r.key: r for r in records}, len(bad)


def append_record(rec: RunRecord, results_path: str | Path) -> None:
    """Append one record as a single line under the results-file lock."""
    path = Path(results_path)
    with FileLock(str(path) + ".lock"):
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(rec.to_json() + "\n")


@dataclass
class ExecSummary:
    completed: int = 0
    skipped: int = 0
    diverged: int = 0
    quarantined: int = 0
    keys: list[str] = field(default_factory=list)

    def __str__(self):
        return (f"completed={self.completed} skipped={self.skipped} "
                f"diverged={self.diverged} quarantined={self.quarantined}")


_corpus_cache: dict = {}


def _run_cell(spec: RunSpec) -> RunRecord:
    src = (spec.data_path or default_corpus_path(), spec.split_fraction)
    if src not in _corpus_cache:
        _corpus_cache[src] = load_corpus(*src)
    return train_run(spec, corpus=_corpus_cache[src])


def execute(specs: Iterable[RunSpec], workers: int = 1, results_path: str | Path = "results.jsonl") -> ExecSummary:
    """Run every cell not already in ``results_path`` and append its record."""
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    path = Path(results_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(path) + ".lock")
    with lock:
        done, n_bad = _quarantine(path)
    summary = ExecSummary(quarantined=n_bad)
    todo, seen = [], set()
    for spec in specs:
        key = cell_key(spec)
        if key in done or key in seen:
            summary.skipped += key in done
            continue
        seen.add(key)
        todo.append(spec)

    def record(rec: RunRecord):
        append_record(rec, path)
        summary.keys.append(rec.key)
        if rec.status == "diverged":
            summary.diverged += 1
        else:
            summary.completed += 1
        log.info("%s %s (%.1fs)", rec.key, rec.status, rec.wall_time)

    if workers == 1 or len(todo) <= 1:
        for spec in todo:
            record(_run_cell(spec))
    else:
        with mp.get_context("fork").Pool(min(workers, len(todo))) as pool:
            for rec in pool.imap_unordered(_run_cell, todo):
                record(rec)
    return summary


def query(results_path: str | Path, flt: dict | None = None) -> list[RunRecord]:
    """Records whose key fields match every entry of ``flt``, ordered by key."""
    path = Path(results_path)
    if not path.exists():
        raise FileNotFoundError(f"results file {path} does not exist")
    records, bad = read_results(path)
    if bad:
        log.warning("%s: ignoring %d corrupt line(s)", path, len(bad))
    want = _canonical_filter(flt or {})
    out = []
    for rec in records:
        fields_ = key_fields(rec.run_spec)
        if all(fields_.get(k) == v for k, v in want.items()):
            out.append(rec)
    return sorted(out, key=lambda r: r.key)
