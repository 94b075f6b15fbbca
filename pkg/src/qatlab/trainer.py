"""Deterministic single-run training loop over a byte-level corpus."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator

import numpy as np

from . import numerics as nx
from .model import Model, size_preset
from .numerics import ConfigError, DataError
from .optim import Optimizer, OptimConfig, route
from .quant import get_mode, grid_distance_int6
from .schedule import ScheduleConfig, lr_at, lr_magnitudes, warmdown_tag

log = logging.getLogger(__name__)

FULL_SEEDS = (1337, 42, 0, 7, 2024)
REDUCED_SEEDS = (1337, 42, 0)
DIVERGENCE_NATS = 20.0

DEFAULT_CORPUS = Path(__file__).resolve().parent / "data" / "corpus.txt"


def default_corpus_path() -> str:
    return os.environ.get("QATLAB_CORPUS", str(DEFAULT_CORPUS))


@dataclass(frozen=True)
class RunSpec:
    size: str = "desk-S"
    bits: str = "FP16"
    warmdown: float = 0.33
    lr: str = "lr1x"
    optimizer: str = "muon+adamw"
    seed: int = 1337
    steps: int = 1500
    shape: str = "linear"
    warmup_steps: int = 100
    batch_tokens: int = 8192
    seq_len: int = 256
    grad_accum_steps: int = 2
    eval_count: int = 6
    probe_every: int = 0
    data_path: str = ""
    split_fraction: float = 0.9
    val_bytes: int = 0  # 0 = whole validation split

    def __post_init__(self):
        object.__setattr__(self, "bits", get_mode(self.bits).tag)
        if self.batch_tokens % self.seq_len:
            raise ConfigError("batch_tokens must be a multiple of seq_len")
        if self.grad_accum_steps < 1 or self.eval_count < 1:
            raise ConfigError("grad_accum_steps and eval_count must be positive")
        if self.probe_every < 0:
            raise ConfigError("probe_every must be >= 0")
        lr_magnitudes(self.lr)
        OptimConfig(kind=self.optimizer)
        self.schedule()

    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(self.steps, self.warmdown, self.warmup_steps, self.shape)

    def eval_steps(self) -> list[int]:
        return sorted({max(1, round(k * self.steps / self.eval_count)) for k in range(1, self.eval_count + 1)})

    def probe_steps(self) -> list[int]:
        if not self.probe_every:
            return []
        return list(range(self.probe_every, self.steps + 1, self.probe_every))

    def cell_key(self) -> str:
        from .grid import cell_key
        return cell_key(self)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunSpec":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class RunRecord:
    spec: dict
    key: str
    eval_steps: list[int] = field(default_factory=list)
    val_bpb: list[float] = field(default_factory=list)
    final_bpb: float | None = None
    probe_steps: list[int] = field(default_factory=list)
    probe_distance: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    status: str = "running"

    @property
    def run_spec(self) -> RunSpec:
        return RunSpec.from_dict(self.spec)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        d = json.loads(line)
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})

    def numerics(self) -> dict:
        """Everything except wall time (which is not deterministic)."""
        d = asdict(self)
        d.pop("wall_time")
        return d


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def load_corpus(path: str | Path, split_fraction: float = 0.9) -> tuple[np.ndarray, np.ndarray]:
    """Byte tokens of a file, split into a train prefix and validation suffix."""
    raw = Path(path).read_bytes()
    if not raw:
        raise DataError(f"corpus {path} is empty")
    if not 0.0 < split_fraction < 1.0:
        raise ConfigError("split_fraction must lie in (0, 1)")
    tokens = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    cut = int(len(tokens) * split_fraction)
    return tokens[:cut], tokens[cut:]


def detokenize(tokens: np.ndarray) -> bytes:
    return np.asarray(tokens, dtype=np.uint8).tobytes()


def batch_stream(train: np.ndarray, seed: int, seq_len: int, batch_tokens: int) -> Iterator[np.ndarray]:
    """Endless stream of [batch_tokens/seq_len, seq_len+1] windows at seeded offsets."""
    if len(train) < seq_len + 1:
        raise DataError(f"corpus of {len(train)} tokens is shorter than seq_len+1 = {seq_len + 1}")
    rows = batch_tokens // seq_len
    rng = np.random.default_rng(seed)
    span = len(train) - seq_len
    window = np.arange(seq_len + 1)
    while True:
        starts = rng.integers(0, span, size=rows)
        yield train[starts[:, None] + window]


def bits_per_byte(mean_nats: float, bytes_per_token: float = 1.0) -> float:
    return mean_nats / (math.log(2) * bytes_per_token)


def eval_bpb(model: Model, val: np.ndarray, mode="FP16", seq_len: int | None = None,
             batch_rows: int = 16, bytes_per_token: float | None = None) -> float:
    """Validation bits-per-byte over consecutive non-overlapping windows of ``val``."""
    if len(val) < 2:
        raise DataError("validation split is empty")
    seq_len = min(seq_len or model.cfg.seq_len, len(val) - 1)
    if bytes_per_token is None:
        bytes_per_token = len(detokenize(val)) / len(val)
    n_win = (len(val) - 1) // seq_len
    total, count = 0.0, 0
    starts = np.arange(n_win) * seq_len
    window = np.arange(seq_len + 1)
    for i in range(0, n_win, batch_rows):
        block = val[starts[i:i + batch_rows, None] + window]
        loss = model.forward_loss(block, mode)
        n = block.shape[0] * seq_len
        total += float(loss.data) * n
        count += n
    return bits_per_byte(total / count, bytes_per_token)


def model_grid_distance(model: Model) -> float:
    """Unweighted mean of per-matrix INT6 grid distance over all 2-D parameters."""
    names = model.matrix_names()
    return float(np.mean([grid_distance_int6(model.params[n].data) for n in names]))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def build_optimizer(model: Model, kind: str) -> Optimizer:
    cfg = OptimConfig(kind=kind)
    groups = {name: route(name, t.shape, cfg, is_embedding=(name == "embed"))
              for name, t in model.params.items()}
    return Optimizer(cfg, groups)


def train_run(spec: RunSpec, corpus: tuple[np.ndarray, np.ndarray] | None = None,
              checkpoint_path: str | Path | None = None) -> RunRecord:
    """Train one cell and return its record. Never raises on divergence."""
    t0 = time.perf_counter()
    if corpus is None:
        corpus = load_corpus(spec.data_path or default_corpus_path(), spec.split_fraction)
    train, val = corpus
    if spec.val_bytes:
        val = val[:spec.val_bytes]
    mode = get_mode(spec.bits)
    cfg = size_preset(spec.size, seq_len=spec.seq_len)
    model = Model(cfg, seed=spec.seed)
    opt = build_optimizer(model, spec.optimizer)
    sched = spec.schedule()
    mags = lr_magnitudes(spec.lr)
    base = {"matrix": mags.matrix_lr, "scalar": mags.scalar_lr, "embed": mags.tied_embed_lr}
    params = model.arrays()
    stream = batch_stream(train, spec.seed, spec.seq_len, spec.batch_tokens)
    evals, probes = set(spec.eval_steps()), set(spec.probe_steps())
    rec = RunRecord(spec=spec.to_dict(), key=spec.cell_key())
    inv_accum = 1.0 / spec.grad_accum_steps

    for step in range(1, spec.steps + 1):
        model.zero_grad()
        step_loss = 0.0
        for _ in range(spec.grad_accum_steps):
            loss = model.forward_loss(next(stream), mode)
            nx.backward(loss, seed=inv_accum)
            step_loss += float(loss.data) * inv_accum
        if not math.isfinite(step_loss) or step_loss > DIVERGENCE_NATS:
            rec.status = "diverged"
            rec.train_loss.append(step_loss if math.isfinite(step_loss) else float("nan"))
            log.warning("%s diverged at step %d (loss %s)", rec.key, step, step_loss)
            break
        # update number `step` runs at the multiplier of step-1, so step 1 starts the ramp at 0
        mult = lr_at(step - 1, sched)
        opt.step(params, model.grads(), {k: v * mult for k, v in base.items()})
        if step % 50 == 0 or step == spec.steps:
            rec.train_loss.append(round(step_loss, 6))
        if step in probes:
            rec.probe_steps.append(step)
            rec.probe_distance.append(model_grid_distance(model))
        if step in evals:
            bpb = eval_bpb(model, val, mode, spec.seq_len)
            rec.eval_steps.append(step)
            rec.val_bpb.append(bpb)
            log.info("%s step %d val_bpb %.4f", rec.key, step, bpb)
            if not math.isfinite(bpb):
                rec.status = "diverged"
                break
    else:
        rec.status = "completed"
        rec.final_bpb = rec.val_bpb[-1] if rec.val_bpb else None
    if checkpoint_path is not None:
        model.save(checkpoint_path)
    rec.wall_time = time.perf_counter() - t0
    return rec


def describe(spec: RunSpec) -> str:
    return f"{spec.size} {spec.bits} {warmdown_tag(spec.warmdown)} {spec.lr} seed={spec.seed}"
