"""Analysis layer: seed summaries, paired penalties, log-linear scaling fits
with prediction intervals, and the energy / carbon / water footprint.

Records are stored in BPB; penalties are reported in mBPB (BPB x 1000).
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from .model import size_in_millions
from .numerics import DataError, NumericsError
from .trainer import RunRecord

MBPB = 1000.0
Z_CRIT = 1.96


# ---------------------------------------------------------------------------
# cell summaries and paired differences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellSummary:
    mean: float
    sem: float | None  # None for a single seed
    n: int


def _final_values(records) -> list[float]:
    out = []
    for r in records:
        if isinstance(r, RunRecord):
            if r.final_bpb is None:
                continue
            out.append(float(r.final_bpb))
        else:
            out.append(float(r))
    return out


def summarize_cell(records: Iterable) -> CellSummary:
    """Mean and SEM (sample std / sqrt n) of final BPB over seeds."""
    vals = _final_values(records)
    if not vals:
        raise DataError("summarize_cell: no records")
    arr = np.asarray(vals, dtype=np.float64)
    sem = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else None
    return CellSummary(float(arr.mean()), sem, int(arr.size))


@dataclass(frozen=True)
class PairedPenalty:
    seeds: tuple[int, ...]
    diffs: tuple[float, ...]  # A - B per seed, mBPB
    mean: float
    se: float
    z: float
    ci_low: float
    ci_high: float
    votes: int  # seeds where A < B strictly

    @property
    def n(self) -> int:
        return len(self.diffs)

    @property
    def significant(self) -> bool:
        return abs(self.z) >= Z_CRIT

    def verdict(self) -> str:
        return "significant" if self.significant else "noise"


def _by_seed(records) -> dict[int, float]:
    if isinstance(records, Mapping):
        return {int(k): float(v) for k, v in records.items()}
    out = {}
    for r in records:
        if r.final_bpb is not None:
            out[int(r.spec["seed"])] = float(r.final_bpb)
    return out


def penalty_from_diffs(diffs_mbpb: Sequence[float], seeds: Sequence[int] | None = None,
                       votes: int | None = None) -> PairedPenalty:
    d = np.asarray(diffs_mbpb, dtype=np.float64)
    if d.size < 2:
        raise DataError(f"paired penalty needs at least 2 shared seeds, got {d.size}")
    mean = float(d.mean())
    se = float(d.std(ddof=1) / math.sqrt(d.size))
    if se > 0:
        z = mean / se
    else:
        z = 0.0 if mean == 0 else math.copysign(math.inf, mean)
    if votes is None:
        votes = int(np.sum(d < 0))
    seeds = tuple(seeds) if seeds is not None else tuple(range(d.size))
    return PairedPenalty(seeds, tuple(float(x) for x in d), mean, se, z,
                         mean - Z_CRIT * se, mean + Z_CRIT * se, votes)


def paired_penalty(a, b) -> PairedPenalty:
    """Per-seed A - B in mBPB over the seeds both conditions share.

    ``a`` and ``b`` are RunRecord lists or {seed: bpb} mappings. Votes count
    seeds where A is strictly better (lower); ties favour neither.
    """
    av, bv = _by_seed(a), _by_seed(b)
    shared = sorted(set(av) & set(bv))
    if len(shared) < 2:
        raise DataError(f"paired penalty needs at least 2 shared seeds, got {len(shared)}")
    diffs = [(av[s] - bv[s]) * MBPB for s in shared]
    votes = sum(av[s] < bv[s] for s in shared)
    return penalty_from_diffs(diffs, shared, votes)


# ---------------------------------------------------------------------------
# scaling-law fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingFit:
    a: float
    b: float
    slope_se: float
    sigma: float
    n: int
    xbar: float
    sxx: float

    def predict(self, size_m: float) -> float:
        return self.a + self.b * math.log(size_m)


def fit_log_linear(points: Iterable[tuple[float, float]]) -> ScalingFit:
    """OLS of penalty on ln(size_M)."""
    pts = [(float(s), float(p)) for s, p in points]
    if len(pts) < 3:
        raise DataError(f"log-linear fit needs at least 3 points, got {len(pts)}")
    if any(s <= 0 for s, _ in pts):
        raise ValueError("sizes must be positive")
    x = np.log([s for s, _ in pts])
    y = np.array([p for _, p in pts])
    n = x.size
    xbar, ybar = x.mean(), y.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    if sxx <= 1e-12 * max(1.0, float(np.sum(x * x))):
        raise NumericsError("log-linear fit: sizes have no spread")
    b = float(np.sum((x - xbar) * (y - ybar)) / sxx)
    a = float(ybar - b * xbar)
    resid = y - (a + b * x)
    sigma = math.sqrt(float(np.sum(resid ** 2)) / (n - 2))
    return ScalingFit(a, b, sigma / math.sqrt(sxx), sigma, n, float(xbar), sxx)


def t_quantile(df: float, p: float) -> float:
    if not df >= 1 or not 0.0 < p < 1.0:
        raise ValueError(f"t_quantile needs df >= 1 and 0 < p < 1 (got df={df}, p={p})")
    return float(sps.t.ppf(p, df))


def predict_interval(fit: ScalingFit, size_m: float, level: float = 0.95) -> tuple[float, float]:
    """(prediction, half-width) of the new-observation interval at ``size_m``."""
    if size_m <= 0:
        raise ValueError(f"size must be positive, got {size_m}")
    x = math.log(size_m)
    t = t_quantile(fit.n - 2, 0.5 + level / 2)
    half = t * fit.sigma * math.sqrt(1.0 + 1.0 / fit.n + (x - fit.xbar) ** 2 / fit.sxx)
    return fit.a + fit.b * x, half


@dataclass(frozen=True)
class HoldoutRow:
    size: float
    predicted: float
    measured: float
    residual: float
    half_width: float
    inside: bool


@dataclass(frozen=True)
class HoldoutResult:
    rows: tuple[HoldoutRow, ...]

    @property
    def inside_count(self) -> int:
        return sum(r.inside for r in self.rows)

    def __str__(self):
        return f"{self.inside_count}/{len(self.rows)}"


def holdout_validate(fit: ScalingFit, measured: Iterable[tuple[float, float]], level: float = 0.95) -> HoldoutResult:
    rows = []
    for size, value in measured:
        pred, half = predict_interval(fit, size, level)
        res = value - pred
        rows.append(HoldoutRow(float(size), pred, float(value), res, half, abs(res) <= half))
    return HoldoutResult(tuple(rows))


# ---------------------------------------------------------------------------
# footprint
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Footprint:
    gpu_hours: float
    p_gpu_kw: float
    alpha: float
    pue: float
    intensity_g_per_kwh: float
    water_l_per_kwh: float
    energy_kwh: float
    co2_kg: float
    water_l: float


def footprint(gpu_hours: float, p_gpu_kw: float, alpha: float, pue: float,
              intensity_g_per_kwh: float, water_l_per_kwh: float = 0.0) -> Footprint:
    """Energy E = H * P * (1 + alpha) * PUE; CO2 = E * g / 1000; water = E * L/kWh."""
    args = (gpu_hours, p_gpu_kw, alpha, pue, intensity_g_per_kwh, water_l_per_kwh)
    if any(v < 0 for v in args):
        raise ValueError("footprint inputs must be non-negative")
    e = gpu_hours * p_gpu_kw * (1.0 + alpha) * pue
    return Footprint(*args, e, e * intensity_g_per_kwh / 1000.0, e * water_l_per_kwh)


# ---------------------------------------------------------------------------
# tables over result records
# ---------------------------------------------------------------------------

def group_records(records: Iterable[RunRecord], by: Sequence[str]) -> dict[tuple, list[RunRecord]]:
    out: dict[tuple, list[RunRecord]] = defaultdict(list)
    for r in records:
        out[tuple(r.spec[k] for k in by)].append(r)
    return dict(out)


def _select(records, **conds) -> list[RunRecord]:
    return [r for r in records if all(r.spec.get(k) == v for k, v in conds.items())]


def _fmt(x: float | None, digits: int) -> str:
    return "n/a" if x is None else f"{x:.{digits}f}"


def _fmt_signed(x: float, digits: int) -> str:
    return f"{x:+.{digits}f}"


def _sizes(records) -> list[str]:
    return sorted({r.spec["size"] for r in records}, key=size_in_millions)


def summary_table(records: Sequence[RunRecord], lr: str = "lr1x", warmdown: float = 0.33,
                  bits: Sequence[str] = ("FP16", "INT8", "INT6"), baseline: str = "FP16",
                  candidate: str = "INT6") -> list[dict]:
    """Per size: mean +- SEM per bit-width and the paired candidate - baseline penalty."""
    recs = [r for r in records if r.spec["lr"] == lr and abs(r.spec["warmdown"] - warmdown) < 1e-12
            and r.status == "completed"]
    rows = []
    for size in _sizes(recs):
        row = {"Size": size}
        for b in bits:
            cell = _select(recs, size=size, bits=b)
            if cell:
                s = summarize_cell(cell)
                row[f"{b} BPB"] = f"{s.mean:.4f} ± {_fmt(s.sem, 4)}"
            else:
                row[f"{b} BPB"] = "n/a"
        try:
            pen = paired_penalty(_select(recs, size=size, bits=candidate), _select(recs, size=size, bits=baseline))
            row[f"{candidate} penalty"] = f"{_fmt_signed(pen.mean, 1)} mBPB"
        except DataError:
            row[f"{candidate} penalty"] = "n/a"
        rows.append(row)
    return rows


def penalty_points(records: Sequence[RunRecord], lr: str = "lr1x", warmdown: float = 0.33,
                   candidate: str = "INT6", baseline: str = "FP16") -> dict[str, PairedPenalty]:
    """Paired candidate - baseline penalty per size (sizes lacking 2 shared seeds are omitted)."""
    recs = [r for r in records if r.spec["lr"] == lr and abs(r.spec["warmdown"] - warmdown) < 1e-12
            and r.status == "completed"]
    out = {}
    for size in _sizes(recs):
        try:
            out[size] = paired_penalty(_select(recs, size=size, bits=candidate),
                                       _select(recs, size=size, bits=baseline))
        except DataError:
            pass
    return out


def contrast_table(records: Sequence[RunRecord], factor: str, level_a, level_b, **conds) -> list[dict]:
    """Paired A - B per size, where A and B are two levels of ``factor`` (e.g. warmdown 0.10 vs 0.33)."""
    recs = [r for r in _select(records, **conds) if r.status == "completed"]
    rows = []
    for size in _sizes(recs):
        a = [r for r in recs if r.spec["size"] == size and r.spec[factor] == level_a]
        b = [r for r in recs if r.spec["size"] == size and r.spec[factor] == level_b]
        row = {"Size": size}
        try:
            p = paired_penalty(a, b)
            row.update({"mean A − B": f"{_fmt_signed(p.mean, 2)} mBPB", "SE (mBPB)": f"{p.se:.2f}",
                        "z": _fmt_signed(p.z, 2), "seeds preferring A": f"{p.votes} / {p.n}",
                        "verdict": p.verdict()})
        except DataError:
            row.update({"mean A − B": "n/a", "SE (mBPB)": "n/a", "z": "n/a",
                        "seeds preferring A": "n/a", "verdict": "n/a"})
        rows.append(row)
    return rows


def predict_table(fit: ScalingFit, measured: Iterable[tuple[str, float]], level: float = 0.95) -> list[dict]:
    named = list(measured)
    res = holdout_validate(fit, [(size_in_millions(n), v) for n, v in named], level)
    return [{"Size": n, "Predicted (mBPB)": _fmt_signed(r.predicted, 2), "Measured (mBPB)": _fmt_signed(r.measured, 2),
             "Residual": _fmt_signed(r.residual, 2), "95% PI half-width": f"±{r.half_width:.2f}",
             "Inside PI?": "yes" if r.inside else "no"}
            for (n, _), r in zip(named, res.rows)]


def fit_row(fit: ScalingFit) -> dict:
    return {k: v for k, v in asdict(fit).items()}


def to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
