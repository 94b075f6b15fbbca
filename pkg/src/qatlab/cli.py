"""``qatlab`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 divergence, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import grid, report, stats
from .model import Model, size_in_millions
from .numerics import ConfigError, DataError, NumericsError
from .quant import grid_distance_int6
from .schedule import parse_warmdown
from .trainer import RunSpec, model_grid_distance, train_run

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("qatlab")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _results_default() -> str:
    return os.environ.get("QATLAB_RESULTS", "results.jsonl")


def _emit(text: str, out_dir: str | None, name: str) -> None:
    if out_dir:
        path = Path(out_dir) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        print(path)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    spec = RunSpec(size=args.size, bits=args.bits, warmdown=parse_warmdown(args.wd), lr=args.lr,
                   optimizer=args.optimizer, seed=args.seed, steps=args.steps, shape=args.shape,
                   warmup_steps=args.warmup, batch_tokens=args.batch_tokens, seq_len=args.seq_len,
                   grad_accum_steps=args.accum, eval_count=args.eval_count, probe_every=args.probe_every,
                   data_path=args.data or "", val_bytes=args.val_bytes)
    rec = train_run(spec, checkpoint_path=args.checkpoint)
    if args.results:
        grid.append_record(rec, args.results)
    print(rec.to_json())
    return EXIT_DIVERGED if rec.status == "diverged" else EXIT_OK


def cmd_grid(args) -> int:
    name = args.design
    if args.desk and name in grid.PAPER_DESIGNS:
        name = f"desk-{name}"
    specs = grid.enumerate_design(name)
    if args.paper_audit or args.dry_run:
        for s in specs:
            print(grid.cell_key(s))
        print(f"{name}: {len(specs)} cells", file=sys.stderr)
        return EXIT_OK
    if name in grid.PAPER_DESIGNS:
        raise ConfigError(f"{name} is a paper-scale design and is audit-only; "
                          f"use --desk (runs desk-{name}) or --paper-audit")
    summary = grid.execute(specs, args.workers, args.results)
    print(summary)
    return EXIT_DIVERGED if summary.diverged else EXIT_OK


def cmd_audit(args) -> int:
    names = [args.design] if args.design else list(grid.PAPER_DESIGNS)
    ok, total = True, 0
    print("design,cells,expected,match")
    for n in names:
        if n not in grid.PAPER_DESIGNS:
            raise ConfigError(f"unknown paper design {n!r}")
        count = len(grid.enumerate_design(n))
        want = grid.PAPER_COUNTS[n]
        total += count
        ok &= count == want
        print(f"{n},{count},{want},{'yes' if count == want else 'NO'}")
    if not args.design:
        want = sum(grid.PAPER_COUNTS.values())
        ok &= total == want
        print(f"total,{total},{want},{'yes' if total == want else 'NO'}")
    return EXIT_OK if ok else EXIT_CONFIG


def _load_records(path):
    records = grid.query(path)
    if not records:
        raise DataError(f"no records in {path}")
    return records


def _conds(args, exclude: str) -> dict:
    conds = {}
    if args.lr and exclude != "lr":
        conds["lr"] = args.lr
    if args.wd is not None and exclude != "warmdown":
        conds["warmdown"] = parse_warmdown(args.wd)
    if args.bits and exclude != "bits":
        conds["bits"] = args.bits.upper()
    return conds


def _level(factor: str, value: str):
    if factor == "warmdown":
        return parse_warmdown(value)
    if factor == "bits":
        return value.upper()
    if factor in ("seed", "steps"):
        return int(value)
    return value


def cmd_analyze(args) -> int:
    records = _load_records(args.results)
    kinds = ["summary", "penalty", "fit", "predict"] if args.kind == "all" else [args.kind]
    wd = parse_warmdown(args.wd) if args.wd is not None else 0.33
    lr = args.lr or "lr1x"
    summary_json: dict = {"records": len(records)}
    heldout = set(args.heldout.split(",")) if args.heldout else set()

    fit = None
    points = {s: p.mean for s, p in stats.penalty_points(records, lr, wd).items()}
    fit_pts = {s: v for s, v in points.items() if s not in heldout}
    if {"fit", "predict"} & set(kinds):
        if len(fit_pts) < 3:
            log.warning("fit needs at least 3 sizes with paired seeds; have %d", len(fit_pts))
        else:
            fit = stats.fit_log_linear((size_in_millions(s), v) for s, v in fit_pts.items())

    for kind in kinds:
        if kind == "summary":
            rows = stats.summary_table(records, lr, wd)
        elif kind == "penalty":
            factor = args.factor
            a, b = _level(factor, args.a), _level(factor, args.b)
            conds = _conds(args, factor) or ({"lr": lr, "warmdown": wd} if factor == "bits" else {"lr": lr})
            rows = stats.contrast_table(records, factor, a, b, **conds)
        elif kind == "fit":
            rows = [stats.fit_row(fit)] if fit else [{"a": "n/a", "b": "n/a", "slope_se": "n/a", "sigma": "n/a",
                                                       "n": len(fit_pts), "xbar": "n/a", "sxx": "n/a"}]
        else:
            held = [(s, v) for s, v in points.items() if s in heldout]
            rows = stats.predict_table(fit, held) if fit and held else []
            if not rows:
                log.warning("predict: need a fit and --heldout sizes present in the results")
        summary_json[kind] = rows
        _emit(stats.to_csv(rows), args.out_dir, f"{kind}.csv")
    if args.out_dir:
        _emit(json.dumps(summary_json, indent=2, sort_keys=True) + "\n", args.out_dir, "summary.json")
    return EXIT_OK


def cmd_probe(args) -> int:
    model = Model.load(args.checkpoint)
    out = {"model_mean": model_grid_distance(model)}
    if args.per_tensor:
        out["tensors"] = {n: grid_distance_int6(model.params[n].data) for n in model.matrix_names()}
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_footprint(args) -> int:
    fp = stats.footprint(args.gpu_hours, args.p_gpu, args.alpha, args.pue, args.intensity, args.water)
    print(json.dumps(fp.__dict__, indent=2))
    return EXIT_OK


def cmd_report(args) -> int:
    records = _load_records(args.results)
    kinds = ["warmdown", "scaling", "contrast"] if args.figure == "all" else [args.figure]
    heldout = set(args.heldout.split(",")) if args.heldout else set()
    out = Path(args.out_dir)
    for kind in kinds:
        try:
            if kind == "warmdown":
                fig = report.warmdown_figure(records, args.size, args.lr or "lr1x")
            elif kind == "scaling":
                fig, _ = report.scaling_figure(records, heldout, args.lr or "lr1x",
                                               parse_warmdown(args.wd) if args.wd else 0.33)
            else:
                factor = args.factor
                fig = report.contrast_figure(records, factor, _level(factor, args.a), _level(factor, args.b),
                                             **_conds(args, factor))
        except (DataError, NumericsError) as e:
            log.warning("%s figure skipped: %s", kind, e)
            continue
        for w in fig.warnings:
            log.warning("%s figure: %s", kind, w)
        _emit(fig.render(), str(out), f"figure_{kind}.svg")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qatlab", description="Desk-scale quantisation-aware training laboratory.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="train one cell and print its record as JSON")
    r.add_argument("--size", default="desk-S")
    r.add_argument("--bits", default="FP16", help="FP16, INT8, INT6 or INT4 (case-insensitive)")
    r.add_argument("--wd", default="0.33", help="warmdown fraction or tag (wd00/wd10/wd33/wd50)")
    r.add_argument("--lr", default="lr1x", help="lr05, lr1x, lr2x or adamw_cal")
    r.add_argument("--optimizer", default="muon+adamw", choices=["muon+adamw", "all_adamw"])
    r.add_argument("--seed", type=int, default=1337)
    r.add_argument("--steps", type=int, default=1500)
    r.add_argument("--shape", default="linear", choices=["linear", "cosine"])
    r.add_argument("--warmup", type=int, default=100)
    r.add_argument("--batch-tokens", type=int, default=8192)
    r.add_argument("--seq-len", type=int, default=256)
    r.add_argument("--accum", type=int, default=2, help="micro-batches per optimiser step")
    r.add_argument("--eval-count", type=int, default=6)
    r.add_argument("--probe-every", type=int, default=0, help="log INT6 grid distance every N steps")
    r.add_argument("--val-bytes", type=int, default=0, help="truncate validation split (0 = all)")
    r.add_argument("--data", help="corpus file (default: bundled corpus or $QATLAB_CORPUS)")
    r.add_argument("--checkpoint", help="save final weights here")
    r.add_argument("--results", help="also append the record to this JSONL file")
    r.set_defaults(fn=cmd_run)

    g = sub.add_parser("grid", help="execute a design, skipping cells already in the results file")
    g.add_argument("--design", required=True, help="design name or JSON design file")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--results", default=_results_default())
    mode = g.add_mutually_exclusive_group()
    mode.add_argument("--desk", action="store_true", help="run the desk version of a paper design")
    mode.add_argument("--paper-audit", action="store_true", help="list the cells without running")
    g.add_argument("--dry-run", action="store_true", help="list the cells without running")
    g.set_defaults(fn=cmd_grid)

    a = sub.add_parser("audit", help="check paper-scale design cell counts")
    a.add_argument("--design")
    a.set_defaults(fn=cmd_audit)

    def analysis_flags(x):
        x.add_argument("--results", default=_results_default())
        x.add_argument("--lr")
        x.add_argument("--wd")
        x.add_argument("--bits")
        x.add_argument("--factor", default="bits", choices=["bits", "warmdown", "lr", "shape", "optimizer", "steps"])
        x.add_argument("--a", default="INT6", help="level A of the paired contrast")
        x.add_argument("--b", default="FP16", help="level B of the paired contrast")
        x.add_argument("--heldout", help="comma-separated sizes excluded from the fit")

    z = sub.add_parser("analyze", help="tables from a results file (CSV on stdout or --out-dir)")
    analysis_flags(z)
    z.add_argument("--kind", default="summary", choices=["summary", "penalty", "fit", "predict", "all"])
    z.add_argument("--out-dir")
    z.set_defaults(fn=cmd_analyze)

    pr = sub.add_parser("probe", help="INT6 grid distance of a saved checkpoint")
    pr.add_argument("checkpoint")
    pr.add_argument("--per-tensor", action="store_true")
    pr.set_defaults(fn=cmd_probe)

    f = sub.add_parser("footprint", help="energy, carbon and water estimate")
    f.add_argument("--gpu-hours", type=float, required=True)
    f.add_argument("--p-gpu", type=float, default=0.600, help="average GPU draw in kW")
    f.add_argument("--alpha", type=float, default=0.30, help="host overhead fraction")
    f.add_argument("--pue", type=float, default=1.08)
    f.add_argument("--intensity", type=float, default=132.0, help="grid carbon intensity, g/kWh")
    f.add_argument("--water", type=float, default=1.8, help="indirect water, L/kWh")
    f.set_defaults(fn=cmd_footprint)

    rp = sub.add_parser("report", help="SVG figures from a results file")
    analysis_flags(rp)
    rp.add_argument("--figure", default="all", choices=["warmdown", "scaling", "contrast", "all"])
    rp.add_argument("--size", help="size for the warmdown figure (default: smallest present)")
    rp.add_argument("--out-dir", default="figures")
    rp.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except (ConfigError, DataError, NumericsError, ValueError) as e:
        print(f"qatlab: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"qatlab: I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
