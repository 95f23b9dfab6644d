"""Command-line entry point: ``lobdiffusion <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import config as C
from .baseline import ContParams, calibrate, simulate
from .book import BookSeries, BookValidationError
from .diffusion import NumericalError
from .ingest import (
    OrderbookFormatError, iterate_windows, parse_orderbook_file, restrict_trading_hours,
    scan_orderbook_file, write_orderbook_file,
)
from .metrics import evaluate
from .pipeline import build_dataset, forecast_windows, generate, true_futures
from .synthetic import REGIMES, gen_stream
from .training import load_checkpoint, model_from_checkpoint, smoothed, train
from .unet import build_unet

logger = logging.getLogger("lobdiffusion")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def _load_states(path, cfg, timestamps=None, hours=None) -> BookSeries:
    states = parse_orderbook_file(path, cfg["data"]["n_levels"], timestamps)
    restrict = cfg["data"]["restrict_hours"] if hours is None else hours
    if restrict and timestamps is not None:
        states = restrict_trading_hours(states, cfg["data"]["open"], cfg["data"]["close"])
    return states


def _model_from(path):
    ckpt = load_checkpoint(path)
    cfg = C.merge(C.DEFAULT_CONFIG, ckpt["config"].get("run", {}))
    return model_from_checkpoint(ckpt), cfg, ckpt


# commands -------------------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = C.load_config(args.config, args.set)
    n = cfg["data"]["n_levels"]
    series, violations = scan_orderbook_file(args.orderbook, n, args.timestamps)
    summary = {"file": str(args.orderbook), "rows": len(series), "levels": n,
               "violations": len(violations),
               "violation_rows": [{"row": r, "reason": why} for r, why in violations[: args.max_report]]}
    if args.timestamps is not None and len(series):
        kept = restrict_trading_hours(series, cfg["data"]["open"], cfg["data"]["close"])
        summary["trading_hours"] = {"kept": len(kept), "dropped": len(series) - len(kept)}
    summary["config_hash"] = C.config_hash(cfg)
    print(f"{summary['rows']} rows, {summary['violations']} violations")
    for v in summary["violation_rows"]:
        print(f"  row {v['row']}: {v['reason']}")
    if "trading_hours" in summary:
        th = summary["trading_hours"]
        print(f"trading hours: kept {th['kept']}, dropped {th['dropped']}")
    if args.json:
        _write_json(args.json, summary)
    return EXIT_DATA if (args.strict and violations) else EXIT_OK


def cmd_synth(args) -> int:
    states = gen_stream(args.regime, args.length, args.levels, args.seed)
    write_orderbook_file(states, args.out, args.timestamps)
    print(f"wrote {len(states)} {args.regime} states to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = C.load_config(args.config, args.set)
    spec = C.window_spec(cfg)
    states = _load_states(args.data, cfg, args.timestamps)
    data = build_dataset(states, spec, C.codec_options(cfg))
    ucfg = C.unet_config(cfg)
    run = {"run": cfg, "config_hash": C.config_hash(cfg)}
    ckpt_path = str(args.out)
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        model = model_from_checkpoint(resume)
        model.train()
    else:
        model = build_unet(ucfg, cfg["model"]["seed"])
    opts = C.train_options(cfg, ckpt_path)
    t0 = time.perf_counter()
    result = train(model, data, opts, C.schedule(cfg), spec.history_len, cfg["train"]["seed"],
                   resume=resume, run_config=run)
    elapsed = time.perf_counter() - t0
    trace_path = args.loss_trace or Path(ckpt_path).with_suffix(".loss.csv")
    trace = np.asarray(result.loss_trace)
    smooth = smoothed(trace, min(50, len(trace)))
    pad = np.full(len(trace) - len(smooth), np.nan)
    with open(trace_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "smoothed"])
        for i, (loss, sm) in enumerate(zip(trace, np.concatenate([pad, smooth])), start=1):
            w.writerow([i, repr(float(loss)), "" if np.isnan(sm) else repr(float(sm))])
    _write_json(Path(ckpt_path).with_suffix(".json"), {
        "checkpoint": ckpt_path, "loss_trace": str(trace_path), "windows": len(data),
        "steps": result.step, "final_loss": float(trace[-1]), "seconds": elapsed,
        "parameters": model.n_parameters(), "config_hash": run["config_hash"],
    })
    print(f"trained {result.step} steps on {len(data)} windows in {elapsed:.1f}s; "
          f"last loss {trace[-1]:.5f}; checkpoint {ckpt_path}")
    return EXIT_OK


def cmd_sample(args) -> int:
    model, cfg, _ = _model_from(args.checkpoint)
    cfg = C.apply_overrides(cfg, args.set)
    spec = C.window_spec(cfg)
    history = _load_states(args.history, cfg, args.timestamps, hours=False)
    if len(history) < spec.history_len:
        raise ValueError(f"history has {len(history)} states, history_len is {spec.history_len}")
    steps = args.steps or cfg["sample"]["steps"]
    count = args.count or cfg["sample"]["count"]
    base = cfg["sample"]["seed"] if args.seed is None else args.seed
    seeds = [base + i for i in range(count)]
    t0 = time.perf_counter()
    gen = generate(model, history, spec, C.schedule(cfg), steps, seeds, C.codec_options(cfg))
    elapsed = time.perf_counter() - t0
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, seq in enumerate(gen.sequences()):
        path = outdir / f"sample_{i:03d}.csv"
        write_orderbook_file(seq, path)
        files.append(path.name)
    _write_json(outdir / "manifest.json", {
        "checkpoint": str(args.checkpoint), "history": str(args.history), "steps": steps,
        "seeds": seeds, "files": files, "history_len": spec.history_len, "pred_len": spec.pred_len,
        "repairs": [r.to_dict() for r in gen.reports], "repair_rate": gen.report.repair_rate,
        "seconds": elapsed, "config_hash": C.config_hash(cfg),
    })
    print(f"wrote {count} samples ({steps} steps, repair rate {gen.report.repair_rate:.3f}) to {outdir}")
    return EXIT_OK


def _segments_from(paths, cfg, skip: int) -> list[BookSeries]:
    segs = []
    for p in paths:
        s = parse_orderbook_file(p, cfg["data"]["n_levels"])
        segs.append(s[skip:])
    segs = [s for s in segs if len(s)]
    if not segs:
        raise ValueError("no states left to evaluate")
    return segs


def _write_report(report, outdir: Path, extra: dict) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    report.write(outdir / "report.json", outdir / "report.csv", outdir / "histograms.csv")
    payload = json.loads((outdir / "report.json").read_text())
    payload.update(extra)
    _write_json(outdir / "report.json", payload)


def cmd_evaluate(args) -> int:
    cfg = C.load_config(args.config, args.set)
    skip = cfg["data"]["history_len"] if args.skip_history else 0
    real = _segments_from(args.real, cfg, 0)
    gen = _segments_from(args.gen, cfg, skip)
    report = evaluate(real, gen, C.eval_config(cfg))
    _write_report(report, Path(args.outdir), {"config_hash": C.config_hash(cfg)})
    for name, e in report.entries.items():
        print(f"{name:>14}  L1 {e.l1:.4f}  W1 {e.wasserstein:.4f}")
    print(f"{'mean':>14}  L1 {report.mean_l1:.4f}  W1 {report.mean_wasserstein:.4f}")
    for name, why in report.missing.items():
        print(f"{name:>14}  missing: {why}")
    return EXIT_OK


def run_ablation(model, cfg, held_out: BookSeries, steps_list, windows: int | None = None,
                 include_noise: bool = False):
    """Sample every eval window of ``held_out`` at each step count and score against the truth."""
    spec = C.window_spec(cfg)
    wins = iterate_windows(held_out, spec, "eval")
    if windows:
        wins = wins[:windows]
    if not wins:
        raise ValueError("held-out data yields no evaluation window")
    real = true_futures(wins, spec)
    ecfg = C.eval_config(cfg)
    sched = C.schedule(cfg)
    runs = [("noise", None)] if include_noise else []
    runs += [(int(s), model) for s in steps_list]
    rows, long_rows = [], []
    for steps, m in runs:
        t0 = time.perf_counter()
        futures, rep = forecast_windows(m, wins, spec, sched, 1 if m is None else steps,
                                        cfg["sample"]["seed"], C.codec_options(cfg))
        elapsed = time.perf_counter() - t0
        report = evaluate(real, futures, ecfg)
        row = {"steps": steps, "wall_clock": elapsed, "repair_rate": rep.repair_rate, "windows": len(wins)}
        for lt in ("l1", "wasserstein"):
            lo, hi = report.mean_ci(lt)
            row.update({f"mean_{lt}": report.mean(lt), f"mean_{lt}_lo": lo, f"mean_{lt}_hi": hi})
        rows.append(row)
        for name, e in report.entries.items():
            for lt in ("l1", "wasserstein"):
                lo, hi = e.ci(lt)
                long_rows.append({"steps": steps, "metric": name, "loss_type": lt,
                                  "distance": e.distance(lt), "ci_lo": lo, "ci_hi": hi})
        logger.info("steps %s: mean W1 %.4f, repair %.3f, %.1fs", steps, row["mean_wasserstein"],
                    row["repair_rate"], elapsed)
    return rows, long_rows


def _write_table(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def cmd_ablate(args) -> int:
    model, cfg, _ = _model_from(args.checkpoint)
    cfg = C.apply_overrides(cfg, args.set)
    held_out = _load_states(args.data, cfg, args.timestamps)
    try:
        steps_list = [int(s) for s in args.steps.split(",")]
    except ValueError:
        raise UsageError(f"--steps must be a comma-separated list of integers, got {args.steps!r}") from None
    rows, long_rows = run_ablation(model, cfg, held_out, steps_list, args.windows, args.include_noise)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    h = C.config_hash(cfg)
    for r in rows:
        r["config_hash"] = h
    _write_table(outdir / "ablation.csv", rows)
    _write_table(outdir / "ablation_long.csv", long_rows)
    for r in rows:
        print(f"steps {r['steps']:>5}  mean W1 {r['mean_wasserstein']:.4f} "
              f"[{r['mean_wasserstein_lo']:.4f}, {r['mean_wasserstein_hi']:.4f}]  "
              f"repair {r['repair_rate']:.3f}  {r['wall_clock']:.2f}s")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.calibrate:
        states = parse_orderbook_file(args.calibrate, args.levels, args.calibrate_timestamps)
        params = calibrate(states, depth=args.depth, tick_size=args.tick_size)
        params.seed = args.seed
        init = states[len(states) - 1]
    else:
        params = ContParams.power_law(depth=args.depth, n_levels=args.levels, tick_size=args.tick_size,
                                      seed=args.seed)
        init = None
    result = simulate(params, init, args.events)
    write_orderbook_file(result.states, args.out, args.timestamps)
    _write_json(Path(args.out).with_suffix(".json"), {
        "emitted": result.emitted, "halted": result.halted, "events": result.event_counts,
        "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.__dict__.items()},
    })
    print(f"simulated {result.emitted} events{' (halted)' if result.halted else ''} to {args.out}")
    return EXIT_OK


# parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lobdiffusion", description="Encode, train, sample and evaluate limit order book diffusion models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", type=Path, help="YAML run configuration")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. train.lr=1e-3")

    sp = sub.add_parser("ingest", help="validate a LOBSTER orderbook file")
    sp.add_argument("orderbook", type=Path)
    sp.add_argument("--timestamps", type=Path, help="matching message file (first column = seconds)")
    sp.add_argument("--json", type=Path, help="write the summary as JSON")
    sp.add_argument("--strict", action="store_true", help="exit 2 when violations are found")
    sp.add_argument("--max-report", type=int, default=20)
    common(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("synth", help="write a synthetic orderbook stream")
    sp.add_argument("--regime", choices=REGIMES, default="walk")
    sp.add_argument("--length", type=int, default=50_000)
    sp.add_argument("--levels", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--timestamps", type=Path)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train the diffusion model")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--timestamps", type=Path)
    sp.add_argument("--out", type=Path, required=True, help="checkpoint path")
    sp.add_argument("--loss-trace", type=Path)
    sp.add_argument("--resume", type=Path)
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="sample futures for a history")
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--history", type=Path, required=True)
    sp.add_argument("--timestamps", type=Path)
    sp.add_argument("--count", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--outdir", type=Path, required=True)
    common(sp, config=False)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("evaluate", help="compare generated against real sequences")
    sp.add_argument("--real", type=Path, nargs="+", required=True)
    sp.add_argument("--gen", type=Path, nargs="+", required=True)
    sp.add_argument("--skip-history", action="store_true", help="drop the first history_len rows of each generated file")
    sp.add_argument("--outdir", type=Path, required=True)
    common(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("ablate", help="sampling-steps ablation on held-out data")
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--timestamps", type=Path)
    sp.add_argument("--steps", default="10,100,1000")
    sp.add_argument("--windows", type=int, help="limit the number of evaluation windows")
    sp.add_argument("--include-noise", action="store_true", help="add a pure-noise reference row")
    sp.add_argument("--outdir", type=Path, required=True)
    common(sp, config=False)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("simulate", help="run the zero-intelligence baseline")
    sp.add_argument("--events", type=int, default=100_000)
    sp.add_argument("--levels", type=int, default=10)
    sp.add_argument("--depth", type=int, default=10)
    sp.add_argument("--tick-size", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--calibrate", type=Path, help="fit rates to this orderbook file first")
    sp.add_argument("--calibrate-timestamps", type=Path)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--timestamps", type=Path)
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OrderbookFormatError, BookValidationError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
