"""Command line entry points: ``simulate``, ``compare`` and ``plotdata``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .harness import (CLOSED, OPEN, ExperimentConfig, _load, emit_outputs, pct_change,
                      read_metrics, run_experiment, summarize)
from .filtering import MODEL_ORDER

log = logging.getLogger("urbantrack")


def _simulate(args) -> int:
    modes = [CLOSED, OPEN] if args.mode == "both" else [args.mode]
    base = ExperimentConfig(scenario=args.config, runs=args.runs, scans=args.scans,
                            seed=args.seed, signal_level=args.signal_level,
                            energy_scaling=args.energy_scaling, workers=args.workers,
                            clutter_density=args.clutter_density, model_mode=args.model_mode,
                            out=args.out, track_log=args.track_log, mode=modes[0])
    t0 = time.perf_counter()
    cache: dict = {}
    aggs = []
    for m in modes:
        cfg = ExperimentConfig(**{**base.__dict__, "mode": m})
        log.info("running %d %s-loop runs", cfg.runs, m)
        aggs.append(run_experiment(cfg, cache))
    out = emit_outputs(aggs, base, args.out, _load(base).library.names)
    s = summarize(aggs, base)
    for m, v in s["modes"].items():
        rmse = "n/a" if v["mean_rmse"] is None else f"{v['mean_rmse']:.3f} m"
        print(f"{m:>6}: mean RMSE {rmse}, mean confirmed {v['mean_confirmed']:.3f}")
    for key, label in (("rmse_reduction_pct", "RMSE reduction"),
                       ("confirmed_increase_pct", "confirmed increase")):
        if s[key] is not None:
            print(f"{label} {s[key]:.1f}%")
    print(f"wrote {out} in {time.perf_counter() - t0:.1f} s")
    return 0


def _modes_in(directory) -> dict:
    path = Path(directory) / "metrics.csv"
    if not path.exists():
        raise FileNotFoundError(f"no metrics.csv in {directory}")
    return read_metrics(path)


def _pick(metrics: dict, preferred: str, label: str):
    if preferred in metrics:
        return preferred, metrics[preferred]
    if len(metrics) == 1:
        return next(iter(metrics.items()))
    raise ValueError(f"cannot choose a mode for {label} among {sorted(metrics)}")


def _mean_rmse(d) -> float:
    v = d["mean_rmse"][np.isfinite(d["mean_rmse"])]
    return float(v.mean()) if len(v) else float("nan")


def _compare(args) -> int:
    """Treat directory ``a`` as the candidate and ``b`` as the baseline."""
    ma, mb = _modes_in(args.a), _modes_in(args.b)
    na, da = _pick(ma, CLOSED, "a")
    nb, db = _pick(mb, OPEN, "b")
    ra, rb = _mean_rmse(da), _mean_rmse(db)
    ca, cb = float(da["mean_confirmed"].mean()), float(db["mean_confirmed"].mean())
    red = pct_change(ra, rb)
    res = {"a": {"dir": str(args.a), "mode": na, "mean_rmse": ra, "mean_confirmed": ca},
           "b": {"dir": str(args.b), "mode": nb, "mean_rmse": rb, "mean_confirmed": cb},
           "rmse_reduction_pct": None if red is None else -red,
           "confirmed_increase_pct": pct_change(ca, cb)}
    for side in ("a", "b"):
        if not np.isfinite(res[side]["mean_rmse"]):
            res[side]["mean_rmse"] = None
    text = json.dumps(res, indent=2, allow_nan=False)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _plotdata(args) -> int:
    """Wide CSVs, one column per mode: confirmed tracks, RMSE and model probabilities."""
    metrics = _modes_in(args.input)
    out = Path(args.out or args.input)
    out.mkdir(parents=True, exist_ok=True)
    modes = sorted(metrics)
    scans = metrics[modes[0]]["scan"].astype(int)
    for name, col in (("confirmed.csv", "mean_confirmed"), ("rmse.csv", "mean_rmse")):
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scan", *modes])
            for i, k in enumerate(scans):
                w.writerow([k, *[repr(float(metrics[m][col][i])) for m in modes]])
    mode = CLOSED if CLOSED in metrics else modes[0]
    d = metrics[mode]
    with open(out / "model_probabilities.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scan", *MODEL_ORDER])
        for i, k in enumerate(scans):
            w.writerow([k, *[repr(float(d[f"model_prob_{j + 1}"][i])) for j in range(4)]])
    print(f"wrote confirmed.csv, rmse.csv, model_probabilities.csv to {out}")
    return 0


def _bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="urbantrack")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the Monte Carlo experiment")
    s.add_argument("--config", default=None, help="scenario JSON (default: bundled)")
    s.add_argument("--mode", choices=[CLOSED, OPEN, "both"], default="both")
    s.add_argument("--runs", type=int, default=50)
    s.add_argument("--scans", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="results")
    s.add_argument("--signal-level", action="store_true",
                   help="synthesize and matched-filter every scan (slow)")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--energy-scaling", type=_bool, default=None)
    s.add_argument("--clutter-density", type=float, default=None)
    s.add_argument("--model-mode", choices=["replication", "zones"], default=None)
    s.add_argument("--track-log", action="store_true", help="write per-run track JSON lines")
    s.set_defaults(func=_simulate)

    c = sub.add_parser("compare", help="compare two result directories")
    c.add_argument("--a", required=True, help="candidate results (closed loop)")
    c.add_argument("--b", required=True, help="baseline results (open loop)")
    c.add_argument("--out", default=None)
    c.set_defaults(func=_compare)

    d = sub.add_parser("plotdata", help="export plot-ready CSVs from metrics.csv")
    d.add_argument("--input", default="results")
    d.add_argument("--out", default=None)
    d.set_defaults(func=_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
