"""Monte Carlo driver, metrics and output files.

Every random draw of run ``r``, scan ``k`` and receiver ``m`` comes from
``SeedSequence([seed, r, k, m])``, so runs are independent of execution
order and the closed and open loops see common random numbers.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .association import CONFIRMED, TENTATIVE, Tracker
from .filtering import MODEL_ORDER
from .scenario import Scenario, load_scenario
from .scheduler import round_robin, select_waveform
from .sensing import (SignalConfig, calibrated_config, clutter_background, fast_scan,
                      signal_scan)

log = logging.getLogger(__name__)

CLOSED = "closed"
OPEN = "open"
METRICS_HEADER = ["scan", "mode", "mean_confirmed", "mean_rmse",
                  "model_prob_1", "model_prob_2", "model_prob_3", "model_prob_4"]
CONFIRMED_DEFINITION = "track existence probability reached the confirmation threshold"
TURN_SCANS = (60, 100)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str | None = None
    runs: int = 50
    scans: int | None = None
    mode: str = CLOSED
    seed: int = 0
    signal_level: bool = False
    energy_scaling: bool | None = None
    clutter_density: float | None = None
    model_mode: str | None = None
    no_targets: bool = False
    schedule_tentative: bool = False
    workers: int = 1
    out: str | None = None
    track_log: bool = False

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.scans is not None and self.scans < 1:
            raise ValueError("scans must be >= 1")
        if self.mode not in (CLOSED, OPEN):
            raise ValueError(f"mode must be {CLOSED!r} or {OPEN!r}")


@dataclass
class RunRecord:
    run: int
    confirmed: np.ndarray        # (scans,)
    sq_error: np.ndarray         # (scans,) summed squared position error
    assigned: np.ndarray         # (scans,) truth targets with a confirmed track
    present: np.ndarray          # (scans,) truth targets present
    model_probs: np.ndarray      # (scans, 4), NaN where target 1 is unassigned
    choices: np.ndarray          # (scans,)
    costs: np.ndarray            # (scans, library)
    tracks: list = field(default_factory=list)

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.sq_error)))


@dataclass
class Aggregate:
    mode: str
    runs: int
    confirmed: np.ndarray
    rmse: np.ndarray
    coverage: np.ndarray
    model_probs: np.ndarray
    records: list = field(default_factory=list, repr=False)
    excluded: list = field(default_factory=list)

    @property
    def mean_rmse(self) -> float:
        """Time average of the per-scan RMSE over scans where it is defined."""
        v = self.rmse[np.isfinite(self.rmse)]
        return float(v.mean()) if len(v) else float("nan")

    @property
    def mean_confirmed(self) -> float:
        return float(self.confirmed.mean())

    def turn_identification(self, scans=TURN_SCANS) -> float:
        """Fraction of turn-phase scans where CT-left has the largest mean probability."""
        lo, hi = scans
        P = self.model_probs[lo:hi + 1]
        P = P[np.all(np.isfinite(P), axis=1)]
        if len(P) == 0:
            return float("nan")
        return float(np.mean(np.argmax(P, axis=1) == MODEL_ORDER.index("CT-left")))


def assign_tracks_to_truth(positions: np.ndarray, truth: np.ndarray, gate: float = 20.0):
    """Greedy nearest pairs within ``gate``; returns ``{truth index: track index}``."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    if len(positions) == 0 or len(truth) == 0:
        return {}
    D = np.linalg.norm(truth[:, None, :] - positions[None, :, :], axis=2)
    order = np.argsort(D, axis=None, kind="stable")
    out: dict[int, int] = {}
    used: set[int] = set()
    for flat in order:
        i, j = divmod(int(flat), D.shape[1])
        if D[i, j] > gate:
            break
        if i in out or j in used:
            continue
        out[i] = j
        used.add(j)
    return out


def _rng(seed: int, run: int, k: int, m: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, run, k, m]))


def _background_rng(seed: int, j: int, m: int) -> np.random.Generator:
    # separate spawn key: never collides with a (run, scan, receiver) stream
    return np.random.default_rng(np.random.SeedSequence([seed, j, m], spawn_key=(1,)))


def _prepare_signal(sc: Scenario, cfg: ExperimentConfig) -> dict:
    """Calibrated settings and per-receiver, per-waveform clutter backgrounds."""
    sig: SignalConfig = sc.signal
    if sig.threshold <= 0:
        rx0 = sc.scene.sensors.receivers[0]
        sig = calibrated_config(sig, sc.library[0], rx0.num_elements,
                                sc.fast.snr.reference_attenuation)
    bg = {}
    for m in range(len(sc.scene.sensors.receivers)):
        for j, w in enumerate(sc.library):
            bg[m, j] = clutter_background(sc.scene, w, m, sig, _background_rng(cfg.seed, j, m))
    return {"config": sig, "background": bg}


def run_single(sc: Scenario, cfg: ExperimentConfig, run: int, signal=None,
               cache: dict | None = None) -> RunRecord:
    scans = cfg.scans or sc.scans
    tracker_cfg = sc.tracker
    if cfg.mode == OPEN:
        tracker_cfg = replace(tracker_cfg, model_mode="fixed", fixed_models=("NCV",))
    tracker = Tracker(sc.scene, tracker_cfg, sc.scene.roads)
    n_rx = len(sc.scene.sensors.receivers)
    L = len(sc.library)
    rec = RunRecord(run, np.zeros(scans, dtype=int), np.zeros(scans), np.zeros(scans, dtype=int),
                    np.zeros(scans, dtype=int), np.full((scans, len(MODEL_ORDER)), np.nan),
                    np.zeros(scans, dtype=int), np.full((scans, L), np.nan))
    statuses = (CONFIRMED, TENTATIVE) if cfg.schedule_tentative else (CONFIRMED,)
    decision = round_robin(sc.library, 0)
    if cache is None:
        cache = {}
    for k in range(scans):
        truth = [] if cfg.no_targets else sc.truth(k)
        states = [x for _, x in truth]
        w = sc.library[decision.choice]
        rec.choices[k] = decision.choice
        rec.costs[k] = decision.costs
        scan_list = []
        for m in range(n_rx):
            rng = _rng(cfg.seed, run, k, m)
            if signal is None:
                scan_list.append(fast_scan(sc.scene, states, w, m, sc.fast, rng, k, cache))
            else:
                scan_list.append(signal_scan(sc.scene, states, w, m, signal["config"], rng, k,
                                             signal["background"][m, decision.choice]))
        tracker.step(k, scan_list)

        confirmed = tracker.confirmed
        rec.confirmed[k] = len(confirmed)
        rec.present[k] = len(truth)
        if truth and confirmed:
            pos = np.array([t.mean[[0, 2]] for t in confirmed])
            tpos = np.array([x[[0, 2]] for _, x in truth])
            assign = assign_tracks_to_truth(pos, tpos)
            for i, j in assign.items():
                rec.sq_error[k] += float(np.sum((pos[j] - tpos[i]) ** 2))
                if truth[i][0] == 0:
                    rec.model_probs[k] = confirmed[j].model_probabilities()
            rec.assigned[k] = len(assign)
        if cfg.track_log:
            rec.tracks += [t.snapshot(k) for t in tracker.tracks]

        if cfg.mode == CLOSED:
            decision = select_waveform(tracker.predicted_states(k + 1, statuses), sc.library,
                                       sc.scene.sensors, sc.fast.snr, k + 1, tracker_cfg.ukf)
        else:
            decision = round_robin(sc.library, k + 1)
    return rec


_WORKER_STATE: dict = {}


def _worker(args):
    cfg, run = args
    key = (cfg.scenario, cfg.energy_scaling, cfg.clutter_density, cfg.model_mode,
           cfg.signal_level, cfg.seed)
    if key not in _WORKER_STATE:
        sc = _load(cfg)
        _WORKER_STATE[key] = (sc, _prepare_signal(sc, cfg) if cfg.signal_level else None, {})
    sc, signal, cache = _WORKER_STATE[key]
    return run_single(sc, cfg, run, signal, cache)


def _load(cfg: ExperimentConfig) -> Scenario:
    return load_scenario(cfg.scenario, energy_scaling=cfg.energy_scaling,
                         clutter_density=cfg.clutter_density, model_mode=cfg.model_mode)


def aggregate(records: Sequence[RunRecord], mode: str) -> Aggregate:
    good = [r for r in sorted(records, key=lambda r: r.run) if r.finite]
    bad = [r.run for r in records if not r.finite]
    if bad:
        log.warning("excluding runs with non-finite metrics: %s", bad)
    if not good:
        raise RuntimeError("no run produced finite metrics")
    conf = np.mean([r.confirmed for r in good], axis=0)
    sq = np.sum([r.sq_error for r in good], axis=0)
    n = np.sum([r.assigned for r in good], axis=0)
    present = np.sum([r.present for r in good], axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        rmse = np.where(n > 0, np.sqrt(sq / np.maximum(n, 1)), np.nan)
        coverage = np.where(present > 0, n / np.maximum(present, 1), np.nan)
    probs = np.array([r.model_probs for r in good])
    with np.errstate(invalid="ignore"):
        have = np.isfinite(probs[:, :, 0])
        tot = np.where(have[:, :, None], probs, 0.0).sum(axis=0)
        cnt = have.sum(axis=0)
        mp = np.where(cnt[:, None] > 0, tot / np.maximum(cnt, 1)[:, None], np.nan)
    return Aggregate(mode, len(good), conf, rmse, coverage, mp, good, bad)


def run_experiment(cfg: ExperimentConfig, cache: dict | None = None) -> Aggregate:
    """All runs of one mode. ``cache`` holds path geometry and may be shared
    between experiments on the same scenario file."""
    jobs = [(cfg, r) for r in range(cfg.runs)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            records = list(ex.map(_worker, jobs))
    else:
        sc = _load(cfg)
        signal = _prepare_signal(sc, cfg) if cfg.signal_level else None
        cache = {} if cache is None else cache
        records = [run_single(sc, cfg, r, signal, cache) for r in range(cfg.runs)]
    return aggregate(records, cfg.mode)


def run_comparison(cfg: ExperimentConfig) -> dict:
    cache: dict = {}
    return {m: run_experiment(replace(cfg, mode=m), cache) for m in (CLOSED, OPEN)}


# --------------------------------------------------------------------------
# outputs

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def metrics_csv(aggs: Sequence[Aggregate]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(METRICS_HEADER)
    for a in aggs:
        for k in range(len(a.confirmed)):
            out.writerow([k, a.mode, _fmt(a.confirmed[k]), _fmt(a.rmse[k]),
                          *[_fmt(p) for p in a.model_probs[k]]])
    return buf.getvalue()


def decisions_csv(aggs: Sequence[Aggregate], names: Sequence[str]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["run", "scan", "mode", "choice", "waveform",
                  *[f"cost_{i + 1}" for i in range(len(names))]])
    for a in aggs:
        for r in a.records:
            for k in range(len(r.choices)):
                out.writerow([r.run, k, a.mode, int(r.choices[k]), names[r.choices[k]],
                              *[_fmt(c) for c in r.costs[k]]])
    return buf.getvalue()


def pct_change(new: float, base: float) -> float | None:
    if not (np.isfinite(new) and np.isfinite(base)) or base == 0:
        return None
    return float(100.0 * (new - base) / base)


def _finite_or_none(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def summarize(aggs: Sequence[Aggregate], cfg: ExperimentConfig) -> dict:
    by = {a.mode: a for a in aggs}
    modes = {}
    for a in aggs:
        modes[a.mode] = {
            "runs": a.runs, "excluded_runs": a.excluded,
            "mean_rmse": _finite_or_none(a.mean_rmse),
            "mean_confirmed": a.mean_confirmed,
            "mean_coverage": _finite_or_none(np.nanmean(a.coverage))
            if np.any(np.isfinite(a.coverage)) else None,
            "turn_identification": _finite_or_none(a.turn_identification())
            if a.mode == CLOSED else None,
        }
    red = inc = None
    if CLOSED in by and OPEN in by:
        c = pct_change(by[CLOSED].mean_rmse, by[OPEN].mean_rmse)
        red = None if c is None else -c
        inc = pct_change(by[CLOSED].mean_confirmed, by[OPEN].mean_confirmed)
    cfg_d = {k: v for k, v in asdict(cfg).items() if k not in ("out", "workers")}
    return {"config": cfg_d, "modes": modes, "rmse_reduction_pct": red,
            "confirmed_increase_pct": inc, "confirmed_definition": CONFIRMED_DEFINITION}


def emit_outputs(aggs: Sequence[Aggregate], cfg: ExperimentConfig, out=None,
                 library_names: Sequence[str] | None = None) -> Path:
    out = Path(out or cfg.out or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
        if library_names is None:
            library_names = _load(cfg).library.names
        (out / "metrics.csv").write_text(metrics_csv(aggs))
        (out / "decisions.csv").write_text(decisions_csv(aggs, library_names))
        (out / "summary.json").write_text(
            json.dumps(summarize(aggs, cfg), indent=2, sort_keys=True, allow_nan=False,
                       default=_json_default) + "\n")
        if cfg.track_log:
            for a in aggs:
                for r in a.records:
                    with open(out / f"tracks_{a.mode}_{r.run:03d}.jsonl", "w") as fh:
                        for row in r.tracks:
                            fh.write(json.dumps(row) + "\n")
    except OSError as e:
        raise OSError(f"could not write outputs to {out}: {e}") from e
    return out


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"cannot serialize {type(v)}")


def read_metrics(path) -> dict:
    """``{mode: {column: array}}`` from a metrics.csv file."""
    rows: dict[str, dict[str, list]] = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            d = rows.setdefault(row["mode"], {c: [] for c in METRICS_HEADER if c != "mode"})
            for c in d:
                d[c].append(float(row[c]))
    return {m: {c: np.array(v) for c, v in d.items()} for m, d in rows.items()}
