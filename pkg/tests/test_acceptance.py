"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N [PASS|FAIL]`` line; the lines are
collected again in the terminal summary.
"""

import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from conftest import golden
from oracles import fisher_covariance
from urbantrack.association import gate_threshold, lmipda_weights, validate
from urbantrack.filtering import (MODEL_ORDER, measurement_function, predict_measurement,
                                  ukf_predict, ukf_update)
from urbantrack.geometry import Receiver, ScenarioMap, SensorGeometry, enumerate_paths
from urbantrack.harness import CLOSED, OPEN, ExperimentConfig, run_comparison
from urbantrack.motion import CT, NCA, NCV, build_model, generate_trajectory
from urbantrack.scenario import default_path, load_scenario
from urbantrack.sensing import (clutter_background, matched_filter, scene_paths,
                                subtract_background, synthesize_received)
from urbantrack.waveform import correlation_coefficient, measurement_covariance

REFERENCE_END = np.array([2068.8, 1667.8])


@pytest.mark.xfail(strict=True, reason=(
    "the segment list ends at (2119.3, 1619.3), a displacement of (169.3, 119.3); the "
    "reference endpoint implies (118.8, 167.8), within 1.6 m of the same displacement "
    "with x and y swapped"))
def test_criterion_1_trajectory(report):
    sc = load_scenario()
    t0 = time.perf_counter()
    raw = sc.raw["trajectory"]
    from urbantrack.motion import TrajectorySegment
    tr = generate_trajectory(raw["start"], [TrajectorySegment(s["duration"], s.get("mode", "cv"),
                                                              s.get("value", 0.0))
                                            for s in raw["segments"]], sc.T)
    dt = time.perf_counter() - t0
    end = tr[-1][[0, 2]]
    miss = float(np.linalg.norm(end - REFERENCE_END))
    ok = miss <= 2.0 and dt < 1.0
    report(1, "trajectory replication", ok,
           f"end ({end[0]:.2f}, {end[1]:.2f}), {miss:.1f} m from reference endpoint, {dt:.3f} s")
    assert ok


def test_criterion_2_covariance_oracle(report):
    t0 = time.perf_counter()
    worst = 0.0
    rhos = []
    for w in load_scenario().library:
        R = measurement_covariance(w, 1.0)
        ref = fisher_covariance(w.kappa, w.gamma, w.sign, w.wavelength, 1.0)
        worst = max(worst, float(np.max(np.abs(R / ref - 1))))
        rhos.append(correlation_coefficient(R))
    dt = time.perf_counter() - t0
    signs = rhos[0] < -0.5 and rhos[2] < -0.5 and rhos[1] > 0.5 and rhos[3] > 0.5
    ok = worst <= 0.05 and signs and dt < 10
    report(2, "covariance oracle", ok,
           f"max rel err {worst:.1e}, rho {', '.join(f'{r:+.3f}' for r in rhos)}, {dt:.2f} s")
    assert ok


def _nees_runs(runs=100, steps=40, seed=0):
    """Model-matched NCA truth observed by two bistatic receivers, no clutter."""
    rng = np.random.default_rng(seed)
    m = build_model(NCA, 0.25, 0.05)
    tx = np.zeros(2)
    rxs = [np.array([200.0, 0.0]), np.array([0.0, 200.0])]
    w = load_scenario().library[0]
    from urbantrack.waveform import train_covariance
    R = train_covariance(w, 5.0)
    P0 = np.diag([4.0, 1.0, 4.0, 1.0, 0.1, 0.1])
    nees = np.zeros((runs, steps))
    for n in range(runs):
        x = np.array([100.0, -3.0, 100.0, 2.0, 0.0, 0.0])
        xh, P = x + rng.multivariate_normal(np.zeros(6), P0), P0.copy()
        for k in range(steps):
            x = m.F @ x + m.G @ (np.sqrt(m.var_x) * rng.standard_normal(2))
            xh, P = ukf_predict(xh, P, m)
            for rx in rxs:
                z = measurement_function(x, tx, rx) + rng.multivariate_normal(np.zeros(2), R)
                xh, P = ukf_update(xh, P, predict_measurement(xh, P, tx, rx), z[None],
                                   R[None], 0.0, [1.0])
            e = x - xh
            nees[n, k] = e @ np.linalg.solve(P, e)
    return nees


def test_criterion_3_filter(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for kind, om in ((NCV, 0.0), (NCA, 0.0), (CT, np.pi / 20)):
        mdl = build_model(kind, 0.25, 0.5, omega=om)
        A = rng.standard_normal((6, 6))
        P = A @ A.T + 6 * np.eye(6)
        x = rng.standard_normal(6)
        xp, Pp = ukf_predict(x, P, mdl)
        ref = mdl.F @ P @ mdl.F.T + mdl.Q
        worst = max(worst, float(np.max(np.abs(Pp - ref) / np.abs(ref).max())),
                    float(np.max(np.abs(xp - mdl.F @ x))))
    nees = _nees_runs()
    runs = nees.shape[0]
    lo, hi = stats.chi2.ppf([0.025, 0.975], 6 * runs) / runs
    anees = nees.mean(axis=0)
    final = float(anees[-1])
    inside = float(np.mean((anees > lo) & (anees < hi)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and lo <= final <= hi and dt < 60
    report(3, "filter correctness", ok,
           f"UKF vs KF {worst:.1e}; ANEES {final:.2f} in [{lo:.2f}, {hi:.2f}] "
           f"(time mean {anees.mean():.2f}, {inside:.0%} of steps inside); {dt:.1f} s")
    assert ok


def test_criterion_4_gating(report):
    rng = np.random.default_rng(4)
    S0 = np.array([[9.0, 1.5], [1.5, 0.8]])
    R = np.array([[1.2, -0.4], [-0.4, 0.3]])
    z = np.array([150.0, -2.0])
    Z = rng.multivariate_normal(z, S0 + R, 10_000)
    mask, _ = validate(z, S0, Z, np.repeat(R[None], len(Z), 0), gate_threshold(0.99))
    rate = float(mask.mean())
    ok = abs(rate - 0.99) <= 0.01
    report(4, "gating calibration", ok, f"validation rate {rate:.4f} (P_G 0.99)")
    assert ok


def test_criterion_5_lmipda_golden(report):
    g = golden("lmipda_two_track.json")
    inp = g["inputs"]
    res = lmipda_weights([np.array(v) for v in inp["likelihoods"]],
                         [np.array(v) for v in inp["gates"]],
                         [np.array(v) for v in inp["mu"]], inp["existence"],
                         inp["P_D"], inp["P_G"], inp["rho"])
    err = 0.0
    for r, ref in zip(res, g["tracks"]):
        for got, want in ((r.beta0, ref["beta0"]), (r.beta, ref["beta"]),
                          (r.delta_model, ref["delta_model"]), ([r.delta], [ref["delta"]]),
                          ([r.existence], [ref["existence"]]), (r.mu, ref["mu"])):
            want = np.asarray(want, dtype=float)
            err = max(err, float(np.max(np.abs(np.asarray(got) - want) / np.abs(want))))
    ok = err <= 1e-9
    report(5, "LMIPDA golden case", ok, f"max rel err {err:.1e}")
    assert ok


def test_criterion_6_signal_pipeline(report):
    # localization: one target, no clutter, no noise
    tx = np.zeros(2)
    rx = Receiver([0.0, 0.0], 3, 0.0375, np.pi / 2)
    scene = ScenarioMap(sensors=SensorGeometry((tx,), (rx,), 300.0))
    sc = load_scenario()
    cfg0 = replace(sc.signal, noise_power=0.0)
    cells = []
    for w in sc.library:
        (p,) = enumerate_paths(scene, tx, [20, 0.5, 100, -1.5, 0, 0], rx)
        img = matched_filter(synthesize_received([p], w, rx, cfg0, phases=[0.7]), w, cfg0)
        i, j = np.unravel_index(np.argmax(img.magnitude), img.magnitude.shape)
        cells.append(max(abs(img.delay[i] - p.delay) / (img.delay[1] - img.delay[0]),
                         abs(img.doppler[j] - p.doppler) / (img.doppler[1] - img.doppler[0])))
    localized = max(cells) <= 1.0

    # background subtraction on the clutter-only scene, 100 noise draws
    w = sc.library[0]
    ratios, worst_draw = [], 0.0
    for m, rxm in enumerate(sc.scene.sensors.receivers):
        rng = np.random.default_rng(60 + m)
        bg = clutter_background(sc.scene, w, m, sc.signal, rng)
        paths = scene_paths(sc.scene, [], rxm)
        pre, post = [], []
        for _ in range(100):
            img = matched_filter(synthesize_received(paths, w, rxm, sc.signal, rng), w,
                                 sc.signal)
            pre.append(img.magnitude)
            post.append(subtract_background(img, bg).magnitude)
        pre, post = np.array(pre), np.array(post)
        ratios.append(float(post.mean(axis=0).max() / pre.mean(axis=0).max()))
        worst_draw = max(worst_draw, float((post.max(axis=(1, 2))
                                            / pre.max(axis=(1, 2))).max()))
    suppressed = max(ratios) <= 0.10
    ok = localized and suppressed
    report(6, "signal pipeline", ok,
           f"peak within {max(cells):.2f} cells; mean residual "
           f"{max(ratios):.1%} of clutter peak (single-draw max incl. noise {worst_draw:.1%})")
    assert ok


@pytest.fixture(scope="module")
def headline():
    cfg = ExperimentConfig(runs=50, seed=0)
    t0 = time.perf_counter()
    res = run_comparison(cfg)
    return res, time.perf_counter() - t0


def test_criterion_7_headline(report, headline):
    res, dt = headline
    c, o = res[CLOSED], res[OPEN]
    red = 100 * (1 - c.mean_rmse / o.mean_rmse)
    inc = 100 * (c.mean_confirmed / o.mean_confirmed - 1)
    scans = len(c.confirmed)
    ok = red >= 30 and inc >= 8 and dt < 15 * 60 and c.runs >= 50 and scans == 140
    report(7, "headline comparison", ok,
           f"{c.runs} runs x {scans} scans: RMSE {c.mean_rmse:.2f} vs {o.mean_rmse:.2f} m "
           f"(-{red:.1f}%), confirmed {c.mean_confirmed:.2f} vs {o.mean_confirmed:.2f} "
           f"(+{inc:.1f}%), coverage {np.nanmean(c.coverage):.2f} vs "
           f"{np.nanmean(o.coverage):.2f}, {dt:.0f} s")
    assert ok


def test_criterion_8_model_identification(report, headline):
    res, _ = headline
    c = res[CLOSED]
    left = MODEL_ORDER.index("CT-left")
    per_run = []
    for r in c.records:
        P = r.model_probs[60:101]
        P = P[np.all(np.isfinite(P), axis=1)]
        if len(P):
            per_run.append(np.mean(np.argmax(P, axis=1) == left))
    frac = float(np.mean(per_run))
    ok = frac >= 0.6
    report(8, "model identification", ok,
           f"CT-left leads in {frac:.1%} of turn scans per run on average "
           f"({len(per_run)} runs; {c.turn_identification():.1%} for the run-mean probabilities)")
    assert ok


def test_criterion_9_determinism(report, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        subprocess.run([sys.executable, "-m", "urbantrack", "simulate", "--config",
                        str(default_path()), "--runs", "2", "--scans", "60", "--seed", "5",
                        "--out", str(out)], check=True, capture_output=True)
        outs.append((out / "metrics.csv").read_bytes())
    ok = outs[0] == outs[1] and len(outs[0]) > 0
    report(9, "determinism", ok, f"metrics.csv {len(outs[0])} bytes, identical: {ok}")
    assert ok
