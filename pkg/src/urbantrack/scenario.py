"""Scenario files: scene, waveform library, truth trajectory and tracker settings.

Schema (JSON, all distances in metres)::

    constants   carrier_hz, bandwidth_hz, max_range, clutter_density, snr,
                scan_period, scans
    buildings   [{"lo": [x, y], "hi": [x, y]}]
    scatterers  [{"a": [x, y], "b": [x, y], "reflectivity": r}]   a == b: point
    sensors     {"transmitters": [[x, y]],
                 "receivers": [{"position": [x, y], "elements": L,
                                "spacing": d, "boresight": rad}]}
    intersections, bounds   [{"lo": .., "hi": ..}] and {"lo": .., "hi": ..}
    roads       [[[x0, y0], [x1, y1]]]
    waveforms   [{"kappa_us": k, "sweep": "up"|"down", "pulses": B, "pri_ms": T1}]
    trajectory  {"start": [x, vx, y, vy, ax, ay],
                 "segments": [{"duration": s, "mode": "cv"|"accel"|"turn", "value": v}]}
    targets     [{"offset_s": t}]   copies of the trajectory delayed by t
    detection   pd_ref, gate_probability, min_pd, rate_limit, energy_scaling,
                reference_distance, false_alarm, fluctuating
    tracker     existence and motion-model settings
    signal      sample/grid settings and the calibrated threshold and amplitude
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .association import ExistenceModel, TrackerConfig
from .filtering import DEFAULT_TRANSITION
from .geometry import (REFERENCE_PATH_LENGTH, SPEED_OF_LIGHT, Building,
                       ClutterScatterer, Receiver, ScenarioMap, SensorGeometry)
from .motion import TrajectorySegment, generate_trajectory
from .sensing import FastScanParams, SignalConfig
from .waveform import ChirpWaveform, SNRModel, WaveformLibrary


@dataclass
class Scenario:
    scene: ScenarioMap
    library: WaveformLibrary
    trajectory: np.ndarray
    offsets: tuple          # per target, in scans
    T: float
    scans: int
    fast: FastScanParams
    tracker: TrackerConfig
    signal: SignalConfig
    raw: dict = field(default_factory=dict, repr=False)

    def truth(self, k: int) -> list[tuple[int, np.ndarray]]:
        """``(target index, state)`` for every target present at scan ``k``."""
        out = []
        for i, off in enumerate(self.offsets):
            j = k - off
            if 0 <= j < len(self.trajectory):
                out.append((i, self.trajectory[j]))
        return out


def default_path() -> Path:
    return Path(str(resources.files("urbantrack") / "scenarios" / "intersection.json"))


def _pt(p):
    return np.asarray(p, dtype=float)


def build_scene(d: dict) -> ScenarioMap:
    c = d["constants"]
    wavelength = SPEED_OF_LIGHT / c["carrier_hz"]
    s = d["sensors"]
    receivers = tuple(Receiver(_pt(r["position"]), r.get("elements", 3),
                               r.get("spacing", wavelength / 2), r.get("boresight", 0.0))
                      for r in s["receivers"])
    sensors = SensorGeometry(tuple(_pt(t) for t in s["transmitters"]), receivers,
                             c["max_range"], wavelength)
    bounds = d.get("bounds")
    return ScenarioMap(
        buildings=tuple(Building(_pt(b["lo"]), _pt(b["hi"])) for b in d.get("buildings", [])),
        scatterers=tuple(ClutterScatterer(_pt(q["a"]), _pt(q["b"]), q["reflectivity"])
                         for q in d.get("scatterers", [])),
        sensors=sensors,
        clutter_density=c.get("clutter_density", 0.0),
        intersections=tuple((_pt(z["lo"]), _pt(z["hi"])) for z in d.get("intersections", [])),
        roads=tuple((_pt(a), _pt(b)) for a, b in d.get("roads", [])),
        bounds=None if bounds is None else (_pt(bounds["lo"]), _pt(bounds["hi"])),
    )


def build_library(d: dict) -> WaveformLibrary:
    c = d["constants"]
    lam = SPEED_OF_LIGHT / c["carrier_hz"]
    return WaveformLibrary(
        ChirpWaveform.from_bandwidth(w["kappa_us"] * 1e-6, sweep=w["sweep"],
                                     bandwidth=c["bandwidth_hz"], pulses=w.get("pulses", 5),
                                     pri=w.get("pri_ms", 10.0) * 1e-3, wavelength=lam)
        for w in d["waveforms"])


def parse_scenario(d: dict, *, energy_scaling: bool | None = None,
                   clutter_density: float | None = None, model_mode: str | None = None
                   ) -> Scenario:
    c = d["constants"]
    T = float(c["scan_period"])
    scene = build_scene(d)
    library = build_library(d)
    tr = d["trajectory"]
    segments = [TrajectorySegment(s["duration"], s.get("mode", "cv"), s.get("value", 0.0))
                for s in tr["segments"]]
    trajectory = generate_trajectory(tr["start"], segments, T)
    offsets = tuple(int(round(t.get("offset_s", 0.0) / T)) for t in d.get("targets", [{}]))

    det = d.get("detection", {})
    ref = det.get("reference_distance", 150.0)
    ref_att = (REFERENCE_PATH_LENGTH / (2.0 * ref)) ** 2
    snr = SNRModel(c.get("snr", 0.2), ref_att, min(w.kappa for w in library),
                   det.get("energy_scaling", True) if energy_scaling is None
                   else energy_scaling)
    density = c.get("clutter_density", 0.0) if clutter_density is None else clutter_density
    sg = d.get("signal", {})
    signal = SignalConfig(**{k: tuple(v) if isinstance(v, list) else v
                             for k, v in sg.items()})
    fast = FastScanParams(snr=snr, pd_ref=det.get("pd_ref", 0.9), clutter_density=density,
                          range_limits=(0.0, 2.0 * c["max_range"]),
                          rate_limit=det.get("rate_limit", 40.0),
                          min_pd=det.get("min_pd", 1e-3),
                          false_alarm=det.get("false_alarm", 1e-3),
                          cells=signal.delay_bins * signal.doppler_bins,
                          fluctuating=det.get("fluctuating", False))

    tk = d.get("tracker", {})
    ex = tk.get("existence", {})
    tracker = TrackerConfig(
        T=T, P_D=det.get("pd_ref", 0.9), P_G=det.get("gate_probability", 0.99),
        clutter_density=density,
        existence=ExistenceModel(ex.get("p11", 0.98), ex.get("p21", 0.0),
                                 ex.get("confirm", 0.9), ex.get("terminate", 0.05),
                                 ex.get("initial", 0.5)),
        model_mode=model_mode or tk.get("model_mode", "replication"),
        turn_window=tuple(tk.get("turn_window", (20, 100))),
        transition=np.array(tk.get("transition", DEFAULT_TRANSITION.tolist()), dtype=float),
        var_cv=tk.get("sigma_cv", 0.5) ** 2, var_ca=tk.get("sigma_ca", 1.0) ** 2,
        turn_rate=tk.get("turn_rate", np.pi / 20),
        accel_var=tk.get("accel_prior", 1.0) ** 2,
        vmax=tk.get("vmax", 15.0), sigma_v=tk.get("sigma_v", 1.0))

    return Scenario(scene, library, trajectory, offsets, T, int(c.get("scans", 140)),
                    fast, tracker, signal, d)


def load_scenario(path=None, **overrides) -> Scenario:
    path = default_path() if path is None else Path(path)
    with open(path) as fh:
        d = json.load(fh)
    return parse_scenario(d, **overrides)
