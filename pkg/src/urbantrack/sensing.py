"""Measurement generation: full signal pipeline and a fast measurement-level mode.

The signal pipeline synthesizes per-element baseband samples around each
pulse of the train, matched-filters them onto a delay/Doppler grid, removes
a static background, extracts peaks and fits a concave quadratic to each one.
The fast mode skips the waveform and draws (range, range-rate) detections
directly from the propagation paths with the Fisher-information covariance.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
from scipy import optimize, special, stats

from .geometry import (PATH_KINDS, SPEED_OF_LIGHT, PropagationPath, Receiver,
                       ScenarioMap, enumerate_paths)
from .waveform import ChirpWaveform, SNRModel, sample_pulse, train_covariance

TARGET_KINDS = tuple(k for k in PATH_KINDS if "T" in k)
STATIC_KINDS = tuple(k for k in PATH_KINDS if "T" not in k)


@dataclass(frozen=True)
class Measurement:
    r: float
    rdot: float
    R: np.ndarray = field(repr=False)
    receiver: int = 0
    scan: int = 0
    origin: str = ""  # simulation bookkeeping only, never read by the tracker

    @property
    def z(self) -> np.ndarray:
        return np.array([self.r, self.rdot])


@dataclass
class Scan:
    k: int
    receiver: int
    measurements: list = field(default_factory=list)
    waveform: str = ""

    def __len__(self):
        return len(self.measurements)

    @property
    def Z(self) -> np.ndarray:
        if not self.measurements:
            return np.zeros((0, 2))
        return np.array([[m.r, m.rdot] for m in self.measurements])

    @property
    def Rs(self) -> np.ndarray:
        if not self.measurements:
            return np.zeros((0, 2, 2))
        return np.array([m.R for m in self.measurements])

    def to_json(self) -> str:
        return json.dumps({
            "k": self.k, "receiver": self.receiver, "waveform": self.waveform,
            "measurements": [{"r": m.r, "rdot": m.rdot, "R": np.asarray(m.R).tolist(),
                              "origin": m.origin} for m in self.measurements]})

    @classmethod
    def from_json(cls, line: str) -> "Scan":
        d = json.loads(line)
        ms = [Measurement(m["r"], m["rdot"], np.array(m["R"]), d["receiver"], d["k"],
                          m.get("origin", "")) for m in d["measurements"]]
        return cls(d["k"], d["receiver"], ms, d.get("waveform", ""))


def write_scans_jsonl(scans: Sequence[Scan], path) -> None:
    with open(path, "w") as fh:
        for s in scans:
            fh.write(s.to_json() + "\n")


def read_scans_jsonl(path) -> list[Scan]:
    with open(path) as fh:
        return [Scan.from_json(line) for line in fh if line.strip()]


# --------------------------------------------------------------------------
# signal-level pipeline

@dataclass(frozen=True)
class SignalConfig:
    """Sampling, grid and detection settings for the signal pipeline.

    The Doppler grid spans ``+-max_range_rate / lambda`` clipped to the
    unambiguous interval ``+-1 / (2 T1)`` of the pulse train: beyond it the
    train response repeats exactly and the grid maximum would be arbitrary.
    """

    sample_period: float = 2.0e-6 / 256
    delay_bins: int = 256
    doppler_bins: int = 64
    max_range_rate: float = 40.0
    guard: float = 4.0          # fast-time margin around each echo, in kappa
    eps_cells: tuple = (3, 3)   # excision half-width (delay, doppler)
    fit_cells: tuple = (1, 3)   # quadratic-fit half-width (delay, doppler)
    noise_power: float = 1.0    # per-sample variance of the complex noise
    threshold: float = 0.0      # detection threshold on |A|
    amplitude_scale: float = 1.0  # multiplies path attenuation to give amplitude

    def delay_grid(self) -> np.ndarray:
        return np.arange(self.delay_bins) * self.sample_period

    def doppler_grid(self, w: ChirpWaveform) -> np.ndarray:
        vmax = self.max_range_rate / w.wavelength
        if w.pulses > 1:
            vmax = min(vmax, 0.5 / w.pri)
        # periodic grid when it covers the full ambiguity interval
        if w.pulses > 1 and np.isclose(vmax, 0.5 / w.pri):
            return -vmax + np.arange(self.doppler_bins) * (2 * vmax / self.doppler_bins)
        return np.linspace(-vmax, vmax, self.doppler_bins)

    def fast_time(self, w: ChirpWaveform) -> np.ndarray:
        """Sample times relative to each pulse's transmit centre."""
        T2 = self.sample_period
        lo = -int(np.ceil(self.guard * w.kappa / T2))
        hi = self.delay_bins + int(np.ceil(self.guard * w.kappa / T2))
        return np.arange(lo, hi) * T2

    def check(self, w: ChirpWaveform) -> None:
        if self.sample_period > 1.0 / (2.0 * w.bandwidth):
            raise ValueError("sample period does not resolve the chirp bandwidth")


@dataclass(frozen=True)
class DelayDopplerImage:
    delay: np.ndarray
    doppler: np.ndarray
    magnitude: np.ndarray  # shape (len(delay), len(doppler))

    def __post_init__(self):
        if self.magnitude.shape != (len(self.delay), len(self.doppler)):
            raise ValueError("image shape does not match its axes")

    def congruent(self, other: "DelayDopplerImage") -> bool:
        return (self.magnitude.shape == other.magnitude.shape
                and np.allclose(self.delay, other.delay)
                and np.allclose(self.doppler, other.doppler))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["tau", "nu", "magnitude"])
            for i, tau in enumerate(self.delay):
                for j, nu in enumerate(self.doppler):
                    out.writerow([repr(float(tau)), repr(float(nu)),
                                  repr(float(self.magnitude[i, j]))])


@dataclass(frozen=True)
class ReceivedSignal:
    samples: np.ndarray     # (elements, pulses, fast-time)
    fast_time: np.ndarray
    pulse_times: np.ndarray


def _steering(rx: Receiver, azimuth: float, wavelength: float) -> np.ndarray:
    dbar = rx.element_spacing / wavelength
    return np.exp(-1j * np.arange(rx.num_elements) * dbar * np.cos(azimuth))


def scene_paths(scene: ScenarioMap, targets, rx: Receiver, *, static: bool = True,
                min_attenuation: float = 0.0) -> list[PropagationPath]:
    """Static clutter paths (once) plus target paths for every target."""
    paths: list[PropagationPath] = []
    for tx in scene.sensors.transmitters:
        if static:
            paths += enumerate_paths(scene, tx, np.zeros(6), rx, kinds=STATIC_KINDS,
                                     min_attenuation=min_attenuation)
        for x in targets:
            paths += enumerate_paths(scene, tx, x, rx, include_static=False,
                                     kinds=TARGET_KINDS, min_attenuation=min_attenuation)
    return paths


def synthesize_received(paths: Sequence[PropagationPath], w: ChirpWaveform, rx: Receiver,
                        config: SignalConfig, rng: np.random.Generator | None = None,
                        phases: Sequence[float] | None = None) -> ReceivedSignal:
    """Per-element baseband samples of all path echoes plus white noise.

    Each path contributes ``A alpha s(t - tau) exp(j 2 pi nu t)`` with array
    phase ``exp(-j (l-1) dbar cos theta)`` and a phase uniform in
    ``(-pi, pi]`` (``phases`` overrides it). Target paths draw a fresh phase
    from ``rng``; static clutter paths keep the carrier phase of their length,
    so they look the same from scan to scan. Noise is skipped when ``rng`` is
    None or the configured noise power is zero.
    """
    config.check(w)
    t = config.fast_time(w)
    tb = w.pulse_offsets
    y = np.zeros((rx.num_elements, len(tb), len(t)), dtype=complex)
    if phases is None and rng is not None:
        phases = np.pi - 2.0 * np.pi * rng.random(len(paths))
        for i, p in enumerate(paths):
            if not p.involves_target:
                phases[i] = static_phase(p, w.wavelength)
    for p_i, p in enumerate(paths):
        phi = 0.0 if phases is None else phases[p_i]
        amp = config.amplitude_scale * p.attenuation * np.exp(1j * phi)
        echo = sample_pulse(w, t - p.delay)
        ramp = np.exp(2j * np.pi * p.doppler * (tb[:, None] + t[None, :]))
        steer = _steering(rx, p.azimuth, w.wavelength)
        y += amp * steer[:, None, None] * (echo[None, :] * ramp)[None]
    if rng is not None and config.noise_power > 0:
        s = np.sqrt(config.noise_power / 2.0)
        y += s * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return ReceivedSignal(y, t, tb)


def static_phase(path: PropagationPath, wavelength: float) -> float:
    """Carrier phase of a fixed-length path, wrapped to ``(-pi, pi]``."""
    return float(np.pi - np.mod(2.0 * np.pi * path.length / wavelength, 2.0 * np.pi))


@lru_cache(maxsize=16)
def _template(w: ChirpWaveform, config: SignalConfig) -> np.ndarray:
    t = config.fast_time(w)
    taus = config.delay_grid()
    return np.conj(sample_pulse(w, t[:, None] - taus[None, :]))


def matched_filter(signal: ReceivedSignal, w: ChirpWaveform, config: SignalConfig,
                   doppler: np.ndarray | None = None) -> DelayDopplerImage:
    """Delay/Doppler correlation magnitude, summed coherently over elements."""
    nu = config.doppler_grid(w) if doppler is None else np.asarray(doppler, dtype=float)
    Y = signal.samples.sum(axis=0)                       # (pulses, fast-time)
    slow = np.exp(-2j * np.pi * nu[:, None] * signal.pulse_times[None, :])
    fast = np.exp(-2j * np.pi * nu[:, None] * signal.fast_time[None, :])
    Yn = (slow @ Y) * fast                               # (doppler, fast-time)
    A = np.abs(Yn @ _template(w, config)) * config.sample_period
    return DelayDopplerImage(config.delay_grid(), nu, A.T)


def background_average(images: Sequence[DelayDopplerImage]) -> DelayDopplerImage:
    if not images:
        raise ValueError("need at least one image")
    first = images[0]
    for im in images[1:]:
        if not first.congruent(im):
            raise ValueError("background images are on different grids")
    mean = np.mean([im.magnitude for im in images], axis=0)
    return DelayDopplerImage(first.delay, first.doppler, mean)


def subtract_background(image: DelayDopplerImage, background: DelayDopplerImage
                        ) -> DelayDopplerImage:
    if not image.congruent(background):
        raise ValueError("background is on a different grid")
    return DelayDopplerImage(image.delay, image.doppler,
                             np.maximum(image.magnitude - background.magnitude, 0.0))


@dataclass(frozen=True)
class Peak:
    i: int
    j: int
    tau: float
    nu: float
    value: float


def detect_peaks(image: DelayDopplerImage, threshold: float,
                 eps_cells=(3, 3), max_peaks: int | None = None) -> list[Peak]:
    """Greedy extraction: take the global max, blank its window, repeat."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    ei, ej = (eps_cells, eps_cells) if np.isscalar(eps_cells) else eps_cells
    work = image.magnitude.copy()
    peaks = []
    while max_peaks is None or len(peaks) < max_peaks:
        flat = int(np.argmax(work))
        i, j = divmod(flat, work.shape[1])
        v = work[i, j]
        if v < threshold:
            break
        peaks.append(Peak(i, j, float(image.delay[i]), float(image.doppler[j]),
                          float(image.magnitude[i, j])))
        work[max(i - ei, 0):i + ei + 1, max(j - ej, 0):j + ej + 1] = -np.inf
    return peaks


@dataclass(frozen=True)
class PeakFit:
    tau: float
    nu: float
    amplitude: float
    hessian: np.ndarray     # curvature of A / A_peak in (tau, nu)
    cov: np.ndarray         # (tau, nu) covariance
    fitted: bool


def fit_quadratic(x: np.ndarray, y: np.ndarray, v: np.ndarray):
    """Least-squares ``c0 + c1 x + c2 y + c3 x^2 + c4 x y + c5 y^2``."""
    X = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
    coef, *_ = np.linalg.lstsq(X, v, rcond=None)
    return coef


def fit_peak(image: DelayDopplerImage, peak: Peak, w: ChirpWaveform, *, noise_density: float,
             elements: int = 1, half=(1, 3)) -> PeakFit:
    """Refine a peak with a concave quadratic and turn curvature into covariance.

    The surface is fitted in cell units around the peak and mapped back to
    ``(tau, nu)``. With ``A ~ A_peak (1 - q)`` the Fisher information is
    ``4 eta H`` where ``H`` is the normalized curvature and ``eta`` the
    coherent SNR ``A_peak^2 / (2 L N0)``. A saddle, a window that does not fit
    in the image or an off-window maximizer falls back to the grid cell with
    the pulse-train covariance at the same SNR.
    """
    hi_, hj = half
    n, m = image.magnitude.shape
    dtau = image.delay[1] - image.delay[0]
    dnu = image.doppler[1] - image.doppler[0]
    ok = hi_ <= peak.i < n - hi_ and hj <= peak.j < m - hj
    if ok:
        ii, jj = np.meshgrid(np.arange(-hi_, hi_ + 1), np.arange(-hj, hj + 1), indexing="ij")
        vals = image.magnitude[peak.i + ii, peak.j + jj]
        c = fit_quadratic(ii.ravel().astype(float), jj.ravel().astype(float), vals.ravel())
        Hc = -np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])   # -Hess in cells
        g = np.array([c[1], c[2]])
        ok = bool(np.all(np.linalg.eigvalsh(Hc) > 0))
    if ok:
        off = np.linalg.solve(Hc, g)
        ok = abs(off[0]) <= hi_ and abs(off[1]) <= hj
    if ok:
        amp = float(c[0] + 0.5 * g @ off)
        D = np.diag([1.0 / dtau, 1.0 / dnu])
        H = D @ Hc @ D / amp
        tau = peak.tau + off[0] * dtau
        nu = peak.nu + off[1] * dnu
    else:
        amp = peak.value
        tau, nu = peak.tau, peak.nu
    eta = amp ** 2 / (2.0 * elements * noise_density)
    if ok:
        cov = np.linalg.inv(4.0 * eta * H)
        cov = 0.5 * (cov + cov.T)
    else:
        H = np.full((2, 2), np.nan)
        R = train_covariance(w, eta)
        J = np.diag([1.0 / SPEED_OF_LIGHT, -1.0 / w.wavelength])
        cov = J @ R @ J
    return PeakFit(float(tau), float(nu), float(amp), H, cov, ok)


def to_measurements(fits: Sequence[PeakFit], w: ChirpWaveform, receiver: int = 0,
                    k: int = 0) -> Scan:
    """``r = c tau`` and ``rdot = -lambda nu`` (positive Doppler closes range)."""
    J = np.diag([SPEED_OF_LIGHT, -w.wavelength])
    ms = []
    for f in fits:
        R = J @ f.cov @ J
        ms.append(Measurement(SPEED_OF_LIGHT * f.tau, -w.wavelength * f.nu,
                              0.5 * (R + R.T), receiver, k))
    return Scan(k, receiver, ms, w.name)


def detection_threshold(config: SignalConfig, w: ChirpWaveform, elements: int,
                        false_alarm: float = 1e-3) -> float:
    """Threshold keeping the chance of any noise cell crossing below ``false_alarm``.

    Each cell's noise is circular Gaussian with power ``L N0``; a union
    bound over all cells makes the guarantee independent of their correlation.
    """
    power = elements * config.noise_power * config.sample_period
    cells = config.delay_bins * config.doppler_bins
    return float(np.sqrt(power * np.log(cells / false_alarm)))


def calibrate_amplitude(config: SignalConfig, w: ChirpWaveform, elements: int,
                        reference_attenuation: float, pd: float = 0.9) -> float:
    """Amplitude scale giving detection probability ``pd`` at the reference path.

    Assumes broadside arrival (no array loss) and an on-grid peak. The peak
    magnitude is Rician with noise power ``L N0`` per cell.
    """
    sigma = np.sqrt(elements * config.noise_power * config.sample_period / 2.0)
    thr = config.threshold / sigma

    def miss(b):
        return stats.rice.sf(thr, b) - pd

    b = optimize.brentq(miss, 1e-6, thr + 20.0)
    return float(b * sigma / (elements * reference_attenuation))


def calibrated_config(config: SignalConfig, w: ChirpWaveform, elements: int,
                      reference_attenuation: float, pd: float = 0.9,
                      false_alarm: float = 1e-3) -> SignalConfig:
    cfg = replace(config, threshold=detection_threshold(config, w, elements, false_alarm))
    return replace(cfg, amplitude_scale=calibrate_amplitude(cfg, w, elements,
                                                            reference_attenuation, pd))


def signal_scan(scene: ScenarioMap, targets, w: ChirpWaveform, receiver: int,
                config: SignalConfig, rng: np.random.Generator, k: int = 0,
                background: DelayDopplerImage | None = None) -> Scan:
    """Full pipeline for one receiver: synthesize, filter, subtract, detect, fit."""
    rx = scene.sensors.receivers[receiver]
    paths = scene_paths(scene, targets, rx)
    sig = synthesize_received(paths, w, rx, config, rng)
    img = matched_filter(sig, w, config)
    if background is not None:
        img = subtract_background(img, background)
    peaks = detect_peaks(img, config.threshold, config.eps_cells)
    fits = [fit_peak(img, p, w, noise_density=config.noise_power * config.sample_period,
                     elements=rx.num_elements, half=config.fit_cells) for p in peaks]
    return to_measurements(fits, w, receiver, k)


def clutter_background(scene: ScenarioMap, w: ChirpWaveform, receiver: int,
                       config: SignalConfig, rng: np.random.Generator,
                       scans: int = 20) -> DelayDopplerImage:
    rx = scene.sensors.receivers[receiver]
    paths = scene_paths(scene, [], rx)
    return background_average([
        matched_filter(synthesize_received(paths, w, rx, config, rng), w, config)
        for _ in range(scans)])


# --------------------------------------------------------------------------
# fast measurement-level mode

@dataclass(frozen=True)
class FastScanParams:
    """Detection and false-alarm model for :func:`fast_scan`.

    By default a path is detected like a non-fluctuating echo against the
    fixed threshold of the signal pipeline: the normalized threshold is
    ``sqrt(2 ln(cells / false_alarm))`` and the detection probability is the
    Marcum Q function ``Q1(b, t)``, with the echo amplitude ``b`` scaled as
    ``sqrt(eta)`` and pinned so that ``pd_ref`` holds at the reference SNR.
    ``fluctuating=True`` switches to the slowly decaying law
    ``pd_ref ** (eta_ref / eta)``. Paths whose probability falls below
    ``min_pd`` are not generated at all.
    """

    snr: SNRModel = field(default_factory=SNRModel)
    pd_ref: float = 0.9
    clutter_density: float = 2.5e-4
    range_limits: tuple = (0.0, 600.0)
    rate_limit: float = 40.0
    min_pd: float = 1e-3
    noise_scale: float = 1.0
    kinds: tuple = TARGET_KINDS
    false_alarm: float = 1e-3
    cells: int = 256 * 64
    fluctuating: bool = False

    @property
    def region_area(self) -> float:
        return (self.range_limits[1] - self.range_limits[0]) * 2.0 * self.rate_limit

    @cached_property
    def _threshold(self) -> float:
        return float(np.sqrt(2.0 * np.log(self.cells / self.false_alarm)))

    def _amplitude_for(self, pd: float) -> float:
        t2 = self._threshold ** 2
        return float(optimize.brentq(lambda b: 1.0 - special.chndtr(t2, 2, b * b) - pd,
                                     0.0, self._threshold + 40.0))

    @cached_property
    def _reference_amplitude(self) -> float:
        return self._amplitude_for(self.pd_ref)

    def detection_probability(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.pd_ref <= 0.0:
            return np.zeros_like(eta)
        if self.pd_ref >= 1.0:
            return np.where(eta > 0, 1.0, 0.0)
        ratio = np.maximum(eta, 0.0) / self.snr.reference_snr
        if self.fluctuating:
            with np.errstate(divide="ignore"):
                return self.pd_ref ** (1.0 / ratio)
        b2 = self._reference_amplitude ** 2 * ratio
        return 1.0 - special.chndtr(self._threshold ** 2, 2, b2)

    def min_attenuation(self, w: ChirpWaveform) -> float:
        """Attenuation below which a path cannot reach ``min_pd``."""
        if not 0.0 < self.pd_ref < 1.0 or self.min_pd <= 0.0:
            return 0.0
        if self.fluctuating:
            ratio = np.log(self.pd_ref) / np.log(self.min_pd)   # eta / eta_ref at min_pd
        else:
            ratio = (self._amplitude_for(self.min_pd) / self._reference_amplitude) ** 2
        gain = self.snr(w, self.snr.reference_attenuation) / self.snr.reference_snr
        return float(self.snr.reference_attenuation * np.sqrt(ratio / gain))


def fast_scan(scene: ScenarioMap, targets, w: ChirpWaveform, receiver: int,
              params: FastScanParams, rng: np.random.Generator, k: int = 0,
              cache: dict | None = None) -> Scan:
    """Measurement-level scan: noisy target-path detections plus Poisson false alarms.

    Static clutter returns are taken as removed by background subtraction,
    so only target-involving paths and uniform false alarms are emitted.
    ``cache`` memoizes path geometry across calls; it must only be shared
    between calls on the same scene.
    """
    rx = scene.sensors.receivers[receiver]
    ms: list[Measurement] = []
    floor = params.min_attenuation(w)
    for n, tx in enumerate(scene.sensors.transmitters):
        for t_i, x in enumerate(targets):
            x = np.asarray(x, dtype=float)
            key = (n, receiver, floor, params.kinds, x.tobytes())
            paths = None if cache is None else cache.get(key)
            if paths is None:
                paths = enumerate_paths(scene, tx, x, rx, include_static=False,
                                        kinds=params.kinds, min_attenuation=floor)
                if cache is not None:
                    cache[key] = paths
            for p in paths:
                eta = float(params.snr(w, p.attenuation))
                pd = float(params.detection_probability(eta))
                if pd < params.min_pd:
                    continue
                u = rng.random()
                e = rng.standard_normal(2)
                if u >= pd:
                    continue
                R = train_covariance(w, eta)
                L = np.linalg.cholesky(R)
                z = np.array([p.length, p.range_rate]) + params.noise_scale * (L @ e)
                ms.append(Measurement(float(z[0]), float(z[1]), R, receiver, k,
                                      f"target{t_i}:{p.kind}"))
    lam = params.clutter_density * params.region_area
    nfa = rng.poisson(lam) if lam > 0 else 0
    if nfa:
        lo, hi = params.range_limits
        r = rng.uniform(lo, hi, nfa)
        rd = rng.uniform(-params.rate_limit, params.rate_limit, nfa)
        R = train_covariance(w, params.snr(w, params.snr.reference_attenuation))
        ms += [Measurement(float(a), float(b), R, receiver, k, "clutter")
               for a, b in zip(r, rd)]
    return Scan(k, receiver, ms, w.name)
