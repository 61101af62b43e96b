from dataclasses import replace

import numpy as np
import pytest

from urbantrack.geometry import (SPEED_OF_LIGHT, ClutterScatterer, Receiver, ScenarioMap,
                                 SensorGeometry, enumerate_paths)
from urbantrack.scenario import load_scenario
from urbantrack.sensing import (DelayDopplerImage, FastScanParams, Peak, PeakFit, Scan,
                                SignalConfig, background_average, calibrate_amplitude,
                                clutter_background, detect_peaks, detection_threshold,
                                fast_scan, fit_peak, fit_quadratic, matched_filter,
                                read_scans_jsonl, scene_paths, signal_scan, subtract_background,
                                synthesize_received, to_measurements, write_scans_jsonl)
from urbantrack.waveform import SNRModel, default_library, sample_pulse, train_covariance

LIB = default_library()
W = LIB[0]
TX = np.zeros(2)


def open_scene(scatterers=(), elements=3, boresight=np.pi / 2):
    rx = Receiver([0.0, 0.0], elements, 0.0375, boresight)
    return ScenarioMap(scatterers=tuple(scatterers),
                       sensors=SensorGeometry((TX,), (rx,), 300.0)), rx


def image(values, d_tau=1.0, d_nu=1.0):
    values = np.asarray(values, dtype=float)
    return DelayDopplerImage(np.arange(values.shape[0]) * d_tau,
                             np.arange(values.shape[1]) * d_nu, values)


# ---------------------------------------------------------------- synthesis

def test_zero_paths_zero_noise_is_silent():
    _, rx = open_scene()
    sig = synthesize_received([], W, rx, SignalConfig(noise_power=0.0), None)
    assert not np.any(sig.samples)


def test_single_static_path_reproduces_pulse():
    scene, rx = open_scene(elements=1)
    (p,) = enumerate_paths(scene, TX, [0, 0, 60, 0, 0, 0], rx)
    cfg = SignalConfig(amplitude_scale=2.0)
    sig = synthesize_received([p], W, rx, cfg, phases=[0.0])
    expected = 2.0 * p.attenuation * sample_pulse(W, sig.fast_time - p.delay)
    for b in range(W.pulses):
        np.testing.assert_allclose(sig.samples[0, b], expected, atol=1e-15)


def test_steering_phase_between_elements():
    scene, rx = open_scene(elements=2, boresight=0.0)
    (p,) = enumerate_paths(scene, TX, [40, 0, 30, 0, 0, 0], rx)
    sig = synthesize_received([p], W, rx, SignalConfig(), phases=[0.3])
    i = np.argmax(np.abs(sig.samples[0, 0]))
    ratio = sig.samples[1, 0, i] / sig.samples[0, 0, i]
    dbar = rx.element_spacing / W.wavelength
    assert ratio == pytest.approx(np.exp(-1j * dbar * np.cos(p.azimuth)), abs=1e-12)


def test_undersampled_configuration_rejected():
    _, rx = open_scene()
    with pytest.raises(ValueError):
        synthesize_received([], W, rx, SignalConfig(sample_period=1e-7))


def test_static_paths_keep_their_phase():
    scene, rx = open_scene([ClutterScatterer([-50, 80], [50, 80], 0.5)])
    paths = scene_paths(scene, [], rx)
    cfg = SignalConfig(noise_power=0.0)
    a = synthesize_received(paths, W, rx, cfg, np.random.default_rng(1))
    b = synthesize_received(paths, W, rx, cfg, np.random.default_rng(2))
    np.testing.assert_array_equal(a.samples, b.samples)


def test_target_phase_is_random():
    scene, rx = open_scene()
    paths = scene_paths(scene, [[0, 0, 60, 1, 0, 0]], rx, static=False)
    cfg = SignalConfig(noise_power=0.0)
    a = synthesize_received(paths, W, rx, cfg, np.random.default_rng(1))
    b = synthesize_received(paths, W, rx, cfg, np.random.default_rng(2))
    np.testing.assert_allclose(np.abs(a.samples), np.abs(b.samples), atol=1e-15)
    assert not np.allclose(a.samples, b.samples)


# ---------------------------------------------------------------- matched filter

def test_zero_input_gives_zero_image():
    _, rx = open_scene()
    cfg = SignalConfig(noise_power=0.0)
    img = matched_filter(synthesize_received([], W, rx, cfg), W, cfg)
    assert img.magnitude.shape == (256, 64)
    assert not np.any(img.magnitude)


def test_doppler_grid_stays_inside_ambiguity_interval():
    nu = SignalConfig().doppler_grid(W)
    assert nu[0] == pytest.approx(-50.0)
    assert nu[-1] < 50.0
    assert np.all(np.diff(nu) > 0)


@pytest.mark.parametrize("w", list(LIB), ids=lambda w: w.name)
def test_noiseless_target_peaks_at_truth(w):
    scene, rx = open_scene()
    x = [20, 0.5, 100, -1.5, 0, 0]
    (p,) = enumerate_paths(scene, TX, x, rx)
    cfg = SignalConfig(noise_power=0.0, amplitude_scale=1.0)
    img = matched_filter(synthesize_received([p], w, rx, cfg, phases=[1.0]), w, cfg)
    i, j = np.unravel_index(np.argmax(img.magnitude), img.magnitude.shape)
    assert abs(img.delay[i] - p.delay) <= img.delay[1] - img.delay[0]
    assert abs(img.doppler[j] - p.doppler) <= img.doppler[1] - img.doppler[0]
    fit = fit_peak(img, Peak(i, j, img.delay[i], img.doppler[j], img.magnitude[i, j]), w,
                   noise_density=1.0, elements=rx.num_elements)
    assert fit.fitted
    assert abs(fit.tau - p.delay) < 0.5 * (img.delay[1] - img.delay[0])
    assert abs(fit.nu - p.doppler) < 0.5 * (img.doppler[1] - img.doppler[0])


def test_pure_noise_rarely_crosses_threshold():
    sc = load_scenario()
    cfg, rx = sc.signal, sc.scene.sensors.receivers[0]
    rng = np.random.default_rng(7)
    hits = sum(matched_filter(synthesize_received([], W, rx, cfg, rng), W, cfg).magnitude.max()
               >= cfg.threshold for _ in range(1000))
    assert hits <= 10


def test_peak_magnitude_falls_with_range():
    scene, rx = open_scene()
    cfg = SignalConfig(noise_power=0.0)
    peaks = []
    for y in (40, 60, 90, 130):
        (p,) = enumerate_paths(scene, TX, [0, 0, y, 0, 0, 0], rx)
        peaks.append(matched_filter(synthesize_received([p], W, rx, cfg, phases=[0.0]),
                                    W, cfg).magnitude.max())
    assert np.all(np.diff(peaks) <= 0)


# ---------------------------------------------------------------- background

def test_background_average_and_subtraction():
    a, b = image(np.ones((4, 3))), image(3 * np.ones((4, 3)))
    np.testing.assert_array_equal(background_average([a, b]).magnitude, 2.0)
    assert not np.any(subtract_background(a, background_average([a, a, a])).magnitude)
    # clamped at zero
    assert not np.any(subtract_background(a, b).magnitude)


def test_background_grid_mismatch():
    with pytest.raises(ValueError):
        background_average([image(np.ones((4, 3))), image(np.ones((4, 4)))])
    with pytest.raises(ValueError):
        subtract_background(image(np.ones((4, 3))), image(np.ones((4, 3)), d_tau=2.0))
    with pytest.raises(ValueError):
        background_average([])


def test_clutter_only_scene_subtracts_to_zero_without_noise():
    sc = load_scenario()
    cfg = replace(sc.signal, noise_power=0.0)
    bg = clutter_background(sc.scene, W, 0, cfg, np.random.default_rng(0), scans=3)
    rx = sc.scene.sensors.receivers[0]
    img = matched_filter(synthesize_received(scene_paths(sc.scene, [], rx), W, rx, cfg,
                                             np.random.default_rng(5)), W, cfg)
    assert img.magnitude.max() > 0
    assert subtract_background(img, bg).magnitude.max() <= 1e-12 * img.magnitude.max()


# ---------------------------------------------------------------- peaks

def _bumps(centres, shape=(40, 40), width=1.5):
    ii, jj = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    out = np.zeros(shape)
    for ci, cj, a in centres:
        out += a * np.exp(-((ii - ci) ** 2 + (jj - cj) ** 2) / (2 * width ** 2))
    return image(out)


def test_detect_peaks_below_threshold_is_empty():
    assert detect_peaks(_bumps([(10, 10, 1.0)]), threshold=2.0) == []
    with pytest.raises(ValueError):
        detect_peaks(_bumps([]), threshold=0.0)


def test_detect_two_separated_peaks():
    peaks = detect_peaks(_bumps([(10, 10, 2.0), (25, 30, 1.5)]), 0.5, eps_cells=3)
    assert [(p.i, p.j) for p in peaks] == [(10, 10), (25, 30)]


def test_close_peaks_merge():
    peaks = detect_peaks(_bumps([(10, 10, 2.0), (12, 11, 1.5)], width=0.7), 0.5, eps_cells=3)
    assert len(peaks) == 1


def test_peak_count_bound(rng):
    img = image(rng.random((30, 20)))
    peaks = detect_peaks(img, 1e-9, eps_cells=(2, 3))
    assert len(peaks) <= int(np.ceil(30 * 20 / (5 * 7))) * 4
    # every pair of peaks is outside each other's window
    for a in peaks:
        for b in peaks:
            if a is not b:
                assert abs(a.i - b.i) > 2 or abs(a.j - b.j) > 3


# ---------------------------------------------------------------- fitting

def test_fit_quadratic_is_exact():
    x, y = np.meshgrid(np.arange(-2.0, 3), np.arange(-3.0, 4), indexing="ij")
    c = np.array([5.0, 0.3, -0.2, -1.1, 0.4, -0.7])
    v = c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y
    np.testing.assert_allclose(fit_quadratic(x.ravel(), y.ravel(), v.ravel()), c, atol=1e-9)


def test_fit_peak_recovers_quadratic_surface():
    ii, jj = np.meshgrid(np.arange(20), np.arange(20), indexing="ij")
    i0, j0, a = 9.3, 10.6, 4.0
    Hc = np.array([[0.2, 0.05], [0.05, 0.1]])
    d = np.stack([ii - i0, jj - j0], -1)
    vals = a * (1 - 0.5 * np.einsum("...i,ij,...j", d, Hc, d))
    img = image(vals, d_tau=0.5, d_nu=2.0)
    pk = Peak(9, 11, img.delay[9], img.doppler[11], vals[9, 11])
    fit = fit_peak(img, pk, W, noise_density=0.1, elements=1)
    assert fit.fitted
    assert fit.tau == pytest.approx(i0 * 0.5, abs=1e-9)
    assert fit.nu == pytest.approx(j0 * 2.0, abs=1e-9)
    assert fit.amplitude == pytest.approx(a, rel=1e-9)
    D = np.diag([1 / 0.5, 1 / 2.0])
    np.testing.assert_allclose(fit.hessian, D @ Hc @ D, rtol=1e-6)


def test_saddle_falls_back_to_grid_cell():
    ii, jj = np.meshgrid(np.arange(10), np.arange(10), indexing="ij")
    vals = 5 + 0.1 * (ii - 5.0) ** 2 - 0.1 * (jj - 5.0) ** 2
    img = image(vals)
    fit = fit_peak(img, Peak(5, 5, 5.0, 5.0, 5.0), W, noise_density=0.1)
    assert not fit.fitted
    assert (fit.tau, fit.nu) == (5.0, 5.0)
    assert np.all(np.linalg.eigvalsh(fit.cov) > 0)


def test_edge_peak_falls_back():
    img = _bumps([(0, 10, 2.0)])
    fit = fit_peak(img, Peak(0, 10, 0.0, 10.0, 2.0), W, noise_density=0.1)
    assert not fit.fitted


@pytest.mark.parametrize("w", list(LIB), ids=lambda w: w.name)
def test_fitted_covariance_agrees_with_waveform_model(w):
    scene, rx = open_scene()
    (p,) = enumerate_paths(scene, TX, [0, 0.5, 100, -1.5, 0, 0], rx)
    cfg = SignalConfig(noise_power=0.0, amplitude_scale=0.01)
    img = matched_filter(synthesize_received([p], w, rx, cfg, phases=[0.0]), w, cfg)
    pk = detect_peaks(img, 1e-6)[0]
    N0 = SignalConfig().noise_power * cfg.sample_period
    fit = fit_peak(img, pk, w, noise_density=N0, elements=rx.num_elements)
    (m,) = to_measurements([fit], w).measurements
    eta = fit.amplitude ** 2 / (2 * rx.num_elements * N0)
    ratio = np.trace(m.R) / np.trace(train_covariance(w, eta))
    assert 0.5 <= ratio <= 2.0


def test_signal_pipeline_errors_match_model_covariance():
    scene, rx = open_scene()
    x = np.array([0.0, 0.5, 100.0, -1.5, 0, 0])
    (p,) = enumerate_paths(scene, TX, x, rx)
    cfg = SignalConfig(amplitude_scale=0.01, threshold=1e-3)
    rng = np.random.default_rng(0)
    err = []
    for _ in range(500):
        s = signal_scan(scene, [x], W, 0, cfg, rng)
        # at this SNR pulse-train sidelobes also cross; the main lobe comes first
        err.append(s.measurements[0].z - [p.length, p.range_rate])
    amp = cfg.amplitude_scale * p.attenuation * rx.num_elements
    eta = amp ** 2 / (2 * rx.num_elements * cfg.noise_power * cfg.sample_period)
    ratio = np.diag(np.cov(np.array(err).T)) / np.diag(train_covariance(W, eta))
    assert np.all((ratio > 0.5) & (ratio < 2.0)), ratio


# ---------------------------------------------------------------- measurements

def test_to_measurements_examples():
    fits = [PeakFit(1e-6, 0.0, 1.0, np.eye(2), np.diag([1e-18, 4.0]), True)]
    (m,) = to_measurements(fits, W, receiver=1, k=7).measurements
    assert m.r == pytest.approx(299.792458)
    assert m.rdot == 0.0
    np.testing.assert_allclose(np.diag(m.R), [SPEED_OF_LIGHT ** 2 * 1e-18, W.wavelength ** 2 * 4])
    assert (m.receiver, m.scan) == (1, 7)


def test_positive_doppler_means_closing_range():
    (m,) = to_measurements([PeakFit(1e-6, 10.0, 1.0, np.eye(2), np.eye(2), True)], W).measurements
    assert m.rdot == pytest.approx(-10.0 * W.wavelength)


def test_scan_jsonl_roundtrip(tmp_path):
    s = fast_scan(*_fast_setup(), np.random.default_rng(3), k=4)
    write_scans_jsonl([s, Scan(5, 0)], tmp_path / "s.jsonl")
    back = read_scans_jsonl(tmp_path / "s.jsonl")
    assert [b.k for b in back] == [4, 5]
    np.testing.assert_array_equal(back[0].Z, s.Z)
    np.testing.assert_array_equal(back[0].Rs, s.Rs)
    assert back[1].Z.shape == (0, 2)


def test_image_csv(tmp_path):
    img = image(np.arange(6.0).reshape(2, 3))
    img.to_csv(tmp_path / "i.csv")
    lines = (tmp_path / "i.csv").read_text().splitlines()
    assert lines[0] == "tau,nu,magnitude"
    assert len(lines) == 7


def test_image_shape_checked():
    with pytest.raises(ValueError):
        DelayDopplerImage(np.arange(3.0), np.arange(2.0), np.zeros((2, 3)))


# ---------------------------------------------------------------- calibration

def test_threshold_matches_rayleigh_tail():
    cfg = SignalConfig()
    thr = detection_threshold(cfg, W, 3, 1e-3)
    power = 3 * cfg.noise_power * cfg.sample_period
    assert np.exp(-thr ** 2 / power) * cfg.delay_bins * cfg.doppler_bins == pytest.approx(1e-3)


def test_calibrated_amplitude_by_simulation(rng):
    cfg = replace(SignalConfig(), threshold=detection_threshold(SignalConfig(), W, 3))
    scale = calibrate_amplitude(cfg, W, 3, reference_attenuation=1 / 9, pd=0.9)
    sigma = np.sqrt(3 * cfg.noise_power * cfg.sample_period / 2)
    b = scale * 3 / 9
    n = 200_000
    mag = np.abs(b + sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n)))
    assert np.mean(mag >= cfg.threshold) == pytest.approx(0.9, abs=0.005)


def test_bundled_calibration_is_current():
    sc = load_scenario()
    rx = sc.scene.sensors.receivers[0]
    thr = detection_threshold(sc.signal, sc.library[0], rx.num_elements)
    assert sc.signal.threshold == pytest.approx(thr, rel=1e-12)
    cfg = replace(sc.signal, threshold=thr)
    scale = calibrate_amplitude(cfg, sc.library[0], rx.num_elements,
                                sc.fast.snr.reference_attenuation)
    assert sc.signal.amplitude_scale == pytest.approx(scale, rel=1e-9)


# ---------------------------------------------------------------- fast mode

def _fast_setup(**kw):
    scene, _ = open_scene()
    params = FastScanParams(**{"clutter_density": 0.0, **kw})
    return scene, [[0, 1, 100, -2, 0, 0]], W, 0, params


def test_fast_scan_certain_detection_at_truth():
    scene, targets, w, m, params = _fast_setup(pd_ref=1.0, noise_scale=0.0)
    s = fast_scan(scene, targets, w, m, params, np.random.default_rng(0))
    (meas,) = s.measurements
    (p,) = enumerate_paths(scene, TX, targets[0], scene.sensors.receivers[0])
    assert (meas.r, meas.rdot) == (p.length, p.range_rate)
    assert meas.origin == "target0:T"


def test_fast_scan_no_detection_no_clutter():
    scene, targets, w, m, params = _fast_setup(pd_ref=0.0)
    assert len(fast_scan(scene, targets, w, m, params, np.random.default_rng(0))) == 0


def test_false_alarm_count_mean():
    scene, _ = open_scene()
    params = FastScanParams(clutter_density=2.5e-4, range_limits=(0.0, 5000.0), rate_limit=40.0)
    assert params.region_area == pytest.approx(4e5)
    rng = np.random.default_rng(11)
    counts = [len(fast_scan(scene, [], W, 0, params, rng)) for _ in range(10_000)]
    assert np.mean(counts) == pytest.approx(100, abs=5)
    assert np.var(counts) == pytest.approx(100, rel=0.1)


def test_fast_scan_noise_covariance():
    scene, targets, w, m, params = _fast_setup(pd_ref=1.0)
    rng = np.random.default_rng(2)
    (p,) = enumerate_paths(scene, TX, targets[0], scene.sensors.receivers[0])
    err = np.array([fast_scan(scene, targets, w, m, params, rng).measurements[0].z
                    - [p.length, p.range_rate] for _ in range(4000)])
    R = train_covariance(w, params.snr(w, p.attenuation))
    np.testing.assert_allclose(np.cov(err.T), R, rtol=0.1, atol=0.1 * np.sqrt(np.outer(
        np.diag(R), np.diag(R))).max())


def test_path_cache_is_transparent():
    sc = load_scenario()
    states = [x for _, x in sc.truth(50)]
    cache: dict = {}
    for _ in range(2):
        a = fast_scan(sc.scene, states, W, 1, sc.fast, np.random.default_rng(9), 50, cache)
        b = fast_scan(sc.scene, states, W, 1, sc.fast, np.random.default_rng(9), 50)
        np.testing.assert_array_equal(a.Z, b.Z)
    assert cache


def test_rice_detection_law_by_simulation(rng):
    params = FastScanParams()
    eta_ref = params.snr.reference_snr
    assert params.detection_probability(eta_ref) == pytest.approx(0.9, abs=1e-9)
    t = np.sqrt(2 * np.log(params.cells / params.false_alarm))
    b_ref = params._reference_amplitude
    n = 200_000
    for gain in (0.5, 1.0, 2.0):
        b = b_ref * np.sqrt(gain)
        x = b + rng.standard_normal(n)
        y = rng.standard_normal(n)
        mc = np.mean(x * x + y * y > t * t)
        assert params.detection_probability(gain * eta_ref) == pytest.approx(mc, abs=0.005)


def test_detection_probability_shapes():
    params = FastScanParams()
    eta = np.geomspace(1e-3, 10, 50)
    pd = params.detection_probability(eta)
    assert np.all(np.diff(pd) >= 0)
    assert pd[0] < 1e-3 and pd[-1] > 0.999
    fl = replace(params, fluctuating=True)
    assert fl.detection_probability(0.4) == pytest.approx(0.9 ** 0.5)
    assert params.detection_probability(0.0) == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("fluctuating", [False, True])
def test_min_attenuation_is_where_pd_hits_floor(fluctuating):
    params = FastScanParams(fluctuating=fluctuating)
    for w in LIB:
        a = params.min_attenuation(w)
        pd = params.detection_probability(params.snr(w, a))
        assert pd == pytest.approx(params.min_pd, rel=1e-6)


def test_energy_scaling_off_keeps_reference_snr():
    params = FastScanParams(snr=SNRModel(energy_scaling=False))
    assert params.min_attenuation(LIB[0]) == pytest.approx(params.min_attenuation(LIB[2]))
    on = FastScanParams()
    assert on.min_attenuation(LIB[2]) < on.min_attenuation(LIB[0])
