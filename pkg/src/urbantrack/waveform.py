"""Gaussian-windowed chirp waveforms and their range/range-rate covariance.

SNR convention: ``eta = E / (2 N0)`` with ``E`` the received energy and
``N0`` the complex noise spectral density. With this choice the Fisher
information of a unit-energy waveform in delay ``tau`` (s) and Doppler
``omega`` (rad/s) is ``4 * eta * M`` where ``M`` is the curvature of
``-ln|chi|`` at the origin of the ambiguity function ``chi``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import SPEED_OF_LIGHT

UP = "up"
DOWN = "down"


def chirp_rate_for_bandwidth(kappa: float, bandwidth: float) -> float:
    """Chirp rate whose frequency sweep over ``+-3 kappa`` spans ``bandwidth``.

    The phase is ``gamma t^2`` so the instantaneous frequency is
    ``gamma t / pi`` Hz and the sweep over ``6 kappa`` is ``6 gamma kappa / pi``.
    """
    if kappa <= 0 or bandwidth < 0:
        raise ValueError("kappa must be positive and bandwidth non-negative")
    return np.pi * bandwidth / (3.0 * kappa)


@dataclass(frozen=True)
class ChirpWaveform:
    kappa: float
    gamma: float
    sweep: str = UP
    pulses: int = 5
    pri: float = 10e-3
    wavelength: float = SPEED_OF_LIGHT / 4e9
    bandwidth: float = 40e6
    name: str = ""

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.pulses < 1 or self.pulses % 2 == 0:
            raise ValueError("pulse count must be odd and >= 1")
        if self.sweep not in (UP, DOWN):
            raise ValueError(f"sweep must be {UP!r} or {DOWN!r}")
        if self.pulses > 1 and self.pri < 10 * self.kappa:
            raise ValueError("pulse repetition interval must be much longer than kappa")
        if not self.name:
            object.__setattr__(self, "name", f"{self.kappa * 1e6:g}us-{self.sweep}")

    @property
    def sign(self) -> float:
        return 1.0 if self.sweep == UP else -1.0

    @property
    def pulse_offsets(self) -> np.ndarray:
        half = (self.pulses - 1) // 2
        return np.arange(-half, half + 1) * self.pri

    @classmethod
    def from_bandwidth(cls, kappa, sweep=UP, bandwidth=40e6, **kw) -> "ChirpWaveform":
        return cls(kappa=kappa, gamma=chirp_rate_for_bandwidth(kappa, bandwidth),
                   sweep=sweep, bandwidth=bandwidth, **kw)


def sample_pulse(w: ChirpWaveform, t) -> np.ndarray:
    """Single pulse centred at 0, scaled so the B-pulse train has unit energy."""
    t = np.asarray(t, dtype=float)
    norm = (np.pi * w.kappa ** 2 * w.pulses ** 2) ** 0.25
    return np.exp((w.sign * 1j * w.gamma - 0.5 / w.kappa ** 2) * t * t) / norm


def sample_pulse_train(w: ChirpWaveform, t) -> np.ndarray:
    """Complex envelope of the transmitted train at times ``t``."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape, dtype=complex)
    for off in w.pulse_offsets:
        out += sample_pulse(w, t - off)
    return out


def _covariance(kappa, gamma, sign, spread, wavelength, eta) -> np.ndarray:
    if eta <= 0:
        raise ValueError("SNR must be positive")
    k2 = kappa * kappa
    t2 = 0.5 * k2 + spread             # mean-square duration
    w2 = 0.5 / k2 + 2.0 * gamma ** 2 * k2  # mean-square angular bandwidth
    tw = gamma * k2                    # time-frequency coupling
    det = t2 * w2 - tw * tw            # 1/4 for a single pulse
    inv = np.array([[t2, sign * tw], [sign * tw, w2]]) / (4.0 * eta * det)
    # r = c tau and rdot = -lambda omega / (2 pi)
    U = np.diag([SPEED_OF_LIGHT, -wavelength / (2.0 * np.pi)])
    R = U @ inv @ U
    return 0.5 * (R + R.T)


def measurement_covariance(w: ChirpWaveform, eta: float) -> np.ndarray:
    """Range/range-rate covariance of one Gaussian chirp pulse at SNR ``eta``.

    ``[[c^2 k^2/2, -+c q g k^2], [-+c q g k^2, q^2 (1/(2k^2) + 2 g^2 k^2)]] / eta``
    with ``q = lambda / (2 pi)``; the cross term is negative for an up-sweep.
    Depends only on ``(kappa, gamma, sweep)``, not on the pulse count.
    """
    return _covariance(w.kappa, w.gamma, w.sign, 0.0, w.wavelength, eta)


def train_covariance(w: ChirpWaveform, eta: float) -> np.ndarray:
    """Covariance of the coherently processed ``B``-pulse train.

    The pulse-centre spread ``T1^2 (B^2 - 1) / 12`` adds Doppler information;
    for ``B = 1`` this is exactly :func:`measurement_covariance`.
    """
    spread = w.pri ** 2 * (w.pulses ** 2 - 1) / 12.0
    return _covariance(w.kappa, w.gamma, w.sign, spread, w.wavelength, eta)


def correlation_coefficient(R: np.ndarray) -> float:
    return float(R[0, 1] / np.sqrt(R[0, 0] * R[1, 1]))


@dataclass(frozen=True)
class SNRModel:
    """Per-path SNR: reference SNR scaled by received power.

    ``reference_snr`` holds for a direct path of ``reference_attenuation``
    with the shortest pulse of the library. With ``energy_scaling`` on, a
    pulse ``kappa`` long carries ``kappa / reference_kappa`` times the energy.
    """

    reference_snr: float = 0.2
    reference_attenuation: float = 1.0 / 9.0
    reference_kappa: float = 0.5e-6
    energy_scaling: bool = True

    def __call__(self, w: ChirpWaveform, attenuation) -> np.ndarray | float:
        gain = (np.asarray(attenuation, dtype=float) / self.reference_attenuation) ** 2
        if self.energy_scaling:
            gain = gain * (w.kappa / self.reference_kappa)
        return self.reference_snr * gain


class WaveformLibrary(tuple):
    """Ordered, non-empty collection of distinct waveforms."""

    def __new__(cls, waveforms: Iterable[ChirpWaveform]):
        items = tuple(waveforms)
        if not items:
            raise ValueError("waveform library must not be empty")
        keys = [(w.kappa, w.sweep) for w in items]
        if len(set(keys)) != len(keys):
            raise ValueError("waveforms must have distinct (kappa, sweep)")
        return super().__new__(cls, items)

    @property
    def names(self) -> list[str]:
        return [w.name for w in self]


def default_library(kappas: Sequence[float] = (0.5e-6, 1.375e-6), pulses: int = 5,
                    pri: float = 10e-3, carrier: float = 4e9,
                    bandwidth: float = 40e6) -> WaveformLibrary:
    lam = SPEED_OF_LIGHT / carrier
    return WaveformLibrary(
        ChirpWaveform.from_bandwidth(k, sweep=s, bandwidth=bandwidth, pulses=pulses,
                                     pri=pri, wavelength=lam)
        for k in kappas for s in (UP, DOWN))
