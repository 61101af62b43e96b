"""Waveform scheduling: one-step lookahead on posterior trace, or round robin."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .filtering import UnscentedConfig, predict_measurement, symmetrize
from .geometry import REFERENCE_PATH_LENGTH, SensorGeometry
from .waveform import SNRModel, WaveformLibrary, train_covariance

LOOKAHEAD = "lookahead"
ROUND_ROBIN = "round_robin"


@dataclass(frozen=True)
class SchedulerDecision:
    k: int
    choice: int
    costs: tuple
    mode: str
    fallback: bool = False


def round_robin(library: Sequence, k: int) -> SchedulerDecision:
    if len(library) == 0:
        raise ValueError("empty waveform library")
    return SchedulerDecision(k, k % len(library), tuple([np.nan] * len(library)),
                             ROUND_ROBIN)


def direct_attenuation(position, tx, rx) -> float:
    L = np.linalg.norm(position - tx) + np.linalg.norm(position - rx)
    return float((REFERENCE_PATH_LENGTH / L) ** 2)


def posterior_covariance(x, P, R_by_receiver, sensors: SensorGeometry,
                         cfg: UnscentedConfig = UnscentedConfig()) -> np.ndarray:
    """Covariance after one detection per receiver, updated in receiver order."""
    tx = sensors.transmitters[0]
    x = np.asarray(x, dtype=float)
    for rx, R in zip(sensors.receivers, R_by_receiver):
        pr = predict_measurement(x, P, tx, rx.position, cfg)
        S = pr.Pzz + R
        K = np.linalg.solve(S, pr.Pxz.T).T
        P = symmetrize(P - K @ S @ K.T)
    return P


def lookahead_costs(predictions, library: WaveformLibrary, sensors: SensorGeometry,
                    snr: SNRModel, cfg: UnscentedConfig = UnscentedConfig()) -> np.ndarray:
    """Mean posterior trace over tracks for each waveform.

    ``predictions`` holds the one-step-predicted ``(x, P)`` of each track.
    """
    tx = sensors.transmitters[0]
    costs = np.zeros(len(library))
    for j, w in enumerate(library):
        tot = 0.0
        for x, P in predictions:
            pos = np.asarray(x)[[0, 2]]
            Rs = [train_covariance(w, snr(w, direct_attenuation(pos, tx, rx.position)))
                  for rx in sensors.receivers]
            tot += np.trace(posterior_covariance(x, P, Rs, sensors, cfg))
        costs[j] = tot / len(predictions)
    return costs


def select_waveform(predictions, library: WaveformLibrary, sensors: SensorGeometry,
                    snr: SNRModel, k: int,
                    cfg: UnscentedConfig = UnscentedConfig()) -> SchedulerDecision:
    """Argmin of the lookahead cost; ties go to the earlier library entry."""
    if not predictions:
        d = round_robin(library, k)
        return SchedulerDecision(k, d.choice, d.costs, LOOKAHEAD, fallback=True)
    costs = lookahead_costs(predictions, library, sensors, snr, cfg)
    return SchedulerDecision(k, int(np.argmin(costs)), tuple(float(c) for c in costs),
                             LOOKAHEAD)
