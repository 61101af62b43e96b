"""Discrete-time motion models over the state ``[x, vx, y, vy, ax, ay]``.

Three linear-Gaussian models are provided: nearly constant velocity (NCV),
coordinated turn with known rate (CT) and the Wiener-sequence acceleration
model (NCA). NCV and CT keep the acceleration slots in the state but their
transition matrices zero them, so every model shares the same 6-d layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

STATE_DIM = 6
IX, IVX, IY, IVY, IAX, IAY = range(STATE_DIM)
POS = [IX, IY]
VEL = [IVX, IVY]

NCV = "NCV"
CT = "CT"
NCA = "NCA"


@dataclass(frozen=True)
class MotionModel:
    """Linear transition ``x' = F x + G w`` with ``cov(G w) = Q``."""

    kind: str
    T: float
    F: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    Q: np.ndarray = field(repr=False)
    var_x: float
    var_y: float
    omega: float = 0.0

    @property
    def name(self) -> str:
        if self.kind == CT:
            return "CT-left" if self.omega > 0 else "CT-right"
        return self.kind


def _velocity_gain(T: float, with_accel: bool) -> np.ndarray:
    G = np.zeros((STATE_DIM, 2))
    G[IX, 0] = G[IY, 1] = 0.5 * T * T
    G[IVX, 0] = G[IVY, 1] = T
    if with_accel:
        G[IAX, 0] = G[IAY, 1] = 1.0
    return G


def build_model(kind: str, T: float, var_x: float, var_y: float | None = None,
                omega: float = 0.0) -> MotionModel:
    """Build the transition, gain and process-noise matrices for one model.

    Parameters
    ----------
    kind : {"NCV", "CT", "NCA"}
    T : float
        Sampling period in seconds.
    var_x, var_y : float
        Acceleration noise variances (m^2/s^4). ``var_y`` defaults to
        ``var_x``; CT uses ``var_x`` for both axes.
    omega : float
        Turn rate in rad/s, positive counter-clockwise (left). CT only.
    """
    if T <= 0:
        raise ValueError("sampling period must be positive")
    if var_y is None:
        var_y = var_x
    F = np.zeros((STATE_DIM, STATE_DIM))
    if kind == NCV:
        F[IX, IX] = F[IVX, IVX] = F[IY, IY] = F[IVY, IVY] = 1.0
        F[IX, IVX] = F[IY, IVY] = T
        G = _velocity_gain(T, with_accel=False)
    elif kind == CT:
        if omega == 0.0:
            raise ValueError("CT model needs a non-zero turn rate; use NCV")
        s, c = np.sin(omega * T), np.cos(omega * T)
        F[IX, IX] = F[IY, IY] = 1.0
        F[IX, IVX] = s / omega
        F[IX, IVY] = -(1.0 - c) / omega
        F[IVX, IVX] = c
        F[IVX, IVY] = -s
        F[IY, IVX] = (1.0 - c) / omega
        F[IY, IVY] = s / omega
        F[IVY, IVX] = s
        F[IVY, IVY] = c
        G = _velocity_gain(T, with_accel=False)
        var_y = var_x
    elif kind == NCA:
        F = np.eye(STATE_DIM)
        F[IX, IVX] = F[IY, IVY] = T
        F[IVX, IAX] = F[IVY, IAY] = T
        F[IX, IAX] = F[IY, IAY] = 0.5 * T * T
        G = _velocity_gain(T, with_accel=True)
    else:
        raise ValueError(f"unknown motion model {kind!r}")
    Q = G @ np.diag([var_x, var_y]) @ G.T
    Q = 0.5 * (Q + Q.T)
    return MotionModel(kind=kind, T=float(T), F=F, G=G, Q=Q, var_x=float(var_x),
                       var_y=float(var_y), omega=float(omega) if kind == CT else 0.0)


def propagate(state: np.ndarray, model: MotionModel,
              noise: np.ndarray | None = None) -> np.ndarray:
    """One step of ``F x + G w``; deterministic when ``noise`` is None."""
    out = model.F @ np.asarray(state, dtype=float)
    if noise is not None:
        out = out + model.G @ np.asarray(noise, dtype=float)
    return out


@dataclass(frozen=True)
class TrajectorySegment:
    """A piece of a noise-free reference trajectory.

    ``mode`` is ``"cv"``, ``"accel"`` (``value`` = signed acceleration along
    the current heading, m/s^2) or ``"turn"`` (``value`` = turn rate, rad/s).
    """

    duration: float
    mode: str = "cv"
    value: float = 0.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("segment duration must be positive")
        if self.mode not in ("cv", "accel", "turn"):
            raise ValueError(f"unknown segment mode {self.mode!r}")


def generate_trajectory(start: Sequence[float], segments: Sequence[TrajectorySegment],
                        T: float) -> np.ndarray:
    """Piecewise noise-free propagation; one row per scan time, start included.

    Accelerations act along the current velocity direction so speed changes
    never rotate the heading; only turn segments rotate it.
    """
    if not segments:
        raise ValueError("need at least one segment")
    x = np.array(start, dtype=float)
    x[IAX] = x[IAY] = 0.0
    out = [x.copy()]
    ncv = build_model(NCV, T, 0.0)
    nca = build_model(NCA, T, 0.0)
    for seg in segments:
        steps = int(round(seg.duration / T))
        if seg.mode == "turn":
            step_model = build_model(CT, T, 0.0, omega=seg.value)
        elif seg.mode == "accel":
            step_model = nca
        else:
            step_model = ncv
        for _ in range(steps):
            if seg.mode == "accel":
                speed = np.hypot(x[IVX], x[IVY])
                heading = x[VEL] / speed if speed > 0 else np.zeros(2)
                x[IAX], x[IAY] = seg.value * heading
            x = propagate(x, step_model)
            out.append(x.copy())
        x[IAX] = x[IAY] = 0.0
        out[-1] = x.copy()
    return np.array(out)
