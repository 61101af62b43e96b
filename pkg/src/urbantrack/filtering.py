"""Unscented filtering, IMM mixing and terrain-driven model-set adaptation.

Models are referred to by name in the fixed order ``MODEL_ORDER``; the
transition matrix is row-stochastic with rows indexing the previous model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .motion import IAX, IAY, CT, NCA, NCV, MotionModel, build_model

log = logging.getLogger(__name__)

MODEL_ORDER = ("NCV", "NCA", "CT-left", "CT-right")
TURN_SET = ("NCA", "CT-left", "CT-right")
STRAIGHT_SET = ("NCV", "NCA")

DEFAULT_TRANSITION = np.array([
    [0.99, 0.01, 0.00, 0.00],
    [0.10, 0.70, 0.10, 0.10],
    [0.00, 0.01, 0.99, 0.00],
    [0.00, 0.01, 0.00, 0.99],
])


class FilterDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class UnscentedConfig:
    alpha: float = 0.1
    beta: float = 2.0
    kappa: float = 0.0
    accel_jitter: float = 1e-6

    def weights(self, n: int):
        lam = self.alpha ** 2 * (n + self.kappa) - n
        wm = np.full(2 * n + 1, 0.5 / (n + lam))
        wc = wm.copy()
        wm[0] = lam / (n + lam)
        wc[0] = wm[0] + 1.0 - self.alpha ** 2 + self.beta
        return wm, wc, np.sqrt(n + lam)


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def regularize(P: np.ndarray, jitter: float = 1e-6) -> np.ndarray:
    """Symmetric copy with the acceleration variances lifted to at least ``jitter``."""
    P = symmetrize(np.asarray(P, dtype=float))
    for i in (IAX, IAY):
        if P[i, i] < jitter:
            P[i, i] += jitter
    return P


def _sqrt(P: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(P)
        if np.min(vals) < -1e-6 * max(1.0, np.max(np.abs(vals))):
            log.warning("covariance not positive semidefinite; clipping eigenvalues")
        return vecs * np.sqrt(np.clip(vals, 1e-12, None))


def sigma_points(x: np.ndarray, P: np.ndarray, cfg: UnscentedConfig) -> np.ndarray:
    n = len(x)
    _, _, scale = cfg.weights(n)
    L = _sqrt(regularize(P, cfg.accel_jitter)) * scale
    return np.vstack([x, x + L.T, x - L.T])


def ukf_predict(x: np.ndarray, P: np.ndarray, model: MotionModel,
                cfg: UnscentedConfig = UnscentedConfig()):
    X = sigma_points(x, P, cfg)
    wm, wc, _ = cfg.weights(len(x))
    Y = X @ model.F.T
    m = wm @ Y
    d = Y - m
    Pp = symmetrize(d.T @ (wc[:, None] * d) + model.Q)
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(Pp))):
        raise FilterDivergence("non-finite predicted covariance")
    return m, Pp


def measurement_function(states: np.ndarray, tx, rx) -> np.ndarray:
    """Bistatic range and its time derivative for one or many states."""
    s = np.asarray(states, dtype=float)
    pos = s[..., [0, 2]]
    vel = s[..., [1, 3]]
    d1 = pos - np.asarray(tx, dtype=float)
    d2 = pos - np.asarray(rx, dtype=float)
    n1 = np.linalg.norm(d1, axis=-1)
    n2 = np.linalg.norm(d2, axis=-1)
    if np.any(n1 == 0) or np.any(n2 == 0):
        raise ValueError("target coincides with a sensor")
    r = n1 + n2
    rdot = np.sum(vel * (d1 / n1[..., None] + d2 / n2[..., None]), axis=-1)
    return np.stack([r, rdot], axis=-1)


@dataclass(frozen=True)
class MeasurementPrediction:
    z: np.ndarray     # predicted (r, rdot)
    Pzz: np.ndarray   # spread of predicted measurements, without R
    Pxz: np.ndarray   # state/measurement cross-covariance


def predict_measurement(x, P, tx, rx, cfg: UnscentedConfig = UnscentedConfig()
                        ) -> MeasurementPrediction:
    X = sigma_points(x, P, cfg)
    wm, wc, _ = cfg.weights(len(x))
    Zs = measurement_function(X, tx, rx)
    z = wm @ Zs
    dz = Zs - z
    dx = X - wm @ X
    return MeasurementPrediction(z, symmetrize(dz.T @ (wc[:, None] * dz)),
                                 dx.T @ (wc[:, None] * dz))


def _safe_inv2(S: np.ndarray) -> np.ndarray:
    """Inverse of a stack of 2x2 matrices, jittered where singular."""
    S = np.array(S, dtype=float)
    det = S[..., 0, 0] * S[..., 1, 1] - S[..., 0, 1] * S[..., 1, 0]
    tr = S[..., 0, 0] + S[..., 1, 1]
    bad = ~(det > 1e-12 * tr * tr)
    if np.any(bad):
        log.warning("singular innovation covariance; adding jitter")
        j = np.maximum(1e-9 * tr / 2.0, 1e-12)
        S[..., 0, 0] += np.where(bad, j, 0.0)
        S[..., 1, 1] += np.where(bad, j, 0.0)
        det = S[..., 0, 0] * S[..., 1, 1] - S[..., 0, 1] * S[..., 1, 0]
    inv = np.empty_like(S)
    inv[..., 0, 0] = S[..., 1, 1]
    inv[..., 1, 1] = S[..., 0, 0]
    inv[..., 0, 1] = -S[..., 0, 1]
    inv[..., 1, 0] = -S[..., 1, 0]
    return inv / det[..., None, None], det


def ukf_update(x, P, pred: MeasurementPrediction, Z, Rs, beta0: float, betas):
    """PDA-weighted update with a separate ``R`` per measurement.

    ``x' = x + sum b_i K_i v_i`` and
    ``P' = b0 P + sum b_i (P - K_i S_i K_i^T) + sum b_i u_i u_i^T - u u^T``
    with ``u_i = K_i v_i`` and ``u = sum b_i u_i``. With a common ``R`` this
    is the usual PDA covariance including the spread-of-innovations term.
    """
    Z = np.asarray(Z, dtype=float).reshape(-1, 2)
    betas = np.asarray(betas, dtype=float).reshape(-1)
    if len(Z) == 0 or np.all(betas == 0.0):
        return np.array(x, dtype=float), np.array(P, dtype=float)
    S = pred.Pzz[None] + np.asarray(Rs, dtype=float).reshape(-1, 2, 2)
    Sinv, _ = _safe_inv2(S)
    K = np.einsum("ij,njk->nik", pred.Pxz, Sinv)          # (m, 6, 2)
    v = Z - pred.z
    u = np.einsum("nik,nk->ni", K, v)                       # (m, 6)
    ub = betas @ u
    KSK = np.einsum("nik,nkl,njl->nij", K, S, K)
    Pn = (beta0 + betas.sum()) * P - np.einsum("n,nij->ij", betas, KSK)
    Pn = Pn + np.einsum("n,ni,nj->ij", betas, u, u) - np.outer(ub, ub)
    return x + ub, symmetrize(Pn)


def gaussian_likelihood(Z, z, S) -> np.ndarray:
    """N(Z_i; z, S_i) for a stack of 2x2 covariances ``S``."""
    Sinv, det = _safe_inv2(S)
    v = np.asarray(Z, dtype=float) - z
    d2 = np.einsum("ni,nij,nj->n", v, Sinv, v)
    return np.exp(-0.5 * d2) / (2.0 * np.pi * np.sqrt(det))


def mahalanobis2(Z, z, S) -> np.ndarray:
    Sinv, _ = _safe_inv2(S)
    v = np.asarray(Z, dtype=float) - z
    return np.einsum("ni,nij,nj->n", v, Sinv, v)


def imm_mix(means: np.ndarray, covs: np.ndarray, mu: np.ndarray, Pi: np.ndarray):
    """Standard IMM interaction step over the active models.

    ``Pi[i, j]`` is the probability of switching from model i to model j.
    Returns the mixed means, mixed covariances and predicted probabilities.
    """
    means = np.asarray(means, dtype=float)
    mu = np.asarray(mu, dtype=float)
    cbar = mu @ Pi
    if not np.any(cbar > 0):
        log.warning("all predicted model probabilities vanished; using uniform")
        cbar = np.full(len(mu), 1.0 / len(mu))
        W = np.full((len(mu), len(mu)), 1.0 / len(mu))
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            W = np.where(cbar > 0, (Pi * mu[:, None]) / cbar, 0.0)   # W[i, j] = P(i | j)
    x0 = W.T @ means
    P0 = np.empty_like(covs)
    for j in range(len(mu)):
        d = means - x0[j]
        P0[j] = np.einsum("i,ikl->kl", W[:, j], covs) + (W[:, j, None] * d).T @ d
    return x0, symmetrize(P0), cbar / cbar.sum()


def combine_output(means: np.ndarray, covs: np.ndarray, mu: np.ndarray):
    means = np.asarray(means, dtype=float)
    mu = np.asarray(mu, dtype=float)
    x = mu @ means
    d = means - x
    P = np.einsum("i,ikl->kl", mu, covs) + (mu[:, None] * d).T @ d
    return x, symmetrize(P)


def build_bank(T: float, var_cv: float = 0.25, var_ca: float = 1.0,
               turn_rate: float = np.pi / 20) -> dict:
    return {
        "NCV": build_model(NCV, T, var_cv),
        "NCA": build_model(NCA, T, var_ca),
        "CT-left": build_model(CT, T, var_cv, omega=turn_rate),
        "CT-right": build_model(CT, T, var_cv, omega=-turn_rate),
    }


@dataclass(frozen=True)
class ModelSet:
    active: tuple
    transition: np.ndarray = DEFAULT_TRANSITION

    def __post_init__(self):
        if not self.active:
            raise ValueError("active model set must not be empty")
        if not np.allclose(self.transition.sum(axis=1), 1.0):
            raise ValueError("transition matrix rows must sum to one")

    @property
    def index(self) -> list[int]:
        return [MODEL_ORDER.index(m) for m in self.active]

    def restricted(self) -> np.ndarray:
        """Transition matrix over the active set, rows renormalized."""
        idx = self.index
        Pi = self.transition[np.ix_(idx, idx)]
        rows = Pi.sum(axis=1, keepdims=True)
        return np.where(rows > 0, Pi / np.where(rows > 0, rows, 1.0), np.eye(len(idx)))


def adapt_model_set(position, scene=None, k: int = 0, mode: str = "replication",
                    window=(20, 100), transition=DEFAULT_TRANSITION) -> ModelSet:
    """Turn models near intersections, straight-line models elsewhere.

    ``mode="replication"`` switches on scan index (``window`` inclusive);
    ``mode="zones"`` uses the scene's intersection rectangles.
    """
    if mode == "replication":
        turning = window[0] <= k <= window[1]
    elif mode == "zones":
        turning = scene is not None and scene.in_intersection(position)
    else:
        raise ValueError(f"unknown model-set mode {mode!r}")
    return ModelSet(TURN_SET if turning else STRAIGHT_SET, transition)


def redistribute(mu: dict, new_active: Sequence[str]) -> dict:
    """Survivors keep their mass; entering models share the vacated mass equally."""
    survivors = [m for m in new_active if m in mu]
    entering = [m for m in new_active if m not in mu]
    out = {m: float(mu[m]) for m in survivors}
    vacated = 1.0 - sum(out.values())
    if entering:
        for m in entering:
            out[m] = vacated / len(entering)
    total = sum(out.values())
    if total <= 0:
        return {m: 1.0 / len(new_active) for m in new_active}
    return {m: out[m] / total for m in new_active}
