"""Track management and linear multitarget integrated PDA (LMIPDA).

Every track runs a variable-structure IMM bank of UKFs. Per scan epoch the
tracker predicts once (model interaction, dynamics, existence Markov step),
then associates and updates with each receiver's scan in turn. Receivers
look at the same instant, so later receivers see the earlier update as
their prior without another prediction.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .filtering import (DEFAULT_TRANSITION, MODEL_ORDER, UnscentedConfig,
                        adapt_model_set, build_bank, combine_output, gaussian_likelihood,
                        imm_mix, mahalanobis2, predict_measurement, redistribute,
                        symmetrize, ukf_predict, ukf_update)
from .geometry import ScenarioMap
from .motion import IAX, IAY, STATE_DIM
from .sensing import Scan

log = logging.getLogger(__name__)

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
TERMINATED = "terminated"

_ALLOWED = {(TENTATIVE, CONFIRMED), (TENTATIVE, TERMINATED), (CONFIRMED, TERMINATED)}


@dataclass(frozen=True)
class ExistenceModel:
    p11: float = 0.98
    p21: float = 0.0
    confirm: float = 0.9
    terminate: float = 0.05
    initial: float = 0.5

    def __post_init__(self):
        if not (0 <= self.p11 <= 1 and 0 <= self.p21 <= 1):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if self.terminate >= self.confirm:
            raise ValueError("termination threshold must be below confirmation")

    @property
    def p12(self) -> float:
        return 1.0 - self.p11

    @property
    def p22(self) -> float:
        return 1.0 - self.p21

    def predict(self, psi: float) -> float:
        return self.p11 * psi + self.p21 * (1.0 - psi)


def existence_update(psi_pred: float, delta: float) -> float:
    return (1.0 - delta) * psi_pred / (1.0 - delta * psi_pred)


@dataclass
class Track:
    id: int
    models: tuple
    means: dict
    covs: dict
    mu: dict
    existence: float
    status: str = TENTATIVE
    born: int = 0
    ended: int | None = None
    low_confidence: bool = False
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None

    def set_status(self, status: str) -> None:
        if status == self.status:
            return
        if (self.status, status) not in _ALLOWED:
            raise ValueError(f"illegal status change {self.status} -> {status}")
        self.status = status

    def combine(self) -> None:
        ms = list(self.models)
        self.mean, self.cov = combine_output(np.array([self.means[m] for m in ms]),
                                             np.array([self.covs[m] for m in ms]),
                                             np.array([self.mu[m] for m in ms]))

    def model_probabilities(self) -> np.ndarray:
        return np.array([self.mu.get(m, 0.0) for m in MODEL_ORDER])

    def snapshot(self, k: int) -> dict:
        return {"k": k, "id": self.id, "status": self.status,
                "existence": self.existence,
                "mean": self.mean.tolist(), "var": np.diag(self.cov).tolist(),
                "mu": self.model_probabilities().tolist()}


def update_lifecycle(tracks: Sequence[Track], existence: ExistenceModel, k: int = 0) -> list:
    """Apply thresholds; returns the ``(track id, new status)`` changes."""
    changes = []
    for t in tracks:
        if t.status == TERMINATED:
            continue
        if t.existence < existence.terminate:
            t.set_status(TERMINATED)
            t.ended = k
            changes.append((t.id, TERMINATED))
        elif t.status == TENTATIVE and t.existence >= existence.confirm:
            t.set_status(CONFIRMED)
            changes.append((t.id, CONFIRMED))
    return changes


# floor applied when a scenario configures no clutter at all
MIN_CLUTTER_DENSITY = 1e-12


def gate_threshold(P_G: float, dof: int = 2) -> float:
    """Squared gate ``g^2`` with chi-square probability ``P_G``."""
    return float(stats.chi2.ppf(P_G, dof))


def validate(z_pred: np.ndarray, S0: np.ndarray, Z: np.ndarray, Rs: np.ndarray, g2: float):
    """Mask of measurements inside the gate ``(z - zhat)^T S^-1 (z - zhat) < g^2``.

    ``S = S0 + R_i`` per measurement. Also returns the gate area
    ``pi g^2 sqrt(det S)`` per measurement.
    """
    Z = np.asarray(Z, dtype=float).reshape(-1, 2)
    if len(Z) == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    S = S0[None] + np.asarray(Rs, dtype=float).reshape(-1, 2, 2)
    d2 = mahalanobis2(Z, z_pred, S)
    det = S[:, 0, 0] * S[:, 1, 1] - S[:, 0, 1] * S[:, 1, 0]
    return d2 < g2, np.pi * g2 * np.sqrt(np.maximum(det, 0.0))


@dataclass
class AssociationResult:
    validated: np.ndarray       # indices into the scan
    beta0: np.ndarray           # (models,)
    beta: np.ndarray            # (models, validated)
    delta_model: np.ndarray     # (models,)
    delta: float
    existence: float
    mu: np.ndarray              # (models,)
    omega: np.ndarray           # (validated,)
    prior: np.ndarray           # P_i for the validated measurements


def lmipda_weights(likelihoods: Sequence[np.ndarray], gates: Sequence[np.ndarray],
                   mu: Sequence[np.ndarray], existence: Sequence[float],
                   P_D: float, P_G: float, rho) -> list[AssociationResult]:
    """LMIPDA association weights, existence and model probabilities.

    Parameters
    ----------
    likelihoods : per track, array (models, m) of ``p_i^(t,r)``
    gates : per track, boolean mask (m,) of validated measurements
    mu : per track, predicted model probabilities
    existence : per track, predicted existence ``psi_{k|k-1}``
    rho : clutter density, scalar or per measurement

    Notes
    -----
    The track likelihood is the model-probability-weighted mixture
    ``p_i = sum_r mu_r p_i^(t,r)`` so that ``delta = sum_r mu_r delta_r``
    and the updated model probabilities stay normalized.
    """
    n = len(likelihoods)
    m = len(gates[0]) if n else 0
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (m,))
    if np.any(rho <= 0):
        raise ValueError("clutter density must be positive")
    pdg = P_D * P_G
    p_all = np.zeros((n, m))
    prior = np.zeros((n, m))
    for t in range(n):
        g = np.asarray(gates[t], dtype=bool)
        p = np.asarray(mu[t]) @ np.asarray(likelihoods[t])
        p = np.where(g, p, 0.0)
        p_all[t] = p
        ratio = p / rho
        tot = ratio.sum()
        if tot > 0:
            prior[t] = pdg * existence[t] * ratio / tot
    clamp = prior >= 1.0 - 1e-9
    if np.any(clamp):
        log.warning("association prior clamped below one for %d entries", int(clamp.sum()))
        prior = np.minimum(prior, 1.0 - 1e-9)
    contrib = p_all * prior / (1.0 - prior)
    total = contrib.sum(axis=0)
    out = []
    for t in range(n):
        g = np.flatnonzero(gates[t])
        omega = rho[g] + total[g] - contrib[t, g]
        lik = np.asarray(likelihoods[t])[:, g]
        share = lik / omega
        delta_r = pdg * (1.0 - share.sum(axis=1))
        mu_t = np.asarray(mu[t], dtype=float)
        delta = float(mu_t @ delta_r)
        beta0 = (1.0 - pdg) / (1.0 - delta_r)
        beta = pdg * share / (1.0 - delta_r)[:, None]
        mu_new = mu_t * (1.0 - delta_r) / (1.0 - delta)
        out.append(AssociationResult(g, beta0, beta, delta_r, delta,
                                     existence_update(existence[t], delta),
                                     mu_new / mu_new.sum(), omega, prior[t, g]))
    return out


# --------------------------------------------------------------------------
# initiation

def bistatic_fix(r1: float, r2: float, tx, rx1, rx2) -> list[np.ndarray]:
    """Points whose bistatic ranges to ``(tx, rx1)`` and ``(tx, rx2)`` are r1, r2.

    With ``rho = |p - tx|`` both ellipse equations become linear in ``p``
    for fixed ``rho``; substituting back gives a quadratic in ``rho``.
    """
    tx = np.asarray(tx, dtype=float)
    a = np.asarray(rx1, dtype=float) - tx
    b = np.asarray(rx2, dtype=float) - tx
    M = np.array([a, b])
    if abs(np.linalg.det(M)) < 1e-12:
        return []
    Minv = np.linalg.inv(M)
    u = Minv @ np.array([a @ a - r1 * r1, b @ b - r2 * r2]) / 2.0
    w = Minv @ np.array([r1, r2])
    qa, qb, qc = w @ w - 1.0, 2.0 * (u @ w), u @ u
    if abs(qa) < 1e-12:
        roots = [-qc / qb] if qb != 0 else []
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc < 0:
            return []
        sq = np.sqrt(disc)
        roots = [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)]
    out = []
    for rho in roots:
        if rho < 0 or rho > r1 or rho > r2:
            continue
        out.append(tx + u + w * rho)
    return out


def fix_covariance(p, tx, rx1, rx2, var_r1: float, var_r2: float) -> np.ndarray:
    """Position covariance of a bistatic fix from the two range variances."""
    p = np.asarray(p, dtype=float)

    def unit(q):
        d = p - np.asarray(q, dtype=float)
        return d / np.linalg.norm(d)

    A = np.array([unit(tx) + unit(rx1), unit(tx) + unit(rx2)])
    Ainv = np.linalg.pinv(A)
    return symmetrize(Ainv @ np.diag([var_r1, var_r2]) @ Ainv.T)


def ellipse_point_near(r: float, tx, rx, roads: Sequence, samples: int = 720):
    """Point of the bistatic ellipse closest to any road segment."""
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    c = 0.5 * (tx + rx)
    f = 0.5 * np.linalg.norm(rx - tx)
    a = 0.5 * r
    if a <= f or not roads:
        return None
    bb = np.sqrt(a * a - f * f)
    ang = np.arctan2(*(rx - tx)[::-1])
    th = np.linspace(0, 2 * np.pi, samples, endpoint=False)
    pts = np.column_stack([a * np.cos(th), bb * np.sin(th)])
    rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    pts = pts @ rot.T + c
    best, best_d = None, np.inf
    for s0, s1 in roads:
        s0 = np.asarray(s0, dtype=float)
        d = np.asarray(s1, dtype=float) - s0
        t = np.clip(((pts - s0) @ d) / (d @ d), 0.0, 1.0)
        dist = np.linalg.norm(pts - (s0 + t[:, None] * d), axis=1)
        i = int(np.argmin(dist))
        if dist[i] < best_d:
            best, best_d = pts[i], dist[i]
    return best


@dataclass(frozen=True)
class Fix:
    position: np.ndarray
    cov: np.ndarray
    low_confidence: bool = False


def rate_consistent(p, tx, rxa, rxb, rda: float, rdb: float, var_a: float, var_b: float,
                    vmax: float, g: float) -> bool:
    """Whether some velocity with ``|v| <= vmax`` explains both range rates at ``p``.

    Uses the necessary conditions ``|rd_a| <= vmax |g_a|``, the same for
    ``b``, and ``|rd_a - rd_b| <= vmax |g_a - g_b|``, each widened by ``g``
    standard deviations of measurement noise.
    """
    p = np.asarray(p, dtype=float)
    ut = p - tx
    ut = ut / np.linalg.norm(ut)
    ga = ut + (p - rxa) / np.linalg.norm(p - rxa)
    gb = ut + (p - rxb) / np.linalg.norm(p - rxb)
    return bool(abs(rda) <= vmax * np.linalg.norm(ga) + g * np.sqrt(var_a)
                and abs(rdb) <= vmax * np.linalg.norm(gb) + g * np.sqrt(var_b)
                and abs(rda - rdb) <= vmax * np.linalg.norm(ga - gb) + g * np.sqrt(var_a + var_b))


def candidate_fixes(scene: ScenarioMap, scans: Sequence[Scan], masks: Sequence[np.ndarray],
                    roads: Sequence = (), vmax: float | None = None,
                    rate_gate: float = 3.0) -> list[Fix]:
    """Cartesian fixes from unassociated measurements of one epoch.

    Pairs of receivers give ellipse intersections; solutions outside the
    surveillance region (sensor range, map bounds) or inside buildings are
    dropped, and with ``vmax`` set so are pairs whose range rates no target
    slower than ``vmax`` could produce (see :func:`rate_consistent`). A
    single receiver falls back to the ellipse point nearest a road.
    """
    sensors = scene.sensors
    tx = sensors.transmitters[0]
    fixes: list[Fix] = []
    if len(scans) >= 2:
        for a, b in itertools.combinations(range(len(scans)), 2):
            rxa = sensors.receivers[scans[a].receiver].position
            rxb = sensors.receivers[scans[b].receiver].position
            Za, Ra = scans[a].Z, scans[a].Rs
            Zb, Rb = scans[b].Z, scans[b].Rs
            ia = np.flatnonzero(masks[a])
            ib = np.flatnonzero(masks[b])
            if len(ia) == 0 or len(ib) == 0:
                continue
            # the two ellipses share a focus, so |r_a - r_b| <= |rx_a - rx_b|
            base = np.linalg.norm(rxa - rxb)
            close = np.abs(Za[ia, 0][:, None] - Zb[ib, 0][None, :]) <= base + 1e-9
            for i, j in zip(*np.nonzero(close)):
                i, j = ia[i], ib[j]
                for p in bistatic_fix(Za[i, 0], Zb[j, 0], tx, rxa, rxb):
                    if not in_surveillance(scene, p):
                        continue
                    if vmax is None or rate_consistent(p, tx, rxa, rxb, Za[i, 1], Zb[j, 1],
                                                       Ra[i, 1, 1], Rb[j, 1, 1], vmax,
                                                       rate_gate):
                        C = fix_covariance(p, tx, rxa, rxb, Ra[i, 0, 0], Rb[j, 0, 0])
                        fixes.append(Fix(p, C))
    elif len(scans) == 1:
        rx = sensors.receivers[scans[0].receiver].position
        for i in np.flatnonzero(masks[0]):
            p = ellipse_point_near(scans[0].Z[i, 0], tx, rx, roads)
            if p is not None and in_surveillance(scene, p):
                var = scans[0].Rs[i, 0, 0]
                fixes.append(Fix(p, np.eye(2) * max(var, 25.0), low_confidence=True))
    return fixes


def in_surveillance(scene: ScenarioMap, p) -> bool:
    p = np.asarray(p, dtype=float)
    s = scene.sensors
    for q in (*s.transmitters, *(r.position for r in s.receivers)):
        if np.linalg.norm(p - q) > s.max_range:
            return False
    if len(scene._lo) and np.any(np.all((p > scene._lo) & (p < scene._hi), axis=1)):
        return False
    if scene.bounds is not None:
        lo, hi = scene.bounds
        if np.any(p < lo) or np.any(p > hi):
            return False
    return True


def pair_fixes(prev: Sequence[Fix], cur: Sequence[Fix], T: float, vmax: float,
               sigma: float):
    """Index pairs passing the displacement window ``|d| <= (vmax + 2 sigma) T`` per axis.

    Pairs are taken greedily by increasing displacement so that every fix
    seeds at most one track.
    """
    if not prev or not cur:
        return []
    a = np.array([f.position for f in prev])
    b = np.array([f.position for f in cur])
    d = b[None, :, :] - a[:, None, :]
    lim = (vmax + 2.0 * sigma) * T
    ok = np.all(np.abs(d) <= lim, axis=2)
    cand = sorted(zip(*np.nonzero(ok)), key=lambda ij: (np.hypot(*d[ij]), ij))
    used_a, used_b, out = set(), set(), []
    for i, j in cand:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        out.append((int(i), int(j)))
    return out


def initial_state(prev: Fix, cur: Fix, T: float, accel_var: float):
    """State and covariance from two fixes by differencing."""
    v = (cur.position - prev.position) / T
    x = np.zeros(STATE_DIM)
    x[[0, 2]] = cur.position
    x[[1, 3]] = v
    P = np.zeros((STATE_DIM, STATE_DIM))
    Cp = cur.cov
    Cv = (cur.cov + prev.cov) / T ** 2
    Cpv = cur.cov / T
    P[np.ix_([0, 2], [0, 2])] = Cp
    P[np.ix_([1, 3], [1, 3])] = Cv
    P[np.ix_([0, 2], [1, 3])] = Cpv
    P[np.ix_([1, 3], [0, 2])] = Cpv.T
    P[IAX, IAX] = P[IAY, IAY] = accel_var
    return x, symmetrize(P)


def initiate_tracks(prev_fixes: Sequence[Fix], fixes: Sequence[Fix], T: float,
                    vmax: float = 15.0, sigma: float = 1.0):
    """Two-point differencing; returns ``(x, P, low_confidence)`` per new track."""
    out = []
    for i, j in pair_fixes(prev_fixes, fixes, T, vmax, sigma):
        x, P = initial_state(prev_fixes[i], fixes[j], T, 0.0)
        out.append((x, P, prev_fixes[i].low_confidence or fixes[j].low_confidence))
    return out


# --------------------------------------------------------------------------
# the tracker

@dataclass(frozen=True)
class TrackerConfig:
    T: float = 0.25
    P_D: float = 0.9
    P_G: float = 0.99
    clutter_density: float = 2.5e-4
    existence: ExistenceModel = field(default_factory=ExistenceModel)
    model_mode: str = "replication"       # replication | zones | fixed
    fixed_models: tuple = ("NCV",)
    turn_window: tuple = (20, 100)
    transition: np.ndarray = field(default_factory=lambda: DEFAULT_TRANSITION.copy())
    var_cv: float = 0.25
    var_ca: float = 1.0
    turn_rate: float = np.pi / 20
    accel_var: float = 1.0                # prior acceleration variance for NCA
    vmax: float = 15.0
    sigma_v: float = 1.0
    rate_gate: float = 3.0                # noise allowance, in sigmas, for fix range rates
    max_tracks: int = 200
    ukf: UnscentedConfig = field(default_factory=UnscentedConfig)

    @property
    def gate(self) -> float:
        return gate_threshold(self.P_G)


class Tracker:
    """LMIPDA with a VS-IMM bank of UKFs per track."""

    def __init__(self, scene: ScenarioMap, config: TrackerConfig = TrackerConfig(),
                 roads: Sequence = ()):
        self.scene = scene
        self.cfg = config
        self.bank = build_bank(config.T, config.var_cv, config.var_ca, config.turn_rate)
        self.roads = tuple(roads)
        self.tracks: list[Track] = []
        self.history: list[Track] = []
        self._next_id = 0
        self._prev_fixes: list[Fix] = []
        self._g2 = config.gate

    # model sets ---------------------------------------------------------
    def model_set(self, k: int, position) -> tuple:
        c = self.cfg
        if c.model_mode == "fixed":
            return tuple(c.fixed_models)
        return adapt_model_set(position, self.scene, k, c.model_mode, c.turn_window,
                               c.transition).active

    def _enter(self, x, P, name):
        x = x.copy()
        P = P.copy()
        if name == "NCA":
            for i in (IAX, IAY):
                P[i, i] = max(P[i, i], self.cfg.accel_var)
        else:
            x[[IAX, IAY]] = 0.0
            P[[IAX, IAY], :] = 0.0
            P[:, [IAX, IAY]] = 0.0
        return x, P

    def _adapt(self, t: Track, k: int) -> None:
        new = self.model_set(k, t.mean[[0, 2]])
        if tuple(new) == tuple(t.models):
            return
        mu = redistribute({m: t.mu[m] for m in t.models}, new)
        for m in new:
            if m not in t.means:
                t.means[m], t.covs[m] = self._enter(t.mean, t.cov, m)
        for m in list(t.means):
            if m not in new:
                del t.means[m], t.covs[m]
        t.models = tuple(new)
        t.mu = mu

    # main loop ----------------------------------------------------------
    def new_track(self, k: int, x, P, low_confidence=False) -> Track:
        models = self.model_set(k, x[[0, 2]])
        means, covs = {}, {}
        for m in models:
            means[m], covs[m] = self._enter(x, P, m)
        t = Track(self._next_id, tuple(models), means, covs,
                  {m: 1.0 / len(models) for m in models},
                  self.cfg.existence.initial, born=k, low_confidence=low_confidence)
        t.combine()
        self._next_id += 1
        self.tracks.append(t)
        self.history.append(t)
        return t

    def predict(self, k: int) -> None:
        for t in self.tracks:
            self._adapt(t, k)
            ms = list(t.models)
            Pi = _restrict(self.cfg.transition, ms)
            x0, P0, cbar = imm_mix(np.array([t.means[m] for m in ms]),
                                   np.array([t.covs[m] for m in ms]),
                                   np.array([t.mu[m] for m in ms]), Pi)
            for i, m in enumerate(ms):
                t.means[m], t.covs[m] = ukf_predict(x0[i], P0[i], self.bank[m], self.cfg.ukf)
                t.mu[m] = float(cbar[i])
            t.existence = self.cfg.existence.predict(t.existence)

    def update(self, scan: Scan) -> np.ndarray:
        """Associate one receiver's scan; returns the mask of gated measurements."""
        c = self.cfg
        sensors = self.scene.sensors
        tx = sensors.transmitters[0]
        rx = sensors.receivers[scan.receiver].position
        Z, Rs = scan.Z, scan.Rs
        used = np.zeros(len(Z), dtype=bool)
        if not self.tracks:
            return used
        liks, gates, mus, psis, preds = [], [], [], [], []
        for t in self.tracks:
            ms = list(t.models)
            pr = [predict_measurement(t.means[m], t.covs[m], tx, rx, c.ukf) for m in ms]
            mu = np.array([t.mu[m] for m in ms])
            zc = mu @ np.array([p.z for p in pr])
            dz = np.array([p.z for p in pr]) - zc
            Sc = np.einsum("r,rij->ij", mu, np.array([p.Pzz for p in pr])) + (mu[:, None] * dz).T @ dz
            gate, _ = validate(zc, Sc, Z, Rs, self._g2)
            lik = np.zeros((len(ms), len(Z)))
            if gate.any():
                for i, p in enumerate(pr):
                    lik[i, gate] = gaussian_likelihood(Z[gate], p.z, p.Pzz[None] + Rs[gate])
            liks.append(lik)
            gates.append(gate)
            mus.append(mu)
            psis.append(t.existence)
            preds.append(pr)
            used |= gate
        rho = max(c.clutter_density, MIN_CLUTTER_DENSITY)
        results = lmipda_weights(liks, gates, mus, psis, c.P_D, c.P_G, rho)
        for t, res, pr in zip(self.tracks, results, preds):
            g = res.validated
            for i, m in enumerate(t.models):
                t.means[m], t.covs[m] = ukf_update(t.means[m], t.covs[m], pr[i], Z[g], Rs[g],
                                                   res.beta0[i], res.beta[i])
                t.mu[m] = float(res.mu[i])
            t.existence = float(res.existence)
        return used

    def step(self, k: int, scans: Sequence[Scan]) -> list:
        self.predict(k)
        masks = [~self.update(s) for s in scans]
        for t in self.tracks:
            t.combine()
        changes = update_lifecycle(self.tracks, self.cfg.existence, k)
        self.tracks = [t for t in self.tracks if t.status != TERMINATED]
        fixes = candidate_fixes(self.scene, scans, masks, self.roads, self.cfg.vmax,
                                self.cfg.rate_gate)
        for x, P, low in initiate_tracks(self._prev_fixes, fixes, self.cfg.T,
                                         self.cfg.vmax, self.cfg.sigma_v):
            if len(self.tracks) >= self.cfg.max_tracks:
                log.warning("track limit reached at scan %d", k)
                break
            P[IAX, IAX] = P[IAY, IAY] = self.cfg.accel_var
            self.new_track(k, x, P, low)
        self._prev_fixes = fixes
        return changes

    def predicted_states(self, k: int, statuses=(CONFIRMED,)) -> list:
        """One-step IMM prediction ``(x, P)`` of each track, tracks untouched."""
        out = []
        for t in self.tracks:
            if t.status not in statuses:
                continue
            ms = list(t.models)
            Pi = _restrict(self.cfg.transition, ms)
            x0, P0, cbar = imm_mix(np.array([t.means[m] for m in ms]),
                                   np.array([t.covs[m] for m in ms]),
                                   np.array([t.mu[m] for m in ms]), Pi)
            pred = [ukf_predict(x0[i], P0[i], self.bank[m], self.cfg.ukf)
                    for i, m in enumerate(ms)]
            out.append(combine_output(np.array([p[0] for p in pred]),
                                      np.array([p[1] for p in pred]), cbar))
        return out

    @property
    def confirmed(self) -> list[Track]:
        return [t for t in self.tracks if t.status == CONFIRMED]


def _restrict(transition: np.ndarray, models: Sequence[str]) -> np.ndarray:
    idx = [MODEL_ORDER.index(m) for m in models]
    Pi = transition[np.ix_(idx, idx)]
    rows = Pi.sum(axis=1, keepdims=True)
    safe = np.where(rows > 0, rows, 1.0)
    return np.where(rows > 0, Pi / safe, np.eye(len(idx)))
