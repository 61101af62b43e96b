"""Planar urban scene and multipath propagation geometry.

Buildings are axis-aligned rectangles that block line of sight. Clutter
scatterers are finite line segments that reflect specularly, or points
(zero-length segments, e.g. vegetation) that reflect in every direction.
Paths are limited to three reflections off scene objects, the target
included.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
REFERENCE_PATH_LENGTH = 100.0  # total path length at which attenuation == 1

# Path classes between transmitter and receiver: T = target, C = clutter.
PATH_KINDS = ("T", "C", "TC", "CT", "CC", "CTC", "TCC", "CCT")

_EPS = 1e-9


def _as_point(p) -> np.ndarray:
    out = np.asarray(p, dtype=float).reshape(2)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"non-finite point {p!r}")
    return out


@dataclass(frozen=True, eq=False)
class ClutterScatterer:
    """Reflector with constant reflectivity in (0, 1].

    A segment with coincident endpoints is a point scatterer.
    """

    a: np.ndarray
    b: np.ndarray
    reflectivity: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "a", _as_point(self.a))
        object.__setattr__(self, "b", _as_point(self.b))
        if not 0.0 < self.reflectivity <= 1.0:
            raise ValueError("reflectivity must lie in (0, 1]")

    @property
    def is_point(self) -> bool:
        return bool(np.all(self.a == self.b))

    @property
    def length(self) -> float:
        return float(np.hypot(*(self.b - self.a)))

    @property
    def direction(self) -> np.ndarray:
        return (self.b - self.a) / self.length

    @property
    def normal(self) -> np.ndarray:
        u = self.direction
        return np.array([-u[1], u[0]])

    @property
    def is_vertical(self) -> bool:
        return not self.is_point and abs(self.b[0] - self.a[0]) < _EPS * max(1.0, self.length)

    @property
    def slope(self) -> float | None:
        """Slope ``m`` of the supporting line ``y = m x + c``; None if vertical."""
        if self.is_point or self.is_vertical:
            return None
        return float((self.b[1] - self.a[1]) / (self.b[0] - self.a[0]))

    @property
    def intercept(self) -> float | None:
        m = self.slope
        return None if m is None else float(self.a[1] - m * self.a[0])

    def signed_distance(self, p: np.ndarray) -> float:
        return float((np.asarray(p, dtype=float) - self.a) @ self.normal)

    def mirror(self, p: np.ndarray) -> np.ndarray:
        d = self.signed_distance(p)
        return np.asarray(p, dtype=float) - 2.0 * d * self.normal

    def distance_to(self, p: np.ndarray) -> float:
        """Euclidean distance from ``p`` to the finite segment."""
        p = np.asarray(p, dtype=float)
        if self.is_point:
            return float(np.hypot(*(p - self.a)))
        u = self.direction
        s = np.clip((p - self.a) @ u, 0.0, self.length)
        return float(np.hypot(*(p - (self.a + s * u))))


@dataclass(frozen=True, eq=False)
class Building:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = _as_point(self.lo), _as_point(self.hi)
        if np.any(hi <= lo):
            raise ValueError("building footprint needs positive width and height")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


@dataclass(frozen=True, eq=False)
class Receiver:
    """Uniform linear array; its axis is perpendicular to ``boresight``."""

    position: np.ndarray
    num_elements: int = 3
    element_spacing: float = 0.0375
    boresight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", _as_point(self.position))
        if self.num_elements < 1:
            raise ValueError("receiver needs at least one element")
        if self.element_spacing <= 0:
            raise ValueError("element spacing must be positive")


@dataclass(frozen=True, eq=False)
class SensorGeometry:
    transmitters: tuple
    receivers: tuple
    max_range: float = 300.0
    wavelength: float = SPEED_OF_LIGHT / 4e9

    def __post_init__(self):
        object.__setattr__(self, "transmitters", tuple(_as_point(t) for t in self.transmitters))
        object.__setattr__(self, "receivers", tuple(self.receivers))
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")


@dataclass(frozen=True, eq=False)
class ScenarioMap:
    buildings: tuple = ()
    scatterers: tuple = ()
    sensors: SensorGeometry | None = None
    clutter_density: float = 0.0
    intersections: tuple = ()  # (lo, hi) rectangles where turns are expected
    roads: tuple = ()          # centre-line segments ((x0, y0), (x1, y1))
    bounds: tuple | None = None  # (lo, hi) corners of the surveillance region

    def __post_init__(self):
        object.__setattr__(self, "buildings", tuple(self.buildings))
        object.__setattr__(self, "roads", tuple(
            (_as_point(a), _as_point(b)) for a, b in self.roads))
        if self.bounds is not None:
            object.__setattr__(self, "bounds", (_as_point(self.bounds[0]),
                                                _as_point(self.bounds[1])))
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        object.__setattr__(self, "intersections", tuple(
            (_as_point(lo), _as_point(hi)) for lo, hi in self.intersections))
        if self.buildings:
            lo = np.array([b.lo for b in self.buildings])
            hi = np.array([b.hi for b in self.buildings])
        else:
            lo = hi = np.zeros((0, 2))
        # strict interior: touching a wall is not an obstruction
        object.__setattr__(self, "_lo", lo + 1e-7)
        object.__setattr__(self, "_hi", hi - 1e-7)

    def in_intersection(self, p) -> bool:
        p = np.asarray(p, dtype=float)[:2]
        return any(np.all(p >= lo) and np.all(p <= hi) for lo, hi in self.intersections)


@dataclass(frozen=True, eq=False)
class PropagationPath:
    """One transmitter-to-receiver path.

    ``doppler`` is positive when the path is shortening (approaching target);
    ``range_rate`` is the time derivative of the total path length.
    """

    kind: str
    hops: tuple
    length: float
    delay: float
    range_rate: float
    doppler: float
    azimuth: float
    azimuth_rate: float
    attenuation: float
    involves_target: bool
    scatterer_ids: tuple = field(default=())


def reflection_point(scatterer: ClutterScatterer, src, dst) -> np.ndarray | None:
    """Specular point on ``scatterer`` for a ray from ``src`` to ``dst``.

    Point scatterers reflect isotropically and return their own position.
    Returns None when the specular point is off the finite segment, when the
    two ends are on opposite sides of the line, or when either lies on it.
    """
    if scatterer.is_point:
        return scatterer.a.copy()
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    ds = scatterer.signed_distance(src)
    dd = scatterer.signed_distance(dst)
    if abs(ds) < _EPS or abs(dd) < _EPS or ds * dd < 0:
        return None
    image = dst - 2.0 * dd * scatterer.normal
    t = ds / (ds + dd)
    p = src + t * (image - src)
    s = (p - scatterer.a) @ scatterer.direction
    tol = _EPS * max(1.0, scatterer.length)
    if s < -tol or s > scatterer.length + tol:
        return None
    return p


def _double_reflection(s1: ClutterScatterer, s2: ClutterScatterer, src, dst):
    """Specular points for src -> s1 -> s2 -> dst (point scatterers allowed)."""
    if s1.is_point and s2.is_point:
        return s1.a.copy(), s2.a.copy()
    if s1.is_point:
        p2 = reflection_point(s2, s1.a, dst)
        return None if p2 is None else (s1.a.copy(), p2)
    if s2.is_point:
        p1 = reflection_point(s1, src, s2.a)
        return None if p1 is None else (p1, s2.a.copy())
    image1 = s2.mirror(dst)
    image2 = s1.mirror(image1)
    d_src = s1.signed_distance(src)
    d_img = s1.signed_distance(image2)
    if abs(d_src - d_img) < _EPS:
        return None
    p1 = src + d_src / (d_src - d_img) * (image2 - src)
    p2 = reflection_point(s2, p1, dst)
    if p2 is None:
        return None
    # p1 must itself be a valid specular point between src and p2
    check = reflection_point(s1, src, p2)
    if check is None or np.hypot(*(check - p1)) > 1e-6:
        return None
    return p1, p2


def line_of_sight(scene: ScenarioMap, a, b) -> bool:
    """True when segment ``ab`` does not cross the interior of any building."""
    if not scene.buildings:
        return True
    a = np.asarray(a, dtype=float)
    d = np.asarray(b, dtype=float) - a
    lo, hi = scene._lo, scene._hi
    t0 = np.zeros(len(lo))
    t1 = np.ones(len(lo))
    blocked = np.ones(len(lo), dtype=bool)
    for ax in range(2):
        if abs(d[ax]) < 1e-15:
            blocked &= (a[ax] > lo[:, ax]) & (a[ax] < hi[:, ax])
            continue
        ta = (lo[:, ax] - a[ax]) / d[ax]
        tb = (hi[:, ax] - a[ax]) / d[ax]
        t0 = np.maximum(t0, np.minimum(ta, tb))
        t1 = np.minimum(t1, np.maximum(ta, tb))
    blocked &= t1 > t0 + 1e-12
    return not bool(np.any(blocked))


def _path_from_hops(kind, hops, ids, target_index, velocity, refl, rx: Receiver,
                    wavelength) -> PropagationPath:
    pts = np.asarray(hops)
    legs = np.diff(pts, axis=0)
    lens = np.hypot(legs[:, 0], legs[:, 1])
    length = float(lens.sum())
    rate = 0.0
    if target_index is not None:
        t = pts[target_index]
        for nb in (pts[target_index - 1], pts[target_index + 1]):
            u = t - nb
            rate += float(velocity @ u) / float(np.hypot(*u))
    arrival = pts[-2] - pts[-1]
    bearing = np.arctan2(arrival[1], arrival[0])
    azimuth = float(np.angle(np.exp(1j * (bearing - rx.boresight - np.pi / 2))))
    atten = float(np.prod(refl)) * (REFERENCE_PATH_LENGTH / length) ** 2
    return PropagationPath(kind=kind, hops=tuple(map(tuple, pts)), length=length,
                           delay=length / SPEED_OF_LIGHT, range_rate=rate,
                           doppler=-rate / wavelength, azimuth=azimuth,
                           azimuth_rate=float("nan"), attenuation=atten,
                           involves_target=target_index is not None,
                           scatterer_ids=tuple(ids))


def _hops_ok(scene, hops) -> bool:
    return all(line_of_sight(scene, p, q) for p, q in zip(hops[:-1], hops[1:]))


def enumerate_paths(scene: ScenarioMap, tx, target_state, rx: Receiver, *,
                    include_static: bool = True, min_attenuation: float = 0.0,
                    rate_dt: float | None = None,
                    kinds: Sequence[str] = PATH_KINDS) -> list[PropagationPath]:
    """All admissible transmitter-to-receiver paths for one target.

    Each path class in ``kinds`` is instantiated for every scatterer (or
    ordered scatterer pair) whose specular points exist and whose hops all
    have line of sight. Paths whose attenuation is provably below
    ``min_attenuation`` are skipped before any reflection is solved.
    ``rate_dt`` enables the azimuth rate by finite differencing over that
    interval; otherwise it is NaN.
    """
    tx = _as_point(tx)
    state = np.asarray(target_state, dtype=float)
    target = state[[0, 2]]
    velocity = state[[1, 3]]
    rxp = rx.position
    wavelength = scene.sensors.wavelength if scene.sensors else SPEED_OF_LIGHT / 4e9
    max_range = scene.sensors.max_range if scene.sensors else np.inf
    scat = scene.scatterers
    in_range = (np.hypot(*(target - tx)) <= max_range and np.hypot(*(target - rxp)) <= max_range)

    def bound_ok(refl, lb):
        if min_attenuation <= 0.0:
            return True
        return np.prod(refl) * (REFERENCE_PATH_LENGTH / max(lb, 1e-9)) ** 2 >= min_attenuation

    d_tx = [s.distance_to(tx) for s in scat]
    d_rx = [s.distance_to(rxp) for s in scat]
    d_tg = [s.distance_to(target) for s in scat]

    paths: list[PropagationPath] = []

    def add(kind, hops, ids, tidx, refl):
        if _hops_ok(scene, hops):
            paths.append(_path_from_hops(kind, hops, ids, tidx, velocity, refl, rx, wavelength))

    for kind in kinds:
        if "T" not in kind and not include_static:
            continue
        if "T" in kind and not in_range:
            continue
        if kind == "T":
            add(kind, [tx, target, rxp], (), 1, [1.0])
        elif kind == "C":
            for i, s in enumerate(scat):
                if not bound_ok([s.reflectivity], d_tx[i] + d_rx[i]):
                    continue
                p = reflection_point(s, tx, rxp)
                if p is not None:
                    add(kind, [tx, p, rxp], (i,), None, [s.reflectivity])
        elif kind in ("TC", "CT"):
            for i, s in enumerate(scat):
                lb = (np.hypot(*(target - tx)) + d_tg[i] + d_rx[i] if kind == "TC"
                      else d_tx[i] + d_tg[i] + np.hypot(*(target - rxp)))
                if not bound_ok([s.reflectivity], lb):
                    continue
                if kind == "TC":
                    p = reflection_point(s, target, rxp)
                    hops, tidx = [tx, target, p, rxp], 1
                else:
                    p = reflection_point(s, tx, target)
                    hops, tidx = [tx, p, target, rxp], 2
                if p is not None:
                    add(kind, hops, (i,), tidx, [s.reflectivity])
        else:
            same_allowed = kind == "CTC"
            for i, j in itertools.product(range(len(scat)), repeat=2):
                if i == j and not same_allowed:
                    continue
                si, sj = scat[i], scat[j]
                refl = [si.reflectivity, sj.reflectivity]
                if kind == "CC":
                    lb = d_tx[i] + d_rx[j]
                elif kind == "CTC":
                    lb = d_tx[i] + d_tg[i] + d_tg[j] + d_rx[j]
                elif kind == "TCC":
                    lb = np.hypot(*(target - tx)) + d_tg[i] + d_rx[j]
                else:
                    lb = d_tx[i] + d_tg[j] + np.hypot(*(target - rxp))
                if not bound_ok(refl, lb):
                    continue
                if kind == "CTC":
                    p = reflection_point(si, tx, target)
                    q = reflection_point(sj, target, rxp)
                    if p is None or q is None:
                        continue
                    add(kind, [tx, p, target, q, rxp], (i, j), 2, refl)
                    continue
                src, dst = {"CC": (tx, rxp), "TCC": (target, rxp), "CCT": (tx, target)}[kind]
                pq = _double_reflection(si, sj, src, dst)
                if pq is None:
                    continue
                p, q = pq
                if kind == "CC":
                    add(kind, [tx, p, q, rxp], (i, j), None, refl)
                elif kind == "TCC":
                    add(kind, [tx, target, p, q, rxp], (i, j), 1, refl)
                else:
                    add(kind, [tx, p, q, target, rxp], (i, j), 3, refl)

    if rate_dt:
        moved = state.copy()
        moved[0] += velocity[0] * rate_dt
        moved[2] += velocity[1] * rate_dt
        later = {(p.kind, p.scatterer_ids): p for p in enumerate_paths(
            scene, tx, moved, rx, include_static=include_static, kinds=kinds,
            min_attenuation=min_attenuation)}
        out = []
        for p in paths:
            q = later.get((p.kind, p.scatterer_ids))
            rate = 0.0
            if q is not None:
                rate = float(np.angle(np.exp(1j * (q.azimuth - p.azimuth)))) / rate_dt
            out.append(PropagationPath(**{**p.__dict__, "azimuth_rate": rate}))
        paths = out
    return paths
