"""Linear inverted pendulum at constant COM height: closed-form flows, ZMP
identities, support-polygon margins, and the instantaneous capture point."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LipmParams:
    m: float = 40.0       # robot mass (kg)
    z_c: float = 0.9      # COM height (m)
    g: float = 9.81

    def validate(self) -> "LipmParams":
        if min(self.m, self.z_c, self.g) <= 0:
            raise ValueError("mass, COM height and gravity must be positive")
        return self

    @property
    def omega(self) -> float:
        """Pendulum time constant sqrt(g / z_c) (1/s)."""
        return float(np.sqrt(self.g / self.z_c))


@dataclass
class LipmState:
    c: np.ndarray   # horizontal COM position (x, y), m
    dc: np.ndarray  # horizontal COM velocity, m/s

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        self.dc = np.atleast_1d(np.asarray(self.dc, dtype=float))
        if self.c.shape != self.dc.shape:
            raise ValueError("position and velocity must have the same shape")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.dc))):
            raise ValueError("state entries must be finite")


@dataclass
class SupportPolygon:
    points: np.ndarray  # ordered contact points, shape (N, 2)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] < 1 or self.points.shape[1] != 2:
            raise ValueError("support polygon needs at least one planar point")


def lipm_acceleration(params: LipmParams, state: LipmState, u=0.0, pivot=None) -> np.ndarray:
    """ddc = omega^2 (c - pivot) + u / (m z_c), per axis."""
    pivot = np.zeros_like(state.c) if pivot is None else np.asarray(pivot, dtype=float)
    u = np.broadcast_to(np.asarray(u, dtype=float), state.c.shape)
    return params.omega**2 * (state.c - pivot) + u / (params.m * params.z_c)


def lipm_flow(params: LipmParams, state: LipmState, u=0.0, t: float = 0.0,
              pivot=None) -> LipmState:
    """Closed-form hyperbolic solution of the LIPM for constant ankle torque.

    ddc = (g/z_c)(c - pivot) + u/(m z_c) per axis; pivot defaults to the
    origin and u shifts the equilibrium by -u/(m g).
    """
    if t < 0:
        raise ValueError("duration must be nonnegative")
    pivot = np.zeros_like(state.c) if pivot is None else np.asarray(pivot, dtype=float)
    u = np.broadcast_to(np.asarray(u, dtype=float), state.c.shape)
    w = params.omega
    c_eq = pivot - u / (params.m * params.g)
    ch, sh = np.cosh(w * t), np.sinh(w * t)
    dev = state.c - c_eq
    c = c_eq + dev * ch + state.dc * sh / w
    dc = dev * w * sh + state.dc * ch
    return LipmState(c=c, dc=dc)


def zmp_from_contacts(points: np.ndarray, normal_forces: np.ndarray) -> np.ndarray:
    """Force-weighted average of contact points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    f = np.atleast_1d(np.asarray(normal_forces, dtype=float))
    total = float(np.sum(f))
    if total <= 0.0:
        raise ValueError("total normal force must be positive")
    return (f @ points) / total


def zmp_from_com(params: LipmParams, state: LipmState, ddc: np.ndarray) -> np.ndarray:
    """p = c - (z_c / g) * ddc, per axis."""
    return state.c - (params.z_c / params.g) * np.asarray(ddc, dtype=float)


def _cross2(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns CCW hull vertices (handles N < 3)."""
    pts = np.unique(np.round(points, 12), axis=0)
    if pts.shape[0] <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(iterable):
        chain = []
        for p in iterable:
            while len(chain) >= 2 and _cross2(chain[-1] - chain[-2], p - chain[-2]) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    return hull


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-300:
        return float(np.linalg.norm(p - a))
    t = np.clip(float((p - a) @ ab) / denom, 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def zmp_criterion(p_zmp: np.ndarray, polygon: SupportPolygon):
    """Signed distance of the ZMP to the support-hull boundary.

    Positive inside, negative outside, zero on the boundary.  Degenerate
    supports measure within their affine hull: for a segment the margin is
    the along-line distance to the nearest endpoint (negative off the
    segment), for a single point it is minus the distance to it.
    """
    p = np.asarray(p_zmp, dtype=float)
    hull = _convex_hull(polygon.points)

    if hull.shape[0] == 1:
        margin = -float(np.linalg.norm(p - hull[0]))
        return margin >= 0.0, margin

    if hull.shape[0] == 2:
        a, b = hull
        ab = b - a
        t = float((p - a) @ ab) / float(ab @ ab)
        perp = float(np.linalg.norm(p - (a + np.clip(t, 0.0, 1.0) * ab)))
        if perp > 1e-9 or t < 0.0 or t > 1.0:
            return False, -_point_segment_distance(p, a, b)
        margin = min(t, 1.0 - t) * float(np.linalg.norm(ab))
        return True, margin

    # proper polygon, CCW: inward distance per edge
    dists = []
    inside = True
    for i in range(hull.shape[0]):
        a = hull[i]
        b = hull[(i + 1) % hull.shape[0]]
        edge = b - a
        n_out = np.array([edge[1], -edge[0]])
        n_out /= np.linalg.norm(n_out)
        d_out = float((p - a) @ n_out)
        if d_out > 0.0:
            inside = False
        dists.append(d_out)
    if inside:
        return True, float(-max(dists))
    seg = min(
        _point_segment_distance(p, hull[i], hull[(i + 1) % hull.shape[0]])
        for i in range(hull.shape[0])
    )
    return False, -seg


def icp(params: LipmParams, state: LipmState) -> np.ndarray:
    """Instantaneous capture point r = c + sqrt(z_c/g) * dc."""
    return state.c + state.dc / params.omega


def capture_step(params: LipmParams, state: LipmState) -> np.ndarray:
    """Foot placement that brings the LIPM to rest: step onto the ICP."""
    return icp(params, state)
