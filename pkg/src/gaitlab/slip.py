"""Spring-loaded inverted pendulum: lossless stance dynamics, apex return
maps over a flight-stance-flight hybrid cycle, and ground-reaction profiles.

Leg angle theta is measured from the vertical, positive when the hip is
ahead of the foot (same convention as the compass legs), so touchdown at
angle of attack alpha puts the foot ahead of the hip: theta_td = -alpha.
The spring is linear and lossless, F = k (l0 - l) pushing outward under
compression, and the legs are massless so leg exchange carries no impact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gaitlab.hybrid import Edge, HybridSystemSpec, Vertex, simulate_arc, simulate_steps
from gaitlab.numerics.newton import newton_fd


@dataclass(frozen=True)
class SlipParams:
    m: float = 80.0          # point mass at the hip (kg)
    l0: float = 1.0          # rest leg length (m)
    k: float = 14000.0       # spring stiffness (N/m)
    g: float = 9.81
    aoa: float = 0.42        # angle of attack from vertical (rad)

    def validate(self) -> "SlipParams":
        if min(self.m, self.l0, self.k, self.g) <= 0:
            raise ValueError("mass, rest length, stiffness and gravity must be positive")
        if not (0.0 < self.aoa < np.pi / 2):
            raise ValueError("angle of attack must lie in (0, pi/2)")
        return self

    @property
    def touchdown_height(self) -> float:
        return self.l0 * float(np.cos(self.aoa))


def stance_derivs(params: SlipParams, s: np.ndarray) -> np.ndarray:
    """Time derivatives of the stance coordinates (l, dl, theta, dtheta).

    Radial:  m l''  = m l th'^2 - m g cos(th) - k (l - l0)
    Angular: m l^2 th'' = -2 m l l' th' + m g l sin(th)
    """
    l, dl, th, dth = s[0], s[1], s[2], s[3]
    if l <= 0.0:
        raise ValueError("leg length must stay positive in stance")
    ddl = l * dth**2 - params.g * np.cos(th) - (params.k / params.m) * (l - params.l0)
    ddth = (params.g * np.sin(th) - 2.0 * dl * dth) / l
    return np.array([dl, ddl, dth, ddth])


def stance_energy(params: SlipParams, s: np.ndarray) -> float:
    """Kinetic + gravitational + spring energy of a stance state."""
    l, dl, th, dth = s[0], s[1], s[2], s[3]
    ke = 0.5 * params.m * (dl**2 + (l * dth) ** 2)
    return float(ke + params.m * params.g * l * np.cos(th) + 0.5 * params.k * (l - params.l0) ** 2)


def flight_energy(params: SlipParams, s: np.ndarray) -> float:
    """Energy of a flight state (x, z, vx, vz)."""
    return float(0.5 * params.m * (s[2] ** 2 + s[3] ** 2) + params.m * params.g * s[1])


def leg_force(params: SlipParams, l: np.ndarray) -> np.ndarray:
    """Axial spring force, positive pushing the mass away from the foot."""
    return params.k * (params.l0 - np.asarray(l, dtype=float))


def slip_grf(params: SlipParams, stance_states: np.ndarray) -> np.ndarray:
    """Vertical ground-reaction force along a stance trajectory.

    Zero at touchdown and liftoff where l = l0.
    """
    states = np.atleast_2d(stance_states)
    return leg_force(params, states[:, 0]) * np.cos(states[:, 2])


def touchdown_transform(params: SlipParams, flight_state: np.ndarray) -> np.ndarray:
    """Cartesian flight state -> stance polar state (+ foot anchor)."""
    x, z, vx, vz = flight_state[:4]
    th = -params.aoa
    foot_x = x + params.l0 * np.sin(params.aoa)
    u_r = np.array([np.sin(th), np.cos(th)])
    u_t = np.array([np.cos(th), -np.sin(th)])
    v = np.array([vx, vz])
    dl = float(v @ u_r)
    dth = float(v @ u_t) / params.l0
    return np.array([params.l0, dl, th, dth, foot_x])


def liftoff_transform(params: SlipParams, stance_state: np.ndarray) -> np.ndarray:
    """Stance polar state (+ foot anchor) -> Cartesian flight state."""
    l, dl, th, dth, foot_x = stance_state[:5]
    u_r = np.array([np.sin(th), np.cos(th)])
    u_t = np.array([np.cos(th), -np.sin(th)])
    pos = np.array([foot_x, 0.0]) + l * u_r
    vel = dl * u_r + l * dth * u_t
    return np.array([pos[0], pos[1], vel[0], vel[1]])


def hybrid_spec(params: SlipParams, probe=None) -> HybridSystemSpec:
    """Three-vertex cycle: descent -> (touchdown) -> stance -> (liftoff) ->
    ascent -> (apex) -> descent.  The apex edge is the Poincaré section."""

    def ballistic(t, s):
        return np.array([s[2], s[3], 0.0, -params.g])

    def stance_field(t, s):
        d = stance_derivs(params, s[:4])
        return np.append(d, 0.0)  # foot anchor is constant

    descent = Vertex(
        name="descent",
        field=ballistic,
        edge=Edge(
            target="stance",
            guard=lambda s: s[1] - params.touchdown_height,
            reset=lambda s: touchdown_transform(params, s),
            armed=lambda s: s[3] < 0.0,
        ),
    )
    stance = Vertex(
        name="stance",
        field=stance_field,
        probe=probe,
        edge=Edge(
            target="ascent",
            # liftoff: l rises back through the rest length
            guard=lambda s: params.l0 - s[0],
            reset=lambda s: liftoff_transform(params, s),
            armed=lambda s: s[1] > 0.0,
        ),
    )
    ascent = Vertex(
        name="ascent",
        field=ballistic,
        edge=Edge(
            target="descent",
            guard=lambda s: s[3],  # vertical velocity crosses zero at apex
            reset=lambda s: np.array([s[0], s[1], s[2], 0.0]),
        ),
    )
    return HybridSystemSpec(
        vertices={"descent": descent, "stance": stance, "ascent": ascent},
        start="descent",
    )


def apex_map(params: SlipParams, apex: np.ndarray, rtol: float = 1e-10,
             atol: float = 1e-10, max_arc_time: float = 5.0):
    """One apex-to-apex cycle; apex = (height z, forward speed vx).

    Returns (next_apex, trajectory).  Raises ValueError if the apex is below
    the touchdown height (the leg cannot reach the ground at the angle of
    attack) and NoEventError if the hop never lifts off or never reaches a
    new apex.
    """
    z, vx = float(apex[0]), float(apex[1])
    if z < params.touchdown_height:
        raise ValueError(
            f"apex height {z:.3f} below touchdown height {params.touchdown_height:.3f}"
        )
    spec = hybrid_spec(params)
    x0 = np.array([0.0, z, vx, 0.0])
    traj = simulate_steps(spec, x0, 3, max_arc_time=max_arc_time, rtol=rtol, atol=atol)
    post = traj.arcs[-1].post_event
    return np.array([post[1], post[2]]), traj


def apex_fixed_point(params: SlipParams, z_guess: float, energy: float,
                     tol: float = 1e-9, rtol: float = 1e-10, atol: float = 1e-10):
    """Newton on the energy-restricted scalar apex map z -> P_E(z).

    The lossless SLIP conserves energy, so apex states on one energy level
    form an invariant one-parameter family; restricting to it makes the
    fixed point isolated and the Newton system well posed.
    """

    def vx_of(z):
        ke = energy - params.m * params.g * z
        if ke <= 0.0:
            raise ValueError("energy level cannot realize this apex height")
        return np.sqrt(2.0 * ke / params.m)

    def residual(zv):
        nxt, _ = apex_map(params, np.array([zv[0], vx_of(zv[0])]), rtol=rtol, atol=atol)
        return np.array([nxt[0] - zv[0]])

    result = newton_fd(residual, np.array([float(z_guess)]), tol=tol, fd_step=1e-7)
    z_star = float(result.x[0])
    apex = np.array([z_star, vx_of(z_star)])
    nxt, _ = apex_map(params, apex, rtol=rtol, atol=atol)
    return apex, float(np.linalg.norm(nxt - apex, ord=np.inf))


def apex_map_slope(params: SlipParams, apex: np.ndarray, h: float = 1e-6) -> float:
    """d P_E / dz of the energy-restricted apex map (central differences)."""
    energy = float(0.5 * params.m * apex[1] ** 2 + params.m * params.g * apex[0])

    def vx_of(z):
        return np.sqrt(2.0 * (energy - params.m * params.g * z) / params.m)

    zp, zm = apex[0] + h, apex[0] - h
    pp, _ = apex_map(params, np.array([zp, vx_of(zp)]))
    pm, _ = apex_map(params, np.array([zm, vx_of(zm)]))
    return float((pp[0] - pm[0]) / (2.0 * h))


def stance_arc(params: SlipParams, s0: np.ndarray, rtol: float = 1e-10,
               atol: float = 1e-10):
    """Integrate a single stance phase (touchdown state to liftoff)."""
    spec = hybrid_spec(params)
    return simulate_arc(spec, "stance", np.asarray(s0, dtype=float), max_time=5.0,
                        rtol=rtol, atol=atol)


def vertical_hop_arc(params: SlipParams, touchdown_speed: float, rtol: float = 1e-10,
                     atol: float = 1e-10):
    """Stance phase of a vertical hop (theta pinned at zero by symmetry)."""
    s0 = np.array([params.l0, -abs(touchdown_speed), 0.0, 0.0, 0.0])
    return stance_arc(params, s0, rtol=rtol, atol=atol)


def walking_step_profile(t: np.ndarray, force: np.ndarray, double_support_fraction: float = 0.3,
                         samples: int = 2000):
    """Per-step vertical force by overlapping time-shifted single-leg humps.

    The step period is (1 - ds) * stance time; the trailing leg's profile
    spills into the first ds-fraction of the next step.  For hump-shaped
    single-leg profiles this produces the walking double-hump shape.
    """
    if not (0.0 < double_support_fraction < 0.5):
        raise ValueError("double-support fraction must lie in (0, 0.5)")
    t = np.asarray(t, dtype=float)
    force = np.asarray(force, dtype=float)
    t_s = float(t[-1] - t[0])
    t_step = (1.0 - double_support_fraction) * t_s

    def f_of(tt):
        return np.interp(tt, t - t[0], force, left=0.0, right=0.0)

    ts = np.linspace(0.0, t_step, samples)
    total = f_of(ts) + f_of(ts + t_step)
    return ts, total


def count_interior_maxima(values: np.ndarray, rel_tol: float = 1e-6) -> int:
    """Strict interior local maxima, with a plateau tolerance."""
    v = np.asarray(values, dtype=float)
    scale = max(np.max(np.abs(v)), 1e-300)
    peaks = 0
    for i in range(1, v.size - 1):
        if v[i] - v[i - 1] > rel_tol * scale and v[i] - v[i + 1] > rel_tol * scale:
            peaks += 1
    return peaks
