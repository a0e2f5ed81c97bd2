"""Planar compass biped: two kneeless point-mass legs and a hip mass.

All angles are absolute leg angles measured from the slope normal, stance leg
first.  Work happens in the slope-aligned frame (x down the slope surface,
y along the slope normal), so the walking surface is y = 0 and gravity has
components (g sin gamma, -g cos gamma).

Two views of the same mechanism are provided:

* the reduced 2-DOF pinned model (stance foot is an ideal pivot) used for
  swing-phase dynamics, and
* the 4-DOF floating-base model q_e = (hip_x, hip_y, th_stance, th_swing)
  used for the plastic impact solve and for contact-force reconstruction.

The reduced terms are obtained numerically from the floating-base terms via
the pin-constraint embedding, so there is a single source of dynamics truth.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

RELABEL = np.array([[0.0, 1.0], [1.0, 0.0]])   # stance/swing swap; an involution


class GuardError(ValueError):
    """Input state does not satisfy the guard (swing foot on ground, descending)."""


@dataclass(frozen=True)
class CompassParams:
    """Canonical compass-walker parameters; see ``validate`` for invariants."""

    m: float = 5.0           # leg point mass (kg)
    m_hip: float = 10.0      # hip mass (kg)
    length: float = 1.0      # leg length l = a + b (m)
    # leg COM high on the leg: the period-1 gait at a 5 degree slope is
    # orbitally stable here (max |eig| ~ 0.32); an even a/b split has already
    # period-doubled at that slope
    hip_to_com: float = 0.3  # a: hip to leg COM (m)
    com_to_foot: float = 0.7 # b: leg COM to foot (m)
    slope: float = 0.0       # ramp angle gamma (rad), positive = downhill walking
    g: float = 9.81
    actuated: bool = False   # hip torque channel present

    def validate(self) -> "CompassParams":
        if min(self.m, self.m_hip, self.length, self.hip_to_com, self.com_to_foot) <= 0:
            raise ValueError("masses and lengths must be positive")
        if abs(self.hip_to_com + self.com_to_foot - self.length) > 1e-12:
            raise ValueError("leg segments must satisfy a + b = l")
        if self.g <= 0:
            raise ValueError("gravity must be positive")
        return self

    @property
    def total_mass(self) -> float:
        return self.m_hip + 2.0 * self.m

    def with_slope(self, slope: float) -> "CompassParams":
        return replace(self, slope=slope)


@dataclass
class GeneralizedState:
    """(q, dq) pair for a planar model; compass order is (stance, swing)."""

    q: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        self.q = np.atleast_1d(np.asarray(self.q, dtype=float))
        self.dq = np.atleast_1d(np.asarray(self.dq, dtype=float))
        if self.q.shape != self.dq.shape:
            raise ValueError("q and dq must have the same dimension")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.dq))):
            raise ValueError("state entries must be finite")

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.q, self.dq])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "GeneralizedState":
        x = np.asarray(x, dtype=float)
        n = x.size // 2
        return cls(q=x[:n], dq=x[n:])


@dataclass
class DynamicsTerms:
    D: np.ndarray        # inertia matrix
    H: np.ndarray        # Coriolis + gravity vector
    B: np.ndarray        # actuation matrix (n x m)
    Jh: np.ndarray       # holonomic contact Jacobian (m_h x n)
    dJh_dq: np.ndarray   # dJh/dt * dq (m_h,)


@dataclass
class ContactWrench:
    force: np.ndarray    # (tangential, normal) at the contact, slope frame
    frame: str = "stance_foot"

    @property
    def tangential(self) -> float:
        return float(self.force[0])

    @property
    def normal(self) -> float:
        return float(self.force[1])


def gravity_vector(params: CompassParams) -> np.ndarray:
    """Gravity in the slope frame: positive x points down the ramp surface."""
    return params.g * np.array([np.sin(params.slope), -np.cos(params.slope)])


# --- floating-base model: q_e = (hip_x, hip_y, th1, th2) -------------------

def floating_mass_matrix(params: CompassParams, q_e: np.ndarray) -> np.ndarray:
    m, mH, a = params.m, params.m_hip, params.hip_to_com
    M = params.total_mass
    s1, c1 = np.sin(q_e[2]), np.cos(q_e[2])
    s2, c2 = np.sin(q_e[3]), np.cos(q_e[3])
    ma = m * a
    return np.array([
        [M, 0.0, -ma * c1, -ma * c2],
        [0.0, M, ma * s1, ma * s2],
        [-ma * c1, ma * s1, m * a**2, 0.0],
        [-ma * c2, ma * s2, 0.0, m * a**2],
    ])


def floating_bias(params: CompassParams, q_e: np.ndarray, dq_e: np.ndarray) -> np.ndarray:
    """Coriolis/centrifugal plus gravity terms of the floating-base model."""
    m, a = params.m, params.hip_to_com
    M = params.total_mass
    gx, gy = gravity_vector(params)
    s1, c1 = np.sin(q_e[2]), np.cos(q_e[2])
    s2, c2 = np.sin(q_e[3]), np.cos(q_e[3])
    w1, w2 = dq_e[2], dq_e[3]
    ma = m * a
    return np.array([
        ma * (s1 * w1**2 + s2 * w2**2) - gx * M,
        ma * (c1 * w1**2 + c2 * w2**2) - gy * M,
        ma * (gx * c1 - gy * s1),
        ma * (gx * c2 - gy * s2),
    ])


def floating_actuation(params: CompassParams) -> np.ndarray:
    """Hip torque acts on the relative angle: +tau on swing, -tau on stance."""
    if not params.actuated:
        return np.zeros((4, 0))
    return np.array([[0.0], [0.0], [-1.0], [1.0]])


def stance_foot_jacobian(params: CompassParams, q_e: np.ndarray):
    """Jacobian of the stance-foot position and its dJ/dt*dq term."""
    l = params.length
    s1, c1 = np.sin(q_e[2]), np.cos(q_e[2])
    J = np.array([
        [1.0, 0.0, -l * c1, 0.0],
        [0.0, 1.0, l * s1, 0.0],
    ])

    def djdq(dq_e):
        w1 = dq_e[2]
        return np.array([l * s1 * w1**2, l * c1 * w1**2])

    return J, djdq


def swing_foot_jacobian(params: CompassParams, q_e: np.ndarray):
    l = params.length
    s2, c2 = np.sin(q_e[3]), np.cos(q_e[3])
    J = np.array([
        [1.0, 0.0, 0.0, -l * c2],
        [0.0, 1.0, 0.0, l * s2],
    ])

    def djdq(dq_e):
        w2 = dq_e[3]
        return np.array([l * s2 * w2**2, l * c2 * w2**2])

    return J, djdq


def lift_to_floating(params: CompassParams, state: GeneralizedState):
    """Embed the pinned 2-DOF state into floating-base coordinates.

    Returns (q_e, dq_e, T, dTdq) where T = d q_e / d q and dTdq = dT/dt @ dq,
    with the stance foot at the origin.
    """
    th1, th2 = state.q
    w1 = state.dq[0]
    l = params.length
    s1, c1 = np.sin(th1), np.cos(th1)
    q_e = np.array([l * s1, l * c1, th1, th2])
    T = np.array([
        [l * c1, 0.0],
        [-l * s1, 0.0],
        [1.0, 0.0],
        [0.0, 1.0],
    ])
    dq_e = T @ state.dq
    dTdq = np.array([-l * s1 * w1**2, -l * c1 * w1**2, 0.0, 0.0])
    return q_e, dq_e, T, dTdq


# --- reduced pinned model ----------------------------------------------------

def reduced_dhb(params: CompassParams, q: np.ndarray, dq: np.ndarray):
    """Closed-form D, H, B of the pinned 2-DOF compass (hot path).

    Hand-reduction of the floating-base terms through the stance-pin
    embedding; dynamics_terms_reduction_oracle in the test suite checks the
    two routes agree to machine precision.
    """
    m, mH, a, l = params.m, params.m_hip, params.hip_to_com, params.length
    M = params.total_mass
    gx, gy = gravity_vector(params)
    s1, c1 = np.sin(q[0]), np.cos(q[0])
    s2, c2 = np.sin(q[1]), np.cos(q[1])
    sd = s1 * c2 - c1 * s2  # sin(th1 - th2)
    cd = c1 * c2 + s1 * s2  # cos(th1 - th2)
    mal = m * a * l

    D = np.array([
        [M * l**2 - 2.0 * mal + m * a**2, -mal * cd],
        [-mal * cd, m * a**2],
    ])
    g1 = M * l - m * a
    H = np.array([
        -mal * sd * dq[1] ** 2 - g1 * (gx * c1 - gy * s1),
        mal * sd * dq[0] ** 2 + m * a * (gx * c2 - gy * s2),
    ])
    B = np.array([[-1.0], [1.0]]) if params.actuated else np.zeros((2, 0))
    return D, H, B


def dynamics_terms(params: CompassParams, state: GeneralizedState) -> DynamicsTerms:
    """D, H, B, Jh, dJh*dq of the pinned compass at (q, dq).

    The stance pivot is baked into the reduced coordinates, so Jh carries the
    *swing* foot rows (the contact that closes at impact).
    """
    if state.q.size != 2:
        raise ValueError(f"compass model has 2 coordinates, got {state.q.size}")
    D, H, B = reduced_dhb(params, state.q, state.dq)

    q_e, dq_e, T, dTdq = lift_to_floating(params, state)
    J_sw, djdq_sw = swing_foot_jacobian(params, q_e)
    # chain rule through the embedding: d(foot)/dq = J_sw T;
    # (d/dt d(foot)/dq) dq = J_sw dTdq + (dJ_sw/dt) dq_e
    Jh = J_sw @ T
    dJh_dq = J_sw @ dTdq + djdq_sw(dq_e)
    return DynamicsTerms(D=D, H=H, B=B, Jh=Jh, dJh_dq=dJh_dq)


def dynamics_terms_via_reduction(params: CompassParams, state: GeneralizedState):
    """(D, H, B) by numeric reduction of the floating-base model; the
    independent route used to cross-check reduced_dhb."""
    q_e, dq_e, T, dTdq = lift_to_floating(params, state)
    D_fb = floating_mass_matrix(params, q_e)
    H_fb = floating_bias(params, q_e, dq_e)
    B_fb = floating_actuation(params)
    D = T.T @ D_fb @ T
    H = T.T @ (D_fb @ dTdq + H_fb)
    B = T.T @ B_fb if B_fb.size else np.zeros((2, 0))
    return D, H, B


def forward_dynamics(
    params: CompassParams,
    state: GeneralizedState,
    u: Optional[np.ndarray] = None,
    constrained: bool = False,
):
    """Accelerations (and contact wrench) of the pinned compass.

    With ``constrained=False`` (swing phase) this is ddq = D^-1 (B u - H) and
    the returned wrench is the stance-pivot reaction reconstructed from the
    floating-base dynamics.  With ``constrained=True`` the swing-foot contact
    rows are closed as well (double support), solved as one KKT system.
    """
    terms = dynamics_terms(params, state)
    u = np.zeros(terms.B.shape[1]) if u is None else np.atleast_1d(np.asarray(u, dtype=float))
    rhs = terms.B @ u - terms.H if terms.B.size else -terms.H

    if not constrained:
        ddq = np.linalg.solve(terms.D, rhs)
        lam = stance_contact_force(params, state, ddq, u)
        return ddq, lam

    Jh, c = terms.Jh, terms.dJh_dq
    if np.linalg.matrix_rank(Jh, tol=1e-10) < Jh.shape[0]:
        raise np.linalg.LinAlgError("contact Jacobian is rank deficient")
    n, m_h = terms.D.shape[0], Jh.shape[0]
    K = np.block([[terms.D, -Jh.T], [Jh, np.zeros((m_h, m_h))]])
    b = np.concatenate([rhs, -c])
    sol = np.linalg.solve(K, b)
    return sol[:n], ContactWrench(force=sol[n:], frame="swing_foot")


def stance_contact_force(
    params: CompassParams, state: GeneralizedState, ddq: np.ndarray, u: Optional[np.ndarray] = None
) -> ContactWrench:
    """Ground reaction at the stance pivot consistent with (q, dq, ddq, u)."""
    q_e, dq_e, T, dTdq = lift_to_floating(params, state)
    D_fb = floating_mass_matrix(params, q_e)
    H_fb = floating_bias(params, q_e, dq_e)
    B_fb = floating_actuation(params)
    ddq_e = T @ np.atleast_1d(ddq) + dTdq
    gen = D_fb @ ddq_e + H_fb
    if B_fb.size and u is not None:
        gen = gen - B_fb @ np.atleast_1d(u)
    J_st, _ = stance_foot_jacobian(params, q_e)
    lam, *_ = np.linalg.lstsq(J_st.T, gen, rcond=None)
    return ContactWrench(force=lam, frame="stance_foot")


# --- guard and impact --------------------------------------------------------

def swing_foot_height(params: CompassParams, q: np.ndarray) -> float:
    """Height of the swing foot above the ramp surface (slope frame)."""
    return params.length * (np.cos(q[0]) - np.cos(q[1]))


def swing_foot_height_rate(params: CompassParams, state: GeneralizedState) -> float:
    l = params.length
    return l * (-np.sin(state.q[0]) * state.dq[0] + np.sin(state.q[1]) * state.dq[1])


def leg_spread(q: np.ndarray) -> float:
    """Stance-minus-swing angle; positive once the swing leg has passed."""
    return float(q[0] - q[1])


def impact_map(params: CompassParams, pre: GeneralizedState, guard_tol: float = 1e-6):
    """Plastic impact at footstrike followed by stance/swing relabeling.

    Solves the floating-base impulse KKT system (the old pivot releases, the
    landing foot sticks), then returns the relabeled reduced state.  Also
    returns the impulsive contact wrench at the landing foot.
    """
    h = swing_foot_height(params, pre.q)
    if abs(h) > guard_tol:
        raise GuardError(f"swing foot height {h:.3e} not on the guard")
    if swing_foot_height_rate(params, pre) >= 0.0:
        raise GuardError("swing foot is not descending at impact")

    q_e, dq_e, _, _ = lift_to_floating(params, pre)
    D_fb = floating_mass_matrix(params, q_e)
    J_sw, _ = swing_foot_jacobian(params, q_e)
    K = np.block([[D_fb, -J_sw.T], [J_sw, np.zeros((2, 2))]])
    b = np.concatenate([D_fb @ dq_e, np.zeros(2)])
    sol = np.linalg.solve(K, b)
    dq_e_post = sol[:4]
    impulse = ContactWrench(force=sol[4:], frame="swing_foot")

    q_post = RELABEL @ pre.q
    dq_post = RELABEL @ dq_e_post[2:]
    return GeneralizedState(q=q_post, dq=dq_post), impulse


# --- energies and centroidal quantities -------------------------------------

def kinetic_energy(params: CompassParams, state: GeneralizedState) -> float:
    terms = dynamics_terms(params, state)
    return 0.5 * float(state.dq @ terms.D @ state.dq)


def potential_energy(params: CompassParams, state: GeneralizedState) -> float:
    """Gravitational potential, zero with the hip above the stance foot
    (both legs along the slope normal)."""
    m, mH, a, l = params.m, params.m_hip, params.hip_to_com, params.length
    gx, gy = gravity_vector(params)
    s1, c1 = np.sin(state.q[0]), np.cos(state.q[0])
    s2, c2 = np.sin(state.q[1]), np.cos(state.q[1])
    hip = np.array([l * s1, l * c1])
    c_st = hip - a * np.array([s1, c1])
    c_sw = hip - a * np.array([s2, c2])
    g = np.array([gx, gy])
    V = -(mH * g @ hip + m * g @ c_st + m * g @ c_sw)
    # reference configuration q = (0, 0)
    hip0 = np.array([0.0, l])
    V0 = -(mH * g @ hip0 + 2 * m * g @ (hip0 - a * np.array([0.0, 1.0])))
    return float(V - V0)


def total_energy(params: CompassParams, state: GeneralizedState) -> float:
    return kinetic_energy(params, state) + potential_energy(params, state)


def centroidal(params: CompassParams, state: GeneralizedState):
    """COM position, COM velocity and angular momentum about the COM."""
    m, mH, a, l = params.m, params.m_hip, params.hip_to_com, params.length
    M = params.total_mass
    q_e, dq_e, _, _ = lift_to_floating(params, state)
    s1, c1 = np.sin(q_e[2]), np.cos(q_e[2])
    s2, c2 = np.sin(q_e[3]), np.cos(q_e[3])
    hip = q_e[:2]
    v_hip = dq_e[:2]
    w1, w2 = dq_e[2], dq_e[3]

    pts = [hip, hip - a * np.array([s1, c1]), hip - a * np.array([s2, c2])]
    vels = [
        v_hip,
        v_hip - a * w1 * np.array([c1, -s1]),
        v_hip - a * w2 * np.array([c2, -s2]),
    ]
    masses = [mH, m, m]
    com = sum(mk * p for mk, p in zip(masses, pts)) / M
    vcom = sum(mk * v for mk, v in zip(masses, vels)) / M
    L = sum(
        mk * float((p - com)[0] * v[1] - (p - com)[1] * v[0])
        for mk, p, v in zip(masses, pts, vels)
    )
    return com, vcom, float(L)


def vector_field(params: CompassParams, controller=None):
    """State derivative of the pinned compass, x = (q1, q2, dq1, dq2).

    ``controller(t, state) -> u`` closes the loop; None means unactuated.
    """
    def f(t, x):
        state = GeneralizedState.from_vector(x)
        u = None if controller is None else controller(t, state)
        ddq, _ = forward_dynamics(params, state, u)
        return np.concatenate([state.dq, ddq])

    return f


def hybrid_spec(params: CompassParams, controller=None, probe=None, quads=None,
                min_spread: float = 0.02):
    """Single-domain hybrid system for the compass: swing flow, footstrike
    guard (descending swing-foot height with the legs spread), plastic-impact
    reset.  The spread arming threshold skips the mid-stance scuff crossing
    that kneeless walkers exhibit."""
    from gaitlab.hybrid import Edge, HybridSystemSpec, Vertex

    def guard(x):
        return swing_foot_height(params, x[:2])

    def armed(x):
        # legs spread (skips the mid-stance scuff) and both legs within a
        # physical range: a tumbling or leg-wrapped biped crossing the guard
        # is a fall, not a step
        return (
            leg_spread(x[:2]) > min_spread
            and abs(x[0]) < 1.3
            and abs(x[1]) < 1.3
        )

    def reset(x):
        post, _ = impact_map(params, GeneralizedState.from_vector(x))
        return post.x

    vertex = Vertex(
        name="swing",
        field=vector_field(params, controller),
        edge=Edge(target="swing", guard=guard, reset=reset, armed=armed),
        probe=probe,
        quads=quads or {},
    )
    return HybridSystemSpec(vertices={"swing": vertex}, start="swing")


def friction_check(wrench: ContactWrench, mu: float):
    """Coulomb cone test: inside iff normal >= 0 and |tangential| <= mu*normal.

    Returns (inside, margin) with margin = mu*normal - |tangential|; a
    negative normal force is reported with margin = normal (distance to the
    unilateral constraint).
    """
    lam_t, lam_n = wrench.tangential, wrench.normal
    if lam_n < 0.0:
        return False, float(lam_n)
    margin = mu * lam_n - abs(lam_t)
    return bool(margin >= 0.0), float(margin)
