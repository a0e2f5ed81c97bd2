"""Runtime feedback controllers: joint/output PD, computed torque, inverse
dynamics and CLF controllers posed as small dense QPs, and the stride-to-
stride Raibert foot-placement regulator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from gaitlab import compass as cp
from gaitlab import outputs as vc_mod
from gaitlab.numerics.care import solve_care
from gaitlab.numerics.qp import QpProblem, solve_qp

PYRAMID_FACTOR = 1.0 / np.sqrt(2.0)  # |lam_t| <= mu/sqrt(2) * lam_n


@dataclass(frozen=True)
class PdGains:
    kp: np.ndarray
    kd: np.ndarray
    eps: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kp", np.atleast_1d(np.asarray(self.kp, dtype=float)))
        object.__setattr__(self, "kd", np.atleast_1d(np.asarray(self.kd, dtype=float)))
        if np.any(self.kp <= 0) or np.any(self.kd <= 0):
            raise ValueError("gains must be positive")
        if not (0.0 < self.eps <= 1.0):
            raise ValueError("eps must lie in (0, 1]")


def pd_joint(q, dq, q_d, dq_d, gains: PdGains) -> np.ndarray:
    """u = -Kp (q - q_d) - Kd (dq - dq_d) on the supplied (actuated) channels."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if q.shape != np.shape(q_d) and np.size(q) != np.size(q_d):
        raise ValueError("desired values must match the actuated channels")
    e = q - np.asarray(q_d, dtype=float)
    de = np.atleast_1d(np.asarray(dq, dtype=float)) - np.asarray(dq_d, dtype=float)
    return -gains.kp * e - gains.kd * de


def output_jacobian_actuated(params: cp.CompassParams, vc: vc_mod.VirtualConstraintSet,
                             state: cp.GeneralizedState) -> np.ndarray:
    """Y(q) = d y_a / d q_m: output sensitivity to the actuated coordinate
    directions, q_m = B^+ q."""
    terms = cp.dynamics_terms(params, state)
    B = terms.B
    if B.size == 0:
        raise ValueError("model has no actuators")
    dq_dqm = B @ np.linalg.inv(B.T @ B)
    return vc.selector @ dq_dqm


def pd_output(
    params: cp.CompassParams,
    vc: vc_mod.VirtualConstraintSet,
    state: cp.GeneralizedState,
    gains: PdGains,
    mode: str = "inverse",
    t: float = 0.0,
) -> np.ndarray:
    """u = -Y^-1 (Kp y + Kd ydot)  or  u = -Y' (Kp y + Kd ydot)."""
    y, dy = vc_mod.outputs(vc, state, t=t)
    Y = output_jacobian_actuated(params, vc, state)
    pd = gains.kp * y + gains.kd * dy
    if mode == "inverse":
        if Y.shape[0] != Y.shape[1] or np.linalg.cond(Y) > 1e8:
            raise np.linalg.LinAlgError("output Jacobian not invertible")
        return -np.linalg.solve(Y, pd)
    if mode == "transpose":
        return -Y.T @ pd
    raise ValueError(f"unknown mode '{mode}'")


def computed_torque(
    params: cp.CompassParams,
    state: cp.GeneralizedState,
    q_d,
    dq_d,
    ddq_star,
    gains: PdGains,
) -> np.ndarray:
    """Inner nonlinear compensation loop over all coordinates (full actuation):
    u = D (ddq* - Kp e - Kd edot) + H."""
    terms = cp.dynamics_terms(params, state)
    e = state.q - np.asarray(q_d, dtype=float)
    de = state.dq - np.asarray(dq_d, dtype=float)
    v = np.asarray(ddq_star, dtype=float) - gains.kp * e - gains.kd * de
    return terms.D @ v + terms.H


# --- inverse-dynamics QP -----------------------------------------------------

@dataclass
class IdQpResult:
    ddq_e: np.ndarray         # floating-base accelerations
    u: np.ndarray
    lam: np.ndarray           # stance contact force (tangential, normal)
    task_residual: float
    dynamics_residual: float
    solution: object


def id_qp(
    params: cp.CompassParams,
    state: cp.GeneralizedState,
    yddot_star: np.ndarray,
    vc: Optional[vc_mod.VirtualConstraintSet] = None,
    t: float = 0.0,
    u_max: float = 30.0,
    mu: float = 0.8,
    sigma: float = 1e-6,
) -> IdQpResult:
    """Track a desired output acceleration with the floating-base dynamics,
    torque bounds, and the pyramid friction approximation as constraints.

    Decision X = (ddq_e, u, lam); dynamics and contact-acceleration rows are
    equalities, so any optimal point is dynamically consistent to solver
    precision.  vc=None tracks the swing-angle coordinate directly.  The
    regularizer sigma*W(X) uses torque/weight-normalized norms so an interior
    optimum still reproduces the commanded acceleration essentially exactly.
    """
    q_e, dq_e, T, dTdq = cp.lift_to_floating(params, state)
    D = cp.floating_mass_matrix(params, q_e)
    Hb = cp.floating_bias(params, q_e, dq_e)
    B = cp.floating_actuation(params)
    if B.size == 0:
        raise ValueError("id_qp needs an actuated model")
    J_st, djdq_st = cp.stance_foot_jacobian(params, q_e)
    n, m = 4, B.shape[1]

    # task rows on the angle coordinates (ddq_red = ddq_e[2:4])
    if vc is None:
        J_task = np.array([[0.0, 0.0, 0.0, 1.0]])
        b_task = np.atleast_1d(np.asarray(yddot_star, dtype=float)).copy()
    else:
        tau = vc.phase.value(state.q, t)
        tau_rate = vc.phase.rate(state.dq)
        _, dyd, ddyd = vc_mod._desired_with_extension(vc, tau)
        J_eff = vc.selector - np.outer(dyd, vc.phase.grad_q())
        J_task = np.hstack([np.zeros((J_eff.shape[0], 2)), J_eff])
        b_task = np.atleast_1d(np.asarray(yddot_star, dtype=float)) + ddyd * tau_rate**2

    n_task = J_task.shape[0]
    nx = n + m + 2
    Jx = np.zeros((n_task, nx))
    Jx[:, :n] = J_task
    H_cost = Jx.T @ Jx
    reg = np.zeros(nx)
    reg[n:n + m] = sigma / u_max**2
    reg[n + m:] = sigma / (params.total_mass * params.g) ** 2
    H_cost += np.diag(reg)
    f_cost = -Jx.T @ b_task

    A_eq = np.zeros((n + 2, nx))
    A_eq[:n, :n] = D
    A_eq[:n, n:n + m] = -B
    A_eq[:n, n + m:] = -J_st.T
    A_eq[n:, :n] = J_st
    b_eq = np.concatenate([-Hb, -djdq_st(dq_e)])

    # pyramid rows on lam = (tangential, normal)
    A_in = np.zeros((3, nx))
    A_in[0, n + m + 1] = -1.0                      # lam_n >= 0
    A_in[1, n + m] = 1.0                           # lam_t <= mu/sqrt(2) lam_n
    A_in[1, n + m + 1] = -mu * PYRAMID_FACTOR
    A_in[2, n + m] = -1.0                          # -lam_t <= mu/sqrt(2) lam_n
    A_in[2, n + m + 1] = -mu * PYRAMID_FACTOR
    b_in = np.zeros(3)

    lb = np.full(nx, -np.inf)
    ub = np.full(nx, np.inf)
    lb[n:n + m] = -u_max
    ub[n:n + m] = u_max

    sol = solve_qp(QpProblem(H=H_cost, f=f_cost, A_eq=A_eq, b_eq=b_eq,
                             A_in=A_in, b_in=b_in, lb=lb, ub=ub))
    sol.require_optimal()
    X = sol.z
    ddq_e, u, lam = X[:n], X[n:n + m], X[n + m:]
    dyn_res = float(np.max(np.abs(A_eq @ X - b_eq)))
    task_res = float(np.linalg.norm(J_task @ ddq_e - b_task))
    return IdQpResult(ddq_e=ddq_e, u=u, lam=lam, task_residual=task_res,
                      dynamics_residual=dyn_res, solution=sol)


# --- RES-CLF and CLF-QP ------------------------------------------------------

@dataclass
class ClfData:
    P: np.ndarray
    P_eps: np.ndarray
    eps: float
    gamma: float
    n_out: int

    @property
    def gamma_lower(self) -> float:
        return float(np.min(np.linalg.eigvalsh(self.P)))

    @property
    def gamma_upper(self) -> float:
        return float(np.max(np.linalg.eigvalsh(self.P)))

    def eta(self, y, dy) -> np.ndarray:
        return np.concatenate([np.atleast_1d(y), np.atleast_1d(dy)])

    def value(self, y, dy) -> float:
        eta = self.eta(y, dy)
        return float(eta @ self.P_eps @ eta)


def build_res_clf(eps: float, n_out: int, gamma: float = 0.5) -> ClfData:
    """RES-CLF data for the output double integrator yddot = mu.

    P solves the CARE with Q = R = I; P_eps = I_eps P I_eps with
    I_eps = diag(I/eps, I), so V_eps = eta' P_eps eta contracts at rate
    gamma/eps under any control in the admissible class.
    """
    if not (0.0 < eps <= 1.0):
        raise ValueError("eps must lie in (0, 1]")
    A = np.block([
        [np.zeros((n_out, n_out)), np.eye(n_out)],
        [np.zeros((n_out, n_out)), np.zeros((n_out, n_out))],
    ])
    B = np.vstack([np.zeros((n_out, n_out)), np.eye(n_out)])
    P = solve_care(A, B, np.eye(2 * n_out), np.eye(n_out))
    I_eps = np.block([
        [np.eye(n_out) / eps, np.zeros((n_out, n_out))],
        [np.zeros((n_out, n_out)), np.eye(n_out)],
    ])
    return ClfData(P=P, P_eps=I_eps @ P @ I_eps, eps=eps, gamma=gamma, n_out=n_out)


@dataclass
class ClfQpResult:
    u: np.ndarray
    delta: float
    V: float
    Vdot_bound: float      # -(gamma/eps) V at this state
    constraint_value: float  # LfV + LgV u - delta (must be <= bound)
    lam: np.ndarray
    solution: object


def clf_qp(
    params: cp.CompassParams,
    vc: vc_mod.VirtualConstraintSet,
    clf: ClfData,
    state: cp.GeneralizedState,
    t: float = 0.0,
    u_max: float = 30.0,
    mu: float = 0.8,
    relax_weight: Optional[float] = 1e6,
    H_cost: Optional[np.ndarray] = None,
) -> ClfQpResult:
    """Pointwise-minimal torque in the RES-CLF class, posed as a QP.

    relax_weight=None disables the relaxation (the convergence constraint is
    then hard and the QP may be infeasible under tight torque bounds).
    """
    y, dy = vc_mod.outputs(vc, state, t=t)
    Lf_y, L2f_y, LgLf_y = vc_mod.lie_derivatives(params, vc, state, t=t)
    eta = clf.eta(y, dy)
    V = float(eta @ clf.P_eps @ eta)
    drift = np.concatenate([dy, L2f_y])
    gain = np.vstack([np.zeros_like(np.atleast_2d(LgLf_y)), np.atleast_2d(LgLf_y)])
    LfV = float(2.0 * eta @ clf.P_eps @ drift)
    LgV = 2.0 * eta @ clf.P_eps @ gain
    bound = -(clf.gamma / clf.eps) * V

    m = np.atleast_2d(LgLf_y).shape[1]
    relax = relax_weight is not None
    nx = m + (1 if relax else 0)

    Hq = np.eye(m) if H_cost is None else np.atleast_2d(np.asarray(H_cost, dtype=float))
    H = np.zeros((nx, nx))
    H[:m, :m] = 2.0 * Hq
    f = np.zeros(nx)
    if relax:
        H[m, m] = 2.0 * relax_weight

    # convergence row: LgV u - delta <= -(gamma/eps) V - LfV
    conv = np.zeros((1, nx))
    conv[0, :m] = LgV
    if relax:
        conv[0, m] = -1.0
    rows = [conv]
    rhs = [bound - LfV]

    # stance reaction is affine in u: lam(u) = lam0 + dLam u
    lam0, dLam = _stance_force_affine(params, state)
    pyr = np.zeros((3, nx))
    pyr_rhs = np.zeros(3)
    dlam_t, dlam_n = dLam[:, 0], dLam[:, 1]
    pyr[0, :m] = -dlam_n
    pyr_rhs[0] = lam0[1]                       # lam_n(u) >= 0
    pyr[1, :m] = dlam_t - mu * PYRAMID_FACTOR * dlam_n
    pyr_rhs[1] = -(lam0[0] - mu * PYRAMID_FACTOR * lam0[1])
    pyr[2, :m] = -dlam_t - mu * PYRAMID_FACTOR * dlam_n
    pyr_rhs[2] = lam0[0] + mu * PYRAMID_FACTOR * lam0[1]
    rows.append(pyr)
    rhs.append(pyr_rhs)

    A_in = np.vstack(rows)
    b_in = np.concatenate([np.atleast_1d(r) for r in rhs])
    lb = np.full(nx, -np.inf)
    ub = np.full(nx, np.inf)
    lb[:m] = -u_max
    ub[:m] = u_max
    if relax:
        lb[m] = 0.0

    sol = solve_qp(QpProblem(H=H, f=f, A_in=A_in, b_in=b_in, lb=lb, ub=ub))
    sol.require_optimal()
    u = sol.z[:m]
    delta = float(sol.z[m]) if relax else 0.0
    lam = lam0 + dLam.T @ u
    return ClfQpResult(u=u, delta=delta, V=V, Vdot_bound=bound,
                       constraint_value=float(LfV + LgV @ u - delta), lam=lam,
                       solution=sol)


def _stance_force_affine(params: cp.CompassParams, state: cp.GeneralizedState):
    """lam(u) = lam0 + dLam' u for the pinned stance contact."""
    B = cp.floating_actuation(params)
    if B.size == 0:
        raise ValueError("model has no actuators")
    m = B.shape[1]
    _, w0 = cp.forward_dynamics(params, state, np.zeros(m))
    lam0 = np.asarray(w0.force)
    dLam = np.zeros((m, 2))
    for j in range(m):
        u = np.zeros(m)
        u[j] = 1.0
        _, wj = cp.forward_dynamics(params, state, u)
        dLam[j] = np.asarray(wj.force) - lam0
    return lam0, dLam


# --- stride-to-stride regulation ---------------------------------------------

@dataclass(frozen=True)
class RegulatorGains:
    kp: float
    kd: float
    v_ref: float

    def __post_init__(self):
        if not (np.isfinite(self.kp) and np.isfinite(self.kd) and np.isfinite(self.v_ref)):
            raise ValueError("regulator gains must be finite")


def raibert_regulator(v_avg: float, v_avg_prev: float, gains: RegulatorGains) -> float:
    """Foot-placement update dp = Kp (v_k - v_ref) + Kd (v_k - v_{k-1})."""
    return gains.kp * (v_avg - gains.v_ref) + gains.kd * (v_avg - v_avg_prev)


def bezier_transition(poly: vc_mod.BezierPoly, dp) -> vc_mod.BezierPoly:
    """Shift the last two coefficients of each row by dp.

    Moves the endpoint value at s = 1 by dp while keeping the terminal
    derivative unchanged (both coefficients shift equally).
    """
    if poly.degree < 2:
        raise ValueError("transition needs degree >= 2")
    dp = np.atleast_1d(np.asarray(dp, dtype=float))
    alpha = poly.alpha.copy()
    alpha[:, -2] += dp
    alpha[:, -1] += dp
    return vc_mod.BezierPoly(alpha=alpha)


def step_velocity(params: cp.CompassParams, pre_impact_q: np.ndarray, duration: float) -> float:
    """Per-step average forward speed: stance-width at impact over duration."""
    l = params.length
    step_len = l * (np.sin(pre_impact_q[0]) - np.sin(pre_impact_q[1]))
    return float(step_len / duration)
