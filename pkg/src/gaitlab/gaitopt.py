"""Closed-loop HZD gait generation for the hip-actuated compass biped.

Single-shooting formulation: decision variables are the post-impact section
state and the Bézier coefficients of the swing-angle output.  The first two
coefficients are pinned by construction so that y = ydot = 0 at the section,
which makes hybrid invariance equivalent to periodicity; the NLP then
minimizes mechanical cost of transport under periodicity, friction, torque
and joint-range constraints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from gaitlab import compass as cp
from gaitlab import poincare
from gaitlab import outputs as vc_mod
from gaitlab.controllers import PdGains
from gaitlab.hybrid import SimulationError, simulate_steps
from gaitlab.numerics.newton import NewtonError, newton_fd
from gaitlab.numerics.nlp import NlpError, NlpProblem, solve_nlp

SWING_SELECTOR = np.array([[0.0, 1.0]])   # actual output: swing leg angle
PHASE_SELECTOR = np.array([1.0, 0.0])     # phase variable: stance leg angle
FALL_PENALTY = 1e3

# Designed flat-ground anchor gait for the default morphology (hip-actuated,
# m=5, m_hip=10, a=0.3): found by randomized output-shape search with Newton
# closure of the step map, landing at 0.21 m/s with |u| < 28 N m and a
# restricted Poincare eigenvalue of 0.92.  Slope continuation from the
# passive 5-degree cycle cannot reach flat ground for this morphology (the
# periodic family folds in a grazing bifurcation around a 2-degree slope),
# so the flat pipeline seeds from this anchor instead.
FLAT_ANCHOR_X_STAR = np.array([-0.10653061, 0.10653061, 0.42903062, 0.17015803])
FLAT_ANCHOR_ALPHA = np.array([[0.10653061, 0.12343107, -0.88759927,
                               -0.08725924, -0.22259354, -0.10653061]])
FLAT_ANCHOR_DURATION = 0.883


@dataclass
class GaitDecision:
    """Section state, output coefficients and phase parameters of one gait."""

    x_star: np.ndarray            # post-impact section state (q, dq)
    alpha: np.ndarray             # Bézier rows, (1, degree+1)
    tau_plus: float               # phase start: c.q at the section
    tau_minus: float              # phase end: c.q at footstrike
    duration: float               # nominal step time (time/blend phase modes)

    def __post_init__(self):
        self.x_star = np.asarray(self.x_star, dtype=float)
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float))

    def pack(self) -> np.ndarray:
        return np.concatenate([
            self.x_star,
            self.alpha.ravel(),
            [self.tau_plus, self.tau_minus, self.duration],
        ])

    @classmethod
    def unpack(cls, vec: np.ndarray, degree: int = 5) -> "GaitDecision":
        vec = np.asarray(vec, dtype=float)
        n_alpha = degree + 1
        return cls(
            x_star=vec[:4].copy(),
            alpha=vec[4:4 + n_alpha].reshape(1, n_alpha).copy(),
            tau_plus=float(vec[4 + n_alpha]),
            tau_minus=float(vec[5 + n_alpha]),
            duration=float(vec[6 + n_alpha]),
        )

    def to_dict(self) -> dict:
        return {
            "x_star": self.x_star.tolist(),
            "alpha": self.alpha.tolist(),
            "tau_plus": self.tau_plus,
            "tau_minus": self.tau_minus,
            "duration": self.duration,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaitDecision":
        return cls(x_star=np.array(d["x_star"]), alpha=np.array(d["alpha"]),
                   tau_plus=d["tau_plus"], tau_minus=d["tau_minus"],
                   duration=d["duration"])


def virtual_constraints(decision: GaitDecision, mode: str = "state",
                        weight: float = 1.0) -> vc_mod.VirtualConstraintSet:
    phase = vc_mod.PhaseVariable(
        mode=mode,
        c=PHASE_SELECTOR,
        tau_plus=decision.tau_plus,
        tau_minus=decision.tau_minus,
        duration=decision.duration,
        weight=weight,
    )
    return vc_mod.VirtualConstraintSet(
        selector=SWING_SELECTOR,
        desired=vc_mod.BezierPoly(alpha=decision.alpha),
        phase=phase,
    )


def pin_boundary_coefficients(decision: GaitDecision) -> GaitDecision:
    """Fix alpha_0, alpha_1 so that y = ydot = 0 at the section state.

    With periodicity this renders the zero-dynamics surface impact
    invariant by construction.
    """
    q, dq = decision.x_star[:2], decision.x_star[2:]
    M = decision.alpha.shape[1] - 1
    span = decision.tau_minus - decision.tau_plus
    tau_rate0 = float(PHASE_SELECTOR @ dq) / span
    if abs(tau_rate0) < 1e-9:
        raise ValueError("phase must advance at the section state")
    alpha = decision.alpha.copy()
    y_a0 = float((SWING_SELECTOR @ q)[0])
    dy_a0 = float((SWING_SELECTOR @ dq)[0])
    alpha[0, 0] = y_a0
    alpha[0, 1] = y_a0 + dy_a0 / (M * tau_rate0)
    return GaitDecision(x_star=decision.x_star.copy(), alpha=alpha,
                        tau_plus=decision.tau_plus, tau_minus=decision.tau_minus,
                        duration=decision.duration)


def tracking_controller(params: cp.CompassParams, vc: vc_mod.VirtualConstraintSet,
                        gains: PdGains):
    """Feedback-linearizing output tracker for the hip-actuated compass."""

    def controller(t, state):
        y, dy = vc_mod.outputs(vc, state, t=t)
        mu = vc_mod.pd_aux(y, dy, gains.eps, gains.kp, gains.kd)
        return vc_mod.fbl_controller(params, vc, state, mu, t=t)

    return controller


def _fused_tracker(params: cp.CompassParams, vc: vc_mod.VirtualConstraintSet,
                   gains: PdGains):
    """One-pass closed-loop evaluation (dx, u, y, dy) with a last-call memo,
    so the field, quadrature and probe share a single dynamics solve.

    Specialized to the single-output hip-actuated compass; plain-float math
    throughout because this runs inside the integrator at every stage.
    """
    sel0, sel1 = float(vc.selector[0, 0]), float(vc.selector[0, 1])
    g_tau = vc.phase.grad_q()
    g0, g1 = float(g_tau[0]), float(g_tau[1])
    w_state = vc.phase.state_weight
    w_time = (1.0 - w_state) / vc.phase.duration
    c0, c1 = float(vc.phase.c[0]), float(vc.phase.c[1])
    tau_plus, span = vc.phase.tau_plus, vc.phase.tau_minus - vc.phase.tau_plus
    duration = vc.phase.duration
    kp = float(np.atleast_1d(gains.kp)[0])
    kd = float(np.atleast_1d(gains.kd)[0])
    eps = gains.eps
    mono = tuple(float(v) for v in vc.desired.monomial_rows()[0])
    M = vc.desired.degree

    m_leg, mH, a, l = params.m, params.m_hip, params.hip_to_com, params.length
    Mtot = params.total_mass
    gx = params.g * np.sin(params.slope)
    gy = -params.g * np.cos(params.slope)
    mal = m_leg * a * l
    d11 = m_leg * a * a
    d00 = Mtot * l * l - 2.0 * mal + d11
    g_lever = Mtot * l - m_leg * a
    ma = m_leg * a
    if not params.actuated:
        raise ValueError("tracking needs the hip torque channel")

    from math import cos, sin

    last = {"key": None, "out": None}

    def evaluate(t, x):
        key = (t, x.tobytes())
        if last["key"] == key:
            return last["out"]
        q0, q1, w0, w1 = float(x[0]), float(x[1]), float(x[2]), float(x[3])
        s1, cc1 = sin(q0), cos(q0)
        s2, cc2 = sin(q1), cos(q1)
        sd = s1 * cc2 - cc1 * s2
        cd = cc1 * cc2 + s1 * s2
        D01 = -mal * cd
        H0 = -mal * sd * w1 * w1 - g_lever * (gx * cc1 - gy * s1)
        H1 = mal * sd * w0 * w0 + ma * (gx * cc2 - gy * s2)

        tau_s = (c0 * q0 + c1 * q1 - tau_plus) / span
        tau = w_state * tau_s + (1.0 - w_state) * (t / duration)
        tau_rate = g0 * w0 + g1 * w1 + w_time

        # desired output by Horner on the clamped phase, linear extension
        s = 0.0 if tau < 0.0 else (1.0 if tau > 1.0 else tau)
        yd = mono[M]
        dyd = mono[M] * M
        ddyd = mono[M] * (M * (M - 1))
        for j in range(M - 1, -1, -1):
            yd = yd * s + mono[j]
            if j >= 1:
                dyd = dyd * s + mono[j] * j
            if j >= 2:
                ddyd = ddyd * s + mono[j] * (j * (j - 1))
        if tau < 0.0 or tau > 1.0:
            yd = yd + dyd * (tau - s)
            ddyd = 0.0

        j0 = sel0 - dyd * g0
        j1 = sel1 - dyd * g1
        y = sel0 * q0 + sel1 * q1 - yd
        dy = j0 * w0 + j1 * w1 - dyd * w_time
        mu = -(kp / (eps * eps)) * y - (kd / eps) * dy

        det = d00 * d11 - D01 * D01
        dd0 = (-H0 * d11 + H1 * D01) / det
        dd1 = (H0 * D01 - H1 * d00) / det
        db0 = (-d11 - D01) / det           # D^-1 B with B = (-1, 1)'
        db1 = (D01 + d00) / det
        L2f = j0 * dd0 + j1 * dd1 - ddyd * tau_rate * tau_rate
        LgLf = j0 * db0 + j1 * db1
        u_s = (mu - L2f) / LgLf
        out = {
            "dx": np.array([w0, w1, dd0 + db0 * u_s, dd1 + db1 * u_s]),
            "u": np.array([u_s]),
            "y": np.array([y]),
            "dy": np.array([dy]),
            "abs_power": abs(u_s * (w1 - w0)),
        }
        last["key"] = key
        last["out"] = out
        return out

    return evaluate


def closed_loop_spec(params: cp.CompassParams, vc: vc_mod.VirtualConstraintSet,
                     gains: PdGains, with_power_quad: bool = True,
                     with_probe: bool = False):
    """Compass hybrid system under the HZD tracking controller, with the
    actuator |power| quadrature needed by the transport cost."""
    fused = _fused_tracker(params, vc, gains)

    probe = None
    if with_probe:
        def probe(t, x):
            out = fused(t, x)
            state = cp.GeneralizedState.from_vector(x)
            _, lam = cp.forward_dynamics(params, state, out["u"])
            return {
                "u": float(out["u"][0]),
                "lam_t": lam.tangential,
                "lam_n": lam.normal,
                "y": float(out["y"][0]),
                "dy": float(out["dy"][0]),
            }

    quads = {}
    if with_power_quad:
        quads = {
            "abs_work": lambda t, x: fused(t, x)["abs_power"],
            "pos_work": lambda t, x: max(
                fused(t, x)["u"][0] * (x[3] - x[2]), 0.0
            ),
            "sq_torque": lambda t, x: fused(t, x)["u"][0] ** 2,
        }
    from gaitlab.hybrid import HybridSystemSpec, Vertex

    base = cp.hybrid_spec(params)
    vertex = Vertex(
        name="swing",
        field=lambda t, x: fused(t, x)["dx"],
        edge=base.vertices["swing"].edge,
        probe=probe,
        quads=quads,
    )
    return HybridSystemSpec(vertices={"swing": vertex}, start="swing")


def mcot_cost(params: cp.CompassParams, abs_work: float, step_length: float) -> float:
    """Mechanical cost of transport: integral |u . dq_act| dt over weight
    times distance."""
    if step_length <= 0:
        raise ValueError("step length must be positive")
    return float(abs_work / (params.total_mass * params.g * step_length))


@dataclass
class GaitEvaluation:
    trajectory: object
    periodicity: np.ndarray        # Delta(x_pre) - x_star
    hzd: tuple                     # (|y+|, |ydot+|)
    friction_margin: float         # min over samples
    max_torque: float
    max_rel_angle: float
    step_length: float
    step_time: float
    cost: float
    landing_rate: float = np.nan   # swing-foot height rate at impact (< 0)
    abs_work: float = np.nan
    pos_work: float = np.nan
    sq_torque_integral: float = np.nan
    fell: bool = False

    @property
    def periodicity_norm(self) -> float:
        return float(np.linalg.norm(self.periodicity, ord=np.inf))

    @property
    def hzd_norm(self) -> float:
        return float(max(self.hzd))


def evaluate_gait(
    params: cp.CompassParams,
    decision: GaitDecision,
    gains: Optional[PdGains] = None,
    mu: float = 0.8,
    rtol: float = 1e-9,
    atol: float = 1e-9,
    max_arc_time: float = 3.0,
    phase_mode: str = "state",
    power_convention: str = "absolute",
) -> GaitEvaluation:
    """Simulate one closed-loop step from the section state and report the
    periodicity/HZD/feasibility residuals and the transport cost.

    A fall (no footstrike) is reported as a penalized evaluation, not an
    exception, so optimizers can back off smoothly.
    """
    gains = gains or PdGains(kp=[100.0], kd=[20.0], eps=0.25)
    vc = virtual_constraints(decision, mode=phase_mode)
    spec = closed_loop_spec(params, vc, gains)
    x0 = decision.x_star

    try:
        traj = simulate_steps(spec, x0, 1, max_arc_time=max_arc_time, rtol=rtol, atol=atol)
    except SimulationError as exc:
        arc = getattr(exc, "arc", None)
        deficit = 0.0
        if arc is not None:
            # distance still to travel toward the guard when time ran out
            deficit = abs(cp.swing_foot_height(params, arc.x[-1][:2])) + \
                max(0.0, decision.tau_minus - float(arc.x[-1][0]))
        big = FALL_PENALTY + deficit
        return GaitEvaluation(
            trajectory=None,
            periodicity=np.full(4, big),
            hzd=(big, big),
            friction_margin=-big,
            max_torque=big,
            max_rel_angle=big,
            step_length=np.nan,
            step_time=np.nan,
            cost=big,
            fell=True,
        )

    arc = traj.arcs[0]
    post = arc.post_event
    periodicity = post - x0
    post_state = cp.GeneralizedState.from_vector(post)
    y_post, dy_post = vc_mod.outputs(vc, post_state, t=0.0)
    hzd = (float(np.linalg.norm(y_post)), float(np.linalg.norm(dy_post)))

    fused = _fused_tracker(params, vc, gains)
    friction_margin = np.inf
    max_torque = 0.0
    for t_i, x_i in zip(arc.t - arc.t[0], arc.x):
        out = fused(float(t_i), x_i)
        state = cp.GeneralizedState.from_vector(x_i)
        lam = cp.stance_contact_force(params, state, out["dx"][2:4], out["u"])
        m_i = mu * lam.normal - abs(lam.tangential) if lam.normal >= 0 else lam.normal
        friction_margin = min(friction_margin, float(m_i))
        max_torque = max(max_torque, abs(float(out["u"][0])))
    friction_margin = float(friction_margin)
    max_rel = float(np.max(np.abs(arc.x[:, 1] - arc.x[:, 0])))

    pre_q = arc.pre_event[:2]
    step_length = float(params.length * (np.sin(pre_q[0]) - np.sin(pre_q[1])))
    step_time = float(arc.event_time - arc.t[0])
    landing = cp.swing_foot_height_rate(
        params, cp.GeneralizedState.from_vector(arc.pre_event))
    work = arc.quads["abs_work" if power_convention == "absolute" else "pos_work"]
    cost = mcot_cost(params, work, step_length)
    return GaitEvaluation(
        trajectory=traj,
        periodicity=periodicity,
        hzd=hzd,
        friction_margin=friction_margin,
        max_torque=max_torque,
        max_rel_angle=max_rel,
        step_length=step_length,
        step_time=step_time,
        cost=cost,
        landing_rate=float(landing),
        abs_work=arc.quads["abs_work"],
        pos_work=arc.quads["pos_work"],
        sq_torque_integral=arc.quads["sq_torque"],
    )


@dataclass
class GaitSolution:
    decision: GaitDecision
    cost: float
    residuals: dict
    eigenvalues: list
    status: str

    def to_json(self, path=None) -> str:
        payload = {
            "schema_version": 1,
            "decision": self.decision.to_dict(),
            "cost": self.cost,
            "residuals": self.residuals,
            "eigenvalues": self.eigenvalues,
            "status": self.status,
        }
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, path) -> "GaitSolution":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(
            decision=GaitDecision.from_dict(payload["decision"]),
            cost=payload["cost"],
            residuals=payload["residuals"],
            eigenvalues=payload["eigenvalues"],
            status=payload["status"],
        )


def seed_from_passive(params: cp.CompassParams, slope: float = np.deg2rad(5.0),
                      degree: int = 5, x_guess: Optional[np.ndarray] = None):
    """Build an initial gait decision by fitting the output polynomial to the
    passive limit cycle on a slope."""
    passive = cp.CompassParams(
        m=params.m, m_hip=params.m_hip, length=params.length,
        hip_to_com=params.hip_to_com, com_to_foot=params.com_to_foot,
        slope=slope, g=params.g, actuated=False,
    ).validate()
    spec = cp.hybrid_spec(passive)
    guess = np.array([-0.30449667, 0.30449667, 1.1909936, -1.03220026]) \
        if x_guess is None else np.asarray(x_guess, dtype=float)
    report = poincare.find_fixed_point(spec, guess, tol=1e-10)
    x_star = report.x_star

    traj = simulate_steps(spec, x_star, 1, max_arc_time=3.0)
    arc = traj.arcs[0]
    tau_plus = float(x_star[0])
    tau_minus = float(arc.pre_event[0])
    taus = (arc.x[:, 0] - tau_plus) / (tau_minus - tau_plus)
    alpha = vc_mod.fit_bezier_to_trajectory(taus, arc.x[:, 1:2], degree)
    decision = GaitDecision(
        x_star=x_star,
        alpha=alpha,
        tau_plus=tau_plus,
        tau_minus=tau_minus,
        duration=float(arc.event_time - arc.t[0]),
    )
    return pin_boundary_coefficients(decision)


def _free_vector(decision: GaitDecision) -> np.ndarray:
    """Optimizer coordinates: section state + free Bézier coefficients."""
    return np.concatenate([decision.x_star, decision.alpha[0, 2:]])


def _decision_from_free(z: np.ndarray, template: GaitDecision) -> GaitDecision:
    x_star = z[:4]
    alpha = template.alpha.copy()
    alpha[0, 2:] = z[4:]
    d = GaitDecision(
        x_star=x_star,
        alpha=alpha,
        tau_plus=float(x_star[0]),
        tau_minus=float(x_star[1]),
        duration=template.duration,
    )
    return pin_boundary_coefficients(d)


def _step_post_state(params, decision, gains, rtol, atol, max_arc_time=3.0):
    """(post state, pre state, step time) of one closed-loop step."""
    vc = virtual_constraints(decision)
    spec = closed_loop_spec(params, vc, gains, with_power_quad=False)
    traj = simulate_steps(spec, decision.x_star, 1, max_arc_time=max_arc_time,
                          rtol=rtol, atol=atol)
    arc = traj.arcs[0]
    return arc.post_event, arc.pre_event, float(arc.event_time - arc.t[0])


def close_periodicity(
    params: cp.CompassParams,
    decision: GaitDecision,
    gains: PdGains,
    tol: float = 1e-9,
    rtol: float = 1e-9,
    atol: float = 1e-9,
    max_iter: int = 15,
) -> GaitDecision:
    """Newton on the section state (re-pinning the boundary coefficients each
    probe) until the closed-loop step returns to its start.

    This is the fixed point of the controlled step map with the hybrid-
    invariance pin kept consistent, so periodicity and the HZD residual are
    closed together.
    """
    template = decision

    def residual(x_star):
        d = GaitDecision(x_star=x_star, alpha=template.alpha.copy(),
                         tau_plus=float(x_star[0]), tau_minus=float(x_star[1]),
                         duration=template.duration)
        try:
            d = pin_boundary_coefficients(d)
            post, _, _ = _step_post_state(params, d, gains, rtol, atol)
            return post - x_star
        except (SimulationError, ValueError):
            # fall during a probe: huge residual so the damping backs off
            return np.full(4, FALL_PENALTY)

    result = newton_fd(residual, decision.x_star, tol=tol, max_iter=max_iter,
                       fd_step=1e-7)
    x_star = result.x
    closed = GaitDecision(x_star=x_star, alpha=template.alpha.copy(),
                          tau_plus=float(x_star[0]), tau_minus=float(x_star[1]),
                          duration=template.duration)
    return pin_boundary_coefficients(closed)


def optimize_gait(
    params: cp.CompassParams,
    initial: GaitDecision,
    gains: Optional[PdGains] = None,
    u_max: float = 30.0,
    mu: float = 0.8,
    rel_angle_max: float = 1.2,
    feas_tol: float = 1e-6,
    rtol: float = 1e-8,
    atol: float = 1e-8,
    max_outer: int = 1,
    inner_iter: int = 2,
    inner_budget: int = 28,
    min_landing_rate: float = 0.02,
    torque_weight: float = 0.0,
    power_convention: str = "absolute",
    skip_eigenvalues: bool = False,
) -> GaitSolution:
    """Single-shooting gait NLP: minimize M-COT over the output coefficients
    subject to friction, torque, joint-range and touchdown-transversality
    feasibility, with the section state closed by Newton inside every
    evaluation (reduced-space form of the periodicity-constrained problem).

    Closing periodicity inside the evaluation keeps every probed point on
    the periodic-gait manifold, which the descent needs: the raw augmented
    problem puts a fall cliff within one line-search step of the seed.  The
    returned gait always satisfies the residual tolerances or the status
    says otherwise.
    """
    gains = gains or PdGains(kp=[100.0], kd=[20.0], eps=0.25)

    check = evaluate_gait(params, initial, gains, mu=mu, rtol=rtol, atol=atol)
    if check.fell:
        raise ValueError("initial gait does not complete a step")

    seed = close_periodicity(params, initial, gains, rtol=rtol, atol=atol)
    template = seed
    warm = {"x_star": seed.x_star.copy()}
    cache: dict = {}
    BAD = 1e3

    def evaluation(tail):
        key = tail.tobytes()
        if key not in cache:
            if len(cache) > 4096:
                cache.clear()
            d = GaitDecision(x_star=warm["x_star"].copy(), alpha=template.alpha.copy(),
                             tau_plus=float(warm["x_star"][0]),
                             tau_minus=float(warm["x_star"][1]),
                             duration=template.duration)
            d.alpha[0, 2:] = tail
            try:
                closed = close_periodicity(params, d, gains, tol=1e-9,
                                           rtol=rtol, atol=atol, max_iter=10)
                ev = evaluate_gait(params, closed, gains, mu=mu, rtol=rtol, atol=atol,
                                   power_convention=power_convention)
                if not ev.fell:
                    warm["x_star"] = closed.x_star.copy()
                cache[key] = (closed, ev)
            except (NewtonError, SimulationError, ValueError):
                cache[key] = (None, None)
        return cache[key]

    def objective(tail):
        closed, ev = evaluation(tail)
        if ev is None or ev.fell:
            return BAD
        val = ev.cost
        if torque_weight:
            val += torque_weight * ev.sq_torque_integral
        return val

    def ineq(tail):
        closed, ev = evaluation(tail)
        if ev is None or ev.fell:
            # modest violation signal: the objective already carries the fall
            # penalty, and squaring a huge value here would wall off the
            # line search completely
            return np.full(4, 1.0)
        landing = ev.landing_rate if np.isfinite(ev.landing_rate) else 1.0
        return np.array([
            -ev.friction_margin,                 # friction margin >= 0
            ev.max_torque - u_max,               # |u| <= u_max
            ev.max_rel_angle - rel_angle_max,    # joint range
            landing + min_landing_rate,          # transversal touchdown
        ])

    tail0 = template.alpha[0, 2:].copy()
    span = np.full(tail0.size, 0.15)
    prob = NlpProblem(objective=objective, x0=tail0, ineq=ineq,
                      lb=tail0 - span, ub=tail0 + span)
    nlp_status = "converged"
    try:
        sol = solve_nlp(prob, feas_tol=feas_tol, grad_tol=1e-2, max_outer=max_outer,
                        mu0=100.0,
                        inner_options={"method": "Powell", "maxiter": inner_iter,
                                       "maxfev": inner_budget, "xtol": 1e-4})
        tail_best = sol.x
    except NlpError as exc:
        if exc.solution is None:
            raise
        tail_best = exc.solution.x
        nlp_status = exc.solution.status

    def finalize(decision):
        ev = evaluate_gait(params, decision, gains, mu=mu, rtol=1e-9, atol=1e-9,
                           power_convention=power_convention)
        feasible = not ev.fell and ev.periodicity_norm <= feas_tol \
            and ev.hzd_norm <= feas_tol and ev.friction_margin >= 0.0 \
            and ev.max_torque <= u_max and ev.max_rel_angle <= rel_angle_max
        return ev, feasible

    best, _ = evaluation(tail_best)
    candidates = []
    if best is not None:
        candidates.append(best)
    candidates.append(seed)
    decision, ev, feasible = None, None, False
    for cand in candidates:
        # final polish at tight integration tolerance; the Newton tolerance
        # must stay above the integration noise floor
        try:
            polished = close_periodicity(params, cand, gains, tol=1e-8,
                                         rtol=1e-10, atol=1e-10)
        except (NewtonError, SimulationError, ValueError):
            polished = cand  # probe-time closure may already be good enough
        ev_c, ok = finalize(polished)
        if decision is None or (ok and not feasible) or \
                (ok and feasible and ev_c.cost < ev.cost):
            decision, ev, feasible = polished, ev_c, ok
        if ok:
            break

    if decision is None:
        decision, ev, feasible = seed, *finalize(seed)

    status = "converged" if feasible else "infeasible"
    residuals = {
        "periodicity": ev.periodicity_norm,
        "hzd_y": ev.hzd[0],
        "hzd_dy": ev.hzd[1],
        "friction_margin": ev.friction_margin,
        "max_torque": ev.max_torque,
        "max_rel_angle": ev.max_rel_angle,
        "step_length": ev.step_length,
        "step_time": ev.step_time,
        "nlp_status": nlp_status,
    }

    eigenvalues: list = []
    if status == "converged" and not skip_eigenvalues:
        vc = virtual_constraints(decision)
        spec = closed_loop_spec(params, vc, gains, with_power_quad=False)
        try:
            J = poincare.linearize_map(spec, decision.x_star, residual_tol=1e-5,
                                       rtol=1e-9, atol=1e-9, max_arc_time=3.0)
            eigenvalues = sorted(np.abs(np.linalg.eigvals(J)).tolist(), reverse=True)
        except (ValueError, SimulationError):
            eigenvalues = []

    return GaitSolution(decision=decision, cost=ev.cost, residuals=residuals,
                        eigenvalues=eigenvalues, status=status)


def continue_gait_to_slope(
    params: cp.CompassParams,
    decision: GaitDecision,
    target_slope: float,
    gains: PdGains,
    start_slope: float = np.deg2rad(5.0),
    n_stages: int = 6,
    rtol: float = 1e-9,
    atol: float = 1e-9,
    landing_rate: float = 0.10,
    alpha_trust: float = 0.05,
) -> GaitDecision:
    """Continuation of the closed-loop periodic gait in the slope parameter.

    Each stage takes a soft Gauss-Newton correction of (x*, alpha) --
    landing-speed and leg-spread pins plus a trust weight holding the output
    shape -- and then polishes periodicity exactly over x* alone.  The gait
    family with frozen coefficients folds (grazing) before flat ground, so
    the shape must adapt, but unregularized shape moves drift into violent
    swing profiles; the trust rows keep them sane.  Stages cluster toward
    the target and bisect on failure.
    """
    ev0 = evaluate_gait(params.with_slope(start_slope), decision, gains,
                        rtol=rtol, atol=atol)
    rate0 = -ev0.landing_rate if np.isfinite(ev0.landing_rate) else landing_rate
    rate0 = max(rate0, 0.01)
    spread0 = float(decision.x_star[1] - decision.x_star[0])

    def scheduled_rate(s):
        if abs(start_slope - target_slope) < 1e-12:
            return landing_rate
        frac = (start_slope - s) / (start_slope - target_slope)
        return (1.0 - frac) * rate0 + frac * landing_rate

    if abs(start_slope - target_slope) > 1e-12:
        # quadratic clustering toward the target slope
        fracs = 1.0 - (1.0 - np.linspace(0.0, 1.0, n_stages + 1)[1:]) ** 2
        slopes = list(start_slope + (target_slope - start_slope) * fracs)
        slopes[-1] = target_slope
    else:
        slopes = [target_slope]

    current = start_slope
    queue = slopes
    min_step = abs(start_slope - target_slope) / 256.0 + 1e-12
    while queue:
        s = queue[0]
        stage = params.with_slope(float(s))
        try:
            trial = close_periodicity_extended(
                stage, decision, gains, rtol=rtol, atol=atol, max_iter=6,
                landing_rate=scheduled_rate(s), spread=spread0,
                alpha_reg=(decision.alpha[0, 2:].copy(), alpha_trust),
            )
            trial = close_periodicity(stage, trial, gains, tol=1e-9,
                                      rtol=rtol, atol=atol)
        except (NewtonError, SimulationError, ValueError) as exc:
            if abs(s - current) < min_step:
                raise NewtonError(f"continuation stalled at slope {s:.4f} rad") from exc
            queue.insert(0, 0.5 * (current + s))
            continue
        decision = trial
        current = s
        queue.pop(0)
    return decision


def flat_anchor_decision() -> GaitDecision:
    """The frozen flat-ground anchor gait (default morphology)."""
    return GaitDecision(
        x_star=FLAT_ANCHOR_X_STAR.copy(),
        alpha=FLAT_ANCHOR_ALPHA.copy(),
        tau_plus=float(FLAT_ANCHOR_X_STAR[0]),
        tau_minus=float(FLAT_ANCHOR_X_STAR[1]),
        duration=FLAT_ANCHOR_DURATION,
    )


def seed_gait(params: cp.CompassParams, gains: Optional[PdGains] = None) -> GaitDecision:
    """Periodic closed-loop gait at the slope of ``params``.

    Slopes at or above three degrees are seeded from the passive limit cycle
    (output polynomial fitted by least squares, then Newton closure); flatter
    slopes start from the designed flat anchor and continue upward.
    """
    gains = gains or PdGains(kp=[100.0], kd=[20.0], eps=0.25)
    target = params.slope
    if target >= np.deg2rad(3.0):
        decision = seed_from_passive(params, slope=np.deg2rad(5.0))
        if abs(target - np.deg2rad(5.0)) > 1e-12:
            decision = continue_gait_to_slope(
                params, decision, target, gains, start_slope=np.deg2rad(5.0),
            )
        return close_periodicity(params.with_slope(target), decision, gains)
    decision = flat_anchor_decision()
    if abs(target) > 1e-12:
        decision = continue_gait_to_slope(params, decision, target, gains,
                                          start_slope=0.0)
    return close_periodicity(params.with_slope(target), decision, gains)


def optimize_flat_ground_gait(
    params: cp.CompassParams,
    gains: Optional[PdGains] = None,
    **kwargs,
) -> GaitSolution:
    """Seed a periodic gait at the target slope of ``params`` (flat ground by
    default) and run the closed-loop NLP there."""
    gains = gains or PdGains(kp=[100.0], kd=[20.0], eps=0.25)
    if not params.actuated:
        params = cp.CompassParams(
            m=params.m, m_hip=params.m_hip, length=params.length,
            hip_to_com=params.hip_to_com, com_to_foot=params.com_to_foot,
            slope=params.slope, g=params.g, actuated=True,
        ).validate()
    decision = seed_gait(params, gains)
    return optimize_gait(params, decision, gains=gains, **kwargs)
