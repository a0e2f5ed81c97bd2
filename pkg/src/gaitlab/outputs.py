"""Virtual constraints: Bézier desired outputs driven by a phase variable,
output derivatives along the compass dynamics, the feedback-linearizing
controller, and hybrid-invariance residuals."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Optional

import numpy as np

from gaitlab import compass as cp


class SingularDecouplingError(RuntimeError):
    """Decoupling matrix not invertible at the requested state."""


@dataclass
class BezierPoly:
    """Bernstein-basis polynomial rows; one row of coefficients per output."""

    alpha: np.ndarray  # (n_out, degree + 1)

    def __post_init__(self):
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        if self.alpha.shape[1] < 2:
            raise ValueError("Bezier polynomial needs degree >= 1")
        self._monomial = None

    @property
    def degree(self) -> int:
        return self.alpha.shape[1] - 1

    @property
    def n_out(self) -> int:
        return self.alpha.shape[0]

    def monomial_rows(self) -> np.ndarray:
        """Power-basis coefficients (cached): value = sum_k row[k] s^k.

        Exact for the low degrees used here; lets the tracking hot path use
        Horner evaluation instead of per-call Bernstein sums.
        """
        if self._monomial is None:
            M = self.degree
            T = np.zeros((M + 1, M + 1))
            for k in range(M + 1):
                for j in range(k, M + 1):
                    T[j, k] = comb(M, k) * comb(M - k, j - k) * (-1.0) ** (j - k)
            self._monomial = self.alpha @ T.T
        return self._monomial


def bezier_eval(poly: BezierPoly, s: float):
    """(value, d/ds, d2/ds2) of each output row at s, s clamped to [0, 1].

    Derivatives use the Bernstein difference identities, so endpoint values
    and slopes are exact in the coefficients.
    """
    s = float(np.clip(s, 0.0, 1.0))
    a = poly.alpha
    M = poly.degree

    def bernstein(coeffs, deg):
        return sum(
            coeffs[:, k] * comb(deg, k) * s**k * (1.0 - s) ** (deg - k)
            for k in range(deg + 1)
        )

    value = bernstein(a, M)
    d1 = M * bernstein(np.diff(a, axis=1), M - 1)
    if M >= 2:
        d2 = M * (M - 1) * bernstein(np.diff(a, n=2, axis=1), M - 2)
    else:
        d2 = np.zeros(poly.n_out)
    return value, d1, d2


@dataclass
class PhaseVariable:
    """Monotone gait phase in [0, 1].

    mode "state": tau = (c.q - tau_plus) / (tau_minus - tau_plus)
    mode "time":  tau = t / duration
    mode "blend": w * state + (1 - w) * time
    """

    mode: str = "state"
    c: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    tau_plus: float = 0.0    # c.q at the start of the step
    tau_minus: float = 1.0   # c.q at the end of the step
    duration: float = 1.0    # nominal step time for the time mode
    weight: float = 1.0      # state weight in blend mode

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if self.mode not in ("state", "time", "blend"):
            raise ValueError(f"unknown phase mode '{self.mode}'")
        if abs(self.tau_minus - self.tau_plus) < 1e-12:
            raise ValueError("phase endpoints must differ")
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    @property
    def state_weight(self) -> float:
        return {"state": 1.0, "time": 0.0}.get(self.mode, self.weight)

    def value(self, q: np.ndarray, t: float = 0.0) -> float:
        w = self.state_weight
        tau_s = (float(self.c @ q) - self.tau_plus) / (self.tau_minus - self.tau_plus)
        tau_t = t / self.duration
        return w * tau_s + (1.0 - w) * tau_t

    def grad_q(self) -> np.ndarray:
        return self.state_weight * self.c / (self.tau_minus - self.tau_plus)

    def rate(self, dq: np.ndarray) -> float:
        return float(self.grad_q() @ dq) + (1.0 - self.state_weight) / self.duration


@dataclass
class VirtualConstraintSet:
    selector: np.ndarray      # rows picking actual outputs y_a = selector @ q
    desired: BezierPoly
    phase: PhaseVariable

    def __post_init__(self):
        self.selector = np.atleast_2d(np.asarray(self.selector, dtype=float))
        if self.selector.shape[0] != self.desired.n_out:
            raise ValueError("selector rows must match desired output rows")


def bezier_eval_fast(poly: BezierPoly, s: float):
    """Horner evaluation on the cached power-basis rows; same results as
    bezier_eval (cross-checked in tests) at a fraction of the cost."""
    s = float(np.clip(s, 0.0, 1.0))
    rows = poly.monomial_rows()
    M = poly.degree
    v = rows[:, M].copy()
    d1 = rows[:, M] * M
    d2 = rows[:, M] * (M * (M - 1))
    for j in range(M - 1, -1, -1):
        v = v * s + rows[:, j]
        if j >= 1:
            d1 = d1 * s + rows[:, j] * j
        if j >= 2:
            d2 = d2 * s + rows[:, j] * (j * (j - 1))
    return v, d1, d2


def _desired_with_extension(vc: VirtualConstraintSet, tau: float):
    """Desired outputs extended linearly beyond [0, 1] so y stays C1 when a
    transient overshoots the nominal phase range."""
    v, d1, d2 = bezier_eval_fast(vc.desired, tau)
    if 0.0 <= tau <= 1.0:
        return v, d1, d2
    s = float(np.clip(tau, 0.0, 1.0))
    return v + d1 * (tau - s), d1, np.zeros_like(d2)


def outputs(vc: VirtualConstraintSet, state: cp.GeneralizedState, t: float = 0.0):
    """(y, ydot) of the virtual constraint at a state (and step time t)."""
    tau = vc.phase.value(state.q, t)
    yd, dyd, _ = _desired_with_extension(vc, tau)
    y = vc.selector @ state.q - yd
    J_eff = vc.selector - np.outer(dyd, vc.phase.grad_q())
    dy = J_eff @ state.dq - dyd * (1.0 - vc.phase.state_weight) / vc.phase.duration
    return y, dy


def lie_derivatives(
    params: cp.CompassParams,
    vc: VirtualConstraintSet,
    state: cp.GeneralizedState,
    t: float = 0.0,
    B: Optional[np.ndarray] = None,
):
    """First and second output derivatives along the compass flow.

    Returns (Lf_y, L2f_y, LgLf_y): ydot, the drift part of yddot, and the
    decoupling matrix so that yddot = L2f_y + LgLf_y @ u.  B overrides the
    model actuation matrix (used by fully-actuated comparisons).
    """
    terms = cp.dynamics_terms(params, state)
    Bm = terms.B if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    tau = vc.phase.value(state.q, t)
    tau_rate = vc.phase.rate(state.dq)
    yd, dyd, ddyd = _desired_with_extension(vc, tau)

    J_eff = vc.selector - np.outer(dyd, vc.phase.grad_q())
    Lf_y = J_eff @ state.dq - dyd * (1.0 - vc.phase.state_weight) / vc.phase.duration
    ddq_drift = np.linalg.solve(terms.D, -terms.H)
    L2f_y = J_eff @ ddq_drift - ddyd * tau_rate**2
    LgLf_y = J_eff @ np.linalg.solve(terms.D, Bm)
    return Lf_y, L2f_y, LgLf_y


def fbl_controller(
    params: cp.CompassParams,
    vc: VirtualConstraintSet,
    state: cp.GeneralizedState,
    mu: np.ndarray,
    t: float = 0.0,
    B: Optional[np.ndarray] = None,
    cond_limit: float = 1e8,
) -> np.ndarray:
    """u = (LgLf y)^-1 (-L2f y + mu), making the closed loop obey yddot = mu."""
    _, L2f_y, LgLf_y = lie_derivatives(params, vc, state, t=t, B=B)
    A = np.atleast_2d(LgLf_y)
    if A.shape[0] != A.shape[1] or np.linalg.cond(A) > cond_limit:
        raise SingularDecouplingError(
            f"decoupling matrix is singular or ill-conditioned (shape {A.shape})"
        )
    return np.linalg.solve(A, -L2f_y + np.atleast_1d(mu))


def pd_aux(y, dy, eps: float, kp, kd) -> np.ndarray:
    """Stabilizing auxiliary input mu = -(Kp/eps^2) y - (Kd/eps) ydot."""
    if not (0.0 < eps <= 1.0):
        raise ValueError("eps must lie in (0, 1]")
    kp = np.asarray(kp, dtype=float)
    kd = np.asarray(kd, dtype=float)
    return -(kp / eps**2) * np.atleast_1d(y) - (kd / eps) * np.atleast_1d(dy)


def hzd_residual(
    params: cp.CompassParams,
    vc: VirtualConstraintSet,
    pre_impact: cp.GeneralizedState,
):
    """Norms of (y, ydot) right after the impact reset.

    Zero iff the zero-dynamics surface is impact invariant at this point:
    the reset of a point with y = ydot = 0 lands back on the surface.
    """
    post, _ = cp.impact_map(params, pre_impact)
    y_post, dy_post = outputs(vc, post, t=0.0)
    return float(np.linalg.norm(y_post)), float(np.linalg.norm(dy_post))


def fit_bezier_to_trajectory(taus, values, degree: int) -> np.ndarray:
    """Least-squares Bernstein coefficients for samples (tau_i, value_i)."""
    taus = np.asarray(taus, dtype=float)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[0] == taus.size:
        values = values.T
    A = np.column_stack([
        comb(degree, k) * taus**k * (1.0 - taus) ** (degree - k)
        for k in range(degree + 1)
    ])
    coeffs, *_ = np.linalg.lstsq(A, values.T, rcond=None)
    return coeffs.T
