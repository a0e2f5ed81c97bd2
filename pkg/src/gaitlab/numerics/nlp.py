"""Constrained NLP solver: augmented-Lagrangian outer loop around a bounded
quasi-Newton inner solve (scipy L-BFGS-B with finite-difference gradients).

Deliberately simple; the gait problems in this package are sized to stay
within its reach (a dozen variables, a handful of constraints).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize


class NlpError(RuntimeError):
    """NLP solve failed (infeasible stall or iteration budget exhausted)."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass
class NlpProblem:
    objective: Callable[[np.ndarray], float]
    x0: np.ndarray
    eq: Optional[Callable[[np.ndarray], np.ndarray]] = None     # c(x) = 0
    ineq: Optional[Callable[[np.ndarray], np.ndarray]] = None   # g(x) <= 0
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None


@dataclass
class NlpSolution:
    x: np.ndarray
    objective: float
    max_eq_violation: float
    max_ineq_violation: float
    grad_norm: float
    outer_iterations: int
    status: str
    history: list = field(default_factory=list)


def _violations(prob, x):
    ceq = np.atleast_1d(prob.eq(x)) if prob.eq is not None else np.zeros(0)
    cin = np.atleast_1d(prob.ineq(x)) if prob.ineq is not None else np.zeros(0)
    v_eq = float(np.max(np.abs(ceq), initial=0.0))
    v_in = float(np.max(cin, initial=0.0))
    return ceq, cin, v_eq, max(0.0, v_in)


def solve_nlp(
    prob: NlpProblem,
    feas_tol: float = 1e-6,
    grad_tol: float = 1e-5,
    max_outer: int = 30,
    mu0: float = 10.0,
    mu_factor: float = 10.0,
    mu_max: float = 1e10,
    inner_options: Optional[dict] = None,
) -> NlpSolution:
    """Minimize prob.objective subject to eq(x)=0, ineq(x)<=0 and box bounds.

    Classic PHR augmented Lagrangian: multiplier estimates are updated after
    each inner solve, and the penalty grows whenever feasibility stalls.
    """
    x = np.asarray(prob.x0, dtype=float).copy()
    if prob.lb is not None and prob.ub is not None:
        if np.any(x < np.asarray(prob.lb) - 1e-12) or np.any(x > np.asarray(prob.ub) + 1e-12):
            raise ValueError("initial point violates bounds")
    bounds = None
    if prob.lb is not None or prob.ub is not None:
        lb = np.full(x.size, -np.inf) if prob.lb is None else np.asarray(prob.lb, dtype=float)
        ub = np.full(x.size, np.inf) if prob.ub is None else np.asarray(prob.ub, dtype=float)
        bounds = list(zip(lb, ub))

    ceq, cin, v_eq, v_in = _violations(prob, x)
    nu = np.zeros(ceq.size)
    lam = np.zeros(cin.size)
    mu = mu0
    best_viol = max(v_eq, v_in)
    history = []
    # the FD step must sit above the noise floor of simulation-backed
    # objectives; scipy's default (~1.5e-8) is far too small for those
    opts = {"maxiter": 200, "ftol": 1e-12, "gtol": 1e-8, "eps": 1e-6}
    if inner_options:
        opts.update(inner_options)
    # derivative-free inner solvers (e.g. Powell) suit shooting objectives
    # whose landscapes carry closure-failure holes that corrupt FD gradients
    method = opts.pop("method", "L-BFGS-B")
    if method != "L-BFGS-B":
        opts = {k: v for k, v in opts.items() if k not in ("gtol", "eps", "ftol")}

    status = "max-outer"
    grad_norm = np.inf
    for outer in range(1, max_outer + 1):

        def auglag(z):
            val = float(prob.objective(z))
            if prob.eq is not None:
                c = np.atleast_1d(prob.eq(z))
                val += float(nu @ c) + 0.5 * mu * float(c @ c)
            if prob.ineq is not None:
                g = np.atleast_1d(prob.ineq(z))
                shifted = np.maximum(0.0, lam + mu * g)
                val += float(np.sum(shifted**2 - lam**2)) / (2.0 * mu)
            return val

        res = minimize(auglag, x, method=method, bounds=bounds, options=opts)
        x = np.asarray(res.x, dtype=float)
        if getattr(res, "jac", None) is not None:
            pg = np.asarray(res.jac, dtype=float).copy()
            if bounds is not None:
                for i, (lo, hi) in enumerate(bounds):
                    if x[i] <= lo + 1e-12 and pg[i] > 0:
                        pg[i] = 0.0
                    if x[i] >= hi - 1e-12 and pg[i] < 0:
                        pg[i] = 0.0
            grad_norm = float(np.max(np.abs(pg), initial=0.0))
        else:
            grad_norm = np.inf

        ceq, cin, v_eq, v_in = _violations(prob, x)
        viol = max(v_eq, v_in)
        history.append({"outer": outer, "violation": viol, "objective": float(prob.objective(x)),
                        "mu": mu, "grad_norm": grad_norm})

        if viol < feas_tol and grad_norm < grad_tol:
            status = "converged"
            break

        # multiplier updates
        if nu.size:
            nu = nu + mu * ceq
        if lam.size:
            lam = np.maximum(0.0, lam + mu * cin)
        # grow the penalty when feasibility is not improving fast enough
        if viol > 0.25 * best_viol and viol >= feas_tol:
            mu = min(mu * mu_factor, mu_max)
        best_viol = min(best_viol, viol)
        if mu >= mu_max and viol >= feas_tol and outer > 3 and viol > 0.9 * best_viol:
            status = "infeasible-stall"
            break

    sol = NlpSolution(
        x=x,
        objective=float(prob.objective(x)),
        max_eq_violation=v_eq,
        max_ineq_violation=v_in,
        grad_norm=grad_norm,
        outer_iterations=len(history),
        status=status,
        history=history,
    )
    if status != "converged":
        raise NlpError(
            f"NLP did not converge: status={status}, violation={max(v_eq, v_in):.3e}",
            solution=sol,
        )
    return sol
