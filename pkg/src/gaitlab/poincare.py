"""Poincaré return maps on hybrid cycles: fixed points, numerical
linearization, and orbital stability classification.

The section is taken immediately post-reset (start-of-step), which gives a
full-dimensional local chart and removes the guard-coordinate ambiguity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from gaitlab.hybrid import HybridSystemSpec, simulate_steps
from gaitlab.numerics.newton import NewtonError, newton_fd

MARGINAL_BAND = 1e-3


@dataclass
class FixedPointReport:
    x_star: np.ndarray
    residual: float
    jacobian: Optional[np.ndarray] = None
    eigenvalues: Optional[np.ndarray] = None
    verdict: Optional[str] = None

    @property
    def eig_magnitudes(self) -> np.ndarray:
        return np.sort(np.abs(self.eigenvalues))[::-1]

    def to_dict(self) -> dict:
        return {
            "x_star": self.x_star.tolist(),
            "residual": self.residual,
            "jacobian": None if self.jacobian is None else self.jacobian.tolist(),
            "eig_magnitudes": None if self.eigenvalues is None else self.eig_magnitudes.tolist(),
            "verdict": self.verdict,
        }


def poincare_map(
    spec: HybridSystemSpec,
    x_section: np.ndarray,
    max_arc_time: float = 10.0,
    rtol: float = 1e-10,
    atol: float = 1e-10,
) -> np.ndarray:
    """One full cycle of the hybrid system, returned at the post-reset section."""
    n_edges = len(spec.vertices)
    traj = simulate_steps(spec, x_section, n_edges, max_arc_time=max_arc_time,
                          rtol=rtol, atol=atol)
    return traj.arcs[-1].post_event


def find_fixed_point(
    spec: HybridSystemSpec,
    x_guess: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 40,
    max_arc_time: float = 10.0,
    rtol: float = 1e-10,
    atol: float = 1e-10,
) -> FixedPointReport:
    """Damped Newton (FD Jacobian) on P(x) - x from the supplied guess."""

    def residual(x):
        return poincare_map(spec, x, max_arc_time=max_arc_time, rtol=rtol, atol=atol) - x

    result = newton_fd(residual, np.asarray(x_guess, dtype=float), tol=tol,
                       max_iter=max_iter)
    return FixedPointReport(x_star=result.x, residual=result.residual_norm)


def linearize_map(
    spec: HybridSystemSpec,
    x_star: np.ndarray,
    fd_rel: float = 1e-6,
    residual_tol: float = 1e-8,
    max_arc_time: float = 10.0,
    rtol: float = 1e-10,
    atol: float = 1e-10,
) -> np.ndarray:
    """Column-wise central differences of the return map around a fixed point."""
    x_star = np.asarray(x_star, dtype=float)
    res = poincare_map(spec, x_star, max_arc_time=max_arc_time, rtol=rtol, atol=atol) - x_star
    if np.linalg.norm(res, ord=np.inf) > residual_tol:
        raise ValueError(
            f"linearize_map requires a fixed point; |P(x)-x| = {np.linalg.norm(res, np.inf):.3e}"
        )
    n = x_star.size
    J = np.zeros((n, n))
    for i in range(n):
        h = max(fd_rel, fd_rel * abs(x_star[i]))
        xp, xm = x_star.copy(), x_star.copy()
        xp[i] += h
        xm[i] -= h
        Pp = poincare_map(spec, xp, max_arc_time=max_arc_time, rtol=rtol, atol=atol)
        Pm = poincare_map(spec, xm, max_arc_time=max_arc_time, rtol=rtol, atol=atol)
        J[:, i] = (Pp - Pm) / (2.0 * h)
    return J


def classify(report: FixedPointReport, margin: float = MARGINAL_BAND) -> str:
    """Orbital stability verdict from eigenvalue magnitudes of dP/dx."""
    if report.eigenvalues is None:
        raise ValueError("report has no eigenvalues")
    rho = float(np.max(np.abs(report.eigenvalues)))
    if rho < 1.0 - margin:
        return "exponentially stable"
    if rho <= 1.0 + margin:
        return "marginal"
    return "unstable"


def analyze(
    spec: HybridSystemSpec,
    x_guess: np.ndarray,
    tol: float = 1e-10,
    max_arc_time: float = 10.0,
    rtol: float = 1e-10,
    atol: float = 1e-10,
) -> FixedPointReport:
    """find_fixed_point + linearize_map + classify in one call."""
    report = find_fixed_point(spec, x_guess, tol=tol, max_arc_time=max_arc_time,
                              rtol=rtol, atol=atol)
    J = linearize_map(spec, report.x_star, max_arc_time=max_arc_time, rtol=rtol, atol=atol)
    report.jacobian = J
    report.eigenvalues = np.linalg.eigvals(J)
    report.verdict = classify(report)
    return report


__all__ = [
    "FixedPointReport",
    "poincare_map",
    "find_fixed_point",
    "linearize_map",
    "classify",
    "analyze",
    "NewtonError",
]
