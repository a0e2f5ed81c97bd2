"""Damped Newton iteration with finite-difference Jacobians."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class NewtonError(RuntimeError):
    """Newton iteration failed (max iterations or singular Jacobian)."""


@dataclass
class NewtonResult:
    x: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    step_norms: list = field(default_factory=list)


def fd_jacobian(fn: Callable, x: np.ndarray, rel_step: float = 1e-6,
                scheme: str = "central", f0: np.ndarray = None) -> np.ndarray:
    """Finite-difference Jacobian of fn at x; column step max(rel, rel*|x_i|).

    scheme "central" doubles the probes but is second order; "forward"
    reuses f0 (computed here if not supplied) for cheap inexact-Newton steps.
    """
    x = np.asarray(x, dtype=float)
    if f0 is None and scheme == "forward":
        f0 = np.atleast_1d(np.asarray(fn(x), dtype=float))
    elif f0 is not None:
        f0 = np.atleast_1d(np.asarray(f0, dtype=float))
    J = None
    for i in range(x.size):
        h = max(rel_step, rel_step * abs(x[i]))
        xp = x.copy()
        xp[i] += h
        fp = np.atleast_1d(np.asarray(fn(xp), dtype=float))
        if J is None:
            J = np.zeros((fp.size, x.size))
        if scheme == "central":
            xm = x.copy()
            xm[i] -= h
            J[:, i] = (fp - np.atleast_1d(fn(xm))) / (2.0 * h)
        else:
            J[:, i] = (fp - f0) / h
    return J


def newton_fd(
    fn: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 50,
    max_halvings: int = 20,
    fd_step: float = 1e-6,
    scheme: str = "central",
    raise_on_stall: bool = True,
) -> NewtonResult:
    """Solve fn(x) = 0 by damped Newton with FD Jacobians.

    Non-square systems take minimum-norm Gauss-Newton steps.  Steps that do
    not decrease ||fn|| are backtracked by halving up to ``max_halvings``
    times.  Raises NewtonError on singular Jacobians or when max_iter is
    exhausted above tol.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    r = np.atleast_1d(np.asarray(fn(x), dtype=float))
    norm = float(np.linalg.norm(r, ord=np.inf))
    steps = []

    for it in range(max_iter):
        if norm < tol:
            return NewtonResult(x=x, residual_norm=norm, iterations=it,
                                converged=True, step_norms=steps)
        J = fd_jacobian(fn, x, rel_step=fd_step, scheme=scheme, f0=r)
        try:
            dx = np.linalg.solve(J, -r) if J.shape[0] == J.shape[1] else \
                np.linalg.lstsq(J, -r, rcond=None)[0]
        except np.linalg.LinAlgError as exc:
            raise NewtonError(f"singular FD Jacobian at iteration {it}") from exc
        if not np.all(np.isfinite(dx)):
            raise NewtonError(f"non-finite Newton step at iteration {it}")

        scale = 1.0
        for _ in range(max_halvings + 1):
            x_try = x + scale * dx
            r_try = np.atleast_1d(np.asarray(fn(x_try), dtype=float))
            norm_try = float(np.linalg.norm(r_try, ord=np.inf))
            if norm_try < norm or norm_try < tol:
                break
            scale *= 0.5
        else:
            if raise_on_stall:
                raise NewtonError(f"line search stalled at iteration {it}, |r|={norm:.3e}")
            return NewtonResult(x=x, residual_norm=norm, iterations=it,
                                converged=False, step_norms=steps)

        steps.append(float(np.linalg.norm(scale * dx)))
        x, r, norm = x_try, r_try, norm_try

    if norm < tol:
        return NewtonResult(x=x, residual_norm=norm, iterations=max_iter,
                            converged=True, step_norms=steps)
    if raise_on_stall:
        raise NewtonError(f"no convergence in {max_iter} iterations, |r|={norm:.3e}")
    return NewtonResult(x=x, residual_norm=norm, iterations=max_iter,
                        converged=False, step_norms=steps)
