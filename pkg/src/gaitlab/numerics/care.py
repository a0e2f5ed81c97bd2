"""Continuous-time algebraic Riccati equation solver.

Stable-subspace extraction from the Hamiltonian matrix, followed by Kleinman
(Newton) iterations on the closed loop until the residual is at 1e-10.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import eig, solve_continuous_lyapunov


class CareError(RuntimeError):
    """CARE solve failed (non-stabilizable pair or residual not met)."""


def care_residual(A, B, Q, R, P) -> float:
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.linalg.norm(res, ord=np.inf))


def solve_care(A, B, Q, R, residual_tol: float = 1e-10, max_refine: int = 30) -> np.ndarray:
    """Solve A'P + PA - PBR^-1B'P + Q = 0 for symmetric P >= 0.

    Requires (A, B) stabilizable, Q PSD, R PD.  The returned P satisfies the
    equation with infinity-norm residual below ``residual_tol``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]

    Rinv_Bt = np.linalg.solve(R, B.T)
    H = np.block([[A, -B @ Rinv_Bt], [-Q, -A.T]])

    w, V = eig(H)
    stable = np.real(w) < 0.0
    if int(np.sum(stable)) != n:
        raise CareError(
            f"Hamiltonian has {int(np.sum(stable))} stable eigenvalues, expected {n} "
            "(pair not stabilizable or Q degenerate)"
        )
    Vs = V[:, stable]
    U1, U2 = Vs[:n, :], Vs[n:, :]
    try:
        P = U2 @ np.linalg.inv(U1)
    except np.linalg.LinAlgError as exc:
        raise CareError("stable subspace has singular upper block") from exc
    if np.max(np.abs(np.imag(P))) > 1e-8 * max(1.0, np.max(np.abs(P))):
        raise CareError("stable-subspace solution is not real")
    P = np.real(P)
    P = 0.5 * (P + P.T)

    # Kleinman refinement: Newton steps on the closed loop
    for _ in range(max_refine):
        if care_residual(A, B, Q, R, P) < residual_tol:
            break
        K = Rinv_Bt @ P
        Acl = A - B @ K
        rhs = -(Q + K.T @ R @ K)
        P = solve_continuous_lyapunov(Acl.T, rhs)
        P = 0.5 * (P + P.T)

    res = care_residual(A, B, Q, R, P)
    if res > residual_tol:
        raise CareError(f"CARE residual {res:.3e} above tolerance {residual_tol:.1e}")
    return P
