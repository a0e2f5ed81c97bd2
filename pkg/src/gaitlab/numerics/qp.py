"""Dense convex QP solver (dual active set, Goldfarb–Idnani scheme).

Sized for the small problems in this package (tens of variables).  Starts at
the unconstrained minimum, adds the lowest-index violated constraint each
round, and re-solves the KKT system exactly, so optimal solutions satisfy the
KKT conditions to linear-algebra precision and pivoting is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

FEAS_TOL = 1e-11


class QpInfeasibleError(RuntimeError):
    """Raised by QpSolution.require_optimal when the QP had no solution."""


@dataclass
class QpProblem:
    H: np.ndarray                      # symmetric PSD cost Hessian
    f: np.ndarray                      # linear cost term
    A_eq: Optional[np.ndarray] = None  # A_eq z = b_eq
    b_eq: Optional[np.ndarray] = None
    A_in: Optional[np.ndarray] = None  # A_in z <= b_in
    b_in: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None    # box bounds, +-inf allowed
    ub: Optional[np.ndarray] = None


@dataclass
class QpSolution:
    z: np.ndarray
    duals_eq: np.ndarray      # multipliers of A_eq z = b_eq
    duals_in: np.ndarray      # multipliers of A_in rows, then lb rows, then ub rows
    status: str               # "optimal" | "infeasible" | "max-iter"
    kkt: dict = field(default_factory=dict)

    def require_optimal(self) -> "QpSolution":
        if self.status != "optimal":
            raise QpInfeasibleError(f"QP status: {self.status}")
        return self


def _expand_bounds(n, lb, ub):
    rows, rhs = [], []
    if lb is not None:
        lb = np.asarray(lb, dtype=float)
        for i in range(n):
            if np.isfinite(lb[i]):
                e = np.zeros(n)
                e[i] = -1.0
                rows.append(e)
                rhs.append(-float(lb[i]))
    if ub is not None:
        ub = np.asarray(ub, dtype=float)
        for i in range(n):
            if np.isfinite(ub[i]):
                e = np.zeros(n)
                e[i] = 1.0
                rows.append(e)
                rhs.append(float(ub[i]))
    return rows, rhs


class _GiSolver:
    """One Goldfarb–Idnani solve over constraints n_i' x >= c_i."""

    def __init__(self, Hinv, normals, bounds, droppable, max_iter):
        self.Hinv = Hinv
        self.normals = normals          # list of n-vectors
        self.bounds = bounds            # list of scalars
        self.droppable = droppable      # per-constraint: may leave the active set
        self.max_iter = max_iter
        self.active: list[int] = []
        self.u: list[float] = []
        self.x = None

    def _directions(self, n_p):
        """Primal step z and dual step r for introducing normal n_p."""
        v = self.Hinv @ n_p
        if self.active:
            N = np.array([self.normals[i] for i in self.active]).T
            M = N.T @ (self.Hinv @ N)
            r = np.linalg.solve(M, N.T @ v)
            z = v - self.Hinv @ (N @ r)
        else:
            r = np.zeros(0)
            z = v
        z_small = np.max(np.abs(z), initial=0.0) <= 1e-11 * max(
            1.0, np.max(np.abs(v), initial=0.0)
        )
        return z, r, z_small

    def add(self, p) -> bool:
        """Drive constraint p into the active set; False if impossible."""
        n_p, c_p = self.normals[p], self.bounds[p]
        u_p = 0.0
        for _ in range(self.max_iter):
            s_p = float(n_p @ self.x) - c_p
            if s_p >= -FEAS_TOL:
                self.active.append(p)
                self.u.append(u_p)
                return True
            z, r, z_small = self._directions(n_p)

            t1, k_block = np.inf, -1
            for k, i in enumerate(self.active):
                if self.droppable[i] and r[k] > 1e-13:
                    ratio = self.u[k] / r[k]
                    if ratio < t1:
                        t1, k_block = ratio, k

            if z_small:
                if not np.isfinite(t1):
                    return False  # dual unbounded: constraint unsatisfiable
                t = t1
            else:
                t2 = -s_p / float(n_p @ z)
                t = min(t1, t2)

            if not z_small:
                self.x = self.x + t * z
            for k in range(len(self.active)):
                self.u[k] -= t * r[k]
            u_p += t

            if (not z_small) and t == t2:
                self.active.append(p)
                self.u.append(u_p)
                return True
            del self.active[k_block]
            del self.u[k_block]
        return False


def _kkt_report(H, f, A_eq, b_eq, A_in, b_in, z, nu, lam):
    grad = H @ z + f
    if A_eq.size:
        grad = grad + A_eq.T @ nu
    if A_in.size:
        grad = grad + A_in.T @ lam
    eq_res = float(np.max(np.abs(A_eq @ z - b_eq), initial=0.0)) if A_eq.size else 0.0
    in_res, comp = 0.0, 0.0
    if A_in.size:
        slack = b_in - A_in @ z
        in_res = float(max(0.0, -np.min(slack, initial=0.0)))
        comp = float(np.max(np.abs(lam * slack), initial=0.0))
    return {
        "stationarity": float(np.max(np.abs(grad), initial=0.0)),
        "eq_violation": eq_res,
        "in_violation": in_res,
        "complementarity": comp,
        "dual_min": float(np.min(lam, initial=0.0)) if lam.size else 0.0,
    }


def solve_qp(prob: QpProblem, max_iter: Optional[int] = None) -> QpSolution:
    """Solve the dense convex QP.  PSD Hessians whose smallest eigenvalue is
    below 1e-10 are ridge-regularized up to that floor before solving."""
    H = np.atleast_2d(np.asarray(prob.H, dtype=float))
    f = np.asarray(prob.f, dtype=float).ravel()
    n = f.size

    H = 0.5 * (H + H.T)
    w_min = float(np.min(np.linalg.eigvalsh(H)))
    if w_min < 1e-10:
        H = H + (1e-10 - min(w_min, 0.0)) * np.eye(n)
    Hinv = np.linalg.inv(H)

    A_eq = np.atleast_2d(np.asarray(prob.A_eq, dtype=float)) if prob.A_eq is not None else np.zeros((0, n))
    b_eq = np.asarray(prob.b_eq, dtype=float).ravel() if prob.b_eq is not None else np.zeros(0)
    A_in = np.atleast_2d(np.asarray(prob.A_in, dtype=float)) if prob.A_in is not None else np.zeros((0, n))
    b_in = np.asarray(prob.b_in, dtype=float).ravel() if prob.b_in is not None else np.zeros(0)
    box_rows, box_rhs = _expand_bounds(n, prob.lb, prob.ub)
    if box_rows:
        A_in = np.vstack([A_in, box_rows]) if A_in.size else np.array(box_rows)
        b_in = np.concatenate([b_in, box_rhs])
    m_eq, m_in = A_eq.shape[0], A_in.shape[0]

    if max_iter is None:
        max_iter = 200 + 20 * (m_eq + m_in)

    # GI convention: row a x <= b becomes n = -a, c = -b (slack = b - a x).
    x0 = -Hinv @ f
    normals = [np.zeros(n)] * m_eq + [-A_in[i] for i in range(m_in)]
    bounds = [0.0] * m_eq + [-float(b) for b in b_in]
    droppable = [False] * m_eq + [True] * m_in
    eq_sign = [1.0] * m_eq

    gi = _GiSolver(Hinv, normals, bounds, droppable, max_iter)
    gi.x = x0

    status = "optimal"
    for p in range(m_eq):
        # orient the equality so its GI slack starts non-positive *at the
        # current point* (x moves as earlier equalities are added)
        s = b_eq[p] - float(A_eq[p] @ gi.x)
        sig = 1.0 if s <= 0.0 else -1.0
        eq_sign[p] = sig
        normals[p] = -sig * A_eq[p]
        bounds[p] = -sig * float(b_eq[p])
        # skip equalities already implied by the active ones (dependent rows)
        if gi.active:
            N = np.array([normals[i] for i in gi.active]).T
            aug = np.column_stack([N, normals[p]])
            if np.linalg.matrix_rank(aug, tol=1e-10) == np.linalg.matrix_rank(N, tol=1e-10):
                if abs(float(normals[p] @ gi.x) - bounds[p]) > 1e-9:
                    status = "infeasible"
                    break
                continue
        if not gi.add(p):
            status = "infeasible"
            break

    rounds = 0
    while status == "optimal":
        rounds += 1
        if rounds > max_iter:
            status = "max-iter"
            break
        violated = -1
        for i in range(m_in):
            if float(normals[m_eq + i] @ gi.x) - bounds[m_eq + i] < -FEAS_TOL:
                violated = m_eq + i
                break
        if violated < 0:
            break
        if not gi.add(violated):
            status = "infeasible"
            break

    # polish: exact KKT re-solve on the settled active set (the incremental
    # steps accumulate error on badly scaled rows)
    if status == "optimal" and gi.active:
        N = np.array([normals[i] for i in gi.active]).T
        c = np.array([bounds[i] for i in gi.active])
        k = len(gi.active)
        K = np.block([[H, -N], [N.T, np.zeros((k, k))]])
        try:
            sol_ref = np.linalg.solve(K, np.concatenate([-f, c]))
            x_ref, u_ref = sol_ref[:n], sol_ref[n:]
            ok = all(u_ref[j] >= -1e-9 for j, i in enumerate(gi.active) if i >= m_eq)
            feas = True
            for i in range(m_in):
                if float(normals[m_eq + i] @ x_ref) - bounds[m_eq + i] < -1e-9:
                    feas = False
                    break
            if ok and feas:
                gi.x = x_ref
                gi.u = list(u_ref)
        except np.linalg.LinAlgError:
            pass

    duals_eq = np.zeros(m_eq)
    duals_in = np.zeros(m_in)
    for k, i in enumerate(gi.active):
        if i < m_eq:
            duals_eq[i] = gi.u[k] * eq_sign[i]
        else:
            duals_in[i - m_eq] = max(0.0, gi.u[k])

    kkt = _kkt_report(H, f, A_eq, b_eq, A_in, b_in, gi.x, duals_eq, duals_in)
    grad_scale = max(1.0, float(np.max(np.abs(H @ gi.x), initial=0.0)),
                     float(np.max(np.abs(f), initial=0.0)))
    if status == "optimal" and (kkt["eq_violation"] > 1e-8 or kkt["in_violation"] > 1e-8
                                or kkt["stationarity"] > 1e-7 * grad_scale):
        status = "max-iter"
    return QpSolution(z=gi.x, duals_eq=duals_eq, duals_in=duals_in, status=status, kkt=kkt)
