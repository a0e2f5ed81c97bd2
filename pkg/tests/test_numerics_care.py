import numpy as np
import pytest

from gaitlab.numerics.care import CareError, care_residual, solve_care


def test_double_integrator_analytic():
    # A = [[0,1],[0,0]], B = [0,1]', Q = I, R = 1: P = [[sqrt(3), 1], [1, sqrt(3)]]
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    P = solve_care(A, B, np.eye(2), np.array([[1.0]]))
    expected = np.array([[np.sqrt(3.0), 1.0], [1.0, np.sqrt(3.0)]])
    assert np.max(np.abs(P - expected)) < 1e-10
    assert care_residual(A, B, np.eye(2), np.array([[1.0]]), P) < 1e-10


def test_stable_a_zero_b_zero_q():
    A = np.array([[-1.0, 0.2], [0.0, -2.0]])
    B = np.zeros((2, 1))
    P = solve_care(A, B, np.zeros((2, 2)), np.eye(1))
    assert np.max(np.abs(P)) < 1e-10


def test_random_stabilizable_triples():
    rng = np.random.default_rng(5)
    for _ in range(10):
        n = int(rng.integers(2, 6))
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, max(1, n // 2)))
        Q = np.eye(n)
        R = np.eye(B.shape[1])
        P = solve_care(A, B, Q, R)
        assert care_residual(A, B, Q, R, P) < 1e-10
        assert np.max(np.abs(P - P.T)) < 1e-12
        assert np.min(np.linalg.eigvalsh(P)) > 0.0
        Acl = A - B @ np.linalg.solve(R, B.T @ P)
        assert np.max(np.real(np.linalg.eigvals(Acl))) < 0.0


def test_non_stabilizable_pair_rejected():
    # unstable mode not reachable by B
    A = np.array([[1.0, 0.0], [0.0, -1.0]])
    B = np.array([[0.0], [1.0]])
    with pytest.raises(CareError):
        solve_care(A, B, np.eye(2), np.eye(1))
