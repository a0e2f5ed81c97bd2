import numpy as np
import pytest

from gaitlab import compass as cp
from gaitlab import controllers as ct
from gaitlab import outputs as vo
from gaitlab.numerics.care import solve_care
from gaitlab.numerics.ode import integrate


@pytest.fixture
def params():
    return cp.CompassParams(slope=0.0, actuated=True).validate()


def make_vc(alpha, tau_plus=-0.25, tau_minus=0.25):
    return vo.VirtualConstraintSet(
        selector=np.array([[0.0, 1.0]]),
        desired=vo.BezierPoly(alpha=np.atleast_2d(alpha)),
        phase=vo.PhaseVariable(mode="state", c=np.array([1.0, 0.0]),
                               tau_plus=tau_plus, tau_minus=tau_minus),
    )


class TestPdJoint:
    def test_zero_on_reference(self):
        g = ct.PdGains(kp=[50.0], kd=[8.0])
        u = ct.pd_joint([0.3], [0.1], [0.3], [0.1], g)
        assert np.allclose(u, 0.0)

    def test_pure_position_error(self):
        g = ct.PdGains(kp=[50.0], kd=[1e-9])
        u = ct.pd_joint([0.5], [0.0], [0.3], [0.0], g)
        assert u[0] == pytest.approx(-50.0 * 0.2, rel=1e-6)

    def test_double_integrator_settles(self):
        # critically damped pair (s + 5)^2; |e| < 1e-3 takes about 9/5 s
        # (any double-integrator PD needs ~9 characteristic times for 1e-3)
        g = ct.PdGains(kp=[25.0], kd=[10.0])

        def f(t, z):
            u = ct.pd_joint([z[0]], [z[1]], [1.0], [0.0], g)
            return np.array([z[1], u[0]])

        res = integrate(f, np.array([0.0, 0.0]), (0.0, 2.0), rtol=1e-10, atol=1e-10)
        assert abs(res.x[-1, 0] - 1.0) < 1e-3

    def test_gain_validation(self):
        with pytest.raises(ValueError):
            ct.PdGains(kp=[-1.0], kd=[1.0])
        with pytest.raises(ValueError):
            ct.PdGains(kp=[1.0], kd=[1.0], eps=2.0)


class TestPdOutput:
    def test_zero_output_zero_torque(self, params):
        vc = make_vc(np.zeros((1, 6)))
        st = cp.GeneralizedState(q=[0.1, 0.0], dq=[0.3, 0.0])
        g = ct.PdGains(kp=[40.0], kd=[6.0])
        for mode in ("inverse", "transpose"):
            u = ct.pd_output(params, vc, st, g, mode=mode)
            assert np.allclose(u, 0.0, atol=1e-12)

    def test_orthogonal_jacobian_modes_agree(self, params):
        # selector (-1, 1) gives Y = selector B (B'B)^-1 = 1 exactly
        vc = vo.VirtualConstraintSet(
            selector=np.array([[-1.0, 1.0]]),
            desired=vo.BezierPoly(alpha=np.full((1, 6), 0.1)),
            phase=vo.PhaseVariable(mode="state", c=np.array([1.0, 0.0]),
                                   tau_plus=-0.25, tau_minus=0.25),
        )
        st = cp.GeneralizedState(q=[0.15, -0.1], dq=[0.6, -0.2])
        g = ct.PdGains(kp=[40.0], kd=[6.0])
        u_inv = ct.pd_output(params, vc, st, g, mode="inverse")
        u_tr = ct.pd_output(params, vc, st, g, mode="transpose")
        assert np.allclose(u_inv, u_tr, atol=1e-12)

    def test_unknown_mode(self, params):
        vc = make_vc(np.zeros((1, 6)))
        st = cp.GeneralizedState(q=[0.1, 0.0], dq=[0.0, 0.0])
        with pytest.raises(ValueError):
            ct.pd_output(params, vc, st, ct.PdGains(kp=[1.0], kd=[1.0]), mode="x")


class TestComputedTorque:
    def test_zero_gains_pure_inverse_dynamics(self, params):
        st = cp.GeneralizedState(q=[0.2, -0.1], dq=[0.5, 0.4])
        g = ct.PdGains(kp=[1e-12, 1e-12], kd=[1e-12, 1e-12])
        ddq_star = np.array([0.7, -0.3])
        u = ct.computed_torque(params, st, st.q, st.dq, ddq_star, g)
        terms = cp.dynamics_terms(params, st)
        assert np.allclose(u, terms.D @ ddq_star + terms.H, atol=1e-9)

    def test_tracking_error_dynamics_linear(self, params):
        # fully actuated: e'' + Kd e' + Kp e = 0; compare with the matrix
        # exponential solution of the linear error system
        kp, kd = 30.0, 11.0
        g = ct.PdGains(kp=[kp, kp], kd=[kd, kd])
        q_d = np.array([0.1, -0.2])

        def f(t, z):
            st = cp.GeneralizedState(q=z[:2], dq=z[2:])
            u = ct.computed_torque(params, st, q_d, np.zeros(2), np.zeros(2), g)
            terms = cp.dynamics_terms(params, st)
            ddq = np.linalg.solve(terms.D, u - terms.H)
            return np.concatenate([z[2:], ddq])

        e0 = np.array([0.15, 0.1])
        res = integrate(f, np.concatenate([q_d + e0, np.zeros(2)]), (0.0, 1.2),
                        rtol=1e-12, atol=1e-12)
        from scipy.linalg import expm

        A = np.block([[np.zeros((2, 2)), np.eye(2)],
                      [-kp * np.eye(2), -kd * np.eye(2)]])
        for t in (0.3, 0.8):
            e_ref = (expm(A * t) @ np.concatenate([e0, np.zeros(2)]))[:2]
            e_sim = res.sol(t)[:2] - q_d
            assert np.max(np.abs(e_sim - e_ref)) < 1e-4

    def test_equivalence_with_fbl_on_joint_outputs(self, params):
        # outputs = joints, fully actuated (B = I): computed torque equals the
        # feedback linearizing controller algebraically
        q_d = np.array([0.1, -0.2])
        kp, kd = 30.0, 11.0
        g = ct.PdGains(kp=[kp, kp], kd=[kd, kd])
        st = cp.GeneralizedState(q=[0.25, -0.33], dq=[0.8, -0.5])

        vc = vo.VirtualConstraintSet(
            selector=np.eye(2),
            desired=vo.BezierPoly(alpha=np.column_stack([q_d, q_d])),
            phase=vo.PhaseVariable(mode="time", duration=1.0),
        )
        y, dy = vo.outputs(vc, st, t=0.0)
        mu = vo.pd_aux(y, dy, 1.0, np.array([kp, kp]), np.array([kd, kd]))
        u_fbl = vo.fbl_controller(params, vc, st, mu, t=0.0, B=np.eye(2))
        u_ct = ct.computed_torque(params, st, q_d, np.zeros(2), np.zeros(2), g)
        assert np.max(np.abs(u_fbl - u_ct)) < 1e-10


class TestIdQp:
    def test_interior_reproduces_task(self, params):
        st = cp.GeneralizedState(q=[-0.1, 0.1], dq=[0.8, -0.4])
        out = ct.id_qp(params, st, np.array([0.5]), u_max=50.0)
        assert out.task_residual < 1e-8
        assert out.dynamics_residual < 1e-8

    def test_dynamics_equality_residual(self, params):
        rng = np.random.default_rng(0)
        for _ in range(10):
            st = cp.GeneralizedState(q=rng.uniform(-0.3, 0.3, 2),
                                     dq=rng.uniform(-1, 1, 2))
            out = ct.id_qp(params, st, rng.uniform(-2, 2, 1), u_max=50.0)
            assert out.dynamics_residual < 1e-8
            q_e, dq_e, _, _ = cp.lift_to_floating(params, st)
            D = cp.floating_mass_matrix(params, q_e)
            Hb = cp.floating_bias(params, q_e, dq_e)
            B = cp.floating_actuation(params)
            J, _ = cp.stance_foot_jacobian(params, q_e)
            res = D @ out.ddq_e + Hb - B @ out.u - J.T @ out.lam
            assert np.max(np.abs(res)) < 1e-8

    def test_torque_bound_pins_with_positive_multiplier(self, params):
        st = cp.GeneralizedState(q=[-0.1, 0.1], dq=[0.8, -0.4])
        out = ct.id_qp(params, st, np.array([80.0]), u_max=5.0)
        assert abs(abs(out.u[0]) - 5.0) < 1e-9
        duals = out.solution.duals_in
        assert np.max(duals) > 1e-6  # torque bound row is active

    def test_pyramid_facet_activation(self, params):
        # low friction + a hard task: tangential force saturates the facet
        st = cp.GeneralizedState(q=[-0.15, 0.2], dq=[1.5, -0.5])
        out = ct.id_qp(params, st, np.array([60.0]), u_max=2000.0, mu=0.05)
        lam_t, lam_n = out.lam
        assert lam_n >= -1e-10
        assert abs(abs(lam_t) - 0.05 / np.sqrt(2.0) * lam_n) < 1e-8

    def test_pyramid_uses_mu_over_sqrt2(self):
        assert ct.PYRAMID_FACTOR == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-15)


class TestResClf:
    def test_zero_eta_zero_value(self):
        clf = ct.build_res_clf(0.5, 1)
        assert clf.value([0.0], [0.0]) == 0.0

    def test_scalar_eps_one_matches_care_example(self):
        clf = ct.build_res_clf(1.0, 1)
        expected = np.array([[np.sqrt(3.0), 1.0], [1.0, np.sqrt(3.0)]])
        assert np.max(np.abs(clf.P - expected)) < 1e-10
        assert np.max(np.abs(clf.P_eps - expected)) < 1e-10

    def test_sandwich_bounds(self):
        rng = np.random.default_rng(1)
        for eps in (1.0, 0.5, 0.2):
            clf = ct.build_res_clf(eps, 2)
            lo = clf.gamma_lower
            hi = clf.gamma_upper
            for _ in range(200):
                eta = rng.standard_normal(4)
                V = float(eta @ clf.P_eps @ eta)
                n2 = float(eta @ eta)
                assert V >= lo * n2 - 1e-9
                assert V <= hi / eps**2 * n2 + 1e-9

    def test_eps_validation(self):
        with pytest.raises(ValueError):
            ct.build_res_clf(0.0, 1)


class TestClfQp:
    def test_on_surface_zero_torque(self, params):
        # y = ydot = 0 by constant desired equal to the actual output
        st = cp.GeneralizedState(q=[-0.1, 0.12], dq=[0.8, 0.0])
        vc = vo.VirtualConstraintSet(
            selector=np.array([[0.0, 1.0]]),
            desired=vo.BezierPoly(alpha=np.full((1, 6), 0.12)),
            phase=vo.PhaseVariable(mode="time", duration=1.0),
        )
        clf = ct.build_res_clf(0.25, 1)
        out = ct.clf_qp(params, vc, clf, st, u_max=30.0)
        assert abs(out.V) < 1e-12
        assert np.max(np.abs(out.u)) < 1e-9
        assert out.delta < 1e-9

    def test_convergence_constraint_enforced(self, params):
        rng = np.random.default_rng(2)
        vc = make_vc(rng.uniform(-0.3, 0.3, (1, 6)))
        clf = ct.build_res_clf(0.25, 1)
        for _ in range(20):
            st = cp.GeneralizedState(q=rng.uniform(-0.25, 0.25, 2),
                                     dq=rng.uniform(-1.0, 1.0, 2))
            # hard constraint (relaxation disabled): decay certified exactly
            out = ct.clf_qp(params, vc, clf, st, u_max=300.0, relax_weight=None)
            assert out.constraint_value <= out.Vdot_bound + 1e-8
            assert out.delta == 0.0
            # relaxed variant: delta stays at the lambda/(2 rho) dormancy level
            out_r = ct.clf_qp(params, vc, clf, st, u_max=300.0)
            assert out_r.delta < 1e-5

    def test_relaxation_keeps_feasible_under_tight_bounds(self, params):
        rng = np.random.default_rng(3)
        vc = make_vc(rng.uniform(-0.3, 0.3, (1, 6)))
        clf = ct.build_res_clf(0.25, 1)
        st = cp.GeneralizedState(q=[0.2, -0.2], dq=[1.0, -1.0])
        out = ct.clf_qp(params, vc, clf, st, u_max=0.01)
        assert out.delta > 1e-6
        from gaitlab.numerics.qp import QpInfeasibleError

        with pytest.raises(QpInfeasibleError):
            ct.clf_qp(params, vc, clf, st, u_max=0.01, relax_weight=None)


class TestRaibert:
    def test_zero_on_reference(self):
        g = ct.RegulatorGains(kp=0.2, kd=0.1, v_ref=0.8)
        assert ct.raibert_regulator(0.8, 0.8, g) == 0.0

    def test_fast_walking_lengthens_step(self):
        g = ct.RegulatorGains(kp=0.2, kd=0.0, v_ref=1.0)
        assert ct.raibert_regulator(1.1, 1.1, g) > 0.0

    def test_gain_validation(self):
        with pytest.raises(ValueError):
            ct.RegulatorGains(kp=np.inf, kd=0.0, v_ref=1.0)


class TestBezierTransition:
    def test_zero_shift_identity(self):
        rng = np.random.default_rng(4)
        poly = vo.BezierPoly(alpha=rng.standard_normal((2, 6)))
        out = ct.bezier_transition(poly, [0.0, 0.0])
        assert np.array_equal(out.alpha, poly.alpha)

    def test_start_untouched(self):
        rng = np.random.default_rng(5)
        poly = vo.BezierPoly(alpha=rng.standard_normal((1, 6)))
        out = ct.bezier_transition(poly, [0.3])
        v0, d0, _ = vo.bezier_eval(poly, 0.0)
        v1, d1, _ = vo.bezier_eval(out, 0.0)
        assert np.allclose(v0, v1)
        assert np.allclose(d0, d1)

    def test_terminal_derivative_invariant(self):
        rng = np.random.default_rng(6)
        poly = vo.BezierPoly(alpha=rng.standard_normal((1, 6)))
        out = ct.bezier_transition(poly, [0.17])
        _, d_before, _ = vo.bezier_eval(poly, 1.0)
        _, d_after, _ = vo.bezier_eval(out, 1.0)
        assert np.max(np.abs(d_before - d_after)) < 1e-12
        # endpoint value shifts by exactly dp
        v_b = vo.bezier_eval(poly, 1.0)[0]
        v_a = vo.bezier_eval(out, 1.0)[0]
        assert v_a[0] - v_b[0] == pytest.approx(0.17, abs=1e-12)

    def test_degree_validation(self):
        with pytest.raises(ValueError):
            ct.bezier_transition(vo.BezierPoly(alpha=np.zeros((1, 2))), [0.1])


class TestStepVelocity:
    def test_symmetric_step(self):
        params = cp.CompassParams().validate()
        v = ct.step_velocity(params, np.array([0.3, -0.3]), 0.6)
        assert v == pytest.approx(2.0 * np.sin(0.3) / 0.6)
