import numpy as np
import pytest

from gaitlab import compass as cp
from gaitlab.numerics.ode import integrate


def rand_state(rng, spread=1.0):
    return cp.GeneralizedState(q=rng.uniform(-0.6, 0.6, 2), dq=rng.uniform(-2, 2, 2) * spread)


@pytest.fixture
def params():
    return cp.CompassParams(slope=np.deg2rad(5.0)).validate()


def swing_foot_pos(params, q):
    l = params.length
    hip = np.array([l * np.sin(q[0]), l * np.cos(q[0])])
    return hip - l * np.array([np.sin(q[1]), np.cos(q[1])])


class TestDynamicsTerms:
    def test_mass_matrix_spd_on_samples(self, params):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            st = rand_state(rng)
            D = cp.dynamics_terms(params, st).D
            assert np.max(np.abs(D - D.T)) < 1e-14
            assert np.min(np.linalg.eigvalsh(D)) > 0.0

    def test_bias_is_potential_gradient_at_rest(self):
        # with dq = 0 the bias vector reduces to dV/dq; central differences
        # of the analytic potential are the oracle
        params = cp.CompassParams().validate()  # flat slope
        rng = np.random.default_rng(1)
        for _ in range(20):
            q = rng.uniform(-0.5, 0.5, 2)
            st = cp.GeneralizedState(q=q, dq=np.zeros(2))
            H = cp.dynamics_terms(params, st).H
            h = 1e-6
            grad = np.zeros(2)
            for i in range(2):
                qp, qm = q.copy(), q.copy()
                qp[i] += h
                qm[i] -= h
                grad[i] = (
                    cp.potential_energy(params, cp.GeneralizedState(q=qp, dq=np.zeros(2)))
                    - cp.potential_energy(params, cp.GeneralizedState(q=qm, dq=np.zeros(2)))
                ) / (2 * h)
            assert np.max(np.abs(H - grad)) < 1e-6

    def test_zero_velocity_kills_coriolis(self, params):
        # H(q, dq) - H(q, 0) must be quadratic in dq: scaling dq by eps
        # scales the difference by eps^2
        rng = np.random.default_rng(2)
        q = rng.uniform(-0.5, 0.5, 2)
        dq = rng.uniform(-1, 1, 2)
        H0 = cp.dynamics_terms(params, cp.GeneralizedState(q=q, dq=np.zeros(2))).H
        H1 = cp.dynamics_terms(params, cp.GeneralizedState(q=q, dq=dq)).H
        H2 = cp.dynamics_terms(params, cp.GeneralizedState(q=q, dq=0.5 * dq)).H
        assert np.allclose(H1 - H0, 4.0 * (H2 - H0), atol=1e-10)

    def test_contact_jacobian_matches_fd(self, params):
        rng = np.random.default_rng(3)
        h = 1e-6
        for _ in range(50):
            st = rand_state(rng)
            Jh = cp.dynamics_terms(params, st).Jh
            J_fd = np.zeros((2, 2))
            for i in range(2):
                qp, qm = st.q.copy(), st.q.copy()
                qp[i] += h
                qm[i] -= h
                J_fd[:, i] = (swing_foot_pos(params, qp) - swing_foot_pos(params, qm)) / (2 * h)
            assert np.max(np.abs(Jh - J_fd)) < 1e-6 * max(1.0, np.max(np.abs(J_fd)))

    def test_dimension_mismatch_rejected(self, params):
        with pytest.raises(ValueError):
            cp.dynamics_terms(params, cp.GeneralizedState(q=np.zeros(3), dq=np.zeros(3)))


class TestForwardDynamics:
    def test_unconstrained_matches_dense_solve(self, params):
        rng = np.random.default_rng(4)
        p = cp.CompassParams(slope=params.slope, actuated=True).validate()
        for _ in range(20):
            st = rand_state(rng)
            u = rng.uniform(-5, 5, 1)
            terms = cp.dynamics_terms(p, st)
            ddq, _ = cp.forward_dynamics(p, st, u)
            ref = np.linalg.solve(terms.D, terms.B @ u - terms.H)
            assert np.allclose(ddq, ref, atol=1e-12)

    def test_mirror_symmetry_on_flat_ground(self):
        # at zero slope, reflecting the configuration through the normal
        # axis mirrors the accelerations
        params = cp.CompassParams().validate()
        rng = np.random.default_rng(5)
        for _ in range(20):
            q = rng.uniform(-0.5, 0.5, 2)
            ddq_a, _ = cp.forward_dynamics(params, cp.GeneralizedState(q=q, dq=np.zeros(2)))
            ddq_b, _ = cp.forward_dynamics(params, cp.GeneralizedState(q=-q, dq=np.zeros(2)))
            assert np.allclose(ddq_a, -ddq_b, atol=1e-10)

    def test_constrained_satisfies_eom_and_acceleration_constraint(self, params):
        rng = np.random.default_rng(6)
        for _ in range(20):
            st = rand_state(rng)
            terms = cp.dynamics_terms(params, st)
            ddq, lam = cp.forward_dynamics(params, st, constrained=True)
            # Lagrangian dynamics residual with the returned pair
            res = terms.D @ ddq + terms.H - terms.Jh.T @ lam.force
            assert np.max(np.abs(res)) < 1e-10
            # differentiated contact closure
            assert np.max(np.abs(terms.Jh @ ddq + terms.dJh_dq)) < 1e-10

    def test_stance_reaction_supports_weight_at_rest(self):
        params = cp.CompassParams().validate()
        st = cp.GeneralizedState(q=np.zeros(2), dq=np.zeros(2))
        ddq, lam = cp.forward_dynamics(params, st)
        # hanging both legs vertical on flat ground: normal = total weight
        assert abs(lam.normal - params.total_mass * params.g) < 1e-9
        assert abs(lam.tangential) < 1e-9


class TestImpactMap:
    def on_guard(self, params, rng):
        # guard: q2 = -q1 with the swing foot descending
        for _ in range(200):
            a = rng.uniform(0.08, 0.45)
            st = cp.GeneralizedState(q=[a, -a], dq=rng.uniform(-2.5, 2.5, 2))
            if cp.swing_foot_height_rate(params, st) < -1e-3:
                return st
        raise AssertionError("could not sample a descending guard state")

    def test_rest_stays_at_rest(self, params):
        st = cp.GeneralizedState(q=[0.25, -0.25], dq=[0.0, 0.0])
        with pytest.raises(cp.GuardError):
            cp.impact_map(params, st)  # not descending: rest is not an impact

    def test_relabel_and_zero_velocity_map(self, params):
        # barely-descending velocities: impulse ~ 0, relabel dominates
        st = cp.GeneralizedState(q=[0.25, -0.25], dq=[1e-9, 1e-9])
        post, _ = cp.impact_map(params, st)
        assert np.allclose(post.q, [-0.25, 0.25], atol=1e-15)
        assert np.max(np.abs(post.dq)) < 1e-8

    def test_contact_velocity_zero_after_impact(self, params):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            pre = self.on_guard(params, rng)
            q_e, dq_e, _, _ = cp.lift_to_floating(params, pre)
            D = cp.floating_mass_matrix(params, q_e)
            J, _ = cp.swing_foot_jacobian(params, q_e)
            # independent oracle: solve the impulse KKT system directly
            K = np.block([[D, -J.T], [J, np.zeros((2, 2))]])
            sol = np.linalg.solve(K, np.concatenate([D @ dq_e, np.zeros(2)]))
            assert np.max(np.abs(J @ sol[:4])) < 1e-10
            post, _ = cp.impact_map(params, pre)
            assert np.allclose(post.dq, cp.RELABEL @ sol[2:4], atol=1e-12)

    def test_impact_dissipates_energy(self, params):
        rng = np.random.default_rng(8)
        for _ in range(1000):
            pre = self.on_guard(params, rng)
            post, _ = cp.impact_map(params, pre)
            ke_pre = cp.kinetic_energy(params, pre)
            ke_post = cp.kinetic_energy(params, post)
            assert ke_post <= ke_pre * (1.0 + 1e-12)
            assert ke_post >= -1e-12

    def test_guard_violation_rejected(self, params):
        with pytest.raises(cp.GuardError):
            cp.impact_map(params, cp.GeneralizedState(q=[0.3, -0.1], dq=[1.0, 0.0]))

    def test_relabel_involution(self):
        assert np.allclose(cp.RELABEL @ cp.RELABEL, np.eye(2))


class TestEnergy:
    def test_reference_configuration_zero(self):
        params = cp.CompassParams().validate()
        st = cp.GeneralizedState(q=np.zeros(2), dq=np.zeros(2))
        assert abs(cp.total_energy(params, st)) < 1e-14

    def test_kinetic_part_quadratic(self, params):
        st = cp.GeneralizedState(q=[0.2, -0.1], dq=[1.0, -0.5])
        st2 = cp.GeneralizedState(q=st.q, dq=2.0 * st.dq)
        ke = cp.kinetic_energy(params, st)
        assert abs(cp.kinetic_energy(params, st2) - 4.0 * ke) < 1e-12

    def test_energy_conserved_along_passive_arc(self, params):
        x0 = np.array([-0.30, 0.30, 1.19, -1.03])
        res = integrate(cp.vector_field(params), x0, (0.0, 0.6), rtol=1e-10, atol=1e-10)
        E = np.array([
            cp.total_energy(params, cp.GeneralizedState.from_vector(x)) for x in res.x
        ])
        assert np.max(np.abs(E - E[0])) / abs(E[0]) < 1e-8


class TestCentroidal:
    def test_symmetric_configuration_com_above_hip_line(self, params):
        st = cp.GeneralizedState(q=[0.3, -0.3], dq=np.zeros(2))
        com, _, _ = cp.centroidal(params, st)
        hip_x = params.length * np.sin(0.3)
        assert abs(com[0] - hip_x) < 1e-14

    def test_zero_velocity_zero_momentum(self, params):
        st = cp.GeneralizedState(q=[0.2, -0.4], dq=np.zeros(2))
        _, vcom, L = cp.centroidal(params, st)
        assert np.max(np.abs(vcom)) < 1e-14
        assert abs(L) < 1e-14

    def test_newton_euler_along_arc(self, params):
        # d(M c_dot)/dt = M g + contact force, checked by central FD of the
        # logged COM velocity against the reconstructed stance reaction
        x0 = np.array([-0.30, 0.30, 1.19, -1.03])
        f = cp.vector_field(params)
        res = integrate(f, x0, (0.0, 0.4), rtol=1e-12, atol=1e-12)
        g_vec = cp.gravity_vector(params)
        M = params.total_mass
        h = 1e-5
        for t in np.linspace(0.05, 0.35, 7):
            sp = cp.GeneralizedState.from_vector(res.sol(t + h))
            sm = cp.GeneralizedState.from_vector(res.sol(t - h))
            _, vp, _ = cp.centroidal(params, sp)
            _, vm, _ = cp.centroidal(params, sm)
            acc = (vp - vm) / (2 * h)
            st = cp.GeneralizedState.from_vector(res.sol(t))
            ddq, lam = cp.forward_dynamics(params, st)
            assert np.max(np.abs(M * acc - (M * g_vec + lam.force))) < 1e-4


class TestFrictionCheck:
    def test_zero_force_boundary(self):
        inside, margin = cp.friction_check(cp.ContactWrench(force=np.zeros(2)), mu=0.7)
        assert inside and margin == 0.0

    def test_exact_cone_boundary(self):
        w = cp.ContactWrench(force=np.array([0.7, 1.0]))
        inside, margin = cp.friction_check(w, mu=0.7)
        assert inside
        assert abs(margin) < 1e-15

    def test_negative_normal_always_violated(self):
        w = cp.ContactWrench(force=np.array([0.0, -0.1]))
        inside, margin = cp.friction_check(w, mu=10.0)
        assert not inside and margin < 0


class TestParams:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            cp.CompassParams(m=-1.0).validate()
        with pytest.raises(ValueError):
            cp.CompassParams(hip_to_com=0.4, com_to_foot=0.4).validate()
        with pytest.raises(ValueError):
            cp.CompassParams(g=0.0).validate()

    def test_state_validation(self):
        with pytest.raises(ValueError):
            cp.GeneralizedState(q=[0.1], dq=[0.1, 0.2])
        with pytest.raises(ValueError):
            cp.GeneralizedState(q=[np.nan, 0.0], dq=[0.0, 0.0])
