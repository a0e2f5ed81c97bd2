import numpy as np
import pytest

from gaitlab import compass as cp
from gaitlab import gaitopt
from gaitlab.controllers import PdGains
from gaitlab.hybrid import simulate_steps

GAINS = PdGains(kp=[100.0], kd=[20.0], eps=0.25)


@pytest.fixture(scope="module")
def flat():
    return cp.CompassParams(slope=0.0, actuated=True).validate()


@pytest.fixture(scope="module")
def anchor(flat):
    d = gaitopt.flat_anchor_decision()
    return gaitopt.close_periodicity(flat, d, GAINS, tol=1e-10)


class TestDecision:
    def test_pack_unpack_roundtrip(self):
        d = gaitopt.flat_anchor_decision()
        vec = d.pack()
        d2 = gaitopt.GaitDecision.unpack(vec, degree=5)
        assert np.array_equal(d2.pack(), vec)

    def test_dict_roundtrip(self):
        d = gaitopt.flat_anchor_decision()
        d2 = gaitopt.GaitDecision.from_dict(d.to_dict())
        assert np.array_equal(d.x_star, d2.x_star)
        assert np.array_equal(d.alpha, d2.alpha)

    def test_pin_boundary_zeroes_outputs(self, flat):
        from gaitlab import outputs as vo

        d = gaitopt.pin_boundary_coefficients(gaitopt.flat_anchor_decision())
        vc = gaitopt.virtual_constraints(d)
        st = cp.GeneralizedState.from_vector(d.x_star)
        y, dy = vo.outputs(vc, st, t=0.0)
        assert abs(y[0]) < 1e-14
        assert abs(dy[0]) < 1e-14


class TestEvaluateGait:
    def test_anchor_is_periodic(self, flat, anchor):
        ev = gaitopt.evaluate_gait(flat, anchor, GAINS, rtol=1e-9, atol=1e-9)
        assert not ev.fell
        assert ev.periodicity_norm < 1e-6
        assert ev.hzd_norm < 1e-6
        assert ev.friction_margin > 0.0
        assert ev.max_torque < 30.0
        assert np.isfinite(ev.cost) and ev.cost > 0.0

    def test_constant_output_gait_not_periodic(self, flat):
        d = gaitopt.GaitDecision(
            x_star=gaitopt.FLAT_ANCHOR_X_STAR.copy(),
            alpha=np.full((1, 6), 0.1),
            tau_plus=float(gaitopt.FLAT_ANCHOR_X_STAR[0]),
            tau_minus=float(gaitopt.FLAT_ANCHOR_X_STAR[1]),
            duration=0.8,
        )
        ev = gaitopt.evaluate_gait(flat, d, GAINS)
        assert ev.fell or ev.periodicity_norm > 1e-3

    def test_tolerance_robustness(self, flat, anchor):
        ev1 = gaitopt.evaluate_gait(flat, anchor, GAINS, rtol=1e-9, atol=1e-9)
        ev2 = gaitopt.evaluate_gait(flat, anchor, GAINS, rtol=2e-9, atol=2e-9)
        assert abs(ev1.periodicity_norm - ev2.periodicity_norm) < 1e-7
        assert abs(ev1.cost - ev2.cost) < 1e-7

    def test_re_evaluation_reproducible(self, flat, anchor):
        ev1 = gaitopt.evaluate_gait(flat, anchor, GAINS, rtol=1e-9, atol=1e-9)
        ev2 = gaitopt.evaluate_gait(flat, anchor, GAINS, rtol=1e-9, atol=1e-9)
        assert abs(ev1.periodicity_norm - ev2.periodicity_norm) < 1e-12
        assert abs(ev1.cost - ev2.cost) < 1e-12

    def test_fall_reported_not_raised(self, flat):
        d = gaitopt.GaitDecision(
            x_star=np.array([-0.1, 0.1, 0.05, 0.0]),  # far too slow: falls back
            alpha=gaitopt.FLAT_ANCHOR_ALPHA.copy(),
            tau_plus=-0.1, tau_minus=0.1, duration=0.8,
        )
        ev = gaitopt.evaluate_gait(flat, d, GAINS, max_arc_time=2.0)
        assert ev.fell
        assert ev.periodicity_norm >= gaitopt.FALL_PENALTY


class TestMcot:
    def test_zero_actuation_zero_cost(self):
        assert gaitopt.mcot_cost(cp.CompassParams().validate(), 0.0, 0.5) == 0.0

    def test_linear_in_work(self):
        params = cp.CompassParams().validate()
        c1 = gaitopt.mcot_cost(params, 2.0, 0.5)
        c2 = gaitopt.mcot_cost(params, 4.0, 0.5)
        assert c2 == pytest.approx(2.0 * c1)

    def test_zero_step_length_rejected(self):
        with pytest.raises(ValueError):
            gaitopt.mcot_cost(cp.CompassParams().validate(), 1.0, 0.0)

    def test_passive_slope_gait_zero_cost(self):
        # passive fixed point tracked with the fitted outputs: torque is not
        # exactly zero (fit error), but the M-COT is near the passive limit
        params5 = cp.CompassParams(slope=np.deg2rad(5.0), actuated=True).validate()
        seed = gaitopt.seed_from_passive(params5)
        ev = gaitopt.evaluate_gait(params5, seed, GAINS)
        assert ev.cost < 0.1

    def test_quadrature_against_trapezoid_oracle(self, flat, anchor):
        # trapezoid rule on densely logged torque and joint rates must agree
        # with the integrator-accurate work quadrature
        vc = gaitopt.virtual_constraints(anchor)
        spec = gaitopt.closed_loop_spec(flat, vc, GAINS, with_probe=True)
        traj = simulate_steps(spec, anchor.x_star, 1, max_arc_time=3.0,
                              rtol=1e-10, atol=1e-10, sample_dt=2e-4)
        arc = traj.arcs[0]
        power = np.abs(arc.probes["u"] * (arc.x[:, 3] - arc.x[:, 2]))
        work_trapz = np.trapezoid(power, arc.t)
        assert abs(arc.quads["abs_work"] - work_trapz) / work_trapz < 1e-6


class TestClosure:
    def test_close_periodicity_from_perturbed(self, flat, anchor):
        d = gaitopt.GaitDecision(
            x_star=anchor.x_star + np.array([0.0, 0.0, 0.01, -0.01]),
            alpha=anchor.alpha.copy(),
            tau_plus=anchor.tau_plus, tau_minus=anchor.tau_minus,
            duration=anchor.duration,
        )
        closed = gaitopt.close_periodicity(flat, d, GAINS, tol=1e-10)
        ev = gaitopt.evaluate_gait(flat, closed, GAINS, rtol=1e-9, atol=1e-9)
        assert ev.periodicity_norm < 1e-8

    def test_seed_from_passive_completes_step(self):
        params5 = cp.CompassParams(slope=np.deg2rad(5.0), actuated=True).validate()
        seed = gaitopt.seed_from_passive(params5)
        ev = gaitopt.evaluate_gait(params5, seed, GAINS)
        assert not ev.fell


@pytest.mark.slow
class TestOptimize:
    def test_flat_ground_pipeline(self, flat):
        sol = gaitopt.optimize_flat_ground_gait(flat)
        assert sol.status == "converged"
        assert sol.residuals["periodicity"] < 1e-6
        assert sol.residuals["hzd_y"] < 1e-6
        assert sol.residuals["hzd_dy"] < 1e-6
        assert sol.residuals["friction_margin"] >= 0.0
        assert sol.residuals["max_torque"] <= 30.0
        assert max(sol.eigenvalues) < 1.0
        assert sol.cost > 0.0 and np.isfinite(sol.cost)

        # closed-loop 5-step rollout stays on the zero-dynamics surface
        vc = gaitopt.virtual_constraints(sol.decision)
        spec = gaitopt.closed_loop_spec(flat, vc, GAINS, with_probe=True)
        traj = simulate_steps(spec, sol.decision.x_star, 5, max_arc_time=3.0,
                              rtol=1e-9, atol=1e-9)
        for arc in traj.arcs[1:]:
            norms = np.hypot(arc.probes["y"], arc.probes["dy"])
            assert np.max(norms) < 1e-3

    def test_torque_penalty_pulls_toward_passive(self):
        # heavier torque penalties move the optimized 5-degree gait toward
        # the passive fixed point
        params5 = cp.CompassParams(slope=np.deg2rad(5.0), actuated=True).validate()
        from gaitlab import poincare

        passive = cp.CompassParams(slope=np.deg2rad(5.0)).validate()
        rep = poincare.find_fixed_point(cp.hybrid_spec(passive),
                                        np.array([-0.3045, 0.3045, 1.191, -1.032]))
        seed = gaitopt.seed_from_passive(params5)
        dists = []
        for w in (1e-4, 1e-3):
            sol = gaitopt.optimize_gait(params5, seed, gains=GAINS,
                                        inner_budget=60, torque_weight=w,
                                        skip_eigenvalues=True)
            dists.append(np.linalg.norm(sol.decision.x_star - rep.x_star))
        assert dists[1] < dists[0]

    def test_unreachable_torque_bound_fails(self, flat):
        d = gaitopt.flat_anchor_decision()
        sol = gaitopt.optimize_gait(flat, d, gains=GAINS, u_max=1.0,
                                    inner_budget=12, skip_eigenvalues=True)
        assert sol.status == "infeasible"


class TestGaitSolutionJson:
    def test_roundtrip(self, tmp_path, anchor):
        sol = gaitopt.GaitSolution(
            decision=anchor, cost=0.0366,
            residuals={"periodicity": 1e-9}, eigenvalues=[0.92], status="converged",
        )
        path = tmp_path / "gait.json"
        sol.to_json(path)
        back = gaitopt.GaitSolution.from_json(path)
        assert np.array_equal(back.decision.x_star, anchor.x_star)
        assert np.array_equal(back.decision.alpha, anchor.alpha)
        assert back.cost == sol.cost
        assert back.status == "converged"
