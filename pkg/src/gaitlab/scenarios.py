"""Named experiment pipelines behind the CLI.

Every scenario is a pure function of (config, output directory): it runs the
models end-to-end, writes CSV trajectory logs plus a JSON summary, and
returns the RunSummary.  Determinism comes from fixed seeds and tolerances;
nothing here depends on wall-clock state.
"""

from __future__ import annotations

import os
import time

import numpy as np

from gaitlab import compass as cp
from gaitlab import controllers as ctrl
from gaitlab import gaitopt, lipm, poincare, slip
from gaitlab import outputs as vo
from gaitlab.config import ConfigError, ScenarioConfig
from gaitlab.hybrid import simulate_steps
from gaitlab.logs import RunSummary, trajectory_rows, write_csv

COMPASS_COLUMNS = ["t", "q1", "q2", "dq1", "dq2", "u1", "lam_t", "lam_n",
                   "y1", "dy1", "V", "delta"]
SAMPLE_DT = 2e-3


def _compass_rows(params, traj, observer):
    """Uniform compass CSV rows; observer(t, state) -> (u, lam, y, dy, V, delta)."""

    def sample(arc, i):
        t = float(arc.t[i])
        state = cp.GeneralizedState.from_vector(arc.x[i])
        u, lam, y, dy, V, delta = observer(t - arc.t[0], state)
        return [t, *arc.x[i], u, lam[0], lam[1], y, dy, V, delta]

    def event_row(arc, x, t):
        state = cp.GeneralizedState.from_vector(x)
        u, lam, y, dy, V, delta = observer(float(t - arc.t[0]), state)
        return [float(t), *x, u, lam[0], lam[1], y, dy, V, delta]

    return trajectory_rows(traj, sample, event_row)


def passive_observer(params):
    def observer(t, state):
        _, lam = cp.forward_dynamics(params, state)
        return 0.0, lam.force, 0.0, 0.0, 0.0, 0.0

    return observer


def run_passive_compass(config: ScenarioConfig, out_dir: str) -> RunSummary:
    """Fixed point, eigenvalues and a perturbed rollout of the passive walker."""
    compass_cfg = dict(config.compass)
    compass_cfg.setdefault("slope_deg", 5.0)
    cfg = ScenarioConfig(**{**config.__dict__, "compass": compass_cfg})
    params = cfg.compass_params(actuated=False)
    spec = cp.hybrid_spec(params)
    opts = config.options
    guess = np.asarray(opts.get("x_guess", [-0.30, 0.30, 1.19, -1.03]), dtype=float)
    n_steps = int(opts.get("n_steps", 50))

    report = poincare.analyze(spec, guess, rtol=config.rtol, atol=config.atol)
    rng = np.random.default_rng(config.seed)
    delta = rng.standard_normal(4)
    delta *= 1e-3 / np.linalg.norm(delta)
    traj = simulate_steps(spec, report.x_star + delta, n_steps, max_arc_time=3.0,
                          rtol=max(config.rtol, 1e-9), atol=max(config.atol, 1e-9),
                          sample_dt=SAMPLE_DT)
    errors = [float(np.linalg.norm(s - report.x_star)) for s in traj.section_states()]

    rows, flags = _compass_rows(params, traj, passive_observer(params))
    csv_path = write_csv(os.path.join(out_dir, "trajectory.csv"),
                         COMPASS_COLUMNS, rows, flags)
    metrics = {
        "fixed_point": report.x_star.tolist(),
        "fixed_point_residual": report.residual,
        "eigenvalue_magnitudes": report.eig_magnitudes.tolist(),
        "max_eigenvalue": float(report.eig_magnitudes[0]),
        "verdict": report.verdict,
        "section_errors": errors,
        "contracts": bool(errors[-1] < errors[4]),
        "step_count": n_steps,
    }
    return RunSummary(scenario=config.scenario, seed=config.seed, metrics=metrics,
                      artifacts={"trajectory_csv": os.path.basename(csv_path)})


def tracking_observer(params, vc, gains):
    fused = gaitopt._fused_tracker(params, vc, gains)

    def observer(t, state):
        out = fused(t, state.x)
        lam = cp.stance_contact_force(params, state, out["dx"][2:4], out["u"])
        return (float(out["u"][0]), lam.force, float(out["y"][0]),
                float(out["dy"][0]), 0.0, 0.0)

    return observer


def run_hzd_compass_opt(config: ScenarioConfig, out_dir: str) -> RunSummary:
    """Gait optimization at the configured slope (flat ground by default)."""
    params = config.compass_params(actuated=True)
    gains = config.pd_gains()
    u_max = float(config.controller.get("u_max", 30.0))
    mu = float(config.controller.get("mu_friction", 0.8))
    opts = config.options
    solution = gaitopt.optimize_flat_ground_gait(
        params, gains=gains, u_max=u_max, mu=mu,
        inner_budget=int(opts.get("inner_budget", 28)),
        torque_weight=float(opts.get("torque_weight", 0.0)),
        power_convention=str(opts.get("power_convention", "absolute")),
    )
    gait_path = os.path.join(out_dir, "gait.json")
    solution.to_json(gait_path)

    vc = gaitopt.virtual_constraints(solution.decision)
    spec = gaitopt.closed_loop_spec(params, vc, gains)
    traj = simulate_steps(spec, solution.decision.x_star, 1, max_arc_time=3.0,
                          rtol=1e-9, atol=1e-9, sample_dt=SAMPLE_DT)
    rows, flags = _compass_rows(params, traj, tracking_observer(params, vc, gains))
    csv_path = write_csv(os.path.join(out_dir, "trajectory.csv"),
                         COMPASS_COLUMNS, rows, flags)
    metrics = {
        "status": solution.status,
        "cost_mcot": solution.cost,
        "residuals": solution.residuals,
        "eigenvalue_magnitudes": solution.eigenvalues,
        "max_eigenvalue": max(solution.eigenvalues) if solution.eigenvalues else None,
    }
    return RunSummary(scenario=config.scenario, seed=config.seed, metrics=metrics,
                      artifacts={"trajectory_csv": os.path.basename(csv_path),
                                 "gait_json": os.path.basename(gait_path)})


def _load_or_anchor_gait(config, params, gains):
    opts = config.options
    gait_file = opts.get("gait_json")
    if gait_file:
        solution = gaitopt.GaitSolution.from_json(gait_file)
        return solution.decision
    decision = gaitopt.flat_anchor_decision()
    return gaitopt.close_periodicity(params, decision, gains, tol=1e-8,
                                     rtol=1e-10, atol=1e-10)


def run_hzd_compass_track(config: ScenarioConfig, out_dir: str) -> RunSummary:
    """Track a designed gait for n steps, optionally under a velocity
    disturbance with the stride-to-stride foot-placement regulator."""
    params = config.compass_params(actuated=True)
    gains = config.pd_gains()
    opts = config.options
    n_steps = int(opts.get("n_steps", 12))
    disturbance = float(opts.get("velocity_disturbance", 0.0))
    use_regulator = bool(opts.get("regulator", False))

    decision = _load_or_anchor_gait(config, params, gains)
    nominal = gaitopt.evaluate_gait(params, decision, gains, rtol=1e-9, atol=1e-9)
    v_ref = ctrl.step_velocity(params, nominal.trajectory.arcs[0].pre_event[:2],
                               nominal.step_time)
    reg_gains = ctrl.RegulatorGains(
        kp=float(config.controller.get("regulator_kp", 0.8)),
        kd=float(config.controller.get("regulator_kd", 0.2)),
        v_ref=v_ref,
    )

    x = decision.x_star.copy()
    x[2:] *= 1.0 + disturbance
    arcs = []
    step_velocities = []
    v_prev = v_ref
    t_clock = 0.0
    dp = 0.0
    for k in range(n_steps):
        poly = vo.BezierPoly(alpha=decision.alpha.copy())
        if use_regulator and abs(dp) > 0.0:
            # foot-placement shift mapped to the swing-angle endpoint
            poly = ctrl.bezier_transition(poly, [-dp / params.length])
        vc = vo.VirtualConstraintSet(
            selector=gaitopt.SWING_SELECTOR,
            desired=poly,
            phase=gaitopt.virtual_constraints(decision).phase,
        )
        spec = gaitopt.closed_loop_spec(params, vc, gains)
        traj = simulate_steps(spec, x, 1, max_arc_time=3.0, rtol=1e-9, atol=1e-9,
                              sample_dt=SAMPLE_DT)
        arc = traj.arcs[0]
        arc_obs = tracking_observer(params, vc, gains)
        arcs.append((arc, arc_obs))
        duration = float(arc.event_time - arc.t[0])
        v_k = ctrl.step_velocity(params, arc.pre_event[:2], duration)
        step_velocities.append(v_k)
        if use_regulator:
            dp = ctrl.raibert_regulator(v_k, v_prev, reg_gains)
        v_prev = v_k
        x = arc.post_event
        t_clock = arc.event_time

    rows, flags = [], []
    for arc, obs in arcs:
        from gaitlab.hybrid import HybridTrajectory

        sub_rows, sub_flags = _compass_rows(params, HybridTrajectory(arcs=[arc]), obs)
        rows.extend(sub_rows)
        flags.extend(sub_flags)
    csv_path = write_csv(os.path.join(out_dir, "trajectory.csv"),
                         COMPASS_COLUMNS, rows, flags)

    err = [abs(v - v_ref) / v_ref for v in step_velocities]
    recovered_at = next((k + 1 for k, e in enumerate(err) if e < 0.02), None)
    metrics = {
        "v_ref": v_ref,
        "step_velocities": step_velocities,
        "velocity_errors_rel": err,
        "recovered_within_2pct_at_step": recovered_at,
        "disturbance": disturbance,
        "regulator": use_regulator,
        "tracking": True,
    }
    return RunSummary(scenario=config.scenario, seed=config.seed, metrics=metrics,
                      artifacts={"trajectory_csv": os.path.basename(csv_path)})


def run_lipm_zmp(config: ScenarioConfig, out_dir: str) -> RunSummary:
    """Forward LIPM stepping with the ZMP held at the foot center; the ZMP
    margin against each stance foot's support polygon stays positive."""
    params = config.lipm_params()
    opts = config.options
    n_steps = int(opts.get("n_steps", 6))
    step_length = float(opts.get("step_length", 0.3))
    foot_half = float(opts.get("foot_half_width", 0.05))
    omega = params.omega

    # symmetric pass over each stance foot: enter at -S/2, exit at +S/2
    half = step_length / 2.0
    v_mid = float(opts.get("mid_speed", 0.35))
    v_entry = np.sqrt(v_mid**2 + omega**2 * half**2)
    # time for one pass (relative coordinates): x from -half to +half
    state = lipm.LipmState(c=[-half, 0.0], dc=[v_entry, 0.0])
    # pass duration: solve x(T) = +half on the closed form
    from scipy.optimize import brentq

    def x_of(t):
        return lipm.lipm_flow(params, state, t=t).c[0] - half

    T_step = brentq(x_of, 1e-6, 20.0 / omega, xtol=1e-14)

    rows, flags = [], []
    min_margin = np.inf
    pivot_x = 0.0
    t_clock = 0.0
    dt = float(opts.get("sample_dt", 5e-3))
    for k in range(n_steps):
        foot = np.array([pivot_x, 0.0])
        poly = lipm.SupportPolygon(points=np.array([
            [pivot_x - foot_half, -foot_half],
            [pivot_x + foot_half, -foot_half],
            [pivot_x + foot_half, foot_half],
            [pivot_x - foot_half, foot_half],
        ]))
        ts = np.arange(0.0, T_step, dt)
        if T_step - ts[-1] > 1e-12:
            ts = np.append(ts, T_step)
        for i, t in enumerate(ts):
            out = lipm.lipm_flow(params, state, t=float(t))
            c_abs = out.c + foot
            ddc = lipm.lipm_acceleration(params, out)
            p_zmp = lipm.zmp_from_com(params, lipm.LipmState(c=c_abs, dc=out.dc), ddc)
            inside, margin = lipm.zmp_criterion(p_zmp, poly)
            min_margin = min(min_margin, margin)
            icp_abs = lipm.icp(params, lipm.LipmState(c=c_abs, dc=out.dc))
            is_event = k < n_steps - 1 and i == ts.size - 1
            rows.append([t_clock + t, c_abs[0], c_abs[1], out.dc[0], out.dc[1],
                         p_zmp[0], p_zmp[1], margin, icp_abs[0], icp_abs[1]])
            flags.append("pre" if is_event else "")
        # support exchange: next foot ahead, relative coordinates reset
        end = lipm.lipm_flow(params, state, t=T_step)
        pivot_x += step_length
        t_clock += T_step
        state = lipm.LipmState(c=[end.c[0] - step_length, 0.0], dc=end.dc)
        if k < n_steps - 1:
            c_abs = np.array([state.c[0] + pivot_x, 0.0])
            rows.append([t_clock, c_abs[0], 0.0, state.dc[0], 0.0,
                         pivot_x, 0.0, foot_half, c_abs[0] + state.dc[0] / omega, 0.0])
            flags.append("post")

    columns = ["t", "com_x", "com_y", "dcom_x", "dcom_y", "zmp_x", "zmp_y",
               "margin", "icp_x", "icp_y"]
    csv_path = write_csv(os.path.join(out_dir, "trajectory.csv"), columns, rows, flags)
    metrics = {
        "min_zmp_margin": float(min_margin),
        "zmp_always_inside": bool(min_margin >= 0.0),
        "step_time": float(T_step),
        "n_steps": n_steps,
        "step_length": step_length,
    }
    return RunSummary(scenario=config.scenario, seed=config.seed, metrics=metrics,
                      artifacts={"trajectory_csv": os.path.basename(csv_path)})


def run_capture_point(config: ScenarioConfig, out_dir: str) -> RunSummary:
    """Step onto the instantaneous capture point and come to rest."""
    params = config.lipm_params()
    opts = config.options
    push = np.asarray(opts.get("push_velocity", [0.01, -0.004]), dtype=float)
    state = lipm.LipmState(c=np.zeros(2), dc=push)
    p_capture = lipm.capture_step(params, state)
    horizon = 10.0 / params.omega
    dt = float(opts.get("sample_dt", 5e-3))

    rows, flags = [], []
    icp_drift = 0.0
    r0 = lipm.icp(params, state)
    ts = np.arange(0.0, horizon, dt)
    ts = np.append(ts, horizon)
    for t in ts:
        out = lipm.lipm_flow(params, state, t=float(t), pivot=p_capture)
        r = lipm.icp(params, out)
        icp_drift = max(icp_drift, float(np.linalg.norm(r - r0)))
        rows.append([t, out.c[0], out.c[1], out.dc[0], out.dc[1],
                     r[0], r[1], p_capture[0], p_capture[1]])
        flags.append("")
    final = lipm.lipm_flow(params, state, t=horizon, pivot=p_capture)
    residual_speed = float(np.linalg.norm(final.dc))
    columns = ["t", "com_x", "com_y", "dcom_x", "dcom_y", "icp_x", "icp_y",
               "pivot_x", "pivot_y"]
    csv_path = write_csv(os.path.join(out_dir, "trajectory.csv"), columns, rows, flags)
    metrics = {
        "capture_point": p_capture.tolist(),
        "residual_speed": residual_speed,
        "captured": bool(residual_speed < 1e-6),
        "icp_drift": icp_drift,
        "horizon_s": horizon,
    }
    return RunSummary(scenario=config.scenario, seed=config.seed, metrics=metrics,
                      artifacts={"trajectory_csv": os.path.basename(csv_path)})


def run_slip_orbit(config: ScenarioConfig, out_dir: str) -> RunSummary:
    """SLIP apex fixed point, stability slope, and GRF profiles."""
    params = config.slip_params()
    opts = config.options
    energy = float(opts.get("energy", 1500.0))
    z_guess = float(opts.get("z_guess", 0.92))

    apex, residual = slip.apex_fixed_point(params, z_guess, energy,
                                           rtol=config.rtol, atol=config.atol)
    slope = slip.apex_map_slope(params, apex)
    _, traj = slip.apex_map(params, apex, rtol=config.rtol, atol=config.atol)
    stance = [a for a in traj.arcs if a.vertex == "stance"][0]
    grf = slip.slip_grf(params, stance.x)
    ds_frac = float(opts.get("double_support_fraction", 0.3))
    ts_walk, walk_grf = slip.walking_step_profile(stance.t, grf, ds_frac)
    peaks = slip.count_interior_maxima(walk_grf)

    rows = [[float(t), *map(float, s[:4]), float(f)]
            for t, s, f in zip(stance.t, stance.x, grf)]
    csv_path = write_csv(os.path.join(out_dir, "stance_grf.csv"),
                         ["t", "l", "dl", "theta", "dtheta", "f_vertical"],
                         rows, None)
    walk_rows = [[float(t), float(f)] for t, f in zip(ts_walk, walk_grf)]
    walk_path = write_csv(os.path.join(out_dir, "walking_grf.csv"),
                          ["t", "f_vertical"], walk_rows, None)
    metrics = {
        "apex_fixed_point": apex.tolist(),
        "apex_residual": residual,
        "return_map_slope": slope,
        "stable": bool(abs(slope) < 1.0),
        "walking_grf_interior_maxima": peaks,
        "energy": energy,
        "double_support_fraction": ds_frac,
    }
    return RunSummary(scenario=config.scenario, seed=config.seed, metrics=metrics,
                      artifacts={"trajectory_csv": os.path.basename(csv_path),
                                 "walking_grf_csv": os.path.basename(walk_path)})


def clf_observer(params, vc, clf, u_max, mu, relax_weight):
    def observer(t, state):
        out = ctrl.clf_qp(params, vc, clf, state, t=t, u_max=u_max, mu=mu,
                          relax_weight=relax_weight)
        y, dy = vo.outputs(vc, state, t=t)
        return (float(out.u[0]), out.lam, float(y[0]), float(dy[0]),
                float(out.V), float(out.delta))

    return observer


def run_clf_track(config: ScenarioConfig, out_dir: str) -> RunSummary:
    """Track the anchor gait with the CLF-QP controller (relaxation off) and
    log the Lyapunov decay against its exponential bound."""
    params = config.compass_params(actuated=True)
    gains = config.pd_gains()
    opts = config.options
    n_steps = int(opts.get("n_steps", 3))
    u_max = float(config.controller.get("u_max", 300.0))
    mu = float(config.controller.get("mu_friction", 0.8))
    gamma = float(config.controller.get("gamma", 0.5))
    eps = gains.eps
    relax = config.controller.get("relax_weight", None)
    relax = float(relax) if relax is not None else None

    decision = _load_or_anchor_gait(config, params, gains)
    vc = gaitopt.virtual_constraints(decision)
    clf = ctrl.build_res_clf(eps, 1, gamma=gamma)

    def controller(t, state):
        return ctrl.clf_qp(params, vc, clf, state, t=t, u_max=u_max, mu=mu,
                           relax_weight=relax).u

    base = cp.hybrid_spec(params, controller=controller)
    # perturb the initial state off the surface so V(0) > 0
    x0 = decision.x_star.copy()
    x0[1] += float(opts.get("output_offset", 0.03))
    x0[3] += float(opts.get("output_rate_offset", -0.1))
    traj = simulate_steps(base, x0, n_steps, max_arc_time=3.0,
                          rtol=max(config.rtol, 1e-10), atol=max(config.atol, 1e-10),
                          sample_dt=SAMPLE_DT)
    rows, flags = _compass_rows(params, traj,
                                clf_observer(params, vc, clf, u_max, mu, relax))
    csv_path = write_csv(os.path.join(out_dir, "trajectory.csv"),
                         COMPASS_COLUMNS, rows, flags)

    # discrete exponential-decay check per continuous arc
    rate = gamma / eps
    worst = -np.inf
    v0 = None
    for arc in traj.arcs:
        vs = []
        for i, t in enumerate(arc.t):
            state = cp.GeneralizedState.from_vector(arc.x[i])
            y, dy = vo.outputs(vc, state, t=float(t - arc.t[0]))
            vs.append(clf.value(y, dy))
        vs = np.array(vs)
        if v0 is None and vs.size:
            v0 = float(vs[0])
        for i in range(1, vs.size):
            bound = vs[i - 1] * np.exp(-rate * (arc.t[i] - arc.t[i - 1]))
            slack = vs[i] - bound * (1.0 + 1e-6)
            worst = max(worst, float(slack / max(vs[i - 1], 1e-300)))
    metrics = {
        "gamma": gamma,
        "eps": eps,
        "V0": v0,
        "decay_bound_satisfied": bool(worst <= 0.0),
        "worst_decay_slack_rel": worst,
        "relaxation": relax,
        "tracking": True,
        "lyapunov": True,
    }
    return RunSummary(scenario=config.scenario, seed=config.seed, metrics=metrics,
                      artifacts={"trajectory_csv": os.path.basename(csv_path)})


def idqp_observer(params, vc, gains, u_max, mu):
    def observer(t, state):
        y, dy = vo.outputs(vc, state, t=t)
        mu_aux = vo.pd_aux(y, dy, gains.eps, gains.kp, gains.kd)
        out = ctrl.id_qp(params, state, mu_aux, vc=vc, t=t, u_max=u_max, mu=mu)
        return (float(out.u[0]), out.lam, float(y[0]), float(dy[0]), 0.0, 0.0)

    return observer


def run_idqp_track(config: ScenarioConfig, out_dir: str) -> RunSummary:
    """Track the anchor gait with the inverse-dynamics QP in the loop."""
    params = config.compass_params(actuated=True)
    gains = config.pd_gains()
    opts = config.options
    n_steps = int(opts.get("n_steps", 2))
    u_max = float(config.controller.get("u_max", 60.0))
    mu = float(config.controller.get("mu_friction", 0.8))

    decision = _load_or_anchor_gait(config, params, gains)
    vc = gaitopt.virtual_constraints(decision)

    kkt_worst = {"stationarity": 0.0, "eq_violation": 0.0, "in_violation": 0.0,
                 "complementarity": 0.0}
    dyn_worst = [0.0]

    def controller(t, state):
        y, dy = vo.outputs(vc, state, t=t)
        mu_aux = vo.pd_aux(y, dy, gains.eps, gains.kp, gains.kd)
        out = ctrl.id_qp(params, state, mu_aux, vc=vc, t=t, u_max=u_max, mu=mu)
        for key in kkt_worst:
            kkt_worst[key] = max(kkt_worst[key], out.solution.kkt[key])
        dyn_worst[0] = max(dyn_worst[0], out.dynamics_residual)
        return out.u

    base = cp.hybrid_spec(params, controller=controller)
    x0 = decision.x_star.copy()
    x0[3] += float(opts.get("output_rate_offset", -0.05))
    traj = simulate_steps(base, x0, n_steps, max_arc_time=3.0,
                          rtol=max(config.rtol, 1e-8), atol=max(config.atol, 1e-8),
                          sample_dt=SAMPLE_DT)
    rows, flags = _compass_rows(params, traj,
                                idqp_observer(params, vc, gains, u_max, mu))
    csv_path = write_csv(os.path.join(out_dir, "trajectory.csv"),
                         COMPASS_COLUMNS, rows, flags)
    metrics = {
        "max_kkt_residuals": kkt_worst,
        "max_dynamics_residual": dyn_worst[0],
        "pyramid_factor": ctrl.PYRAMID_FACTOR,
        "n_steps": n_steps,
        "tracking": True,
    }
    return RunSummary(scenario=config.scenario, seed=config.seed, metrics=metrics,
                      artifacts={"trajectory_csv": os.path.basename(csv_path)})


RUNNERS = {
    "passive-compass": run_passive_compass,
    "hzd-compass-opt": run_hzd_compass_opt,
    "hzd-compass-track": run_hzd_compass_track,
    "lipm-zmp": run_lipm_zmp,
    "capture-point": run_capture_point,
    "slip-orbit": run_slip_orbit,
    "clf-track": run_clf_track,
    "idqp-track": run_idqp_track,
}


def run_scenario(config: ScenarioConfig, out_dir=None) -> RunSummary:
    """Execute the configured scenario end-to-end and write its artifacts."""
    out_dir = out_dir or config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    runner = RUNNERS.get(config.scenario)
    if runner is None:
        raise ConfigError(f"no runner for scenario {config.scenario!r}")
    t0 = time.perf_counter()
    summary = runner(config, out_dir)
    summary.wall_time_s = time.perf_counter() - t0
    summary.write(out_dir)
    return summary
