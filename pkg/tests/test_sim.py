import math
from dataclasses import replace

import numpy as np
import pytest

from airshield import sim, stats
from airshield.airflow import PerceptionModel
from airshield.safety import SafetyState


# --- robot trajectory ------------------------------------------------------

def test_tcp_at_phase_origin(trajectory):
    p = sim.robot_tcp_at(trajectory, 0.0)
    assert np.allclose(p.position, trajectory.waypoints[0][0])


def test_tcp_periodicity(trajectory):
    p = sim.robot_tcp_at(trajectory, trajectory.cycle_period)
    assert np.allclose(p.position, trajectory.waypoints[0][0], atol=1e-9)
    q1 = sim.robot_tcp_at(trajectory, 3.21)
    q2 = sim.robot_tcp_at(trajectory, 3.21 + trajectory.cycle_period)
    assert np.allclose(q1.position, q2.position, atol=1e-9)


def test_straight_segment_midpoint():
    two = sim.RobotTrajectory(waypoints=(((0, 0, 0), 0.0), ((1.0, 0, 0), 0.0)),
                              speed=0.5, accel=2.0)
    seg_time = two.cycle_period / 2.0
    mid = sim.robot_tcp_at(two, seg_time / 2.0)
    assert np.allclose(mid.position, [0.5, 0, 0], atol=1e-9)


def test_trajectory_is_continuous(trajectory):
    ts = np.linspace(0.0, 2.0 * trajectory.cycle_period, 4000)
    pos = sim.trajectory_positions(trajectory, ts)
    speeds = np.linalg.norm(np.diff(pos, axis=0), axis=1) / np.diff(ts)
    assert speeds.max() <= trajectory.speed + 1e-6


def test_trajectory_validation():
    with pytest.raises(ValueError):
        sim.RobotTrajectory(waypoints=(((0, 0, 0), 1.0),))
    with pytest.raises(ValueError):
        sim.RobotTrajectory(waypoints=(((0, 0, 0), 0.0), ((1, 0, 0), 0.0)),
                            speed=0.5, cycle_period=0.1)


def test_cycle_period_padding_holds_first_waypoint():
    traj = sim.RobotTrajectory(waypoints=(((0, 0, 0), 0.0), ((0.5, 0, 0), 0.0)),
                               speed=0.5, accel=2.0, cycle_period=10.0)
    late = sim.robot_tcp_at(traj, 9.5)
    assert np.allclose(late.position, [0, 0, 0], atol=1e-9)


# --- below-HAD metric ------------------------------------------------------

def trace_with(dists, cond="v", seed=0):
    n = len(dists)
    return sim.DistanceTrace(
        t_ms=np.arange(n, dtype=np.int64) * 10,
        dist_m=np.asarray(dists, dtype=float),
        state=np.zeros(n, dtype=np.uint8),
        duty_pct=np.zeros(n),
        condition=cond, seed=seed)


def test_below_had_mean_filters_samples(zone):
    assert sim.below_had_mean(trace_with([0.40, 0.30, 0.32, 0.50]), zone) \
        == pytest.approx(0.31)


def test_below_had_mean_no_exposure(zone):
    with pytest.raises(sim.NoExposure):
        sim.below_had_mean(trace_with([0.5, 0.6, 0.7]), zone)


def test_below_had_mean_constant(zone):
    assert sim.below_had_mean(trace_with([0.30, 0.30, 0.30]), zone) == pytest.approx(0.30)


def test_below_had_boundary_inclusive(zone):
    assert sim.below_had_mean(trace_with([zone.had, 1.0]), zone) == pytest.approx(zone.had)


# --- run_trial -------------------------------------------------------------

def run(cond, seed, human, trajectory, zone, jet, perception, latency,
        duration=60.0, **kw):
    return sim.run_trial(cond, human, trajectory, zone, jet, perception,
                         latency, duration, seed, **kw)


def test_no_excursions_never_below_had(human, trajectory, zone, jet, perception, latency):
    quiet = replace(human, excursion_rate=0.0, attention_p=1.0)
    for cond in sim.CONDITIONS:
        t = run(cond, 3, quiet, trajectory, zone, jet, perception, latency)
        assert t.dist_m.min() > zone.had


def test_seed_determinism_bit_identical(human, trajectory, zone, jet, perception, latency):
    a = run("va", 11, human, trajectory, zone, jet, perception, latency)
    b = run("va", 11, human, trajectory, zone, jet, perception, latency)
    assert np.array_equal(a.dist_m, b.dist_m)
    assert np.array_equal(a.state, b.state)
    assert np.array_equal(a.duty_pct, b.duty_pct)
    assert a.decisions == b.decisions


def test_different_seeds_differ(human, trajectory, zone, jet, perception, latency):
    a = run("va", 11, human, trajectory, zone, jet, perception, latency)
    b = run("va", 12, human, trajectory, zone, jet, perception, latency)
    assert not np.array_equal(a.dist_m, b.dist_m)


def test_channel_isolation_with_airflow_disabled(human, trajectory, zone, jet, latency):
    off = PerceptionModel(weber=0.301155, detect_q=math.inf)
    v = run("v", 5, human, trajectory, zone, jet, off, latency)
    va = run("va", 5, human, trajectory, zone, jet, off, latency)
    assert np.array_equal(v.dist_m, va.dist_m)
    assert np.array_equal(v.state, va.state)
    assert np.array_equal(v.duty_pct, va.duty_pct)


def test_airflow_feedback_changes_behavior(human, trajectory, zone, jet, perception, latency):
    v = run("v", 5, human, trajectory, zone, jet, perception, latency)
    va = run("va", 5, human, trajectory, zone, jet, perception, latency)
    assert not np.array_equal(v.dist_m, va.dist_m)


def test_timestamps_strictly_increasing(human, trajectory, zone, jet, perception, latency):
    t = run("v", 2, human, trajectory, zone, jet, perception, latency, duration=20.0)
    assert np.all(np.diff(t.t_ms) > 0)
    assert np.all(t.dist_m >= 0.0)


def test_hand_speed_bounded_and_distance_continuous(human, trajectory, zone, jet,
                                                    perception, latency):
    t = run("va", 7, human, trajectory, zone, jet, perception, latency,
            record_hand=True)
    dt = 0.010
    hand_speed = np.linalg.norm(np.diff(t.hand_xyz, axis=0), axis=1) / dt
    assert hand_speed.max() <= human.retreat_speed + 1e-9
    d_rate = np.abs(np.diff(t.dist_m)) / dt
    assert d_rate.max() <= human.retreat_speed + trajectory.speed + 1e-9


def test_duty_rises_only_when_active(human, trajectory, zone, jet, perception, latency):
    t = run("va", 1, human, trajectory, zone, jet, perception, latency)
    assert t.duty_pct.max() > 50.0  # impeller actually engaged at some point
    safe = t.state == int(SafetyState.SAFE)
    # duty decays while commanded safe; allow the actuator fall lag
    active_any = t.duty_pct[~safe]
    assert active_any.size > 0


def test_directional_effect_over_matched_seeds(human, trajectory, zone, jet,
                                               perception, latency):
    v_means, va_means = [], []
    for s in range(30):
        for cond, sink in (("v", v_means), ("va", va_means)):
            t = run(cond, s, human, trajectory, zone, jet, perception, latency,
                    duration=120.0)
            try:
                sink.append(sim.below_had_mean(t, zone))
            except sim.NoExposure:
                sink.append(zone.had)
    r = stats.paired_t(v_means, va_means)
    assert np.mean(va_means) > np.mean(v_means)
    assert r.statistic < 0
    assert r.p_value < 0.05


def test_run_trial_argument_validation(human, trajectory, zone, jet, perception, latency):
    with pytest.raises(ValueError):
        run("x", 0, human, trajectory, zone, jet, perception, latency)
    with pytest.raises(ValueError):
        run("v", 0, human, trajectory, zone, jet, perception, latency, duration=0.0)


def test_trace_records_schema(human, trajectory, zone, jet, perception, latency):
    t = run("va", 4, human, trajectory, zone, jet, perception, latency, duration=5.0)
    recs = list(t.records())
    assert len(recs) == len(t)
    first = recs[0]
    assert list(first) == ["t_ms", "dist_m", "state", "duty_pct", "cond", "seed"]
    assert first["cond"] == "va"
    assert first["seed"] == 4
    assert first["state"] in {"SAFE", "ACTIVE", "DANGER"}


# --- analysis --------------------------------------------------------------

def test_analyze_pairs_report_fields():
    rng = np.random.default_rng(2)
    v = (0.307 + 0.01 * rng.standard_normal(12)).tolist()
    va = (0.326 + 0.005 * rng.standard_normal(12)).tolist()
    rep = sim.analyze_pairs(v, va)
    assert rep.n_pairs == 12
    assert rep.mean_diff_va_minus_v == pytest.approx(np.mean(va) - np.mean(v))
    assert rep.t_test is not None and rep.t_test.df == 11
    d = rep.to_dict()
    assert set(d) == {"n_pairs", "v", "va", "paired_t", "mean_diff_va_minus_v", "warnings"}


def test_analyze_pairs_zero_variance_warns():
    rep = sim.analyze_pairs([0.3, 0.31], [0.3, 0.31])
    assert rep.t_test is None
    assert any("paired_t" in w for w in rep.warnings)


def test_analyze_pairs_needs_two():
    with pytest.raises(ValueError):
        sim.analyze_pairs([0.3], [0.31])


# --- calibration -----------------------------------------------------------

def test_calibrate_zero_budget_fails(human, perception):
    with pytest.raises(sim.CalibrationFailed):
        sim.calibrate(sim.CalibrationTargets(), budget=0)


def test_calibrate_self_consistent_targets_converge(human, trajectory, zone, jet,
                                                    perception, latency):
    # Evaluate the defaults once, use that output as the target: the first
    # evaluation must already satisfy it. Mirrors the objective's convention
    # of dropping pairs without below-HAD exposure.
    from airshield.airflow import perception_errors
    v, va = [], []
    for s in range(6):
        pair = {}
        for cond in sim.CONDITIONS:
            t = run(cond, 1000 + s, human, trajectory, zone, jet, perception,
                    latency, duration=30.0)
            try:
                pair[cond] = sim.below_had_mean(t, zone)
            except sim.NoExposure:
                pair[cond] = None
        if pair["v"] is not None and pair["va"] is not None:
            v.append(pair["v"])
            va.append(pair["va"])
    e25 = float(np.mean(np.abs(perception_errors(perception, jet, 100.0, 0.25, 4000, 90001))))
    e35 = float(np.mean(np.abs(perception_errors(perception, jet, 100.0, 0.35, 4000, 90002))))
    targets = sim.CalibrationTargets(v_mean=float(np.mean(v)), va_mean=float(np.mean(va)),
                                     err_near=e25, err_far=e35)
    result = sim.calibrate(targets, budget=8, human=human, perception=perception,
                           jet=jet, zone=zone, traj=trajectory, latency=latency,
                           trials_per_eval=6, trial_duration_s=30.0,
                           mc_samples=4000, seed=0)
    assert result.converged
    assert result.evaluations <= 2
    assert abs(result.residuals["v_mean"]) <= targets.tol_mean
    assert abs(result.residuals["va_mean"]) <= targets.tol_mean


def test_calibrate_reports_deterministic_result(human, trajectory, zone, jet,
                                                perception, latency):
    targets = sim.CalibrationTargets()
    kw = dict(human=human, perception=perception, jet=jet, zone=zone,
              traj=trajectory, latency=latency, trials_per_eval=4,
              trial_duration_s=20.0, mc_samples=2000, seed=3)
    try:
        a = sim.calibrate(targets, budget=6, **kw)
        b = sim.calibrate(targets, budget=6, **kw)
        assert a.residuals == b.residuals and a.evaluations == b.evaluations
    except sim.CalibrationFailed:
        with pytest.raises(sim.CalibrationFailed):
            sim.calibrate(targets, budget=6, **kw)


def test_slow_detector_drops_frames_latest_wins(human, trajectory, zone, jet,
                                                perception, latency):
    # Detection slower than the frame interval: frames must be dropped
    # (freshest wins) instead of queueing, so the decision rate tracks the
    # detector, not the camera.
    from airshield.pipeline import StageLatencyModel
    slow = StageLatencyModel(capture_ms=33.3, detect_ms_mean=80.0, detect_ms_sd=0.0,
                             decide_ms=0.5, transmit_ms=2.0, actuator_rise_ms=100.0)
    t = run("v", 1, human, trajectory, zone, jet, perception, slow, duration=30.0)
    n_frames_captured = int(30.0 * 1000 / 33.3)
    assert len(t.decisions) <= int(30.0 * 1000 / 80.0) + 2
    assert len(t.decisions) < n_frames_captured / 2
    cmd_times = [ts for ts, _, _ in t.decisions]
    assert all(b > a for a, b in zip(cmd_times, cmd_times[1:]))


# --- reaction latency ------------------------------------------------------

def test_actuation_reaction_bound(human, trajectory, zone, jet, perception, latency):
    bound = (latency.capture_ms + latency.detect_ms_mean + 3 * latency.detect_ms_sd
             + latency.decide_ms + latency.transmit_ms)
    delays = []
    for s in range(25):
        t = run("va", s, human, trajectory, zone, jet, perception, latency,
                duration=120.0)
        cmds = [ts for ts, st, act in t.decisions if act]
        below = t.dist_m <= zone.had
        above = ~below
        for i in range(50, len(t) - 6):
            if below[i] and above[i - 50:i].all() and below[i:i + 6].all():
                t_cross = t.t_ms[i]
                nxt = [ts for ts in cmds if ts >= t_cross]
                if nxt:
                    delays.append(nxt[0] - t_cross)
    assert len(delays) >= 60
    assert np.percentile(delays, 99) <= bound
