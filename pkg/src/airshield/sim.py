"""Seeded discrete-time simulation of a shared-workspace interaction trial.

A scripted robot arm runs a periodic plug-in loop while a distracted human
works a bit-tray/toolbox task nearby. Occasionally the human reaches toward
the robot's work zone after a dropped item; the reach crosses the haptic
activation distance (HAD), the tracking/decision pipeline activates the
impeller with realistic stage latency, and the human retreats either when
the airflow is felt (VA condition) or when proximity is noticed visually
(V condition; the visual channel is also present in VA).

Every random draw comes from named per-trial streams that are fully
pre-allocated at trial start, so trials are bit-reproducible from their
seed and the two feedback conditions consume identical randomness: with
the airflow channel disabled, V and VA traces at equal seeds are
identical by construction.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence

import numpy as np

from . import stats
from .airflow import (AIR_DENSITY_KG_M3, JetModel, PerceptionModel,
                      _felt_multipliers, perception_errors)
from .geometry import TcpPoint
from .pipeline import StageLatencyModel
from .safety import SafetyState, SafetyZoneConfig, step

__all__ = [
    "NoExposure",
    "CalibrationFailed",
    "Vec3",
    "RobotTrajectory",
    "HumanModel",
    "DistanceTrace",
    "TrialReport",
    "CalibrationTargets",
    "CalibrationResult",
    "robot_tcp_at",
    "trajectory_positions",
    "run_trial",
    "below_had_mean",
    "analyze_pairs",
    "calibrate",
    "CONDITIONS",
    "default_trajectory",
]

CONDITIONS = ("v", "va")

Vec3 = tuple[float, float, float]


class NoExposure(ValueError):
    pass


class CalibrationFailed(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Robot trajectory
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RobotTrajectory:
    """Periodic waypoint loop followed with a trapezoidal speed profile.

    ``waypoints`` holds (position, dwell seconds) pairs; the loop closes
    from the last waypoint back to the first. ``cycle_period`` defaults to
    the natural loop duration; a longer period pads with an extra hold at
    the first waypoint.
    """

    waypoints: tuple[tuple[Vec3, float], ...]
    speed: float = 0.12
    accel: float = 0.6
    cycle_period: Optional[float] = None

    def __post_init__(self) -> None:
        if len(self.waypoints) < 2:
            raise ValueError("a trajectory needs at least 2 waypoints")
        if self.speed <= 0.0 or self.accel <= 0.0:
            raise ValueError("speed and acceleration must be positive")
        natural = self._natural_duration()
        if self.cycle_period is None:
            object.__setattr__(self, "cycle_period", natural)
        elif self.cycle_period < natural - 1e-9:
            raise ValueError(
                f"cycle_period {self.cycle_period} s is shorter than the "
                f"path itself ({natural:.3f} s)"
            )

    def _natural_duration(self) -> float:
        total = 0.0
        for i, (pos, dwell) in enumerate(self.waypoints):
            total += dwell
            nxt = self.waypoints[(i + 1) % len(self.waypoints)][0]
            total += _trapezoid_time(_dist3(pos, nxt), self.speed, self.accel)
        return total

    def segments(self) -> list[tuple[float, float, str, tuple]]:
        """(t_start, t_end, kind, data) spans covering one cycle."""
        segs: list[tuple[float, float, str, tuple]] = []
        t = 0.0
        n = len(self.waypoints)
        for i, (pos, dwell) in enumerate(self.waypoints):
            if dwell > 0.0:
                segs.append((t, t + dwell, "dwell", (pos,)))
                t += dwell
            nxt = self.waypoints[(i + 1) % n][0]
            d = _dist3(pos, nxt)
            if d > 0.0:
                dur = _trapezoid_time(d, self.speed, self.accel)
                segs.append((t, t + dur, "move", (pos, nxt, d)))
                t += dur
        if self.cycle_period > t + 1e-12:
            segs.append((t, self.cycle_period, "dwell", (self.waypoints[0][0],)))
        return segs


def _dist3(a: Vec3, b: Vec3) -> float:
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)


def _trapezoid_time(d: float, vmax: float, a: float) -> float:
    if d <= 0.0:
        return 0.0
    d_ramp = vmax * vmax / a
    if d >= d_ramp:
        return d / vmax + vmax / a
    return 2.0 * math.sqrt(d / a)


def _trapezoid_s(tau: float, dur: float, d: float, vmax: float, a: float) -> float:
    """Arc length covered tau seconds into a trapezoidal move."""
    tau = min(max(tau, 0.0), dur)
    d_ramp = vmax * vmax / a
    if d >= d_ramp:
        t_r = vmax / a
        if tau < t_r:
            return 0.5 * a * tau * tau
        if tau <= dur - t_r:
            return 0.5 * d_ramp + vmax * (tau - t_r)
        rem = dur - tau
        return d - 0.5 * a * rem * rem
    t_peak = 0.5 * dur
    if tau <= t_peak:
        return 0.5 * a * tau * tau
    rem = dur - tau
    return d - 0.5 * a * rem * rem


def _position_at_phase(segs, phase: float, speed: float, accel: float) -> Vec3:
    idx = bisect_right([s[1] for s in segs], phase)
    if idx >= len(segs):
        idx = len(segs) - 1
    t0, t1, kind, data = segs[idx]
    if kind == "dwell":
        return data[0]
    pos, nxt, d = data
    s = _trapezoid_s(phase - t0, t1 - t0, d, speed, accel)
    f = s / d
    return (pos[0] + f * (nxt[0] - pos[0]),
            pos[1] + f * (nxt[1] - pos[1]),
            pos[2] + f * (nxt[2] - pos[2]))


def robot_tcp_at(traj: RobotTrajectory, t: float) -> TcpPoint:
    """Tool center point at time t (seconds), periodic in the cycle."""
    if t < 0.0:
        raise ValueError(f"time must be non-negative, got {t}")
    phase = math.fmod(t, traj.cycle_period)
    pos = _position_at_phase(traj.segments(), phase, traj.speed, traj.accel)
    return TcpPoint(position=np.array(pos), timestamp_ms=t * 1000.0)


def trajectory_positions(traj: RobotTrajectory, times: np.ndarray) -> np.ndarray:
    """Vectorized TCP positions for an array of times, shape (n, 3)."""
    segs = traj.segments()
    ends = [s[1] for s in segs]
    phases = np.mod(times, traj.cycle_period)
    idx = np.searchsorted(ends, phases, side="right")
    idx = np.minimum(idx, len(segs) - 1)
    out = np.empty((len(times), 3))
    for j, (t0, t1, kind, data) in enumerate(segs):
        mask = idx == j
        if not np.any(mask):
            continue
        if kind == "dwell":
            out[mask] = data[0]
            continue
        pos, nxt, d = data
        taus = phases[mask] - t0
        s = np.array([_trapezoid_s(tau, t1 - t0, d, traj.speed, traj.accel) for tau in taus])
        f = (s / d)[:, None]
        out[mask] = np.asarray(pos) + f * (np.asarray(nxt) - np.asarray(pos))
    return out


def default_trajectory() -> RobotTrajectory:
    """Compact plug-in loop for a desk-scale arm work zone."""
    return RobotTrajectory(waypoints=(
        ((0.00, 0.00, 0.55), 1.0),
        ((0.18, 0.02, 0.50), 0.3),
        ((0.20, 0.12, 0.42), 1.2),
        ((0.05, 0.08, 0.52), 0.3),
    ), speed=0.12, accel=0.6)


# ---------------------------------------------------------------------------
# Human behavior model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HumanModel:
    """Inattentive-worker hand model.

    The hand shuttles between the two task positions; with probability
    ``excursion_rate`` per second it leaves the task to reach for a dropped
    item near the robot, placed ``item_near_m``..``item_far_m`` from the
    current tool point. ``attention_p`` is the chance an approach is
    noticed visually; noticing takes a uniform glance delay plus the motor
    reaction latency, while a felt-airflow trigger pays only the reaction
    latency (the system latency is simulated explicitly).
    """

    task_positions: tuple[Vec3, Vec3] = ((0.60, 0.45, 0.60), (0.80, 0.25, 0.60))
    excursion_rate: float = 0.08
    reaction_latency_ms: float = 250.0
    retreat_speed: float = 0.5
    attention_p: float = 0.90
    reach_speed: float = 0.12
    task_speed: float = 0.30
    task_dwell_s: float = 0.5
    grab_dwell_s: float = 0.25
    notice_delay_max_s: float = 0.5
    item_near_m: float = 0.28
    item_far_m: float = 0.34

    def __post_init__(self) -> None:
        if not 0.0 <= self.attention_p <= 1.0:
            raise ValueError(f"attention_p must be in [0, 1], got {self.attention_p}")
        if self.excursion_rate < 0.0:
            raise ValueError(f"excursion_rate must be >= 0, got {self.excursion_rate}")
        if self.reaction_latency_ms < 0.0:
            raise ValueError("reaction latency must be >= 0")
        for name in ("retreat_speed", "reach_speed", "task_speed"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.item_near_m <= self.item_far_m:
            raise ValueError("need 0 < item_near_m <= item_far_m")


# ---------------------------------------------------------------------------
# Trial output
# ---------------------------------------------------------------------------

@dataclass
class DistanceTrace:
    """Fixed-tick samples of one trial plus the actuation decision log."""

    t_ms: np.ndarray
    dist_m: np.ndarray
    state: np.ndarray  # SafetyState integer values
    duty_pct: np.ndarray
    condition: str
    seed: int
    decisions: list[tuple[float, int, bool]] = field(default_factory=list)
    hand_xyz: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.t_ms)

    def records(self) -> Iterator[dict]:
        """JSON-ready rows in trace-file field order."""
        state_names = {s.value: s.name for s in SafetyState}
        for i in range(len(self.t_ms)):
            yield {
                "t_ms": int(self.t_ms[i]),
                "dist_m": float(self.dist_m[i]),
                "state": state_names[int(self.state[i])],
                "duty_pct": float(self.duty_pct[i]),
                "cond": self.condition,
                "seed": self.seed,
            }


def below_had_mean(trace: DistanceTrace, cfg: SafetyZoneConfig) -> float:
    """Mean of the distance samples at or below the activation distance."""
    mask = trace.dist_m <= cfg.had
    if not np.any(mask):
        raise NoExposure(
            f"trace {trace.condition}/{trace.seed} never entered the HAD zone")
    return float(trace.dist_m[mask].mean())


# ---------------------------------------------------------------------------
# Trial simulation
# ---------------------------------------------------------------------------

_TASK_MOVE, _TASK_DWELL, _REACH, _GRAB, _RETURN, _RETREAT = range(6)


def run_trial(cond: str, human: HumanModel, traj: RobotTrajectory,
              zone: SafetyZoneConfig, jet: JetModel, perception: PerceptionModel,
              latency: StageLatencyModel, duration_s: float, seed: int,
              tick_ms: float = 10.0, duty_on: float = 100.0,
              record_hand: bool = False) -> DistanceTrace:
    """Simulate one trial; bit-identical for identical arguments."""
    if cond not in CONDITIONS:
        raise ValueError(f"condition must be one of {CONDITIONS}, got {cond!r}")
    if duration_s <= 0.0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    if tick_ms <= 0.0:
        raise ValueError(f"tick must be positive, got {tick_ms}")
    if latency.capture_ms <= 0.0:
        raise ValueError("the trial simulation needs a positive frame interval")

    n = int(round(duration_s * 1000.0 / tick_ms))
    dt = tick_ms / 1000.0
    va = cond == "va"

    # Named random streams, fully pre-allocated so both conditions consume
    # identical draws regardless of which channels fire.
    streams = np.random.SeedSequence(seed).spawn(4)
    g_exc, g_event, g_felt, g_lat = (np.random.default_rng(s) for s in streams)
    exc_u = g_exc.random(n).tolist()
    n_exc_max = int(duration_s) + 16
    item_u = g_event.random(n_exc_max).tolist()
    notice_u = g_event.random(n_exc_max).tolist()
    delay_u = g_event.random(n_exc_max).tolist()
    n_frames = int(duration_s * 1000.0 / latency.capture_ms) + 8
    detect_s = (np.maximum(
        latency.detect_ms_mean + latency.detect_ms_sd * g_lat.standard_normal(n_frames),
        0.0) / 1000.0).tolist()
    felt_mult = _felt_multipliers(perception.weber, g_felt.standard_normal(n)).tolist()

    times = np.arange(n) * dt
    robot = trajectory_positions(traj, times)
    rx = robot[:, 0].tolist()
    ry = robot[:, 1].tolist()
    rz = robot[:, 2].tolist()

    out_t = np.empty(n, dtype=np.int64)
    out_d = np.empty(n)
    out_state = np.empty(n, dtype=np.uint8)
    out_duty = np.empty(n)
    hand_log = np.empty((n, 3)) if record_hand else None
    decisions: list[tuple[float, int, bool]] = []

    # Hand state.
    tray = human.task_positions[0]
    toolbox = human.task_positions[1]
    hx, hy, hz = tray
    phase = _TASK_DWELL
    task_target = toolbox
    phase_until = human.task_dwell_s
    item: Vec3 = tray
    exc_count = 0
    crossed = False
    noticed = False
    vis_at = math.inf
    air_at = math.inf
    reaction_s = human.reaction_latency_ms / 1000.0
    inf = math.inf

    # Pipeline state.
    capture_s = latency.capture_ms / 1000.0
    decide_s = latency.decide_ms / 1000.0
    transmit_s = latency.transmit_ms / 1000.0
    next_capture = 0.0
    mailbox_d: Optional[float] = None
    mailbox_t = 0.0
    detector_free = 0.0
    frame_idx = 0
    dec_state = SafetyState.SAFE
    live_state = 0
    pending: deque = deque()

    # Actuator first-order response; rise time is to 90% of target.
    tau = latency.actuator_rise_ms / 1000.0 / math.log(10.0)
    alpha = 1.0 - math.exp(-dt / tau) if tau > 0.0 else 1.0
    duty = 0.0
    duty_target = 0.0

    # Jet constants for the felt-pressure check.
    core = jet.core_len
    detect_q = perception.detect_q
    had = zone.had

    excursion_p = human.excursion_rate * dt

    for i in range(n):
        t = i * dt
        tx, ty, tz = rx[i], ry[i], rz[i]

        # --- hand update -------------------------------------------------
        if phase == _TASK_DWELL:
            if t >= phase_until:
                phase = _TASK_MOVE
        elif phase == _GRAB:
            if t >= phase_until:
                phase = _RETURN
        else:
            if phase == _TASK_MOVE:
                gx, gy, gz = task_target
                speed = human.task_speed
            elif phase == _REACH:
                gx, gy, gz = item
                speed = human.reach_speed
            elif phase == _RETURN:
                gx, gy, gz = tray
                speed = human.reach_speed
            else:  # _RETREAT
                gx, gy, gz = tray
                speed = human.retreat_speed
            mx, my, mz = gx - hx, gy - hy, gz - hz
            dist_goal = math.sqrt(mx * mx + my * my + mz * mz)
            step_len = speed * dt
            if dist_goal <= step_len:
                hx, hy, hz = gx, gy, gz
                if phase == _TASK_MOVE:
                    phase = _TASK_DWELL
                    phase_until = t + human.task_dwell_s
                    task_target = toolbox if task_target is tray else tray
                elif phase == _REACH:
                    phase = _GRAB
                    phase_until = t + human.grab_dwell_s
                else:  # _RETURN or _RETREAT arrived at the tray
                    phase = _TASK_DWELL
                    phase_until = t + human.task_dwell_s
                    task_target = toolbox
            else:
                f = step_len / dist_goal
                hx += mx * f
                hy += my * f
                hz += mz * f

        # Excursion kick-off from the task loop.
        if phase <= 1 and exc_count < n_exc_max and exc_u[i] < excursion_p:
            ux, uy, uz = hx - tx, hy - ty, hz - tz
            un = math.sqrt(ux * ux + uy * uy + uz * uz)
            if un > 1e-9:  # degenerate hand-on-TCP geometry: no direction to reach
                e = exc_count
                exc_count += 1
                d_item = human.item_near_m + (human.item_far_m - human.item_near_m) * item_u[e]
                item = (tx + ux / un * d_item, ty + uy / un * d_item, tz + uz / un * d_item)
                noticed = notice_u[e] < human.attention_p
                vis_at = inf
                air_at = inf
                crossed = False
                phase = _REACH

        dx, dy, dz = hx - tx, hy - ty, hz - tz
        d = math.sqrt(dx * dx + dy * dy + dz * dz)

        # --- tracking and decision pipeline ------------------------------
        while next_capture <= t:
            # Freshest frame wins; older unprocessed frames are dropped. The
            # frame keeps its nominal capture time so the decision chain runs
            # in continuous time, one tick-grid snapshot of the distance.
            mailbox_d = d
            mailbox_t = next_capture
            next_capture += capture_s
        if mailbox_d is not None and t >= detector_free:
            done = max(mailbox_t, detector_free) + detect_s[frame_idx]
            frame_idx += 1
            decision = step(dec_state, mailbox_d, zone, timestamp_ms=(done + decide_s) * 1000.0)
            dec_state = decision.state
            cmd_t = done + decide_s + transmit_s
            pending.append((cmd_t, int(decision.state), decision.actuate))
            decisions.append((cmd_t * 1000.0, int(decision.state), decision.actuate))
            detector_free = done
            mailbox_d = None
        while pending and pending[0][0] <= t:
            _, live_state, actuate = pending.popleft()
            duty_target = duty_on if actuate else 0.0

        duty += (duty_target - duty) * alpha

        # --- feedback channels -------------------------------------------
        if 2 <= phase <= 4:  # reaching, grabbing, or returning near the robot
            if not crossed and d <= had:
                crossed = True
                if noticed:
                    vis_at = t + delay_u[exc_count - 1] * human.notice_delay_max_s + reaction_s
            if va and air_at == inf and duty > 0.0:
                v_ax = jet.v0 * (duty / 100.0)
                if d > core:
                    v_ax *= core / d
                felt = 0.5 * AIR_DENSITY_KG_M3 * v_ax * v_ax * felt_mult[i]
                if felt >= detect_q:
                    air_at = t + reaction_s
            if t >= vis_at or t >= air_at:
                phase = _RETREAT
                vis_at = inf
                air_at = inf

        out_t[i] = round(t * 1000.0)
        out_d[i] = d
        out_state[i] = live_state
        out_duty[i] = duty
        if record_hand:
            hand_log[i, 0] = hx
            hand_log[i, 1] = hy
            hand_log[i, 2] = hz

    return DistanceTrace(t_ms=out_t, dist_m=out_d, state=out_state,
                         duty_pct=out_duty, condition=cond, seed=seed,
                         decisions=decisions, hand_xyz=hand_log)


# ---------------------------------------------------------------------------
# Trial-set analysis
# ---------------------------------------------------------------------------

@dataclass
class TrialReport:
    """Per-condition summary of matched below-HAD means plus test results."""

    n_pairs: int
    v_mean: float
    v_sd: float
    va_mean: float
    va_sd: float
    mean_diff_va_minus_v: float
    v_shapiro: Optional[stats.TestResult] = None
    va_shapiro: Optional[stats.TestResult] = None
    t_test: Optional[stats.TestResult] = None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        def tr(r: Optional[stats.TestResult]) -> Optional[dict]:
            if r is None:
                return None
            d = {"statistic": r.statistic, "p_value": r.p_value}
            if r.df is not None:
                d["df"] = r.df
            return d

        return {
            "n_pairs": self.n_pairs,
            "v": {"mean": self.v_mean, "sd": self.v_sd, "shapiro": tr(self.v_shapiro)},
            "va": {"mean": self.va_mean, "sd": self.va_sd, "shapiro": tr(self.va_shapiro)},
            "paired_t": tr(self.t_test),
            "mean_diff_va_minus_v": self.mean_diff_va_minus_v,
            "warnings": list(self.warnings),
        }


def analyze_pairs(v_means: Sequence[float], va_means: Sequence[float]) -> TrialReport:
    """Statistics over matched per-trial below-HAD means.

    The paired t-test is computed on V - VA differences, so a higher VA
    separation shows up as a negative statistic.
    """
    if len(v_means) != len(va_means):
        raise stats.LengthMismatch("conditions have different pair counts")
    if len(v_means) < 2:
        raise ValueError("need at least 2 matched pairs")
    warnings: list[str] = []
    v_mean, v_sd = stats.summarize(v_means)
    va_mean, va_sd = stats.summarize(va_means)

    def try_shapiro(x: Sequence[float], label: str) -> Optional[stats.TestResult]:
        try:
            return stats.shapiro_wilk(x)
        except (stats.SampleTooSmall, stats.ConstantSample) as exc:
            warnings.append(f"shapiro[{label}]: {exc}")
            return None

    t_test = None
    try:
        t_test = stats.paired_t(v_means, va_means)
    except stats.ZeroVarianceDifferences as exc:
        warnings.append(f"paired_t: {exc}")
    return TrialReport(
        n_pairs=len(v_means),
        v_mean=v_mean, v_sd=v_sd or 0.0,
        va_mean=va_mean, va_sd=va_sd or 0.0,
        mean_diff_va_minus_v=va_mean - v_mean,
        v_shapiro=try_shapiro(v_means, "v"),
        va_shapiro=try_shapiro(va_means, "va"),
        t_test=t_test,
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationTargets:
    v_mean: float = 0.307
    va_mean: float = 0.326
    err_near: float = 0.035  # mean |error| at the near reference distance
    err_far: float = 0.051  # at the far reference distance
    near_x: float = 0.25
    far_x: float = 0.35
    tol_mean: float = 0.005
    tol_err_near: float = 0.005
    tol_err_far: float = 0.010


@dataclass
class CalibrationResult:
    human: HumanModel
    perception: PerceptionModel
    residuals: dict[str, float]
    evaluations: int
    converged: bool


_SEARCH_SPACE = {
    "weber": (0.02, 0.8),
    "attention_p": (0.0, 1.0),
    "excursion_rate": (0.02, 0.20),
    "retreat_speed": (0.25, 1.2),
}


def calibrate(targets: CalibrationTargets, budget: int, *,
              human: HumanModel | None = None,
              perception: PerceptionModel | None = None,
              jet: JetModel | None = None,
              zone: SafetyZoneConfig | None = None,
              traj: RobotTrajectory | None = None,
              latency: StageLatencyModel | None = None,
              trials_per_eval: int = 12, trial_duration_s: float = 120.0,
              mc_samples: int = 20_000, seed: int = 0) -> CalibrationResult:
    """Coordinate-descent fit of the free behavior/perception parameters.

    One evaluation simulates ``trials_per_eval`` matched trial pairs plus
    the two perception Monte-Carlo runs on fixed seeds (common random
    numbers), and scores squared deviations from the targets. Raises
    CalibrationFailed when the budget runs out before all targets sit
    within their tolerances.
    """
    if budget < 1:
        raise CalibrationFailed("evaluation budget is zero")
    human = human or HumanModel()
    perception = perception or PerceptionModel()
    jet = jet or JetModel()
    zone = zone or SafetyZoneConfig()
    traj = traj or default_trajectory()
    latency = latency or StageLatencyModel()

    evals = 0

    def residuals_for(params: dict[str, float]) -> dict[str, float]:
        nonlocal evals
        if evals >= budget:
            raise _BudgetExhausted()
        evals += 1
        pm = PerceptionModel(weber=params["weber"], detect_q=perception.detect_q)
        hm = replace(human, attention_p=params["attention_p"],
                     excursion_rate=params["excursion_rate"],
                     retreat_speed=params["retreat_speed"])
        err_near = float(np.mean(np.abs(perception_errors(
            pm, jet, 100.0, targets.near_x, mc_samples, seed + 90001))))
        err_far = float(np.mean(np.abs(perception_errors(
            pm, jet, 100.0, targets.far_x, mc_samples, seed + 90002))))
        v_vals, va_vals = [], []
        for j in range(trials_per_eval):
            s = seed + 1000 + j
            pair = {}
            for cond in CONDITIONS:
                trace = run_trial(cond, hm, traj, zone, jet, pm, latency,
                                  trial_duration_s, s)
                try:
                    pair[cond] = below_had_mean(trace, zone)
                except NoExposure:
                    pair[cond] = None
            # A pair without exposure carries no information about the
            # below-HAD statistic; dropping it keeps the estimate unbiased.
            if pair["v"] is not None and pair["va"] is not None:
                v_vals.append(pair["v"])
                va_vals.append(pair["va"])
        if len(v_vals) < max(2, trials_per_eval // 2):
            return {"v_mean": math.inf, "va_mean": math.inf,
                    "err_near": err_near - targets.err_near,
                    "err_far": err_far - targets.err_far}
        return {
            "v_mean": float(np.mean(v_vals)) - targets.v_mean,
            "va_mean": float(np.mean(va_vals)) - targets.va_mean,
            "err_near": err_near - targets.err_near,
            "err_far": err_far - targets.err_far,
        }

    def score(res: dict[str, float]) -> float:
        return (res["v_mean"] ** 2 + res["va_mean"] ** 2
                + res["err_near"] ** 2 + 0.25 * res["err_far"] ** 2)

    def within_tol(res: dict[str, float]) -> bool:
        return (abs(res["v_mean"]) <= targets.tol_mean
                and abs(res["va_mean"]) <= targets.tol_mean
                and abs(res["err_near"]) <= targets.tol_err_near
                and abs(res["err_far"]) <= targets.tol_err_far)

    params = {
        "weber": perception.weber,
        "attention_p": human.attention_p,
        "excursion_rate": human.excursion_rate,
        "retreat_speed": human.retreat_speed,
    }
    best_res: dict[str, float] | None = None
    best_score = math.inf
    converged = False
    try:
        best_res = residuals_for(params)
        best_score = score(best_res)
        converged = within_tol(best_res)
        passes = 0
        while not converged and passes < 6:
            improved = False
            for name, (lo, hi) in _SEARCH_SPACE.items():
                span = (hi - lo) / (2 ** (passes + 2))
                for cand in (params[name] - span, params[name] + span):
                    cand = min(max(cand, lo), hi)
                    if cand == params[name]:
                        continue
                    trial_params = dict(params, **{name: cand})
                    res = residuals_for(trial_params)
                    s = score(res)
                    if s < best_score:
                        best_score, best_res, params = s, res, trial_params
                        improved = True
                        if within_tol(res):
                            converged = True
                            break
                if converged:
                    break
            if converged:
                break
            if not improved:
                passes += 1
    except _BudgetExhausted:
        pass

    if best_res is None or not converged:
        detail = "" if best_res is None else f" (best residuals {best_res})"
        raise CalibrationFailed(
            f"targets not met after {evals} of {budget} evaluations{detail}")
    return CalibrationResult(
        human=replace(human, attention_p=params["attention_p"],
                      excursion_rate=params["excursion_rate"],
                      retreat_speed=params["retreat_speed"]),
        perception=PerceptionModel(weber=params["weber"], detect_q=perception.detect_q),
        residuals=best_res,
        evaluations=evals,
        converged=converged,
    )


class _BudgetExhausted(Exception):
    pass
