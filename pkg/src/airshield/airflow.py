"""Impeller jet model and airflow-based distance perception.

The ducted-fan jet is modeled as a classical round free jet: exit velocity
is held over a potential core of length ``core_k * duct_d`` and decays as
1/x beyond it. Thrust scales linearly with the commanded duty cycle.

Distance perception works by feel of dynamic pressure: the felt pressure is
the true pressure corrupted by multiplicative discrimination noise (a Weber
fraction), and the felt value is inverted through the jet law back to a
distance estimate. Perception therefore only works beyond the potential
core, where pressure actually varies with distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AIR_DENSITY_KG_M3",
    "DEFAULT_WEBER",
    "ImperceptibleFlow",
    "InsidePotentialCore",
    "ImpellerCommand",
    "JetModel",
    "PerceptionModel",
    "quantize_duty",
    "jet_velocity",
    "dynamic_pressure",
    "pressure_to_distance",
    "max_perceptible_range",
    "perceived_distance",
    "perception_errors",
    "calibrate_weber",
]

AIR_DENSITY_KG_M3 = 1.225

# Weber fraction fitted so the simulated mean absolute perception error at
# 0.25 m equals 0.035 m (see calibrate_weber); the 0.35 m behavior is then a
# prediction of the model, not a fit.
DEFAULT_WEBER = 0.301155

# Discrimination noise is truncated at +/-3 sigma and the felt-pressure
# multiplier floored at 0.04: an unbounded Normal would occasionally produce
# non-positive felt pressure, which has no inverse distance.
_NOISE_CLIP_SIGMA = 3.0
_MULTIPLIER_FLOOR = 0.04

_DUTY_STEP = 0.5


class ImperceptibleFlow(ValueError):
    pass


class InsidePotentialCore(ValueError):
    pass


def quantize_duty(duty: float) -> float:
    """Clamp to [0, 100] and snap to the 0.5% command resolution."""
    clamped = min(max(duty, 0.0), 100.0)
    return round(clamped / _DUTY_STEP) * _DUTY_STEP


@dataclass(frozen=True)
class ImpellerCommand:
    duty: float
    timestamp_ms: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.duty <= 100.0:
            raise ValueError(f"duty must be in [0, 100], got {self.duty}")
        if abs(self.duty / _DUTY_STEP - round(self.duty / _DUTY_STEP)) > 1e-9:
            raise ValueError(f"duty must be quantized to {_DUTY_STEP}% steps, got {self.duty}")


@dataclass(frozen=True)
class JetModel:
    v0: float = 25.0
    duct_d: float = 0.064
    core_k: float = 3.0

    def __post_init__(self) -> None:
        if self.v0 <= 0.0 or self.duct_d <= 0.0 or self.core_k <= 0.0:
            raise ValueError("jet parameters must be positive")

    @property
    def core_len(self) -> float:
        return self.core_k * self.duct_d


@dataclass(frozen=True)
class PerceptionModel:
    weber: float = DEFAULT_WEBER
    detect_q: float = 0.5

    def __post_init__(self) -> None:
        if self.weber < 0.0:
            raise ValueError(f"weber fraction must be >= 0, got {self.weber}")
        if self.detect_q <= 0.0:
            raise ValueError(f"detection threshold must be positive, got {self.detect_q}")


def jet_velocity(jm: JetModel, duty: float, x: float) -> float:
    """Axial jet velocity at distance x from the duct exit."""
    if x < 0.0:
        raise ValueError(f"distance must be non-negative, got {x}")
    v_exit = jm.v0 * (duty / 100.0)
    if x <= jm.core_len:
        return v_exit
    return v_exit * jm.core_len / x


def dynamic_pressure(jm: JetModel, duty: float, x: float) -> float:
    """Dynamic pressure q = rho/2 * v^2 at distance x, in Pa."""
    v = jet_velocity(jm, duty, x)
    return 0.5 * AIR_DENSITY_KG_M3 * v * v


def pressure_to_distance(jm: JetModel, duty: float, q: float) -> float:
    """Invert the decay-region jet law: the distance where pressure equals q.

    Pressures at or above the core value map to the core boundary (the law
    is flat inside the core, so no finer answer exists).
    """
    if q <= 0.0:
        raise ValueError(f"pressure must be positive, got {q}")
    v_exit = jm.v0 * (duty / 100.0)
    if v_exit <= 0.0:
        raise ValueError("duty must be positive to invert the jet law")
    v = math.sqrt(2.0 * q / AIR_DENSITY_KG_M3)
    if v >= v_exit:
        return jm.core_len
    return v_exit * jm.core_len / v


def max_perceptible_range(pm: PerceptionModel, jm: JetModel, duty: float) -> float:
    """Distance at which dynamic pressure falls to the detection threshold."""
    return pressure_to_distance(jm, duty, pm.detect_q)


def _felt_multipliers(weber: float, z: np.ndarray) -> np.ndarray:
    eps = weber * np.clip(z, -_NOISE_CLIP_SIGMA, _NOISE_CLIP_SIGMA)
    return np.maximum(1.0 + eps, _MULTIPLIER_FLOOR)


def _invert_felt(pm: PerceptionModel, jm: JetModel, duty: float,
                 q_felt: np.ndarray) -> np.ndarray:
    """Vectorized inverse of the jet law with core and range clamps."""
    v_exit = jm.v0 * (duty / 100.0)
    q_core = 0.5 * AIR_DENSITY_KG_M3 * v_exit * v_exit
    x_max = max_perceptible_range(pm, jm, duty)
    q_eff = np.clip(q_felt, pm.detect_q, q_core)
    v = np.sqrt(2.0 * q_eff / AIR_DENSITY_KG_M3)
    return np.clip(v_exit * jm.core_len / v, jm.core_len, x_max)


def _check_perceivable(pm: PerceptionModel, jm: JetModel, duty: float, true_x: float) -> float:
    if duty <= 0.0:
        raise ImperceptibleFlow("no airflow at zero duty")
    if true_x <= jm.core_len:
        raise InsidePotentialCore(
            f"distance {true_x} m is inside the potential core ({jm.core_len:.3f} m); "
            "pressure carries no distance information there"
        )
    q = dynamic_pressure(jm, duty, true_x)
    if q < pm.detect_q:
        raise ImperceptibleFlow(
            f"dynamic pressure {q:.3g} Pa at {true_x} m is below the "
            f"detection threshold {pm.detect_q} Pa"
        )
    return q


def perceived_distance(pm: PerceptionModel, jm: JetModel, duty: float,
                       true_x: float, rng: np.random.Generator | int) -> float:
    """One noisy distance estimate from felt dynamic pressure.

    Draws exactly one standard normal from ``rng``; with weber = 0 the
    estimate equals ``true_x`` exactly.
    """
    q = _check_perceivable(pm, jm, duty, true_x)
    if pm.weber == 0.0:
        return true_x
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    z = rng.standard_normal(1)
    q_felt = q * _felt_multipliers(pm.weber, z)
    return float(_invert_felt(pm, jm, duty, q_felt)[0])


def perception_errors(pm: PerceptionModel, jm: JetModel, duty: float,
                      true_x: float, n: int, seed: int) -> np.ndarray:
    """Signed estimation errors (estimate - true) for n seeded samples.

    Consumes the same noise stream as n sequential perceived_distance calls
    on a generator seeded identically.
    """
    if n < 1:
        raise ValueError(f"need at least one sample, got {n}")
    q = _check_perceivable(pm, jm, duty, true_x)
    if pm.weber == 0.0:
        return np.zeros(n)
    rng = np.random.default_rng(seed)
    q_felt = q * _felt_multipliers(pm.weber, rng.standard_normal(n))
    return _invert_felt(pm, jm, duty, q_felt) - true_x


def calibrate_weber(jm: JetModel | None = None, duty: float = 100.0,
                    distance: float = 0.25, target_abs_err: float = 0.035,
                    detect_q: float = 0.5, n: int = 200_000,
                    seed: int = 3721, tol: float = 1e-5) -> float:
    """Fit the Weber fraction by bisection on the simulated mean |error|.

    Mean absolute error is monotone increasing in the Weber fraction, so a
    plain bisection on a fixed noise seed converges to the fraction whose
    simulated error at ``distance`` matches ``target_abs_err``.
    """
    jm = jm or JetModel()

    def mean_abs_err(weber: float) -> float:
        pm = PerceptionModel(weber=weber, detect_q=detect_q)
        return float(np.mean(np.abs(perception_errors(pm, jm, duty, distance, n, seed))))

    lo, hi = 1e-6, 1.5
    if mean_abs_err(hi) < target_abs_err:
        raise ValueError("target error is not reachable within the search bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mean_abs_err(mid) < target_abs_err:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
