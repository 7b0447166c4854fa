"""Proximity safety state machine with hysteresis.

Distances at or below the danger threshold classify DANGER, distances at or
below the haptic activation distance (HAD) classify ACTIVE, everything else
is SAFE. Boundary values go to the more severe state (fail-safe bias).
De-escalation requires clearing the threshold by the hysteresis margin so a
noisy distance estimate hovering at a boundary cannot chatter the actuator.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

__all__ = [
    "NegativeDistance",
    "SafetyState",
    "SafetyZoneConfig",
    "SafetyDecision",
    "classify",
    "step",
]


class NegativeDistance(ValueError):
    pass


class SafetyState(IntEnum):
    """Severity-ordered so comparisons read naturally (SAFE < ACTIVE < DANGER)."""

    SAFE = 0
    ACTIVE = 1
    DANGER = 2


@dataclass(frozen=True)
class SafetyZoneConfig:
    had: float = 0.35
    danger: float = 0.25
    hysteresis: float = 0.01

    def __post_init__(self) -> None:
        if not 0.0 < self.danger < self.had:
            raise ValueError(f"need 0 < danger < had, got danger={self.danger}, had={self.had}")
        if not 0.0 <= self.hysteresis < (self.had - self.danger) / 2.0:
            raise ValueError(
                f"hysteresis must be in [0, (had - danger)/2), got {self.hysteresis}"
            )


@dataclass(frozen=True)
class SafetyDecision:
    state: SafetyState
    actuate: bool
    distance: float
    timestamp_ms: float = 0.0


def classify(d: float, cfg: SafetyZoneConfig) -> SafetyState:
    """Memoryless threshold classification (no hysteresis)."""
    if d < 0.0:
        raise NegativeDistance(f"distance must be non-negative, got {d}")
    if d <= cfg.danger:
        return SafetyState.DANGER
    if d <= cfg.had:
        return SafetyState.ACTIVE
    return SafetyState.SAFE


def step(prev: SafetyState, d: float, cfg: SafetyZoneConfig,
         timestamp_ms: float = 0.0) -> SafetyDecision:
    """One transition of the state machine.

    Escalation is immediate; de-escalation must clear the threshold plus the
    hysteresis margin. Callers must serialize calls per tracked marker.
    """
    if d < 0.0:
        raise NegativeDistance(f"distance must be non-negative, got {d}")
    if prev is SafetyState.DANGER and d <= cfg.danger + cfg.hysteresis:
        state = SafetyState.DANGER
    elif d <= cfg.danger:
        state = SafetyState.DANGER
    elif prev is not SafetyState.SAFE and d <= cfg.had + cfg.hysteresis:
        state = SafetyState.ACTIVE
    elif d <= cfg.had:
        state = SafetyState.ACTIVE
    else:
        state = SafetyState.SAFE
    return SafetyDecision(state=state, actuate=state is not SafetyState.SAFE,
                          distance=d, timestamp_ms=timestamp_ms)
