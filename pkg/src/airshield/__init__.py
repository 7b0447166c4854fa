"""Airflow safety barrier toolkit for human-robot collaboration.

Subsystems: marker pose geometry, the proximity safety state machine, the
impeller jet and perception models, the latency-modeled decision pipeline,
a seeded interaction simulator, a self-contained statistics kernel, and the
actuator wire codec with JSON-lines telemetry.
"""

__version__ = "0.1.0"
