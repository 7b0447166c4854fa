"""Command-line front end.

Subcommands: simulate (seeded trial traces), analyze (statistics over a
trace directory), perceive (airflow distance-perception Monte Carlo),
calibrate (fit free model parameters to targets), posecheck (pose
round-trip accuracy), codec-check (exhaustive wire-frame sweep).

Exit codes: 0 success, 2 usage/config error, 3 I/O error, 4 calibration or
analysis failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import airflow, geometry, sim, wire
from .config import ConfigError, RunConfig, config_hash, load_config
from .sim import CalibrationFailed, CalibrationTargets

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_ANALYSIS = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airshield",
        description="Airflow safety barrier simulation and analysis toolkit",
    )
    parser.add_argument("--config", metavar="PATH", default=None,
                        help="JSON config file")
    parser.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        dest="overrides", help="dotted-key config override, repeatable")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run seeded interaction trials")
    p.add_argument("--condition", choices=["v", "va", "both"], default="both")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=None, metavar="SEC")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("analyze", help="statistics over a trace directory")
    p.add_argument("--in", dest="in_dir", required=True, metavar="DIR")
    p.add_argument("--report", required=True, metavar="PATH")

    p = sub.add_parser("perceive", help="distance-perception error Monte Carlo")
    p.add_argument("--distance", type=float, required=True, metavar="M")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("calibrate", help="fit model parameters to targets")
    p.add_argument("--targets", metavar="PATH", default=None,
                   help="JSON file overriding default calibration targets")
    p.add_argument("--budget", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", metavar="PATH", default=None)

    p = sub.add_parser("posecheck", help="marker pose round-trip accuracy")
    p.add_argument("--poses", type=int, default=1000)
    p.add_argument("--noise-px", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)

    sub.add_parser("codec-check", help="exhaustive command-frame round-trip sweep")
    return parser


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args: argparse.Namespace) -> int:
    if args.trials < 1:
        raise ConfigError(f"--trials must be >= 1, got {args.trials}")
    duration = args.duration if args.duration is not None else cfg.duration_s
    if duration <= 0.0:
        raise ConfigError(f"--duration must be positive, got {duration}")
    conditions = sim.CONDITIONS if args.condition == "both" else (args.condition,)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"config_sha256": config_hash(cfg), "trials": []}
    for cond in conditions:
        for i in range(args.trials):
            seed = args.seed + i
            trace = sim.run_trial(cond, cfg.human, cfg.trajectory, cfg.safety,
                                  cfg.jet, cfg.perception, cfg.latency,
                                  duration, seed, tick_ms=cfg.tick_ms,
                                  duty_on=cfg.duty_pct)
            name = wire.trace_filename(cond, seed)
            path = out_dir / name
            path.unlink(missing_ok=True)
            wire.journal_append(path, trace.records())
            manifest["trials"].append({"file": name, "cond": cond, "seed": seed,
                                       "n_samples": len(trace)})
    manifest["trials"].sort(key=lambda t: (t["cond"], t["seed"]))
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(manifest['trials'])} trace files to {out_dir}")
    return EXIT_OK


def _below_had_from_records(records: list[dict], had: float) -> float | None:
    dist = np.array([r["dist_m"] for r in records])
    mask = dist <= had
    if not mask.any():
        return None
    return float(dist[mask].mean())


def cmd_analyze(cfg: RunConfig, args: argparse.Namespace) -> int:
    in_dir = Path(args.in_dir)
    files = sorted(in_dir.glob("trial_*.jsonl"))
    if not files:
        print(f"no trace files found in {in_dir}", file=sys.stderr)
        return EXIT_USAGE
    per_seed: dict[int, dict[str, float | None]] = defaultdict(dict)
    warnings: list[str] = []
    for path in files:
        try:
            records, truncated = wire.journal_read(path)
            if truncated:
                warnings.append(f"{path.name}: truncated trailing line ignored")
            if not records:
                warnings.append(f"{path.name}: empty trace skipped")
                continue
            cond, seed = records[0]["cond"], int(records[0]["seed"])
            per_seed[seed][cond] = _below_had_from_records(records, cfg.safety.had)
        except (wire.MalformedRecord, KeyError, TypeError, ValueError) as exc:
            warnings.append(f"{path.name}: unreadable trace skipped ({exc})")
    v_means, va_means, n_dropped = [], [], 0
    for seed in sorted(per_seed):
        pair = per_seed[seed]
        if "v" not in pair or "va" not in pair:
            n_dropped += 1
            continue
        if pair["v"] is None or pair["va"] is None:
            warnings.append(f"seed {seed}: no samples below HAD, pair dropped")
            continue
        v_means.append(pair["v"])
        va_means.append(pair["va"])
    if n_dropped:
        warnings.append(f"{n_dropped} seed(s) present in only one condition")
    if len(v_means) < 2:
        print("need at least 2 matched-seed trial pairs to analyze", file=sys.stderr)
        return EXIT_USAGE
    report = sim.analyze_pairs(v_means, va_means)
    report.warnings.extend(warnings)
    payload = report.to_dict()
    payload["config_sha256"] = config_hash(cfg)
    Path(args.report).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    t_txt = ("t=%.4f p=%.4g" % (report.t_test.statistic, report.t_test.p_value)
             if report.t_test else "t-test unavailable")
    print(f"{report.n_pairs} pairs: V {report.v_mean:.4f} m, "
          f"VA {report.va_mean:.4f} m, {t_txt}")
    return EXIT_OK


def cmd_perceive(cfg: RunConfig, args: argparse.Namespace) -> int:
    if args.samples < 1:
        raise ConfigError(f"--samples must be >= 1, got {args.samples}")
    try:
        errors = airflow.perception_errors(cfg.perception, cfg.jet, cfg.duty_pct,
                                           args.distance, args.samples, args.seed)
    except (airflow.InsidePotentialCore, airflow.ImperceptibleFlow, ValueError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    abs_err = np.abs(errors)
    print(f"distance {args.distance:.3f} m, {args.samples} samples: "
          f"mean |error| = {abs_err.mean():.4f} +/- {abs_err.std(ddof=1):.4f} m "
          f"(signed bias {errors.mean():+.4f} m)")
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig, args: argparse.Namespace) -> int:
    target_kv = {}
    if args.targets:
        try:
            target_kv = json.loads(Path(args.targets).read_text(encoding="utf-8"))
        except OSError as exc:
            raise wire.IoFailure(f"cannot read targets file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"targets file is not valid JSON: {exc}") from exc
        unknown = set(target_kv) - {f.name for f in
                                    CalibrationTargets.__dataclass_fields__.values()}
        if unknown:
            raise ConfigError(f"unknown target keys: {', '.join(sorted(unknown))}")
    targets = CalibrationTargets(**target_kv)
    result = sim.calibrate(targets, args.budget, human=cfg.human,
                           perception=cfg.perception, jet=cfg.jet,
                           zone=cfg.safety, traj=cfg.trajectory,
                           latency=cfg.latency, seed=args.seed)
    fitted = {
        "perception.weber": result.perception.weber,
        "sim.attention_p": result.human.attention_p,
        "sim.excursion_rate_hz": result.human.excursion_rate,
        "sim.retreat_speed_mps": result.human.retreat_speed,
    }
    payload = {"fitted": fitted, "residuals": result.residuals,
               "evaluations": result.evaluations}
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_posecheck(cfg: RunConfig, args: argparse.Namespace) -> int:
    if args.poses < 1:
        raise ConfigError(f"--poses must be >= 1, got {args.poses}")
    rng = np.random.default_rng(args.seed)
    cam = geometry.CameraIntrinsics()
    marker = geometry.MarkerSpec(side_len=0.10)
    rot_errs, trans_errs = [], []
    for _ in range(args.poses):
        pose = _random_pose(rng)
        obs = geometry.observe(pose, marker, cam, noise_px=args.noise_px, rng=rng)
        est = geometry.estimate_pose(obs, marker, cam)
        rot_errs.append(geometry.rotation_geodesic_rad(est.rotation, pose.rotation))
        trans_errs.append(float(np.linalg.norm(est.translation - pose.translation)))
    rot = np.array(rot_errs)
    trans = np.array(trans_errs)
    print(f"{args.poses} poses, noise {args.noise_px} px: "
          f"rotation max {rot.max():.3e} rad (median {np.median(rot):.3e}), "
          f"translation max {trans.max():.3e} m (median {np.median(trans):.3e})")
    return EXIT_OK


def _random_pose(rng: np.random.Generator, z_range: tuple[float, float] = (0.3, 2.0),
                 max_tilt_rad: float = 0.6) -> geometry.MarkerPose:
    """Marker pose facing the camera, inside a generous viewing frustum."""
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_tilt_rad)
    k = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    rot = np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)
    z = rng.uniform(*z_range)
    t = np.array([rng.uniform(-0.3, 0.3) * z, rng.uniform(-0.25, 0.25) * z, z])
    return geometry.MarkerPose(rotation=rot, translation=t)


def cmd_codec_check(_cfg: RunConfig, _args: argparse.Namespace) -> int:
    count = 0
    for opcode in wire.Opcode:
        for payload in range(wire.MAX_PAYLOAD + 1):
            for seq in range(256):
                frame = wire.CommandFrame(seq=seq, opcode=opcode, payload=payload)
                if wire.decode(encoded := wire.encode(frame)) != frame:
                    print(f"round-trip mismatch for {encoded.hex()}", file=sys.stderr)
                    return 1
                count += 1
    print(f"{count:,} frames OK")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "perceive": cmd_perceive,
    "calibrate": cmd_calibrate,
    "posecheck": cmd_posecheck,
    "codec-check": cmd_codec_check,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CalibrationFailed as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except (wire.IoFailure, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
