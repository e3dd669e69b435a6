"""
Command-line interface.

    gdgen gen-data --kind two_cube_hinge --points 2000 --frames 40 --dt 0.04 --out scenes/hinge
    gdgen train    --scene scenes/hinge --config train.json --out runs/hinge
    gdgen simulate --checkpoint runs/hinge/checkpoint.json --sim-config sim.json --out runs/hinge/sim
    gdgen eval     --pred runs/hinge/sim --ref scenes/hinge --metric chamfer
    gdgen oracle   --out tests/fixtures/energy_golden.csv

Exit codes: 0 success, 2 config or usage error, 3 data or checkpoint error,
4 numeric failure. `--dry-run` validates every input and writes nothing.
"""

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from config.settings import DEFAULT_SEED, SCENE_KINDS
from .core.configs import SimConfig, TrainConfig
from .core.data_models import TrajectoryDataset
from .core.exceptions import (
    CheckpointError,
    ConfigError,
    ContractViolation,
    GdgenError,
    NumericFailure,
    SceneParseError,
    TrainingAborted,
)
from .core.geometry import chamfer_distance, l2_trajectory_distance
from .core.simulation import fields_from_checkpoint, initial_handles, simulate
from .core.training import train
from .scenes import create_scene_generator
from .services.checkpoint_store import export_E_csv, load_checkpoint, rest_geometry, save_checkpoint
from .services.oracle import generate_energy_golden, write_golden
from .services.run_recorder import RunRecorder
from .services.scene_store import load_scene, save_scene
from .utils.logging import log_with_timestamp

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

CHECKPOINT_FILE = "checkpoint.json"
MATERIAL_FIELD_FILE = "material_field.csv"
TRAIN_REPORT_FILE = "train_report.json"
SIMULATION_FAILURE_FILE = "failure.json"


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, (SceneParseError, CheckpointError, ContractViolation)):
        return EXIT_DATA
    if isinstance(error, (NumericFailure, TrainingAborted)):
        return EXIT_NUMERIC
    return EXIT_ERROR


def seed_override() -> Optional[int]:
    """GDG_SEED from the environment, read at call time."""
    raw = os.getenv("GDG_SEED")
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError("seed", f"GDG_SEED must be an integer, got {raw!r}")


def load_json_config(path: Optional[str], field: str) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(field, f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(field, f"invalid JSON in {path} at line {e.lineno}: {e.msg}")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(field, f"cannot read {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(field, "config must be a JSON object")
    return data


# Commands


def cmd_gen_data(args) -> int:
    seed = seed_override()
    params = {
        "num_points": args.points,
        "num_frames": args.frames,
        "dt": args.dt,
        "motion": args.motion,
        "total_volume": args.total_volume,
        "density": args.density,
        "seed": seed if seed is not None else args.seed,
    }
    if args.segments is not None:
        params["segments"] = args.segments
    if args.clusters is not None:
        params["clusters"] = args.clusters
    params = {k: v for k, v in params.items() if v is not None}

    generator = create_scene_generator(args.kind, **params)
    if args.dry_run:
        log_with_timestamp(f"✓ Dry run: scene '{args.kind}' parameters are valid, nothing written")
        return EXIT_OK

    geom, data = generator.generate()
    recorder = RunRecorder(args.out)
    manifest_path = save_scene(
        args.out, geom, data, name=args.kind, extra={"generator": generator.describe()}
    )
    recorder.register(manifest_path)
    recorder.write_manifest("gen-data", generator.describe(), generator.seed, {})
    return EXIT_OK


def cmd_train(args) -> int:
    geom, data = load_scene(args.scene)
    raw = load_json_config(args.config, "config")
    if data.is_empty and "mode" not in raw:
        raw["mode"] = "no_observation"
    seed = seed_override()
    if seed is not None:
        raw["seed"] = seed
    config = TrainConfig.from_dict(raw)
    data.check_against(geom)

    if args.dry_run:
        log_with_timestamp(
            f"✓ Dry run: scene with {geom.num_points} points and config are valid, nothing written"
        )
        return EXIT_OK

    out = Path(args.out)
    recorder = RunRecorder(out)
    checkpoint, report = train(config, geom, data, recorder=recorder, out_dir=out)
    checkpoint.metadata["scene"] = str(args.scene)

    checkpoint_path = save_checkpoint(out / CHECKPOINT_FILE, checkpoint)
    report.checkpoint_path = str(checkpoint_path)
    recorder.register(checkpoint_path)
    recorder.register(export_E_csv(out / MATERIAL_FIELD_FILE, checkpoint.params["E"]))
    recorder.write_json(TRAIN_REPORT_FILE, report.to_dict())
    inputs = {"scene": args.scene}
    if args.config is not None:
        inputs["config"] = args.config
    recorder.write_manifest("train", config.to_dict(), config.seed, inputs)
    return EXIT_OK


def cmd_simulate(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    geom = load_scene(args.scene)[0] if args.scene else rest_geometry(checkpoint)
    raw = load_json_config(args.sim_config, "sim_config")
    cfg = SimConfig.from_dict(raw)
    fields_from_checkpoint(checkpoint, geom)
    initial_handles(checkpoint, cfg)
    seed = seed_override()
    seed = seed if seed is not None else checkpoint.metadata.get("seed", DEFAULT_SEED)

    if args.dry_run:
        log_with_timestamp("✓ Dry run: checkpoint and simulation config are valid, nothing written")
        return EXIT_OK

    out = Path(args.out)
    recorder = RunRecorder(out)
    result = simulate(checkpoint, geom, cfg)
    for diag in result.diagnostics:
        recorder.append_diagnostics(diag.to_dict())
    if len(result.trajectory) >= 2:
        trajectory = TrajectoryDataset([result.trajectory], [True], cfg.dt)
        recorder.register(save_scene(out, geom, trajectory, name="simulation"))
    if result.failure is not None:
        recorder.write_json(SIMULATION_FAILURE_FILE, result.failure)

    inputs = {"checkpoint": args.checkpoint}
    if args.sim_config is not None:
        inputs["sim_config"] = args.sim_config
    if args.scene is not None:
        inputs["scene"] = args.scene
    recorder.write_manifest("simulate", cfg.to_dict(), seed, inputs)

    if result.failure is not None:
        failure = result.failure
        raise NumericFailure(
            failure["op"], "simulation aborted", term=failure["term"], frame=failure["frame"]
        )
    return EXIT_OK


def evaluate(pred: np.ndarray, ref: np.ndarray, metric: str) -> Dict[str, Any]:
    """Per-frame and mean metric between two (T, N, 3) trajectories."""
    if pred.shape[0] != ref.shape[0]:
        raise ContractViolation(f"frame counts differ: {pred.shape[0]} vs {ref.shape[0]}")
    if metric == "chamfer":
        per_frame = [chamfer_distance(pred[t], ref[t]) for t in range(pred.shape[0])]
    elif metric == "l2":
        per_frame = [l2_trajectory_distance(pred[t : t + 1], ref[t : t + 1]) for t in range(pred.shape[0])]
    else:
        raise ContractViolation(f"unknown metric: {metric}")
    return {"metric": metric, "per_frame": per_frame, "mean": float(np.mean(per_frame))}


def _first_trajectory(path: str) -> np.ndarray:
    _, data = load_scene(path)
    if data.is_empty:
        raise SceneParseError(path, "scene has no trajectory to evaluate")
    return data.trajectories[0]


def cmd_eval(args) -> int:
    pred = _first_trajectory(args.pred)
    ref = _first_trajectory(args.ref)
    if pred.shape[0] != ref.shape[0]:
        raise ContractViolation(f"frame counts differ: {pred.shape[0]} vs {ref.shape[0]}")
    if args.dry_run:
        log_with_timestamp(f"✓ Dry run: {pred.shape[0]} frames in both trajectories, nothing written")
        return EXIT_OK

    result = evaluate(pred, ref, args.metric)
    print(json.dumps(result))
    sys.stdout.flush()
    frames = len(result["per_frame"])
    log_with_timestamp(f"📊 Eval: mean {args.metric} over {frames} frames = {result['mean']:.6g}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.count < 1:
        raise ConfigError("count", f"must be at least 1, got {args.count}")
    seed = seed_override()
    seed = seed if seed is not None else args.seed
    if args.dry_run:
        log_with_timestamp(f"✓ Dry run: would write {args.count} golden rows to {args.out}")
        return EXIT_OK
    table = generate_energy_golden(np.random.default_rng(seed), args.count, args.corrected)
    write_golden(args.out, table)
    return EXIT_OK


# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gdgen",
        description=(
            "Learn an anisotropic elastic system with neural deformation modes from motion, "
            "then simulate it."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="Generate a synthetic scene with scripted motion")
    p.add_argument("--kind", required=True, choices=SCENE_KINDS)
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--dt", type=float, default=0.04)
    p.add_argument("--motion", type=float, default=None, help="Motion magnitude (kind-specific default)")
    p.add_argument("--total-volume", type=float, default=None)
    p.add_argument("--density", type=float, default=None)
    p.add_argument("--segments", type=int, default=None, help="Rope segments")
    p.add_argument("--clusters", type=int, default=None, help="Multibody cluster count")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="Fit eigenmodes, handle transforms and the stiffness field")
    p.add_argument("--scene", required=True)
    p.add_argument("--config", default=None, help="TrainConfig JSON (defaults when omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("simulate", help="Simulate new dynamics from a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sim-config", default=None, help="SimConfig JSON (defaults when omitted)")
    p.add_argument("--scene", default=None, help="Rest geometry override; the checkpoint's own by default")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("eval", help="Compare two trajectories")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--metric", choices=["chamfer", "l2"], default="chamfer")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("oracle", help="Regenerate finite-difference energy golden files")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--corrected", action="store_true", help="Use the corrected Neo-Hookean energy")
    p.set_defaults(handler=cmd_oracle)

    for name in ("gen-data", "train", "simulate", "eval", "oracle"):
        sub.choices[name].add_argument(
            "--dry-run", action="store_true", help="Validate inputs and write nothing"
        )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_CONFIG

    try:
        return args.handler(args)
    except GdgenError as e:
        log_with_timestamp(f"✗ {args.command}: {e}")
        return exit_code_for(e)
    except KeyboardInterrupt:
        log_with_timestamp("Stopping: interrupted")
        return 130


if __name__ == "__main__":
    sys.exit(main())
