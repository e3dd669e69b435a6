"""
Scene directories: a `scene.json` manifest plus headerless `x,y,z` CSV files.

    scene.json    {name, num_points, num_frames, dt, tracked, total_volume,
                   density, frame_files, rest_file}
    rest.csv      one rest point per line
    frames/*.csv  one file per frame

`frame_files` is a flat list for a single trajectory or a list of lists for
several; `tracked` is then a bool or a list of bools. Paths are relative to
the manifest. Floats are written with 17 significant digits so every scene
round-trips bit-exactly.
"""

import json
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..core.data_models import RestGeometry, TrajectoryDataset
from ..core.exceptions import ContractViolation, SceneParseError
from ..utils.logging import log_with_timestamp

MANIFEST_NAME = "scene.json"
REST_FILE = "rest.csv"
FRAMES_DIR = "frames"
MANIFEST_KEYS = (
    "name",
    "num_points",
    "num_frames",
    "dt",
    "tracked",
    "total_volume",
    "density",
    "frame_files",
    "rest_file",
)


def write_points_csv(path: Path, points: np.ndarray):
    pd.DataFrame(np.asarray(points, dtype=np.float64)).to_csv(
        path, header=False, index=False, float_format="%.17g", lineterminator="\n"
    )


def read_points_csv(path: Path) -> np.ndarray:
    """Parse an (M, 3) point file; malformed rows raise SceneParseError with their line."""
    try:
        frame = pd.read_csv(
            path, header=None, dtype=str, keep_default_na=False, skip_blank_lines=False
        )
    except FileNotFoundError:
        raise SceneParseError(path, "file not found")
    except pd.errors.EmptyDataError:
        raise SceneParseError(path, "file is empty", line=1)
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise SceneParseError(path, f"malformed row: {e}", line=int(match.group(1)) if match else None)
    except (OSError, UnicodeDecodeError) as e:
        raise SceneParseError(path, f"cannot read file: {e}")

    if frame.shape[1] != 3:
        raise SceneParseError(path, f"expected 3 columns x,y,z, found {frame.shape[1]}", line=1)
    numeric = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = np.flatnonzero(~np.all(np.isfinite(numeric), axis=1))
    if bad.size:
        row = int(bad[0])
        raise SceneParseError(path, f"malformed row {','.join(frame.iloc[row].astype(str))!r}", line=row + 1)
    # numpy's string conversion is correctly rounded, so %.17g text comes back bit-exact
    return frame.to_numpy(dtype=str).astype(np.float64)


def _manifest_value(manifest: Dict[str, Any], key: str, path: Path):
    if key not in manifest:
        raise SceneParseError(path, f"manifest is missing '{key}'")
    return manifest[key]


def _trajectory_lists(manifest: Dict[str, Any], path: Path) -> Tuple[List[List[str]], List[bool]]:
    frame_files = _manifest_value(manifest, "frame_files", path)
    tracked = _manifest_value(manifest, "tracked", path)
    if not isinstance(frame_files, list):
        raise SceneParseError(path, "'frame_files' must be a list")
    if frame_files and all(isinstance(f, list) for f in frame_files):
        groups = frame_files
    elif all(isinstance(f, str) for f in frame_files):
        groups = [frame_files] if frame_files else []
    else:
        raise SceneParseError(path, "'frame_files' must hold file names or lists of file names")

    if isinstance(tracked, bool):
        flags = [tracked] * len(groups)
    elif isinstance(tracked, list) and all(isinstance(t, bool) for t in tracked):
        flags = tracked
    else:
        raise SceneParseError(path, "'tracked' must be a bool or a list of bools")
    if len(flags) != len(groups):
        raise SceneParseError(path, f"{len(flags)} tracked flags for {len(groups)} trajectories")
    return groups, flags


def _positive(manifest: Dict[str, Any], key: str, path: Path) -> float:
    value = _manifest_value(manifest, key, path)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise SceneParseError(path, f"'{key}' must be a finite number, got {value!r}")
    if value <= 0:
        raise SceneParseError(path, f"'{key}' must be positive, got {value}")
    return float(value)


def load_scene(path) -> Tuple[RestGeometry, TrajectoryDataset]:
    """Load a scene from its directory or its manifest file."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SceneParseError(manifest_path, "scene manifest not found")
    except json.JSONDecodeError as e:
        raise SceneParseError(manifest_path, f"invalid JSON: {e.msg}", line=e.lineno)
    except (OSError, UnicodeDecodeError) as e:
        raise SceneParseError(manifest_path, f"cannot read manifest: {e}")
    if not isinstance(manifest, dict):
        raise SceneParseError(manifest_path, "manifest must be a JSON object")

    root = manifest_path.parent
    dt = _positive(manifest, "dt", manifest_path)
    total_volume = _positive(manifest, "total_volume", manifest_path)
    density = _positive(manifest, "density", manifest_path)
    num_points = _manifest_value(manifest, "num_points", manifest_path)
    num_frames = _manifest_value(manifest, "num_frames", manifest_path)
    groups, flags = _trajectory_lists(manifest, manifest_path)

    rest_path = root / _manifest_value(manifest, "rest_file", manifest_path)
    points = read_points_csv(rest_path)
    if points.shape[0] != num_points:
        raise SceneParseError(
            rest_path, f"manifest declares {num_points} points, file has {points.shape[0]}"
        )
    try:
        geom = RestGeometry.uniform(points, total_volume, density)
    except ContractViolation as e:
        raise SceneParseError(rest_path, str(e))

    trajectories = []
    for files, tracked in zip(groups, flags):
        if len(files) != num_frames:
            raise SceneParseError(
                manifest_path, f"manifest declares {num_frames} frames, lists {len(files)}"
            )
        frames = []
        for name in files:
            frame_path = root / name
            frame = read_points_csv(frame_path)
            if tracked and frame.shape[0] != num_points:
                line = min(frame.shape[0], num_points) + 1
                raise SceneParseError(
                    frame_path,
                    f"tracked frame has {frame.shape[0]} points, rest geometry has {num_points}",
                    line=line,
                )
            if frames and frame.shape[0] != frames[0].shape[0]:
                raise SceneParseError(frame_path, "point count differs from the trajectory's first frame")
            frames.append(frame)
        trajectories.append(np.stack(frames))

    try:
        data = TrajectoryDataset(trajectories, flags, dt)
    except ContractViolation as e:
        raise SceneParseError(manifest_path, str(e))
    return geom, data


def save_scene(
    path,
    geom: RestGeometry,
    data: TrajectoryDataset,
    name: str = "scene",
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write a scene directory and return the manifest path."""
    root = Path(path)
    try:
        (root / FRAMES_DIR).mkdir(parents=True, exist_ok=True)
        write_points_csv(root / REST_FILE, geom.points)

        groups = []
        for o, traj in enumerate(data.trajectories):
            files = []
            for t in range(traj.shape[0]):
                relative = f"{FRAMES_DIR}/traj{o}_frame{t:04d}.csv"
                write_points_csv(root / relative, traj[t])
                files.append(relative)
            groups.append(files)

        frame_counts = {traj.shape[0] for traj in data.trajectories}
        if len(frame_counts) > 1:
            raise ContractViolation("all trajectories of a scene must have the same frame count")
        manifest = {
            "name": name,
            "num_points": geom.num_points,
            "num_frames": frame_counts.pop() if frame_counts else 0,
            "dt": data.dt,
            "tracked": data.tracked[0] if len(data.tracked) == 1 else list(data.tracked),
            "total_volume": geom.total_volume,
            "density": float(geom.mass_per_point.sum() / geom.volume_per_point.sum()),
            "frame_files": groups[0] if len(groups) == 1 else groups,
            "rest_file": REST_FILE,
        }
        manifest.update(extra or {})
        manifest_path = root / MANIFEST_NAME
        manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    except OSError as e:
        raise SceneParseError(root, f"cannot write scene: {e}")

    log_with_timestamp(
        f"✓ Scene: wrote '{name}' with {geom.num_points} points and "
        f"{data.num_trajectories} trajectories to {root}"
    )
    return manifest_path
