"""
Checkpoint persistence.

A checkpoint is one JSON document:

    {"format": "gdgen-checkpoint", "version": 1,
     "params": {name: {"shape": [...], "data": <base64 little-endian float64>}},
     "metadata": {"J": ..., "K": ..., "hidden_width": ..., "seed": ..., "stage": ...}}

Stored arrays round-trip bit-exactly.
"""

import base64
import binascii
import json
from pathlib import Path
from typing import Any, Dict

import numpy as np
import pandas as pd

from ..core.data_models import Checkpoint, RestGeometry
from ..core.exceptions import CheckpointError, ContractViolation
from ..utils.logging import log_with_timestamp

CHECKPOINT_FORMAT = "gdgen-checkpoint"
CHECKPOINT_VERSION = 1
REQUIRED_METADATA = ("J", "K", "hidden_width", "seed", "stage")
E_FIELD_COLUMNS = ["E_iso", "E_x", "E_y", "E_z"]
LITTLE_ENDIAN_F8 = np.dtype("<f8")


def encode_array(values: np.ndarray) -> Dict[str, Any]:
    # 0-d arrays stay 0-d
    values = np.array(values, dtype=LITTLE_ENDIAN_F8, order="C")
    return {
        "shape": list(values.shape),
        "data": base64.b64encode(values.tobytes()).decode("ascii"),
    }


def decode_array(name: str, entry: Dict[str, Any]) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in entry["shape"])
        raw = base64.b64decode(entry["data"], validate=True)
    except (KeyError, TypeError, ValueError, binascii.Error) as e:
        raise CheckpointError(f"parameter '{name}' is malformed: {e}")
    expected = int(np.prod(shape, dtype=np.int64)) * LITTLE_ENDIAN_F8.itemsize
    if len(raw) != expected:
        raise CheckpointError(
            f"parameter '{name}' payload has {len(raw)} bytes, shape {list(shape)} needs {expected}"
        )
    return np.frombuffer(raw, dtype=LITTLE_ENDIAN_F8).astype(np.float64).reshape(shape)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def save_checkpoint(path, checkpoint: Checkpoint) -> Path:
    path = Path(path)
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "params": {name: encode_array(v) for name, v in sorted(checkpoint.params.items())},
        "metadata": checkpoint.metadata,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document, sort_keys=True, default=_json_default), encoding="utf-8")
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}")
    log_with_timestamp(f"✓ Checkpoint: saved {len(checkpoint.params)} arrays to {path}")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    except (OSError, UnicodeDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {e}")

    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a gdgen checkpoint")
    if document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {document.get('version')}")
    params = document.get("params")
    metadata = document.get("metadata")
    if not isinstance(params, dict) or not isinstance(metadata, dict):
        raise CheckpointError(f"checkpoint {path} lacks params or metadata")

    missing = [k for k in REQUIRED_METADATA if k not in metadata]
    if missing:
        raise CheckpointError(f"checkpoint metadata is missing: {', '.join(missing)}")

    arrays = {name: decode_array(name, entry) for name, entry in params.items()}
    return Checkpoint(params=arrays, metadata=metadata)


def rest_geometry(checkpoint: Checkpoint) -> RestGeometry:
    """The rest geometry the checkpoint was trained on."""
    checkpoint.require("rest.points", "rest.volume", "rest.mass")
    try:
        return RestGeometry(
            checkpoint.params["rest.points"],
            checkpoint.params["rest.volume"],
            checkpoint.params["rest.mass"],
        )
    except ContractViolation as e:
        raise CheckpointError(f"stored rest geometry is invalid: {e}")


def export_E_csv(path, E: np.ndarray) -> Path:
    """Write the stiffness field as CSV with header E_iso,E_x,E_y,E_z."""
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[1] != 4:
        raise ContractViolation(f"stiffness field must be (N, 4), got {E.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(E, columns=E_FIELD_COLUMNS).to_csv(
        path, index=False, float_format="%.17g", lineterminator="\n"
    )
    return path
