"""
Run artifacts: JSON-lines logs and the run manifest.

A disabled recorder (dry runs) accepts every call and writes nothing.
"""

import hashlib
import json
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from ..core.data_models import RunManifest
from ..core.exceptions import ContractViolation
from ..utils.logging import log_with_timestamp

METRICS_FILE = "metrics.jsonl"
DIAGNOSTICS_FILE = "diagnostics.jsonl"
MANIFEST_FILE = "run_manifest.json"


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def config_hash(config: Dict[str, Any]) -> str:
    """sha256 of the canonical (sorted-key, compact) JSON form; key order does not matter."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_plain)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class RunRecorder:
    """Appends per-epoch and per-frame records and writes one manifest per run."""

    def __init__(self, out_dir, enabled: bool = True):
        """
        Initialize the recorder.

        Args:
            out_dir: Directory that receives every artifact of the run
            enabled: False for dry runs; nothing touches the filesystem then
        """
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.enabled = enabled and self.out_dir is not None
        self.artifacts: List[str] = []
        self._started = time.monotonic()
        self._manifest_written = False
        if self.enabled:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            for name in (METRICS_FILE, DIAGNOSTICS_FILE):
                stale = self.out_dir / name
                if stale.exists():
                    stale.unlink()

    def path(self, name: str) -> Optional[Path]:
        return self.out_dir / name if self.out_dir is not None else None

    def register(self, path) -> None:
        """Record an artifact written by someone else."""
        if not self.enabled:
            return
        try:
            name = str(Path(path).relative_to(self.out_dir))
        except ValueError:
            name = str(path)
        if name not in self.artifacts:
            self.artifacts.append(name)

    def _append(self, name: str, record: Dict[str, Any]):
        if not self.enabled:
            return
        with open(self.out_dir / name, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, sort_keys=True, default=_plain) + "\n")
        if name not in self.artifacts:
            self.artifacts.append(name)

    def append_metrics(self, record: Dict[str, Any]):
        self._append(METRICS_FILE, record)

    def append_diagnostics(self, record: Dict[str, Any]):
        self._append(DIAGNOSTICS_FILE, record)

    def write_json(self, name: str, payload: Dict[str, Any]) -> Optional[Path]:
        if not self.enabled:
            return None
        target = self.out_dir / name
        target.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_plain), encoding="utf-8")
        self.register(name)
        return target

    def write_manifest(
        self,
        command: str,
        config: Dict[str, Any],
        seed: Optional[int],
        inputs: Dict[str, str],
    ) -> RunManifest:
        if self._manifest_written:
            raise ContractViolation("a run writes exactly one manifest")
        manifest = RunManifest(
            command=command,
            config_hash=config_hash(config),
            seed=seed,
            inputs={k: str(v) for k, v in inputs.items()},
            output_dir=str(self.out_dir) if self.out_dir is not None else None,
            wall_clock_seconds=time.monotonic() - self._started,
            artifacts=sorted(self.artifacts),
        )
        if self.enabled:
            (self.out_dir / MANIFEST_FILE).write_text(
                json.dumps(manifest.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
            )
            self._manifest_written = True
            log_with_timestamp(f"✓ Run: manifest written to {self.out_dir / MANIFEST_FILE}")
        return manifest
