"""
Tests for run artifacts and manifests.
"""

import json

import numpy as np
import pytest

from src.core.exceptions import ContractViolation
from src.services.run_recorder import (
    DIAGNOSTICS_FILE,
    MANIFEST_FILE,
    METRICS_FILE,
    RunRecorder,
    config_hash,
)


@pytest.mark.unit
class TestConfigHash:

    def test_key_order_does_not_matter(self):
        """Canonical JSON hashes equal for reordered keys"""
        a = {"epochs": 10, "weights": {"recon": 1.0, "ortho": 0.1}}
        b = {"weights": {"ortho": 0.1, "recon": 1.0}, "epochs": 10}
        assert config_hash(a) == config_hash(b)

    def test_values_matter(self):
        """Any change in value changes the hash"""
        assert config_hash({"epochs": 10}) != config_hash({"epochs": 11})

    def test_numpy_values(self):
        """numpy scalars hash like their Python values"""
        assert config_hash({"seed": np.int64(3)}) == config_hash({"seed": 3})


@pytest.mark.unit
class TestRunRecorder:

    def test_metrics_are_json_lines(self, tmp_path):
        """One sorted JSON object per appended record"""
        recorder = RunRecorder(tmp_path / "run")
        recorder.append_metrics({"epoch": 0, "total": np.float64(1.5)})
        recorder.append_metrics({"epoch": 1, "total": 0.5})
        lines = (tmp_path / "run" / METRICS_FILE).read_text().splitlines()
        assert [json.loads(line) for line in lines] == [
            {"epoch": 0, "total": 1.5},
            {"epoch": 1, "total": 0.5},
        ]
        assert recorder.artifacts == [METRICS_FILE]

    def test_stale_logs_removed(self, tmp_path):
        """A new run starts with empty logs"""
        (tmp_path / METRICS_FILE).write_text('{"epoch": 99}\n')
        (tmp_path / DIAGNOSTICS_FILE).write_text('{"frame": 99}\n')
        recorder = RunRecorder(tmp_path)
        recorder.append_diagnostics({"frame": 1})
        assert not (tmp_path / METRICS_FILE).exists()
        assert (tmp_path / DIAGNOSTICS_FILE).read_text() == '{"frame": 1}\n'

    def test_manifest(self, tmp_path):
        """The manifest lists artifacts, inputs and the config hash"""
        recorder = RunRecorder(tmp_path)
        recorder.append_metrics({"epoch": 0})
        recorder.write_json("report.json", {"ok": True})
        manifest = recorder.write_manifest(
            "train", {"epochs": 1}, seed=5, inputs={"scene": tmp_path / "scene"}
        )
        on_disk = json.loads((tmp_path / MANIFEST_FILE).read_text())
        assert on_disk == manifest.to_dict()
        assert on_disk["command"] == "train"
        assert on_disk["seed"] == 5
        assert on_disk["config_hash"] == config_hash({"epochs": 1})
        assert on_disk["artifacts"] == sorted([METRICS_FILE, "report.json"])
        assert on_disk["inputs"] == {"scene": str(tmp_path / "scene")}
        assert on_disk["wall_clock_seconds"] >= 0.0

    def test_one_manifest_per_run(self, tmp_path):
        """A second manifest is a contract violation"""
        recorder = RunRecorder(tmp_path)
        recorder.write_manifest("eval", {}, seed=None, inputs={})
        with pytest.raises(ContractViolation):
            recorder.write_manifest("eval", {}, seed=None, inputs={})

    def test_register_outside_file(self, tmp_path):
        """Artifacts written by other services are listed relative to the run"""
        recorder = RunRecorder(tmp_path)
        recorder.register(tmp_path / "checkpoint.json")
        recorder.register(tmp_path / "checkpoint.json")
        assert recorder.artifacts == ["checkpoint.json"]

    def test_disabled_writes_nothing(self, tmp_path):
        """Dry runs leave the output directory untouched"""
        out = tmp_path / "dry"
        recorder = RunRecorder(out, enabled=False)
        recorder.append_metrics({"epoch": 0})
        assert recorder.write_json("report.json", {}) is None
        manifest = recorder.write_manifest("train", {"epochs": 1}, seed=1, inputs={})
        assert manifest.command == "train"
        assert not out.exists()

    def test_no_output_directory(self):
        """Without an output directory the recorder is disabled"""
        recorder = RunRecorder(None)
        assert not recorder.enabled
        assert recorder.path("metrics.jsonl") is None
