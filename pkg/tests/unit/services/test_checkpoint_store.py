"""
Tests for checkpoint persistence and stiffness export.
"""

import json

import numpy as np
import pandas as pd
import pytest

from src.core.data_models import Checkpoint
from src.core.exceptions import CheckpointError, ContractViolation
from src.services.checkpoint_store import (
    CHECKPOINT_FORMAT,
    E_FIELD_COLUMNS,
    decode_array,
    encode_array,
    export_E_csv,
    load_checkpoint,
    rest_geometry,
    save_checkpoint,
)


@pytest.fixture
def checkpoint(rng, cloud_geom):
    params = {
        "eigen.layer0.W": rng.standard_normal((3, 8)),
        "T": rng.standard_normal((4, 2, 7)),
        "T.1": rng.standard_normal((3, 2, 7)),
        "E_prev": np.array(1.0),
        "rest.points": cloud_geom.points,
        "rest.volume": cloud_geom.volume_per_point,
        "rest.mass": cloud_geom.mass_per_point,
    }
    metadata = {"J": 2, "K": 6, "hidden_width": 8, "seed": 7, "stage": 2, "nu": 0.45}
    return Checkpoint(params=params, metadata=metadata)


@pytest.mark.unit
class TestSaveLoad:

    def test_round_trip_is_bit_exact(self, tmp_path, checkpoint):
        """Every array and the metadata survive unchanged"""
        path = save_checkpoint(tmp_path / "ckpt" / "checkpoint.json", checkpoint)
        loaded = load_checkpoint(path)
        assert set(loaded.params) == set(checkpoint.params)
        for name, values in checkpoint.params.items():
            assert loaded.params[name].shape == np.shape(values)
            np.testing.assert_array_equal(loaded.params[name], values)
        assert loaded.metadata == checkpoint.metadata

    def test_scalar_keeps_its_shape(self):
        """A 0-d parameter encodes with an empty shape and decodes as a scalar"""
        entry = encode_array(np.array(1.5))
        assert entry["shape"] == []
        decoded = decode_array("E_prev", entry)
        assert decoded.shape == ()
        assert decoded == 1.5

    def test_document_header(self, tmp_path, checkpoint):
        """The file is tagged with its format and version"""
        path = save_checkpoint(tmp_path / "c.json", checkpoint)
        document = json.loads(path.read_text())
        assert document["format"] == CHECKPOINT_FORMAT
        assert document["version"] == 1

    def test_numpy_metadata_serialized(self, tmp_path, checkpoint):
        """numpy scalars in metadata become plain JSON numbers"""
        checkpoint.metadata["seed"] = np.int64(11)
        loaded = load_checkpoint(save_checkpoint(tmp_path / "c.json", checkpoint))
        assert loaded.metadata["seed"] == 11

    def test_transforms_in_trajectory_order(self, tmp_path, checkpoint):
        """T then T.1, T.2, ..."""
        loaded = load_checkpoint(save_checkpoint(tmp_path / "c.json", checkpoint))
        stacks = loaded.transforms()
        assert [s.shape[0] for s in stacks] == [4, 3]

    def test_rest_geometry(self, tmp_path, checkpoint, cloud_geom):
        """The stored rest geometry is rebuilt exactly"""
        loaded = load_checkpoint(save_checkpoint(tmp_path / "c.json", checkpoint))
        geom = rest_geometry(loaded)
        np.testing.assert_array_equal(geom.points, cloud_geom.points)
        assert geom.total_volume == pytest.approx(8.0)


@pytest.mark.unit
class TestCorruption:

    def write(self, tmp_path, document):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(document) if not isinstance(document, str) else document)
        return path

    def test_missing_file(self, tmp_path):
        """No file, no checkpoint"""
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "missing.json")

    def test_truncated_json(self, tmp_path, checkpoint):
        """A truncated document is corrupted"""
        path = save_checkpoint(tmp_path / "c.json", checkpoint)
        path.write_text(path.read_text()[:100])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_wrong_format_tag(self, tmp_path):
        """Other JSON documents are not checkpoints"""
        path = self.write(tmp_path, {"format": "something-else", "version": 1})
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path):
        """Future versions are rejected"""
        path = self.write(
            tmp_path, {"format": CHECKPOINT_FORMAT, "version": 2, "params": {}, "metadata": {}}
        )
        with pytest.raises(CheckpointError) as excinfo:
            load_checkpoint(path)
        assert "version" in str(excinfo.value)

    def test_missing_metadata_key(self, tmp_path, checkpoint):
        """J, K, hidden_width, seed and stage are required"""
        del checkpoint.metadata["stage"]
        path = save_checkpoint(tmp_path / "c.json", checkpoint)
        with pytest.raises(CheckpointError) as excinfo:
            load_checkpoint(path)
        assert "stage" in str(excinfo.value)

    def test_payload_size_mismatch(self):
        """The decoded byte count must match the shape"""
        entry = encode_array(np.zeros((2, 3)))
        entry["shape"] = [2, 4]
        with pytest.raises(CheckpointError):
            decode_array("W", entry)

    def test_bad_base64(self):
        """Non-base64 payloads are malformed"""
        with pytest.raises(CheckpointError):
            decode_array("W", {"shape": [1], "data": "***"})

    def test_missing_rest_geometry(self, checkpoint):
        """rest_geometry needs all three rest arrays"""
        del checkpoint.params["rest.mass"]
        with pytest.raises(CheckpointError) as excinfo:
            rest_geometry(checkpoint)
        assert "rest.mass" in str(excinfo.value)

    def test_invalid_rest_geometry(self, checkpoint):
        """Nonpositive stored volumes are a checkpoint error"""
        checkpoint.params["rest.volume"] = np.zeros_like(checkpoint.params["rest.volume"])
        with pytest.raises(CheckpointError):
            rest_geometry(checkpoint)


@pytest.mark.unit
class TestExportStiffness:

    def test_csv_layout(self, tmp_path, rng):
        """Header E_iso,E_x,E_y,E_z and one row per point"""
        E = rng.uniform(0.1, 5.0, (7, 4))
        path = export_E_csv(tmp_path / "out" / "E.csv", E)
        assert path.read_text().splitlines()[0] == ",".join(E_FIELD_COLUMNS)
        table = pd.read_csv(path, float_precision="round_trip")
        np.testing.assert_array_equal(table.to_numpy(), E)

    def test_rejects_wrong_width(self, tmp_path):
        """The field has four columns"""
        with pytest.raises(ContractViolation):
            export_E_csv(tmp_path / "E.csv", np.ones((5, 3)))
