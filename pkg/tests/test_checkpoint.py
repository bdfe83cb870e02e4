import json

import numpy as np
import pytest

from checkpoint import load_checkpoint, save_checkpoint
from config import CHECKPOINT_BLOB, CHECKPOINT_MANIFEST
from errors import CheckpointError, CheckpointVersionError, ShapeMismatchError, TruncatedCheckpointError
from model import ModelParams
from training import TrainConfig


@pytest.fixture
def saved(tmp_path, model_config):
    params = ModelParams.init(model_config("attn-track"), seed=9)
    meta = {"train_config": TrainConfig(max_steps=3), "step": 3, "history": [{"step": 3, "val_map": 0.5}],
            "best_metric": 0.5}
    return params, save_checkpoint(params, meta, tmp_path / "ckpt")


def _edit_manifest(path, edit):
    manifest_path = path / CHECKPOINT_MANIFEST
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    edit(manifest)
    manifest_path.write_text(json.dumps(manifest), encoding="utf-8")


def test_round_trip_bitwise(saved):
    params, path = saved
    loaded, meta = load_checkpoint(path)
    assert loaded.config == params.config
    assert loaded.names == params.names
    for name in params.names:
        assert loaded.tensors[name].tobytes() == params.tensors[name].tobytes()
    assert meta["step"] == 3
    assert meta["best_metric"] == 0.5
    assert meta["train_config"]["max_steps"] == 3
    assert meta["history"] == [{"step": 3, "val_map": 0.5}]


def test_save_load_save_identical_blob(saved, tmp_path):
    _, path = saved
    loaded, meta = load_checkpoint(path)
    again = save_checkpoint(loaded, meta, tmp_path / "again")
    assert (again / CHECKPOINT_BLOB).read_bytes() == (path / CHECKPOINT_BLOB).read_bytes()


def test_blob_is_little_endian_f32(saved):
    params, path = saved
    first = params.names[0]
    expected = params.tensors[first].astype("<f4").tobytes()
    assert (path / CHECKPOINT_BLOB).read_bytes()[:len(expected)] == expected


def test_wrong_hidden_dim(saved):
    _, path = saved

    def edit(manifest):
        manifest["model_config"]["hidden_dim"] += 1
    _edit_manifest(path, edit)
    with pytest.raises(ShapeMismatchError):
        load_checkpoint(path)


def test_version_mismatch(saved):
    _, path = saved
    _edit_manifest(path, lambda m: m.update(version=99))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_truncated_blob(saved):
    _, path = saved
    blob = path / CHECKPOINT_BLOB
    blob.write_bytes(blob.read_bytes()[:-1])
    with pytest.raises(TruncatedCheckpointError):
        load_checkpoint(path)


def test_extra_bytes(saved):
    _, path = saved
    blob = path / CHECKPOINT_BLOB
    blob.write_bytes(blob.read_bytes() + b"\x00\x00\x00\x00")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_corrupt_manifest(saved):
    _, path = saved
    (path / CHECKPOINT_MANIFEST).write_text("{broken", encoding="utf-8")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_unknown_mode(saved):
    _, path = saved

    def edit(manifest):
        manifest["model_config"]["mode"] = "lrcn"
    _edit_manifest(path, edit)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_tensor_entry_without_shape(saved):
    _, path = saved

    def edit(manifest):
        del manifest["tensors"][0]["shape"]
    _edit_manifest(path, edit)
    with pytest.raises(CheckpointError) as excinfo:
        load_checkpoint(path)
    assert excinfo.value.code == "CHECKPOINT_CORRUPT"


@pytest.mark.parametrize("document", [[1, 2, 3], "manifest", None])
def test_manifest_must_be_object(saved, document):
    _, path = saved
    (path / CHECKPOINT_MANIFEST).write_text(json.dumps(document), encoding="utf-8")
    with pytest.raises(CheckpointError) as excinfo:
        load_checkpoint(path)
    assert excinfo.value.exit_code == 6


def test_negative_offset(saved):
    _, path = saved

    def edit(manifest):
        manifest["tensors"][1]["offset"] = -4
    _edit_manifest(path, edit)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_directory(tmp_path):
    with pytest.raises(OSError):
        load_checkpoint(tmp_path / "nowhere")


def test_checkpoint_exit_codes():
    codes = {CheckpointError().exit_code, CheckpointVersionError().exit_code, ShapeMismatchError().exit_code,
             TruncatedCheckpointError().exit_code}
    assert codes == {6}
    names = {CheckpointError.code, CheckpointVersionError.code, ShapeMismatchError.code, TruncatedCheckpointError.code}
    assert names == {
        "CHECKPOINT_CORRUPT", "CHECKPOINT_VERSION", "CHECKPOINT_SHAPE", "CHECKPOINT_TRUNCATED"}


def test_float64_params_saved_as_f32(tmp_path, model_config):
    params = ModelParams.init(model_config("frame-only"), seed=1).astype(np.float64)
    loaded, _ = load_checkpoint(save_checkpoint(params, {}, tmp_path / "c"))
    for name in params.names:
        np.testing.assert_array_equal(loaded.tensors[name], params.tensors[name].astype(np.float32))
