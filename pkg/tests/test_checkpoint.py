import struct

import pytest
import torch

from selfspec.checkpoint import FORMAT_VERSION, CheckpointError, load_checkpoint, save_checkpoint
from selfspec.model import DecoderModel, ModelConfig

CFG = ModelConfig(n_layers=2, dim=16, n_heads=2, vocab=33, max_context=16, ffn_hidden=20)


def test_round_trip_bitwise(tmp_path):
    model = DecoderModel(CFG, seed=13)
    path = tmp_path / "model.lskp"
    save_checkpoint(model, path, extras={"note": "x"})
    loaded, extras = load_checkpoint(path)
    assert extras == {"note": "x"}
    assert loaded.config == CFG
    for a, b in zip(model.parameters(), loaded.parameters()):
        assert torch.equal(a, b)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "model.lskp"
    save_checkpoint(DecoderModel(CFG, seed=1), path)
    data = bytearray(path.read_bytes())
    data[0] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError) as err:
        load_checkpoint(path)
    assert err.value.offset == 0


def test_corrupt_header_rejected(tmp_path):
    path = tmp_path / "model.lskp"
    save_checkpoint(DecoderModel(CFG, seed=1), path)
    data = bytearray(path.read_bytes())
    data[20] = 0xFF  # inside the JSON header
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_newer_version_rejected(tmp_path):
    path = tmp_path / "model.lskp"
    save_checkpoint(DecoderModel(CFG, seed=1), path)
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack("<I", FORMAT_VERSION + 1)
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError) as err:
        load_checkpoint(path)
    assert "version" in str(err.value)


def test_truncated_file_reports_offset(tmp_path):
    path = tmp_path / "model.lskp"
    save_checkpoint(DecoderModel(CFG, seed=1), path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 100])
    with pytest.raises(CheckpointError) as err:
        load_checkpoint(path)
    assert err.value.offset is not None
    assert "truncated" in str(err.value)


def test_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "model.lskp"
    save_checkpoint(DecoderModel(CFG, seed=1), path)
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
