import numpy as np
import pytest

from grnlab.checkpoint import (CheckpointError, MAGIC, load_checkpoint,
                               save_checkpoint)
from grnlab.rng import Rng


def test_round_trip_values_order_and_bytes(tmp_path):
    values = {
        "embed.tok": Rng(1).normals((5, 3)),
        "block01.attn.wq": Rng(2).normals((3, 3)),
        "scalarish": np.array([0.5]),
        "f32": Rng(3).normals((2, 2)).astype(np.float32),
    }
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, values)
    blob = path.read_bytes()
    assert blob[:8] == MAGIC and blob[8] == 1
    loaded = load_checkpoint(path)
    assert list(loaded) == list(values)
    for name in values:
        assert loaded[name].dtype == values[name].dtype
        assert (loaded[name] == values[name]).all()
    # save -> load -> save is byte-identical
    path2 = tmp_path / "m2.ckpt"
    save_checkpoint(path2, loaded)
    assert path2.read_bytes() == blob


def test_rejects_bad_magic_and_truncation(tmp_path):
    good = tmp_path / "good.ckpt"
    save_checkpoint(good, {"w": np.ones((2, 2))})
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTMAGIC" + good.read_bytes()[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    trunc = tmp_path / "trunc.ckpt"
    trunc.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(trunc)


def test_rejects_unsupported_dtype(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "x.ckpt", {"w": np.ones(2, dtype=np.int64)})
