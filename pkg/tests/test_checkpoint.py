import numpy as np
import pytest

from tabphrase.checkpoint import (
    Checkpoint,
    checkpoint_from_model,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from tabphrase.embedder import EmbedderConfig, ProviderConfig
from tabphrase.encoder import EncoderConfig
from tabphrase.errors import DataError
from tabphrase.model import ModelConfig, TableModel
from tabphrase.synth import linear_table

SMALL = ModelConfig(
    embedder=EmbedderConfig(provider=ProviderConfig(dim=16), model_dim=16),
    encoder=EncoderConfig(num_layers=2, model_dim=16, ffn_hidden=32, num_heads=2,
                          dropout=0.0),
)


def _model():
    table = linear_table(n_rows=20, seed=1)
    return table, TableModel.build([table], SMALL, seed=3)


def test_roundtrip_forward_bit_identical(tmp_path):
    table, model = _model()
    before, _ = model.forward_rows(table, np.arange(10))
    path = tmp_path / "m.ctb"
    save_checkpoint(path, checkpoint_from_model(model, {"objective": "mtm"}))
    restored = model_from_checkpoint(load_checkpoint(path))
    after, _ = restored.forward_rows(table, np.arange(10))
    np.testing.assert_array_equal(before.data, after.data)


def test_same_state_same_bytes(tmp_path):
    table, model = _model()
    a, b = tmp_path / "a.ctb", tmp_path / "b.ctb"
    save_checkpoint(a, checkpoint_from_model(model, {"seed": 3}))
    save_checkpoint(b, checkpoint_from_model(model, {"seed": 3}))
    assert a.read_bytes() == b.read_bytes()


def test_seeded_builds_identical(tmp_path):
    t1, m1 = _model()
    t2, m2 = _model()
    a, b = tmp_path / "a.ctb", tmp_path / "b.ctb"
    save_checkpoint(a, checkpoint_from_model(m1, {}))
    save_checkpoint(b, checkpoint_from_model(m2, {}))
    assert a.read_bytes() == b.read_bytes()


def test_meta_preserved(tmp_path):
    table, model = _model()
    prov = {"objective": "supcon", "epochs": 7, "seed": 3}
    path = tmp_path / "m.ctb"
    save_checkpoint(path, checkpoint_from_model(model, prov))
    ck = load_checkpoint(path)
    assert ck.provenance == prov
    assert ck.tokens == model.vocab.tokens
    assert ck.config["encoder"]["num_layers"] == 2
    assert set(ck.tensors) == set(model.params)
    for name, arr in ck.tensors.items():
        np.testing.assert_array_equal(arr, model.params[name].data)
        assert arr.dtype == np.float32


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ctb"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(DataError, match="magic"):
        load_checkpoint(path)


def test_truncated_rejected(tmp_path):
    table, model = _model()
    path = tmp_path / "m.ctb"
    save_checkpoint(path, checkpoint_from_model(model, {}))
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(DataError, match="truncated"):
        load_checkpoint(path)


def test_trailing_bytes_rejected(tmp_path):
    table, model = _model()
    path = tmp_path / "m.ctb"
    save_checkpoint(path, checkpoint_from_model(model, {}))
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(DataError, match="trailing"):
        load_checkpoint(path)


def test_scalar_and_empty_shapes_roundtrip(tmp_path):
    ck = Checkpoint(config={}, provenance={}, tokens=[],
                    tensors={"s": np.float32(3.5) * np.ones((), dtype=np.float32),
                             "v": np.arange(4, dtype=np.float32)})
    path = tmp_path / "m.ctb"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    assert back.tensors["s"].shape == ()
    assert float(back.tensors["s"]) == 3.5
    np.testing.assert_array_equal(back.tensors["v"], np.arange(4, dtype=np.float32))


def test_loaded_params_trainability(tmp_path):
    table, model = _model()
    path = tmp_path / "m.ctb"
    save_checkpoint(path, checkpoint_from_model(model, {}))
    restored = model_from_checkpoint(load_checkpoint(path))
    # hashed provider tokens stay trainable, everything else always is
    assert restored.params["embedder.tokens"].requires_grad
    assert restored.params["encoder.cls"].requires_grad
