import pytest

from fliot.checkpoint import MAGIC, Checkpoint, read_checkpoint, write_checkpoint
from fliot.core import RandomStream
from fliot.errors import FliotError
from fliot.rnn import AnomalyThreshold, init_params


def make(activation="tanh"):
    p = init_params(6, 4, RandomStream(3), activation=activation)
    rounds = [{"round": 1, "global_loss": 0.5, "f1": 0.25, "participants": [1, 2]}]
    return Checkpoint(p, AnomalyThreshold(0.75, 99.0), "0123456789abcdef", "[experiment]\nrounds = 1\n", rounds)


@pytest.mark.parametrize("act", ["tanh", "relu"])
def test_roundtrip(tmp_path, act):
    ck = make(act)
    path = write_checkpoint(tmp_path / "m.ckpt", ck)
    back = read_checkpoint(path)
    assert back.params == ck.params
    assert back.threshold == ck.threshold
    assert back.config_hash == ck.config_hash
    assert back.config_text == ck.config_text
    assert back.rounds == ck.rounds


def test_header_magic(tmp_path):
    path = write_checkpoint(tmp_path / "m.ckpt", make())
    assert path.read_bytes()[:4] == MAGIC


def test_rejects_foreign_files(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"NOPE" + bytes(100))
    with pytest.raises(FliotError):
        read_checkpoint(p)
    p.write_bytes(b"FL")
    with pytest.raises(FliotError):
        read_checkpoint(p)
