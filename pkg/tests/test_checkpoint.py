import numpy as np
import pytest

from precise.checkpoint import MAGIC, CheckpointError, dumps, load_checkpoint, loads, save_checkpoint
from precise.data import gen_synthetic
from precise.experiment import TrainConfig, evaluate, train
from precise.model import ArchSpec, forward, init_model
from precise.autograd import Tensor


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("bias", [True, False])
def test_round_trip_bit_exact(tmp_path, dtype, bias, rng):
    model = init_model(ArchSpec((4, 4), (6, 5), 3), 2, 3, seed=11, norm=(0.25, 0.5), bias=bias, dtype=dtype)
    model.meta.update(lambda1=1.0, lambda2=0.001, mode="reserved")
    save_checkpoint(model, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    for (na, pa), (nb, pb) in zip(model.named_parameters(), back.named_parameters()):
        assert na == nb and pa.data.dtype == pb.data.dtype and pa.data.tobytes() == pb.data.tobytes()
    assert (back.norm_mean, back.norm_std, back.seed) == (0.25, 0.5, 11)
    assert back.bank.per_class == 2 and back.num_classes == 3 and back.arch == model.arch
    assert back.meta["lambda2"] == "0.001" and back.meta["mode"] == "reserved"
    x = Tensor(rng.uniform(0, 1, (3, 16)).astype(dtype))
    assert forward(model, x).probs.data.tobytes() == forward(back, x).probs.data.tobytes()
    assert dumps(back) == dumps(model)


def test_layout_header():
    blob = dumps(init_model(ArchSpec((3, 3), (4,), 2), 1, 2, dtype=np.float64))
    assert blob.startswith(MAGIC)
    lines = blob.split(b"\n")
    assert lines[1] == b"param encoder.0.weight 4,9 8"
    assert b"end" in lines


def test_trained_model_round_trip_metrics(tmp_path):
    ds = gen_synthetic([12, 4], side=8)
    res = train(ds, TrainConfig(epochs=2, hidden=(8,), latent_dim=3), seed=0)
    save_checkpoint(res.model, tmp_path / "t.ckpt")
    back = load_checkpoint(tmp_path / "t.ckpt")
    assert evaluate(back, ds).row() == evaluate(res.model, ds).row()


@pytest.mark.parametrize("blob", [b"NOPE", MAGIC + b"param x 2", MAGIC + b"weird line\nend\n",
                                  MAGIC + b"param x 4 8\nend\n\x00\x00"])
def test_corrupt_checkpoints(blob):
    with pytest.raises(CheckpointError):
        loads(blob)
