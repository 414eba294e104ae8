import numpy as np
import pytest

from tcdiffuser.agent import train_inverse_dynamics
from tcdiffuser.checkpoint import (
    CheckpointError, checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint,
)
from tcdiffuser.conditioning import PRESETS
from tcdiffuser.envs import generate_dataset, make_env
from tcdiffuser.training import TrainConfig, train_denoiser


@pytest.fixture(scope="module")
def models():
    ds = generate_dataset(make_env("immediate"), 20, np.random.default_rng(0))
    cfg = TrainConfig(L=8, T_HC=2, steps=2, K=7, schedule="linear", base_width=8,
                      dim_mults=(1, 2), kernel_size=3)
    trained = train_denoiser(ds, PRESETS["hc-rtg-ts"], cfg, np.random.default_rng(1))
    inverse = train_inverse_dynamics(ds, epochs=1, rng=np.random.default_rng(2))
    return trained, inverse


def test_roundtrip_is_bitwise(models, tmp_path):
    trained, inverse = models
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, trained, inverse, {"preset": "hc-rtg-ts"})
    back, inv, meta = load_checkpoint(path)
    assert meta == {"preset": "hc-rtg-ts"}
    assert back.model.cfg == trained.model.cfg
    assert list(back.model.params) == list(trained.model.params)
    for k, v in trained.model.params.items():
        assert np.array_equal(back.model.params[k], v)
    for k, v in inverse.params.items():
        assert np.array_equal(inv.params[k], v)
    assert np.array_equal(inv.action_scale, inverse.action_scale)
    assert back.flags == trained.flags and back.stats == trained.stats
    assert (back.L, back.T_HC) == (trained.L, trained.T_HC)
    assert (back.schedule.kind, back.schedule.K) == ("linear", 7)
    assert np.array_equal(back.schedule.alpha_bar, trained.schedule.alpha_bar)
    assert checkpoint_to_bytes(back, inv, meta) == path.read_bytes()


def test_roundtrip_without_inverse(models):
    trained, _ = models
    back, inv, meta = checkpoint_from_bytes(checkpoint_to_bytes(trained))
    assert inv is None and meta == {}
    x = np.random.default_rng(3).normal(size=(2, 8, 2))
    cond = np.full((2, 3), 0.5)
    assert np.array_equal(back.model(x, cond, 3), trained.model(x, cond, 3))


def test_corruption_is_detected(models):
    trained, inverse = models
    buf = checkpoint_to_bytes(trained, inverse)
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint_from_bytes(b"X" * 8 + buf[8:])
    with pytest.raises(CheckpointError, match="version"):
        checkpoint_from_bytes(buf[:8] + (7).to_bytes(4, "little") + buf[12:])
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(buf[:-100])
    flipped = bytearray(buf)
    flipped[-50] ^= 1
    with pytest.raises(CheckpointError, match="checksum"):
        checkpoint_from_bytes(bytes(flipped))
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(b"short")
