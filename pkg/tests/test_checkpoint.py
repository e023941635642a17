from __future__ import annotations

import numpy as np
import pytest

from r2o.checkpoint import (
    CheckpointMismatchError,
    TrainState,
    load_checkpoint,
    read_target,
    save_checkpoint,
)
from r2o.encoder import make_pair
from r2o.optim import OptimizerState

DIGEST = bytes(32)
OTHER = bytes([1]) * 32


@pytest.fixture
def state(tiny_encoder, tiny_heads, rng):
    pair = make_pair(tiny_encoder, tiny_heads, seed=0)
    opt = OptimizerState.zeros_like(pair.online.params)
    for v in opt.momentum.values():
        v[...] = rng.normal(size=v.shape)
    opt.step = 12
    shuffle = np.random.default_rng(5)
    shuffle.permutation(10)
    return TrainState(epoch=3, step=12, pair=pair, opt=opt, shuffle_rng=shuffle)


def test_roundtrip_restores_everything(tmp_path, state, tiny_encoder, tiny_heads):
    path = save_checkpoint(tmp_path / "ck" / "a.r2ock", state, DIGEST)
    back = load_checkpoint(path, tiny_encoder, tiny_heads, DIGEST)
    assert (back.epoch, back.step, back.opt.step) == (3, 12, 12)
    for net in ("online", "target"):
        src, dst = getattr(state.pair, net), getattr(back.pair, net)
        assert src.params.keys() == dst.params.keys()
        for k in src.params:
            np.testing.assert_array_equal(src.params[k], dst.params[k])
        for k in src.buffers:
            np.testing.assert_array_equal(src.buffers[k], dst.buffers[k])
    assert back.pair.online.with_predictor and not back.pair.target.with_predictor
    for k, v in state.opt.momentum.items():
        np.testing.assert_array_equal(back.opt.momentum[k], v)
    np.testing.assert_array_equal(
        back.shuffle_rng.permutation(10), state.shuffle_rng.permutation(10)
    )


def test_load_then_save_reproduces_bytes(tmp_path, state, tiny_encoder, tiny_heads):
    first = save_checkpoint(tmp_path / "a.r2ock", state, DIGEST)
    back = load_checkpoint(first, tiny_encoder, tiny_heads, DIGEST)
    second = save_checkpoint(tmp_path / "b.r2ock", back, DIGEST)
    assert first.read_bytes() == second.read_bytes()


def test_config_mismatch(tmp_path, state, tiny_encoder, tiny_heads):
    path = save_checkpoint(tmp_path / "a.r2ock", state, DIGEST)
    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(path, tiny_encoder, tiny_heads, OTHER)
    forced = load_checkpoint(path, tiny_encoder, tiny_heads, OTHER, force=True)
    assert forced.epoch == 3
    epoch, target = read_target(path, tiny_encoder, tiny_heads)
    assert epoch == 3
    assert not any(k.startswith("pred.") for k in target.params)
