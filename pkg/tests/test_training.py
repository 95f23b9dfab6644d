import numpy as np
import pytest
import torch

from lobdiffusion.diffusion import linear_beta_schedule
from lobdiffusion.training import (
    TrainOptions, load_checkpoint, model_from_checkpoint, save_checkpoint, smoothed, train,
)
from lobdiffusion.unet import UNetConfig, build_unet

TINY = UNetConfig(resolution=8, block_channels=(8, 8), attention_at=(1,), norm_groups=4, time_embed_dim=8)
SCHED = linear_beta_schedule(100)


def _data(n=6, seed=0):
    return np.random.default_rng(seed).normal(size=(n, 8, 8, 2)).astype(np.float32)


def _weights(model):
    return [p.detach().clone() for p in model.parameters()]


def test_single_pass_step_count():
    res = train(build_unet(TINY), _data(10), TrainOptions(batch_size=4, log_every=0), SCHED, 4)
    assert res.step == 3 and len(res.loss_trace) == 3
    res = train(build_unet(TINY), _data(10), TrainOptions(batch_size=4, steps=7, log_every=0), SCHED, 4)
    assert res.step == 7


def test_zero_learning_rate_keeps_weights():
    model = build_unet(TINY)
    before = _weights(model)
    train(model, _data(), TrainOptions(lr=0.0, batch_size=2, log_every=0), SCHED, 4)
    assert all(torch.equal(a, b) for a, b in zip(before, _weights(model)))


def test_training_is_deterministic():
    opts = TrainOptions(batch_size=2, steps=5, log_every=0)
    a = train(build_unet(TINY, 3), _data(), opts, SCHED, 4, rng=9)
    b = train(build_unet(TINY, 3), _data(), opts, SCHED, 4, rng=9)
    assert a.loss_trace == b.loss_trace
    assert all(torch.equal(x, y) for x, y in zip(_weights(a.model), _weights(b.model)))
    c = train(build_unet(TINY, 3), _data(), opts, SCHED, 4, rng=10)
    assert c.loss_trace != a.loss_trace


def test_resume_matches_uninterrupted(tmp_path):
    # 6 images at batch 2: resuming after a whole pass continues the same stream
    data = _data()
    full = train(build_unet(TINY, 1), data, TrainOptions(batch_size=2, steps=6, log_every=0), SCHED, 4, rng=2)
    path = tmp_path / "ck.pt"
    train(build_unet(TINY, 1), data,
          TrainOptions(batch_size=2, steps=3, log_every=0, checkpoint_path=str(path)), SCHED, 4, rng=2)
    ckpt = load_checkpoint(path)
    assert ckpt["step"] == 3
    rest = train(model_from_checkpoint(ckpt), data, TrainOptions(batch_size=2, steps=3, log_every=0),
                 SCHED, 4, resume=ckpt)
    assert rest.step == 6
    assert rest.loss_trace == full.loss_trace
    assert all(torch.equal(a, b) for a, b in zip(_weights(rest.model), _weights(full.model)))


def test_checkpoint_round_trip(tmp_path):
    res = train(build_unet(TINY, 4), _data(), TrainOptions(batch_size=3, log_every=0), SCHED, 4)
    path = tmp_path / "m.pt"
    save_checkpoint(path, res.model, res.optimizer, res.generator, res.step, res.loss_trace, {"k": 1})
    ckpt = load_checkpoint(path)
    assert ckpt["config"] == {"k": 1}
    model = model_from_checkpoint(ckpt)
    x = torch.randn(1, 8, 8, 5)
    with torch.no_grad():
        assert torch.equal(model(x, 5), res.model(x, 5))
    torch.save({"format": "other"}, tmp_path / "bad.pt")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.pt")


def test_rejects_bad_dataset():
    with pytest.raises(ValueError):
        train(build_unet(TINY), np.zeros((0, 8, 8, 2)), TrainOptions(), SCHED, 4)


def test_overfits_single_image_tiny():
    torch.manual_seed(0)
    data = np.repeat(_data(1, seed=5), 8, axis=0)
    res = train(build_unet(TINY, 0), data, TrainOptions(lr=2e-3, batch_size=8, steps=600, log_every=0),
                SCHED, 4, rng=0)
    assert np.mean(res.loss_trace[-100:]) < 0.25
    assert np.mean(res.loss_trace[-100:]) < 0.5 * np.mean(res.loss_trace[:20])


def test_smoothed():
    np.testing.assert_allclose(smoothed([1, 2, 3, 4], window=2), [1.5, 2.5, 3.5])
    assert smoothed([5.0], window=50).tolist() == [5.0]
