"""Schedule properties, DDIM determinism, inversion, and SDEdit."""

import numpy as np
import pytest

from vfxlab.diffusion import (
    NoiseSchedule,
    ddim_invert,
    ddim_sample,
    ddim_step,
    grid_levels,
    noise_to_level,
    sdedit,
    snap_level,
)
from vfxlab.errors import ConfigError
from vfxlab.model import DiTModel, ModelConfig, tokenize

VOCAB = tuple("a the red blue ball square scene with".split())


def small_model(blocks=2, schedule_steps=100, seed=11):
    cfg = ModelConfig(
        vocab=VOCAB,
        blocks=blocks,
        dim=24,
        heads=2,
        patch=(1, 2, 2),
        schedule_steps=schedule_steps,
        seed=seed,
    )
    model = DiTModel.build(cfg)
    rng = np.random.default_rng(seed)
    for key in model.params:
        model.params[key] = model.params[key] + rng.normal(
            0, 0.02, model.params[key].shape
        ).astype(np.float32)
    return model


def test_alpha_bar_monotone_and_endpoints():
    sched = NoiseSchedule()
    ab = sched.alpha_bars
    assert abs(ab[0] - 1.0) < 1e-6
    assert np.all(np.diff(ab) < 0)
    assert ab[-1] < 1e-3  # essentially pure noise at t = T


def test_grid_levels_cover_range():
    sched = NoiseSchedule()
    levels = grid_levels(sched, 50)
    assert levels[0] == 1000
    assert levels.size == 50
    assert np.all(np.diff(levels) < 0)
    assert levels[-1] > 0
    assert snap_level(levels, 903) in levels.tolist()


def test_noise_to_level_identity_at_zero():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(2, 4, 4, 3)).astype(np.float32)
    out = noise_to_level(x0, 0, NoiseSchedule(), seed=4)
    assert np.array_equal(out, x0)


def test_noise_to_level_seed_determinism():
    x0 = np.zeros((1, 4, 4, 3), dtype=np.float32)
    sched = NoiseSchedule()
    a = noise_to_level(x0, 500, sched, seed=9)
    b = noise_to_level(x0, 500, sched, seed=9)
    c = noise_to_level(x0, 500, sched, seed=10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_noise_at_top_level_decorrelates():
    # statistical oracle over 100 seeds: |corr(x_T, x0)| stays small
    rng = np.random.default_rng(1)
    sched = NoiseSchedule()
    corrs = []
    for seed in range(100):
        x0 = rng.normal(size=(4, 16, 16, 3)).astype(np.float32)
        noised = noise_to_level(x0, sched.train_steps, sched, seed=seed)
        corrs.append(np.corrcoef(x0.ravel(), noised.ravel())[0, 1])
    assert np.mean(np.abs(corrs)) < 0.1


def test_noise_level_out_of_range():
    with pytest.raises(ConfigError):
        noise_to_level(np.zeros((1, 2, 2, 1)), 1001, NoiseSchedule(), 0)


def test_ddim_step_reversible_arithmetic():
    sched = NoiseSchedule(train_steps=100)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 4, 4, 3))
    eps = rng.normal(size=(1, 4, 4, 3))
    up = ddim_step(x, eps, 20, 60, sched)
    back = ddim_step(up, eps, 60, 20, sched)
    assert np.max(np.abs(back - x)) < 1e-9


def test_zero_step_degenerate_call_returns_x0_prediction():
    model = small_model()
    sched = NoiseSchedule(train_steps=100)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 4, 4, 3)).astype(np.float32)
    t = int(grid_levels(sched, 10)[0])
    got = ddim_sample(model, x, t, (), sched, steps=0)
    eps = model.forward(x, t, ())
    ab = sched.alpha_bar(t)
    want = (x - np.sqrt(1 - ab) * eps) / np.sqrt(ab)
    assert np.max(np.abs(got - want)) < 1e-6


def test_sampling_deterministic_under_same_inputs():
    model = small_model()
    sched = NoiseSchedule(train_steps=100)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 4, 4, 3)).astype(np.float32)
    ids = tokenize("red ball", VOCAB)
    a = ddim_sample(model, x, 100, ids, sched, steps=10)
    b = ddim_sample(model, x, 100, ids, sched, steps=10)
    assert np.array_equal(a, b)


def test_sampling_requires_grid_start():
    model = small_model()
    sched = NoiseSchedule(train_steps=100)
    with pytest.raises(ConfigError, match="grid"):
        ddim_sample(model, np.zeros((1, 4, 4, 3), np.float32), 97, (), sched, steps=10)


def test_inversion_cache_counts_and_roundtrip_on_zero_model():
    # fresh model predicts zero noise -> inversion is exact schedule arithmetic
    cfg = ModelConfig(
        vocab=VOCAB, blocks=2, dim=24, heads=2, patch=(1, 2, 2), schedule_steps=100, seed=0
    )
    model = DiTModel.build(cfg)
    sched = NoiseSchedule(train_steps=100)
    rng = np.random.default_rng(5)
    x0 = rng.normal(size=(2, 4, 4, 3)).astype(np.float32)
    x_top, cache, traj = ddim_invert(model, x0, sched, steps=10)
    assert len(cache) == 10 * cfg.blocks
    assert len(traj) == 10
    recon = ddim_sample(model, x_top, 100, (), sched, steps=10)
    assert np.max(np.abs(recon - x0)) < 1e-6
    # zero prediction means pure alpha-bar rescaling on the way up
    want_top = np.sqrt(sched.alpha_bar(100)) * x0.astype(np.float64)
    assert np.max(np.abs(x_top - want_top)) < 1e-6


def test_zero_block_model_cache_empty():
    cfg = ModelConfig(
        vocab=VOCAB, blocks=0, dim=24, heads=2, patch=(1, 2, 2), schedule_steps=100, seed=0
    )
    model = DiTModel.build(cfg)
    sched = NoiseSchedule(train_steps=100)
    x0 = np.random.default_rng(6).normal(size=(2, 4, 4, 3)).astype(np.float32)
    x_top, cache, _ = ddim_invert(model, x0, sched, steps=5)
    assert len(cache) == 0
    recon = ddim_sample(model, x_top, 100, (), sched, steps=5)
    assert np.max(np.abs(recon - x0)) < 1e-6


def test_inversion_roundtrip_with_nonzero_model_close():
    model = small_model(schedule_steps=100)
    sched = NoiseSchedule(train_steps=100)
    rng = np.random.default_rng(7)
    x0 = (0.5 + 0.1 * rng.normal(size=(2, 4, 4, 3))).astype(np.float32)
    x_top, cache, _ = ddim_invert(model, x0, sched, steps=20)
    recon = ddim_sample(model, x_top, 100, (), sched, steps=20)
    rel = np.linalg.norm(recon - x0) / np.linalg.norm(x0)
    assert rel < 0.05


def test_sdedit_strength_validation_and_determinism():
    model = small_model(schedule_steps=100)
    sched = NoiseSchedule(train_steps=100)
    x = np.random.default_rng(8).random((2, 4, 4, 3)).astype(np.float32)
    with pytest.raises(ConfigError):
        sdedit(model, x, 0.0, (), sched, 10, seed=1)
    with pytest.raises(ConfigError):
        sdedit(model, x, 1.5, (), sched, 10, seed=1)
    a = sdedit(model, x, 0.6, (), sched, 10, seed=1)
    b = sdedit(model, x, 0.6, (), sched, 10, seed=1)
    assert np.array_equal(a, b)


def test_sdedit_low_strength_near_identity():
    model = small_model(schedule_steps=100)
    sched = NoiseSchedule(train_steps=100)
    x = np.random.default_rng(9).random((2, 4, 4, 3)).astype(np.float32)
    out = sdedit(model, x, 0.01, (), sched, 100, seed=2)
    rel = np.linalg.norm(out - x) / np.linalg.norm(x)
    assert rel < 0.05


def test_sdedit_error_grows_with_strength():
    model = small_model(schedule_steps=100)
    sched = NoiseSchedule(train_steps=100)
    rng = np.random.default_rng(10)
    wins = 0
    for seed in range(10):
        x = rng.random((2, 4, 4, 3)).astype(np.float32)
        lo = sdedit(model, x, 0.6, (), sched, 10, seed=seed)
        hi = sdedit(model, x, 0.9, (), sched, 10, seed=seed)
        if np.linalg.norm(hi - x) > np.linalg.norm(lo - x):
            wins += 1
    assert wins >= 9
