"""Toy transformer: tokenization, patchify oracle, forward properties."""

import numpy as np
import pytest

from vfxlab.errors import ConfigError, ShapeError
from vfxlab.model import (
    DiTModel,
    ModelConfig,
    load_checkpoint,
    patchify,
    save_checkpoint,
    tokenize,
    unpatchify,
)

VOCAB = tuple("a an the red blue green ball square scene with and above below".split())


def tiny_config(**kw):
    base = dict(
        vocab=VOCAB,
        blocks=2,
        dim=24,
        heads=2,
        patch=(1, 2, 2),
        latent_channels=3,
        schedule_steps=50,
        seed=5,
    )
    base.update(kw)
    return ModelConfig(**base)


def test_patchify_unit_patch_tokens_are_cells():
    rng = np.random.default_rng(0)
    latent = rng.normal(size=(2, 3, 4, 3)).astype(np.float32)
    tokens, positions, grid = patchify(latent, (1, 1, 1))
    assert tokens.shape == (24, 3)
    assert grid == (2, 3, 4)
    assert np.array_equal(tokens.reshape(2, 3, 4, 3), latent)
    assert np.array_equal(positions[0], [0, 0, 0])
    assert np.array_equal(positions[-1], [1, 2, 3])


def test_patchify_scan_order_index_oracle():
    # 2x4x4 latent, patch (1,2,2) -> 8 tokens ordered t-major, then h, then w
    latent = np.arange(2 * 4 * 4, dtype=np.float32).reshape(2, 4, 4, 1)
    tokens, positions, grid = patchify(latent, (1, 2, 2))
    assert tokens.shape == (8, 4)
    want_positions = [
        (t, h, w) for t in range(2) for h in range(2) for w in range(2)
    ]
    assert positions.tolist() == [list(p) for p in want_positions]
    for n, (t, h, w) in enumerate(want_positions):
        block = latent[t, 2 * h : 2 * h + 2, 2 * w : 2 * w + 2, 0].reshape(-1)
        assert np.array_equal(tokens[n], block)


def test_patchify_roundtrip():
    rng = np.random.default_rng(1)
    latent = rng.normal(size=(4, 6, 8, 3)).astype(np.float32)
    tokens, _, grid = patchify(latent, (2, 3, 2))
    assert np.array_equal(unpatchify(tokens, grid, (2, 3, 2), 3), latent)


def test_patchify_rejects_indivisible():
    with pytest.raises(ShapeError):
        patchify(np.zeros((3, 4, 4, 3)), (2, 2, 2))


def test_tokenize_drops_unknown_words_with_warning():
    ids = tokenize("the red ball", VOCAB)
    assert ids.tolist() == [VOCAB.index("the"), VOCAB.index("red"), VOCAB.index("ball")]
    with pytest.warns(UserWarning, match="out-of-vocabulary"):
        yielded = tokenize("a purple whale", VOCAB)
    assert yielded.tolist() == [VOCAB.index("a")]


def test_forward_deterministic_and_shaped():
    model = DiTModel.build(tiny_config())
    rng = np.random.default_rng(2)
    latent = rng.normal(size=(2, 4, 4, 3)).astype(np.float32)
    ids = tokenize("red ball above the square", VOCAB)
    a = model.forward(latent, 17, ids)
    b = model.forward(latent, 17, ids)
    assert a.shape == latent.shape
    assert np.array_equal(a, b)


def test_fresh_model_predicts_zero():
    model = DiTModel.build(tiny_config())
    rng = np.random.default_rng(3)
    latent = rng.normal(size=(2, 4, 4, 3)).astype(np.float32)
    out = model.forward(latent, 9, tokenize("red ball", VOCAB))
    assert np.array_equal(out, np.zeros_like(latent))


def test_trained_like_weights_nonzero_everywhere():
    model = DiTModel.build(tiny_config())
    rng = np.random.default_rng(4)
    model.params["patch_out_w"] += rng.normal(0, 0.02, model.params["patch_out_w"].shape).astype(np.float32)
    latent = rng.normal(size=(2, 4, 4, 3)).astype(np.float32)
    out = model.forward(latent, 9, tokenize("red ball", VOCAB))
    assert np.any(out != 0)


def test_vocab_row_permutation_invariance():
    cfg = tiny_config()
    model = DiTModel.build(cfg)
    rng = np.random.default_rng(5)
    model.params["patch_out_w"] += rng.normal(0, 0.02, model.params["patch_out_w"].shape).astype(np.float32)
    latent = rng.normal(size=(2, 4, 4, 3)).astype(np.float32)
    ids = tokenize("blue square below a ball", VOCAB)
    base = model.forward(latent, 21, ids)

    perm = rng.permutation(len(cfg.vocab))
    inv = np.argsort(perm)
    permuted = DiTModel(cfg, {k: v.copy() for k, v in model.params.items()})
    permuted.params["vocab_emb"] = model.params["vocab_emb"][perm]
    out = permuted.forward(latent, 21, inv[ids])
    assert np.array_equal(base, out)


def test_forward_rejects_bad_ids_and_shapes():
    model = DiTModel.build(tiny_config())
    latent = np.zeros((2, 4, 4, 3), dtype=np.float32)
    with pytest.raises(ConfigError, match="vocabulary"):
        model.forward(latent, 3, np.array([999]))
    with pytest.raises(ShapeError):
        model.forward(np.zeros((2, 4, 4, 2), dtype=np.float32), 3)
    with pytest.raises(ConfigError, match="timestep"):
        model.forward(latent, 51)


def test_empty_prompt_supported():
    model = DiTModel.build(tiny_config())
    latent = np.ones((2, 4, 4, 3), dtype=np.float32)
    out = model.forward(latent, 5, ())
    assert out.shape == latent.shape


def test_tape_forward_matches_processor_forward():
    model = DiTModel.build(tiny_config())
    rng = np.random.default_rng(6)
    for key in model.params:
        model.params[key] = model.params[key] + rng.normal(
            0, 0.01, model.params[key].shape
        ).astype(np.float32)
    latent = rng.normal(size=(2, 4, 4, 3)).astype(np.float32)
    ids = tokenize("red ball", VOCAB)
    tape = []
    a = model.forward(latent, 13, ids, tape=tape)
    b = model.forward(latent, 13, ids)
    assert np.max(np.abs(a - b)) < 1e-5
    assert len(tape) == model.cfg.blocks + 2


def test_checkpoint_roundtrip(tmp_path):
    model = DiTModel.build(tiny_config())
    save_checkpoint(model, tmp_path / "ckpt")
    back = load_checkpoint(tmp_path / "ckpt")
    assert back.cfg == model.cfg
    for key, value in model.params.items():
        assert np.array_equal(back.params[key], value)
    latent = np.random.default_rng(7).normal(size=(2, 4, 4, 3)).astype(np.float32)
    assert np.array_equal(back.forward(latent, 3), model.forward(latent, 3))


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(vocab=VOCAB, dim=20, heads=2)  # not divisible by 6
    with pytest.raises(ConfigError):
        ModelConfig(vocab=VOCAB, dim=24, heads=5)
    with pytest.raises(ConfigError):
        ModelConfig(vocab=())
