"""Rotary embeddings: identity, isometry, and per-axis shift invariance."""

import numpy as np
import pytest

from vfxlab.errors import ShapeError
from vfxlab.rope import RopeConfig, apply_rope, text_positions, text_rope_config

CFG = RopeConfig(base=10000.0, axis_dims=(8, 8, 8))


def test_zero_position_is_identity():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 24))
    pos = np.zeros((5, 3), dtype=np.int64)
    assert np.array_equal(apply_rope(x, pos, CFG), x)


def test_norm_preserved():
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.normal(size=(7, 24))
        pos = rng.integers(0, 40, size=(7, 3))
        y = apply_rope(x, pos, CFG)
        assert np.max(np.abs(np.linalg.norm(y, axis=1) - np.linalg.norm(x, axis=1))) < 1e-6


def test_shift_invariance_per_axis():
    rng = np.random.default_rng(2)
    for trial in range(100):
        q = rng.normal(size=(1, 24))
        k = rng.normal(size=(1, 24))
        pi = rng.integers(0, 30, size=(1, 3))
        pj = rng.integers(0, 30, size=(1, 3))
        base = (apply_rope(q, pi, CFG) @ apply_rope(k, pj, CFG).T).item()
        axis = trial % 3
        shift = np.zeros((1, 3), dtype=np.int64)
        shift[0, axis] = int(rng.integers(1, 20))
        shifted = (
            apply_rope(q, pi + shift, CFG) @ apply_rope(k, pj + shift, CFG).T
        ).item()
        assert abs(base - shifted) < 1e-5


def test_heads_share_angles():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 4, 24))
    pos = rng.integers(0, 10, size=(4, 3))
    batched = apply_rope(x, pos, CFG)
    for h in range(3):
        assert np.array_equal(batched[h], apply_rope(x[h], pos, CFG))


def test_dim_mismatch_rejected():
    with pytest.raises(ShapeError):
        apply_rope(np.zeros((2, 10)), np.zeros((2, 3)), CFG)
    with pytest.raises(ShapeError):
        apply_rope(np.zeros((2, 24)), np.zeros((3, 3)), CFG)


def test_config_validation():
    with pytest.raises(ShapeError):
        RopeConfig(axis_dims=(7, 8, 9))
    with pytest.raises(ShapeError):
        RopeConfig(axis_dims=(0, 0, 0))


def test_text_rope_is_one_dimensional():
    cfg = text_rope_config(8)
    rng = np.random.default_rng(4)
    q = rng.normal(size=(1, 8))
    k = rng.normal(size=(1, 8))
    pos = text_positions(6)
    assert pos.shape == (6, 3)
    # shift along the text index keeps relative dot products
    a = (apply_rope(q, pos[1:2], cfg) @ apply_rope(k, pos[3:4], cfg).T).item()
    b = (apply_rope(q, pos[2:3], cfg) @ apply_rope(k, pos[4:5], cfg).T).item()
    assert abs(a - b) < 1e-8
