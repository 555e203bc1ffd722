"""Latent codec: block-average oracle, decode, and mask clustering."""

import numpy as np
import pytest

from vfxlab.errors import ShapeError
from vfxlab.vae import (
    latent_mask_from_pixel_mask,
    pixel_mask_from_latent_mask,
    split_two_means,
    vae_decode,
    vae_encode,
)


def block_average_oracle(video, factors):
    """Independent triple-loop block average in float64."""
    ft, fh, fw = factors
    f, h, w, c = video.shape
    out = np.zeros((f // ft, h // fh, w // fw, c))
    for bf in range(f // ft):
        for bh in range(h // fh):
            for bw in range(w // fw):
                block = video[
                    bf * ft : (bf + 1) * ft,
                    bh * fh : (bh + 1) * fh,
                    bw * fw : (bw + 1) * fw,
                ]
                out[bf, bh, bw] = block.reshape(-1, c).astype(np.float64).mean(axis=0)
    return out


def test_encode_matches_block_average_oracle():
    rng = np.random.default_rng(0)
    video = rng.random((4, 8, 12, 3)).astype(np.float32)
    got = vae_encode(video, (2, 4, 4))
    want = block_average_oracle(video, (2, 4, 4))
    assert np.max(np.abs(got - want)) < 1e-6


def test_encode_constant_video():
    video = np.full((2, 4, 4, 3), 0.5, dtype=np.float32)
    latent = vae_encode(video, (2, 4, 4))
    assert latent.shape == (1, 1, 1, 3)
    assert np.allclose(latent, 0.5)


def test_encode_half_plane_expected_from_oracle():
    video = np.zeros((1, 4, 4, 3), dtype=np.float32)
    video[:, :, 2:, :] = 1.0
    latent = vae_encode(video, (1, 2, 2))
    want = block_average_oracle(video, (1, 2, 2))
    assert np.array_equal(latent, want.astype(np.float32))
    # left blocks average to 0, right blocks to 1, on both latent rows
    assert np.array_equal(latent[0, :, :, 0], np.array([[0.0, 1.0], [0.0, 1.0]]))


def test_unit_factors_are_identity():
    rng = np.random.default_rng(1)
    video = rng.random((2, 3, 5, 3)).astype(np.float32)
    assert np.array_equal(vae_encode(video, (1, 1, 1)), video)
    assert np.array_equal(vae_decode(video, (1, 1, 1)), video)


def test_encode_rejects_indivisible_dims():
    with pytest.raises(ShapeError, match="divisible"):
        vae_encode(np.zeros((3, 4, 4, 3), dtype=np.float32), (2, 4, 4))


def test_decode_upsampling_oracle():
    latent = np.array([[[0.0, 1.0]]], dtype=np.float32)  # (1, 1, 2)
    video = vae_decode(latent, (1, 1, 2))
    assert np.array_equal(video, np.array([[[0.0, 0.0, 1.0, 1.0]]], dtype=np.float32))


def test_decode_zero_latent():
    assert np.array_equal(
        vae_decode(np.zeros((1, 2, 2, 3), dtype=np.float32), (2, 4, 4)),
        np.zeros((2, 8, 8, 3), dtype=np.float32),
    )


def test_encode_decode_identity_on_block_constant():
    rng = np.random.default_rng(2)
    latent = rng.random((2, 3, 3, 3)).astype(np.float32)
    video = vae_decode(latent, (2, 4, 4))
    assert np.allclose(vae_encode(video, (2, 4, 4)), latent, atol=1e-6)


def test_encode_is_linear():
    rng = np.random.default_rng(3)
    v1 = rng.random((4, 8, 8, 3)).astype(np.float32)
    v2 = rng.random((4, 8, 8, 3)).astype(np.float32)
    a, b = 0.3, -1.7
    lhs = vae_encode((a * v1 + b * v2).astype(np.float32), (2, 4, 4))
    rhs = a * vae_encode(v1, (2, 4, 4)) + b * vae_encode(v2, (2, 4, 4))
    assert np.max(np.abs(lhs - rhs)) < 1e-6


def test_mask_all_ones():
    mask = np.ones((2, 8, 8), dtype=np.float32)
    lm = latent_mask_from_pixel_mask(mask, (2, 4, 4))
    assert np.array_equal(lm, np.ones((1, 2, 2), dtype=np.float32))


def test_mask_block_aligned_half_plane():
    mask = np.zeros((2, 8, 8), dtype=np.float32)
    mask[:, :, 4:] = 1.0
    lm = latent_mask_from_pixel_mask(mask, (2, 4, 4))
    want = np.zeros((1, 2, 2), dtype=np.float32)
    want[:, :, 1] = 1.0
    assert np.array_equal(lm, want)


def test_mask_fine_checkerboard_goes_foreground():
    # every 4x4 spatial block averages to exactly 0.5 -> tie rule: foreground
    mask = np.indices((2, 8, 8)).sum(axis=0) % 2
    lm = latent_mask_from_pixel_mask(mask.astype(np.float32), (2, 4, 4))
    assert np.array_equal(lm, np.ones((1, 2, 2), dtype=np.float32))


def test_mask_pipeline_idempotent():
    rng = np.random.default_rng(4)
    mask = (rng.random((4, 16, 16)) > 0.7).astype(np.float32)
    lm = latent_mask_from_pixel_mask(mask, (2, 4, 4))
    pixel = pixel_mask_from_latent_mask(lm, (2, 4, 4))
    again = latent_mask_from_pixel_mask(pixel, (2, 4, 4))
    assert np.array_equal(lm, again)


def test_two_means_higher_cluster_is_foreground():
    vals = np.array([0.0, 0.0, 0.25, 0.25])
    fg = split_two_means(vals)
    assert fg.tolist() == [False, False, True, True]


def test_mask_rejects_non_binary():
    with pytest.raises(ShapeError):
        latent_mask_from_pixel_mask(np.full((2, 8, 8), 0.4, dtype=np.float32), (2, 4, 4))
