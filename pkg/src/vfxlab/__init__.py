"""Desk-scale video augmentation toolkit.

Adds new dynamic content to short synthetic clips: a small text-to-video
diffusion transformer is steered during sampling by attention features
captured from the original clip, and the result is composited back so that
everything outside the new content stays untouched.

Subpackages and modules:
    kernels    numeric hot loops (numba-accelerated, numpy fallback)
    tensorio   tensor file format, PNG frame sequences
    vae        block-average latent codec and latent masks
    rope       multi-axis rotary position embeddings
    model      the toy diffusion transformer
    attention  attention processors (standard / extended / anchored)
    diffusion  noise schedule, DDIM sampling and inversion
    train      toy training loop (backprop + Adam)
    corpus     synthetic labeled video generator
    segment    text-conditioned mask extraction
    planner    scene planning (stub, naive, remote chat API)
    metrics    masked SSIM, directional similarity, quality scores
    pipeline   the full edit loop and its ablations
    cli        command-line entry point
"""

from vfxlab.errors import VfxError

__version__ = "0.1.0"

__all__ = ["VfxError", "__version__"]
