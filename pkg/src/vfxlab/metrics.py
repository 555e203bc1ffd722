"""Edit-quality metrics.

masked SSIM      standard SSIM (11x11 Gaussian window, sigma 1.5,
                 K1 = 0.01, K2 = 0.03) averaged over windows that lie
                 fully outside the edited region, per frame, then over
                 frames.
directional      mean per-frame cosine between the image-embedding delta
                 (edited - source) and the text-embedding delta. The toy
                 embedder shares one space: 32-bin per-channel color
                 histograms for images, palette-keyword indicators mapped
                 into the same bins for text.
quality scores   four aspect scores in [0, 1] from either a deterministic
                 stub (mask IoU, boundary-gradient continuity, and fixed
                 formula proxies) or a remote chat backend.
"""

import json
import logging
import re
import warnings

import numpy as np
from scipy import ndimage

from vfxlab import kernels
from vfxlab.corpus import PALETTE
from vfxlab.errors import MetricError, PlannerError, ShapeError
from vfxlab.planner import ChatClient, RemoteEndpoint, _json_from_reply, _template
from vfxlab.segment import segment_heuristic
from vfxlab.tensorio import check_mask

log = logging.getLogger("vfxlab.metrics")

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

QUALITY_KEYS = ("text_alignment", "visual_quality", "edit_harmonization", "dynamics")


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    kernel = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return kernel / kernel.sum()


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def _ssim_map(x: np.ndarray, y: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu_x = kernels.window_sums(x, kernel)
    mu_y = kernels.window_sums(y, kernel)
    exx = kernels.window_sums(x * x, kernel)
    eyy = kernels.window_sums(y * y, kernel)
    exy = kernels.window_sums(x * y, kernel)
    var_x = exx - mu_x * mu_x
    var_y = eyy - mu_y * mu_y
    cov = exy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return num / den


def masked_ssim(edited: np.ndarray, original: np.ndarray, exclusion_mask: np.ndarray) -> float:
    """SSIM restricted to windows fully outside the excluded region."""
    edited = np.asarray(edited, dtype=np.float64)
    original = np.asarray(original, dtype=np.float64)
    if edited.shape != original.shape:
        raise ShapeError(f"shape mismatch: {edited.shape} vs {original.shape}")
    mask = check_mask(np.asarray(exclusion_mask, dtype=np.float64))
    if mask.shape != edited.shape[:3]:
        raise ShapeError("mask must match the frame grid")
    kernel = gaussian_window()
    box = np.ones(SSIM_WINDOW, dtype=np.float64)
    frame_scores = []
    for f in range(edited.shape[0]):
        in_window = kernels.window_sums(mask[f], box)
        valid = in_window == 0.0
        if not valid.any():
            continue
        per_channel = [
            _ssim_map(edited[f, :, :, c], original[f, :, :, c], kernel)[valid].mean()
            for c in range(edited.shape[3])
        ]
        frame_scores.append(float(np.mean(per_channel)))
    if not frame_scores:
        raise MetricError("no window lies fully outside the edited region")
    return float(np.mean(frame_scores))


class HistogramEmbedder:
    """Shared toy embedding space for frames and prompts.

    Frames embed as concatenated per-channel histograms; prompts embed as
    indicators of their palette color words, placed into the same bins.
    Both are unit norm (a prompt without color words embeds as zero).
    """

    def __init__(self, bins: int = 32):
        self.bins = bins

    @property
    def dim(self) -> int:
        return 3 * self.bins

    def _bin_of(self, value: float) -> int:
        return min(int(value * self.bins), self.bins - 1)

    def embed_image(self, frame: np.ndarray) -> np.ndarray:
        frame = np.asarray(frame, dtype=np.float64)
        vec = np.zeros(self.dim)
        for c in range(3):
            hist, _ = np.histogram(frame[..., c], bins=self.bins, range=(0.0, 1.0))
            vec[c * self.bins : (c + 1) * self.bins] = hist
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def embed_text(self, prompt: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        words = prompt.lower().split()
        for word in words:
            if word in PALETTE:
                for c, value in enumerate(PALETTE[word]):
                    vec[c * self.bins + self._bin_of(value)] += 1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def directional_score(
    src_frames: np.ndarray,
    edit_frames: np.ndarray,
    src_prompt: str,
    edit_prompt: str,
    embedder=None,
) -> float:
    """Cosine alignment of per-frame image deltas with the prompt delta."""
    if embedder is None:
        embedder = HistogramEmbedder()
    if src_frames.shape != edit_frames.shape:
        raise ShapeError("frame stacks must have equal shapes")
    d_text = embedder.embed_text(edit_prompt) - embedder.embed_text(src_prompt)
    t_norm = np.linalg.norm(d_text)
    if t_norm == 0:
        warnings.warn("zero text-embedding delta; directional score is 0")
        return 0.0
    scores = []
    warned = False
    for f in range(src_frames.shape[0]):
        d_img = embedder.embed_image(edit_frames[f]) - embedder.embed_image(src_frames[f])
        i_norm = np.linalg.norm(d_img)
        if i_norm == 0:
            if not warned:
                warnings.warn("zero image-embedding delta; frame scored 0")
                warned = True
            scores.append(0.0)
            continue
        scores.append(float(d_img @ d_text / (i_norm * t_norm)))
    return float(np.mean(scores))


def _grad_magnitude(frame: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(np.asarray(frame, np.float64), axis=(0, 1))
    return np.sqrt((gy**2 + gx**2).sum(axis=-1))


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = float(np.logical_and(a > 0, b > 0).sum())
    union = float(np.logical_or(a > 0, b > 0).sum())
    return inter / union if union > 0 else 0.0


class StubQualityBackend:
    """Deterministic offline proxies; CI never needs the network.

    text_alignment     IoU of the segmented edit object against reference
                       masks (or presence rate when no reference exists)
    edit_harmonization gradient continuity on a ring just outside the mask
    visual_quality     high-frequency energy ratio vs the original
    dynamics           smoothness of the object-centroid trajectory
    """

    def __init__(self, reference_masks: np.ndarray = None):
        self.reference_masks = reference_masks

    def evaluate(self, original: np.ndarray, edited: np.ndarray, prompt: str) -> dict:
        eps = 1e-6
        seg = segment_heuristic(edited, prompt)
        if self.reference_masks is not None:
            text_alignment = _iou(seg, self.reference_masks)
        else:
            text_alignment = float(np.mean(seg.sum(axis=(1, 2)) > 0))

        ring_scores = []
        for f in range(edited.shape[0]):
            m = seg[f] > 0
            if not m.any():
                continue
            ring = ndimage.binary_dilation(m, iterations=2) & ~ndimage.binary_dilation(m)
            if not ring.any():
                continue
            g_edit = _grad_magnitude(edited[f])[ring].mean()
            g_orig = _grad_magnitude(original[f])[ring].mean()
            ring_scores.append(min(1.0, (g_orig + eps) / (g_edit + eps)))
        harmonization = float(np.mean(ring_scores)) if ring_scores else 1.0

        def high_freq(frames):
            blurred = ndimage.uniform_filter(frames, size=(1, 3, 3, 1))
            return float(np.mean(np.abs(frames - blurred)))

        hf_edit = high_freq(np.asarray(edited, np.float64))
        hf_orig = high_freq(np.asarray(original, np.float64))
        visual_quality = min(1.0, (hf_orig + eps) / (hf_edit + eps))

        centroids = [
            np.argwhere(seg[f] > 0).mean(axis=0)
            for f in range(seg.shape[0])
            if seg[f].any()
        ]
        if len(centroids) < 3:
            dynamics = 0.0
        else:
            track = np.stack(centroids)
            accel = np.diff(track, n=2, axis=0)
            dynamics = float(np.exp(-np.linalg.norm(accel, axis=1).mean() / 4.0))

        return {
            "text_alignment": float(np.clip(text_alignment, 0.0, 1.0)),
            "visual_quality": float(np.clip(visual_quality, 0.0, 1.0)),
            "edit_harmonization": float(np.clip(harmonization, 0.0, 1.0)),
            "dynamics": float(np.clip(dynamics, 0.0, 1.0)),
        }


class RemoteQualityBackend:
    """Chat-backed scoring; the reply must carry four labeled decimals."""

    def __init__(self, endpoint: RemoteEndpoint, template_id: str = "v1"):
        self.endpoint = endpoint
        self.template_id = template_id

    def evaluate(self, original: np.ndarray, edited: np.ndarray, prompt: str) -> dict:
        picks = sorted({0, original.shape[0] // 2, original.shape[0] - 1})
        frames = [original[i] for i in picks] + [edited[i] for i in picks]
        reply = ChatClient(self.endpoint).complete(
            _template(self.template_id, "quality"),
            f"Edit prompt: {prompt}\nFirst {len(picks)} images are original "
            "frames, the rest are edited frames.",
            frames,
        )
        return parse_quality_reply(reply)


def parse_quality_reply(reply: str) -> dict:
    """Accept a JSON object or any reply with four labeled decimals."""
    try:
        data = _json_from_reply(reply)
    except PlannerError:
        data = {}
    scores = {}
    for key in QUALITY_KEYS:
        try:
            scores[key] = float(data[key])
        except (KeyError, TypeError, ValueError):
            pass
    if len(scores) != len(QUALITY_KEYS):
        scores = {}
        for key in QUALITY_KEYS:
            pattern = key.replace("_", "[ _]")
            m = re.search(rf"{pattern}\D{{0,12}}?([01](?:\.\d+)?)", reply, re.IGNORECASE)
            if m:
                scores[key] = float(m.group(1))
    missing = [k for k in QUALITY_KEYS if k not in scores]
    if missing:
        log.warning("unparseable quality reply: %r", reply)
        raise MetricError(f"quality reply missing scores for {missing} (raw reply logged)")
    for key, value in scores.items():
        if not 0.0 <= value <= 1.0:
            raise MetricError(f"quality score {key}={value} outside [0, 1]")
    return scores


def vlm_quality_eval(
    original_frames: np.ndarray, edited_frames: np.ndarray, edit_prompt: str, backend
) -> dict:
    """Four aspect scores from the configured backend; ranges enforced."""
    scores = backend.evaluate(original_frames, edited_frames, edit_prompt)
    for key in QUALITY_KEYS:
        value = scores.get(key)
        if value is None or not np.isfinite(value) or not 0.0 <= value <= 1.0:
            raise MetricError(f"backend produced invalid {key}: {value}")
    return {k: float(scores[k]) for k in QUALITY_KEYS}
