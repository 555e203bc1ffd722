"""Text-conditioned mask extraction over synthetic clips.

Two segmenters cover the pipeline's needs: an oracle that returns stored
ground-truth tracks for corpus clips (matched by label containment), and
a color heuristic for generated content, where no ground truth exists.
The heuristic thresholds pixels near the phrase's palette color, keeps
the largest connected component per frame, and closes small holes. It
deliberately ignores secondary effects (shadows, reflections): masks
cover the object body only.
"""

import numpy as np
from scipy import ndimage

from vfxlab.corpus import PALETTE, palette_color
from vfxlab.errors import SegmentationError

COLOR_TOLERANCE = 0.15


def segment_oracle(video: np.ndarray, phrase: str, tracks: dict) -> np.ndarray:
    """Stored track whose label matches the phrase by containment.

    The longest matching label wins; an exact length tie is ambiguous and
    raises. An unknown phrase yields all-zero masks.
    """
    needle = phrase.lower().strip()
    matches = [
        label
        for label in tracks
        if label.lower() in needle or needle in label.lower()
    ]
    if not matches:
        return np.zeros(video.shape[:3], dtype=np.float32)
    best = max(len(m) for m in matches)
    winners = [m for m in matches if len(m) == best]
    if len(winners) > 1:
        raise SegmentationError(
            f"phrase {phrase!r} is ambiguous between labels {sorted(winners)}"
        )
    return tracks[winners[0]].astype(np.float32)


def _phrase_color(phrase: str):
    words = phrase.lower().split()
    for word in words:
        if word in PALETTE:
            return palette_color(word)
    raise SegmentationError(f"phrase {phrase!r} names no palette color")


def segment_heuristic(
    video: np.ndarray, phrase: str, tolerance: float = COLOR_TOLERANCE
) -> np.ndarray:
    """Per-frame mask of the largest blob near the phrase's palette color."""
    color = _phrase_color(phrase)
    video = np.asarray(video, dtype=np.float32)
    masks = np.zeros(video.shape[:3], dtype=np.float32)
    structure = np.ones((3, 3), dtype=bool)
    for f in range(video.shape[0]):
        dist = np.sqrt(((video[f] - color) ** 2).sum(axis=-1))
        hit = dist <= tolerance
        if not hit.any():
            continue
        labeled, count = ndimage.label(hit)
        if count == 0:
            continue
        sizes = ndimage.sum_labels(hit, labeled, index=np.arange(1, count + 1))
        largest = labeled == (1 + int(np.argmax(sizes)))
        closed = ndimage.binary_closing(largest, structure=structure)
        masks[f] = closed.astype(np.float32)
    return masks


class Segmenter:
    """Bundles both segmenters for one source clip and its tracks."""

    def __init__(self, tracks: dict):
        self.tracks = tracks

    def for_original(self, video: np.ndarray, phrase: str) -> np.ndarray:
        return segment_oracle(video, phrase, self.tracks)

    def for_generated(self, video: np.ndarray, phrase: str) -> np.ndarray:
        return segment_heuristic(video, phrase)
