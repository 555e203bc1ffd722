"""Array containers, the tensor file format, and PNG frame sequences.

Array conventions used across the package (all float32):

    video clip    (frames, height, width, 3), values in [0, 1]
    latent clip   (lf, lh, lw, channels)
    pixel mask    (frames, height, width), values in {0, 1}
    latent mask   (lf, lh, lw), values in {0, 1}

Tensor file layout (little-endian throughout):

    magic     8 bytes  b"VFXTENSR"
    dtype     uint32   1 = float32 (the only supported code)
    rank      uint32
    dims      rank * uint64
    payload   prod(dims) * 4 bytes, row-major float32
"""

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from vfxlab.errors import FormatError, ShapeError

MAGIC = b"VFXTENSR"
DTYPE_FLOAT32 = 1

FRAME_PATTERN = "frame_%05d.png"
MASK_PATTERN = "mask_%05d.png"


def check_video(video: np.ndarray) -> np.ndarray:
    """Validate a video clip array and return it unchanged."""
    video = np.asarray(video)
    if video.ndim != 4 or video.shape[3] != 3:
        raise ShapeError(f"video must be (frames, h, w, 3), got {video.shape}")
    if video.shape[0] < 1:
        raise ShapeError("video must have at least one frame")
    if not np.all(np.isfinite(video)):
        raise ShapeError("video contains non-finite values")
    if video.min() < 0.0 or video.max() > 1.0:
        raise ShapeError("video values must lie in [0, 1]")
    return video


def check_mask(mask: np.ndarray, ndim: int = 3) -> np.ndarray:
    """Validate a binary mask array (values strictly 0 or 1)."""
    mask = np.asarray(mask)
    if mask.ndim != ndim:
        raise ShapeError(f"mask must have {ndim} dims, got shape {mask.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ShapeError("mask values must be exactly 0 or 1")
    return mask


def write_tensor(path, arr: np.ndarray) -> None:
    """Serialize a float32 array; round-trips bit-exactly for any rank."""
    arr = np.ascontiguousarray(arr)
    if arr.dtype != np.float32:
        raise FormatError(f"tensor files hold float32, got {arr.dtype}")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", DTYPE_FLOAT32, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype("<f4", copy=False).tobytes())


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a tensor file")
    off = len(MAGIC)
    dtype_code, rank = struct.unpack_from("<II", raw, off)
    off += 8
    if dtype_code != DTYPE_FLOAT32:
        raise FormatError(f"{path}: unknown dtype code {dtype_code}")
    if len(raw) < off + 8 * rank:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}Q", raw, off)
    off += 8 * rank
    count = 1
    for d in dims:
        count *= d
    expected = off + 4 * count
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload length {len(raw) - off} != expected {4 * count}"
        )
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
    return data.reshape(dims).astype(np.float32, copy=True)


def write_bundle(directory, tensors: dict) -> None:
    """Write a named set of tensors as individual files plus an index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {}
    for name, arr in tensors.items():
        fname = name.replace("/", "_") + ".vft"
        write_tensor(directory / fname, arr)
        index[name] = fname
    with open(directory / "index.json", "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)


def read_bundle(directory) -> dict:
    directory = Path(directory)
    index_path = directory / "index.json"
    if not index_path.exists():
        raise FormatError(f"{directory}: missing bundle index.json")
    index = json.loads(index_path.read_text())
    return {name: read_tensor(directory / fname) for name, fname in index.items()}


def save_frames(directory, video: np.ndarray, pattern: str = FRAME_PATTERN) -> None:
    """Export a video clip as 8-bit sRGB PNG frames."""
    video = check_video(video)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    as_u8 = np.clip(np.rint(video * 255.0), 0, 255).astype(np.uint8)
    for i in range(as_u8.shape[0]):
        Image.fromarray(as_u8[i], mode="RGB").save(directory / (pattern % i))


def load_frames(directory, pattern: str = FRAME_PATTERN) -> np.ndarray:
    directory = Path(directory)
    frames = []
    i = 0
    while (directory / (pattern % i)).exists():
        with Image.open(directory / (pattern % i)) as img:
            frames.append(np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0)
        i += 1
    if not frames:
        raise FormatError(f"{directory}: no frames matching {pattern!r}")
    return np.stack(frames)


def save_mask_frames(directory, mask: np.ndarray, pattern: str = MASK_PATTERN) -> None:
    """Export a per-frame binary mask as 1-bit PNGs."""
    mask = check_mask(mask)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(mask.shape[0]):
        Image.fromarray(mask[i].astype(bool)).convert("1").save(
            directory / (pattern % i)
        )


def load_mask_frames(directory, pattern: str = MASK_PATTERN) -> np.ndarray:
    directory = Path(directory)
    frames = []
    i = 0
    while (directory / (pattern % i)).exists():
        with Image.open(directory / (pattern % i)) as img:
            frames.append(np.asarray(img.convert("1"), dtype=np.float32))
        i += 1
    if not frames:
        raise FormatError(f"{directory}: no masks matching {pattern!r}")
    return np.stack(frames)
