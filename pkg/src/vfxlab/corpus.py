"""Synthetic labeled clips: colored shapes moving over textured backgrounds.

Every scene is deterministic under its seed and carries exact per-object
visibility masks (rasterizer coverage >= 0.5 of the top-most object) and
a caption built from the same word stock the planner templates use, so
prompts seen at edit time look like prompts seen in training.

The default corpus is 20 scenes spanning linear and circular motion,
camera pan, and occlusion, each paired with one instruction in the
planner grammar whose requested object occurs elsewhere in the corpus.
"""

import math
from dataclasses import dataclass

import numpy as np

from vfxlab.errors import ConfigError
from vfxlab.model import tokenize
from vfxlab.vae import vae_encode

PALETTE = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.75, 0.10),
    "blue": (0.15, 0.20, 0.90),
    "yellow": (0.90, 0.85, 0.10),
    "magenta": (0.85, 0.10, 0.80),
    "cyan": (0.10, 0.80, 0.85),
    "orange": (0.95, 0.55, 0.10),
    "white": (0.95, 0.95, 0.95),
}

SHAPE_WORDS = {"disk": "ball", "square": "square", "triangle": "triangle"}
BACKGROUNDS = ("night", "meadow", "dusk", "slate")

# 64 words: everything the planner, captions, and instructions may emit
VOCAB = tuple(
    """red green blue yellow magenta cyan orange white
       ball square triangle
       night meadow dusk slate
       a an the and with scene of to
       above below left right next behind near beside
       add create moving drifting rolling spinning floating gliding
       small large bright dark new calm still fast slow deep
       soft pale warm cool clear faint bold tiny huge round
       smooth sharp light heavy wide""".split()
)

SUPERSAMPLE = 4


def palette_color(word: str) -> np.ndarray:
    try:
        return np.array(PALETTE[word], dtype=np.float32)
    except KeyError:
        raise ConfigError(f"no palette entry for color word {word!r}") from None


@dataclass(frozen=True)
class ObjectSpec:
    shape: str  # disk | square | triangle
    color: str  # palette word
    size: float  # radius / half-extent in pixels
    start: tuple  # center (x, y) at frame 0
    motion: str = "linear"  # linear | circular
    velocity: tuple = (0.0, 0.0)  # px/frame (linear)
    orbit: tuple = (0.0, 0.0)  # (radius px, rad/frame) (circular)

    @property
    def label(self) -> str:
        return f"{self.color} {SHAPE_WORDS[self.shape]}"

    def center(self, frame: int) -> tuple:
        x, y = self.start
        if self.motion == "linear":
            return (x + self.velocity[0] * frame, y + self.velocity[1] * frame)
        r, omega = self.orbit
        return (
            x + r * (math.cos(omega * frame) - 1.0),
            y + r * math.sin(omega * frame),
        )


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    background: str
    objects: tuple
    frames: int = 8
    height: int = 64
    width: int = 64
    camera_pan: tuple = (0.0, 0.0)


def _texture(spec: SceneSpec, frame: int) -> np.ndarray:
    """Low-frequency background; camera pan slides the sample coordinates."""
    rng = np.random.default_rng(spec.seed)
    phase = rng.uniform(0, 2 * math.pi, size=3)
    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float32)
    xs = xs + spec.camera_pan[0] * frame
    ys = ys + spec.camera_pan[1] * frame
    h, w = spec.height, spec.width
    if spec.background == "night":
        base = np.stack([0.06 + 0.0 * ys, 0.07 + 0.04 * ys / h, 0.14 + 0.08 * ys / h], -1)
        base += 0.02 * np.sin(2 * math.pi * xs[..., None] / w + phase[0])
    elif spec.background == "meadow":
        stripes = 0.05 * np.sin(2 * math.pi * ys / 24.0 + phase[1])
        base = np.stack([0.08 + stripes, 0.20 + stripes, 0.08 + 0.5 * stripes], -1)
    elif spec.background == "dusk":
        ramp = xs / w
        base = np.stack([0.24 - 0.12 * ramp, 0.11 - 0.03 * ramp, 0.10 + 0.06 * ramp], -1)
        base += 0.015 * np.sin(2 * math.pi * ys[..., None] / 20.0 + phase[2])
    elif spec.background == "slate":
        diag = 0.04 * np.sin(2 * math.pi * (xs + ys) / 28.0 + phase[0])
        base = np.stack([0.15 + diag, 0.15 + diag, 0.17 + diag], -1)
    else:
        raise ConfigError(f"unknown background {spec.background!r}")
    return np.clip(base, 0.0, 1.0).astype(np.float32)


def _coverage(obj: ObjectSpec, spec: SceneSpec, frame: int) -> np.ndarray:
    """Antialiased pixel coverage of one object, via subpixel sampling."""
    s = SUPERSAMPLE
    cx, cy = obj.center(frame)
    cx -= spec.camera_pan[0] * frame
    cy -= spec.camera_pan[1] * frame
    ys, xs = np.mgrid[0 : spec.height * s, 0 : spec.width * s].astype(np.float32)
    xs = (xs + 0.5) / s
    ys = (ys + 0.5) / s
    dx, dy = xs - cx, ys - cy
    r = obj.size
    if obj.shape == "disk":
        inside = dx * dx + dy * dy <= r * r
    elif obj.shape == "square":
        inside = np.maximum(np.abs(dx), np.abs(dy)) <= r
    elif obj.shape == "triangle":
        # vertices: top (0, -r), bottom-left (-.866r, .5r), bottom-right (.866r, .5r)
        ax, ay = 0.0, -r
        bx, by = -0.866 * r, 0.5 * r
        cx2, cy2 = 0.866 * r, 0.5 * r
        d1 = (dx - bx) * (ay - by) - (ax - bx) * (dy - by)
        d2 = (dx - cx2) * (by - cy2) - (bx - cx2) * (dy - cy2)
        d3 = (dx - ax) * (cy2 - ay) - (cx2 - ax) * (dy - ay)
        neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
        pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
        inside = ~(neg & pos)
    else:
        raise ConfigError(f"unknown shape {obj.shape!r}")
    blocks = inside.astype(np.float32).reshape(spec.height, s, spec.width, s)
    return blocks.mean(axis=(1, 3))


def _check_bounds(spec: SceneSpec) -> None:
    labels = [o.label for o in spec.objects]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate object labels in scene: {labels}")
    for obj in spec.objects:
        for f in range(spec.frames):
            cx, cy = obj.center(f)
            cx -= spec.camera_pan[0] * f
            cy -= spec.camera_pan[1] * f
            if not (
                obj.size <= cx <= spec.width - 1 - obj.size
                and obj.size <= cy <= spec.height - 1 - obj.size
            ):
                raise ConfigError(
                    f"object {obj.label!r} leaves the frame at frame {f}"
                )


def generate(spec: SceneSpec):
    """Render a scene. Returns (video, {label: mask track}, labels).

    Edges are antialiased over a compressed sub-pixel ramp (coverage 0.25
    composites as transparent, coverage 0.5 as fully opaque); the
    visibility masks follow the raw coverage >= 0.5 rule, so every mask
    pixel of an unoccluded object carries the exact palette color.
    """
    _check_bounds(spec)
    video = np.empty((spec.frames, spec.height, spec.width, 3), dtype=np.float32)
    tracks = {
        obj.label: np.zeros((spec.frames, spec.height, spec.width), dtype=np.float32)
        for obj in spec.objects
    }
    for f in range(spec.frames):
        canvas = _texture(spec, f)
        coverages = [_coverage(obj, spec, f) for obj in spec.objects]
        for i, obj in enumerate(spec.objects):
            alpha = np.clip((coverages[i][..., None] - 0.25) / 0.25, 0.0, 1.0)
            canvas = canvas * (1.0 - alpha) + palette_color(obj.color) * alpha
            visible = coverages[i].copy()
            for later in coverages[i + 1 :]:
                visible *= 1.0 - later
            tracks[obj.label][f] = (visible >= 0.5).astype(np.float32)
        video[f] = canvas
    return np.clip(video, 0.0, 1.0), tracks, [o.label for o in spec.objects]


RELATION_WORDS = ("above", "below", "left of", "right of", "next to", "behind", "near")


def _relation_between(a: ObjectSpec, b: ObjectSpec, spec: SceneSpec) -> str:
    """Dominant spatial relation of a w.r.t. b at the middle frame."""
    f = spec.frames // 2
    ax, ay = a.center(f)
    bx, by = b.center(f)
    dx, dy = ax - bx, ay - by
    if abs(dy) >= abs(dx):
        return "above" if dy < 0 else "below"
    return "left of" if dx < 0 else "right of"


def scene_caption(spec: SceneSpec) -> str:
    """Training caption in the same template family the planner emits."""
    objs = spec.objects
    if len(objs) == 1:
        return f"a scene with a {objs[0].label}"
    if spec.seed % 2 == 0:
        rel = _relation_between(objs[0], objs[1], spec)
        return f"a scene with a {objs[0].label} {rel} the {objs[1].label}"
    return f"a scene with a {objs[0].label} and a {objs[1].label}"


@dataclass(frozen=True)
class CorpusItem:
    name: str
    spec: SceneSpec
    instruction: str


def _obj(shape, color, size, start, motion="linear", velocity=(0.0, 0.0), orbit=(0.0, 0.0)):
    return ObjectSpec(shape, color, size, start, motion, velocity, orbit)


def default_corpus() -> list:
    """The fixed 20-scene corpus with paired edit instructions."""
    scenes = [
        (SceneSpec(100, "night", (_obj("square", "blue", 9, (24, 40), velocity=(1.0, 0.0)),)),
         "add a red ball above the blue square"),
        (SceneSpec(101, "meadow", (_obj("disk", "red", 9, (18, 22), velocity=(2.0, 0.5)),)),
         "add a blue square below the red ball"),
        (SceneSpec(102, "dusk", (_obj("triangle", "green", 10, (32, 32), motion="circular", orbit=(6.0, 0.5)),)),
         "add a yellow ball near the green triangle"),
        (SceneSpec(103, "slate", (_obj("disk", "yellow", 8, (40, 16), velocity=(0.0, 2.0)),)),
         "add a green triangle below the yellow ball"),
        (SceneSpec(104, "night", (_obj("disk", "red", 9, (16, 32), velocity=(3.0, 0.0)),
                                  _obj("square", "blue", 9, (40, 32), velocity=(-1.0, 0.0)))),
         "add a white ball above the red ball"),
        (SceneSpec(105, "meadow", (_obj("square", "magenta", 9, (30, 30), velocity=(0.5, 0.5)),),
                   camera_pan=(1.0, 0.0)),
         "add a cyan triangle left of the magenta square"),
        (SceneSpec(106, "slate", (_obj("triangle", "cyan", 10, (26, 38), velocity=(1.5, -1.0)),)),
         "add a magenta square right of the cyan triangle"),
        (SceneSpec(107, "dusk", (_obj("disk", "white", 8, (44, 24), velocity=(-1.5, 1.0)),)),
         "add an orange ball next to the white ball"),
        (SceneSpec(108, "night", (_obj("disk", "orange", 8, (20, 20), velocity=(1.0, 1.5)),
                                  _obj("triangle", "green", 9, (44, 44), velocity=(-0.5, 0.0)))),
         "add a blue square near the orange ball"),
        (SceneSpec(109, "meadow", (_obj("square", "blue", 8, (18, 44), velocity=(1.0, -1.0)),
                                   _obj("disk", "yellow", 8, (44, 18), velocity=(-1.0, 1.0)))),
         "add a red ball behind the blue square"),
        (SceneSpec(110, "slate", (_obj("disk", "red", 9, (32, 28), motion="circular", orbit=(8.0, 0.4)),)),
         "add a green triangle above the red ball"),
        (SceneSpec(111, "dusk", (_obj("triangle", "green", 9, (22, 26), velocity=(0.5, 0.5)),
                                 _obj("disk", "white", 8, (42, 40), velocity=(0.0, -1.0))),
                   camera_pan=(0.0, 1.0)),
         "add a blue square left of the white ball"),
        (SceneSpec(112, "night", (_obj("disk", "yellow", 8, (20, 36), velocity=(2.0, 0.0)),
                                  _obj("square", "magenta", 9, (44, 20), velocity=(-0.5, 1.0)))),
         "add a cyan triangle right of the yellow ball"),
        (SceneSpec(113, "meadow", (_obj("triangle", "cyan", 10, (36, 30), velocity=(-1.5, 0.5)),)),
         "add a white ball above the cyan triangle"),
        (SceneSpec(114, "slate", (_obj("disk", "white", 8, (24, 24), velocity=(1.0, 1.0)),
                                  _obj("disk", "red", 8, (44, 40), velocity=(-1.0, -0.5)))),
         "add a yellow ball below the white ball"),
        (SceneSpec(115, "dusk", (_obj("disk", "orange", 9, (30, 36), velocity=(1.5, -0.5)),),
                   camera_pan=(-1.0, 0.0)),
         "add a magenta square near the orange ball"),
        (SceneSpec(116, "night", (_obj("square", "magenta", 9, (20, 28), velocity=(1.0, 0.5)),
                                  _obj("triangle", "cyan", 9, (44, 38), velocity=(-1.0, 0.0)))),
         "add an orange ball next to the magenta square"),
        (SceneSpec(117, "meadow", (_obj("square", "blue", 9, (32, 34), motion="circular", orbit=(7.0, 0.45)),)),
         "add a green triangle behind the blue square"),
        (SceneSpec(118, "slate", (_obj("triangle", "green", 9, (24, 40), velocity=(1.0, -1.0)),
                                  _obj("disk", "yellow", 8, (44, 20), velocity=(0.0, 1.5)))),
         "add a red ball left of the green triangle"),
        (SceneSpec(119, "dusk", (_obj("disk", "red", 9, (22, 22), velocity=(1.5, 1.0)),
                                 _obj("disk", "white", 8, (44, 44), velocity=(-1.0, -1.0))),
                   camera_pan=(0.5, 0.5)),
         "add a blue square right of the red ball"),
    ]
    return [
        CorpusItem(name=f"scene{idx:02d}", spec=spec, instruction=instruction)
        for idx, (spec, instruction) in enumerate(scenes)
    ]


def training_items(corpus, factors=(2, 4, 4)) -> list:
    """(latent, text ids) pairs for train_toy."""
    items = []
    for item in corpus:
        video, _, _ = generate(item.spec)
        latent = vae_encode(video, factors)
        ids = tokenize(scene_caption(item.spec), VOCAB)
        items.append((latent, ids))
    return items
