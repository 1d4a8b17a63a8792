"""Procedural sprite and scene corpus with exact ground truth.

Sprites are anti-aliased vector shapes rendered at 32x32 with a known hue,
size, brightness pattern, jitter, and rotation; scenes composite sprites
over parametric backgrounds at 64x64.  Because every pixel is derived from
the spec, alpha masks and attribute labels are exact, which is what the
attribute oracle and the evaluation harness lean on.
"""

from __future__ import annotations

import colorsys
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import ConfigurationError, ContractError
from .images import RgbaImage, rgba_from_parts, save_png, rgb_to_png_bytes
from .metrics import iou

SHAPES = ("circle", "square", "triangle", "star")
COLORS = ("red", "orange", "lime", "green", "cyan", "blue", "purple", "magenta")
COLOR_HUES = {name: 45.0 * i for i, name in enumerate(COLORS)}  # degrees, 45° apart
HUE_BAND = 22.5  # half-width of each color's hue band
SIZES = {"small": 6.0, "medium": 9.0, "large": 12.0}  # circumradius in pixels
PATTERNS = ("solid", "striped", "dotted")
BACKGROUNDS = ("void", "gradient_h", "gradient_v", "radial", "checker")

SPRITE_HW = 32
SCENE_HW = 64
_SS = 8  # supersampling factor for anti-aliased rendering


@dataclass(frozen=True)
class SpriteSpec:
    """Complete recipe for one sprite; rendering it is deterministic."""

    shape: str
    color: str
    size: str
    pattern: str = "solid"
    jitter: tuple = (0.0, 0.0)  # (dx, dy) pixel offset of the center
    rotation: float = 0.0       # degrees

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigurationError(f"unknown shape {self.shape!r}; choose from {SHAPES}")
        if self.color not in COLORS:
            raise ConfigurationError(f"unknown color {self.color!r}; choose from {COLORS}")
        if self.size not in SIZES:
            raise ConfigurationError(f"unknown size {self.size!r}; choose from {tuple(SIZES)}")
        if self.pattern not in PATTERNS:
            raise ConfigurationError(f"unknown pattern {self.pattern!r}; choose from {PATTERNS}")

    def as_condition(self) -> dict:
        return {"shape": self.shape, "color": self.color,
                "size": self.size, "pattern": self.pattern}


def random_sprite_spec(rng: np.random.Generator) -> SpriteSpec:
    return SpriteSpec(
        shape=SHAPES[rng.integers(len(SHAPES))],
        color=COLORS[rng.integers(len(COLORS))],
        size=tuple(SIZES)[rng.integers(len(SIZES))],
        pattern=PATTERNS[rng.integers(len(PATTERNS))],
        jitter=(float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3))),
        rotation=float(rng.uniform(0, 360)),
    )


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

def _shape_mask(shape: str, radius: float, rotation: float, center,
                hw: int, ss: int = _SS) -> np.ndarray:
    """Anti-aliased [0,1] mask: draw at ss× resolution, box-average down."""
    S = hw * ss
    img = Image.new("L", (S, S), 0)
    draw = ImageDraw.Draw(img)
    cx, cy = center[0] * ss, center[1] * ss
    r = radius * ss

    def ring(count, start_deg, radii):
        pts = []
        for i in range(count):
            ang = math.radians(start_deg + i * 360.0 / count)
            rr = radii[i % len(radii)]
            pts.append((cx + rr * math.cos(ang), cy + rr * math.sin(ang)))
        return pts

    if shape == "circle":
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=255)
    elif shape == "square":
        draw.polygon(ring(4, rotation + 45.0, [r]), fill=255)
    elif shape == "triangle":
        draw.polygon(ring(3, rotation - 90.0, [r]), fill=255)
    elif shape == "star":
        # 10 vertices alternating outer/inner radius
        pts = []
        for i in range(10):
            ang = math.radians(rotation - 90.0 + i * 36.0)
            rr = r if i % 2 == 0 else 0.45 * r
            pts.append((cx + rr * math.cos(ang), cy + rr * math.sin(ang)))
        draw.polygon(pts, fill=255)
    else:  # pragma: no cover - guarded by SpriteSpec
        raise ConfigurationError(f"unknown shape {shape!r}")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return arr.reshape(hw, ss, hw, ss).mean(axis=(1, 3))


def _pattern_values(pattern: str, hw: int) -> np.ndarray:
    """Per-pixel brightness in (0,1]; patterns modulate value, never hue."""
    if pattern == "solid":
        return np.ones((hw, hw), dtype=np.float32)
    ii, jj = np.mgrid[0:hw, 0:hw]
    if pattern == "striped":
        return np.where(((ii + jj) // 4) % 2 == 0, 1.0, 0.55).astype(np.float32)
    dots = ((ii % 6 - 3) ** 2 + (jj % 6 - 3) ** 2) <= 2.5
    return np.where(dots, 0.55, 1.0).astype(np.float32)


def render_sprite(spec: SpriteSpec, size: tuple = (SPRITE_HW, SPRITE_HW),
                  rng: np.random.Generator | None = None):
    """Render a sprite; returns (RgbaImage, ground_truth dict).

    Fully specified specs render deterministically; `rng` is only consulted
    when jitter or rotation is None, to fill them in.
    """
    hw = size[0]
    if size[0] != size[1]:
        raise ContractError("sprite canvas must be square")
    jitter, rotation = spec.jitter, spec.rotation
    if jitter is None:
        if rng is None:
            raise ContractError("spec leaves jitter unset and no rng was given")
        jitter = (float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3)))
    if rotation is None:
        if rng is None:
            raise ContractError("spec leaves rotation unset and no rng was given")
        rotation = float(rng.uniform(0, 360))
    center = (hw / 2.0 + jitter[0], hw / 2.0 + jitter[1])
    alpha = _shape_mask(spec.shape, SIZES[spec.size], rotation, center, hw)
    base = colorsys.hsv_to_rgb(COLOR_HUES[spec.color] / 360.0, 1.0, 1.0)
    values = _pattern_values(spec.pattern, hw)
    rgb = values[:, :, None] * np.asarray(base, dtype=np.float32)
    image = rgba_from_parts(rgb, alpha)
    truth = {"alpha": alpha.copy(),
             "attributes": {**spec.as_condition(),
                            "jitter": list(jitter), "rotation": rotation}}
    return image, truth


# ---------------------------------------------------------------------------
# Scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneSpec:
    """Background recipe plus back-to-front sprite placements."""

    background: str
    hue_a: int = 0   # palette indices for the background colors
    hue_b: int = 4
    sprites: tuple = ()  # ((SpriteSpec, BoundingBox), ...) back-to-front

    def __post_init__(self):
        if self.background not in BACKGROUNDS:
            raise ConfigurationError(
                f"unknown background {self.background!r}; choose from {BACKGROUNDS}")

    def as_condition(self) -> dict:
        return {"background": self.background}


def _bg_color(hue_index: int) -> np.ndarray:
    h = COLOR_HUES[COLORS[hue_index % len(COLORS)]] / 360.0
    return np.asarray(colorsys.hsv_to_rgb(h, 0.55, 0.85), dtype=np.float32)


def render_background(spec: SceneSpec, hw: int = SCENE_HW) -> np.ndarray:
    if spec.background == "void":
        return np.zeros((hw, hw, 3), dtype=np.float32)
    ca, cb = _bg_color(spec.hue_a), _bg_color(spec.hue_b)
    ii, jj = np.mgrid[0:hw, 0:hw]
    if spec.background == "gradient_h":
        w = (jj / (hw - 1)).astype(np.float32)
    elif spec.background == "gradient_v":
        w = (ii / (hw - 1)).astype(np.float32)
    elif spec.background == "radial":
        c = (hw - 1) / 2.0
        rad = np.sqrt((ii - c) ** 2 + (jj - c) ** 2) / (c * math.sqrt(2))
        w = np.clip(rad, 0, 1).astype(np.float32)
    else:  # checker, 8-px tiles
        w = (((ii // 8) + (jj // 8)) % 2).astype(np.float32)
    return (1 - w[:, :, None]) * ca + w[:, :, None] * cb


def render_scene(spec: SceneSpec, size: tuple = (SCENE_HW, SCENE_HW),
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Alpha-composite the sprite stack back-to-front over the background."""
    del rng  # randomness lives in the spec; accepted for signature parity
    hw = size[0]
    out = render_background(spec, hw)
    from .compositor import place_instance  # local import: compositor is downstream of images only
    for sprite_spec, box in spec.sprites:
        sprite, _ = render_sprite(sprite_spec)
        placed = place_instance(sprite, box, size)
        a = placed.alpha[:, :, None]
        out = placed.rgb * a + out * (1.0 - a)
    return out.astype(np.float32)


def random_scene_spec(rng: np.random.Generator, max_sprites: int = 3) -> SceneSpec:
    from .compositor import BoundingBox
    background = BACKGROUNDS[rng.integers(len(BACKGROUNDS))]
    hue_a = int(rng.integers(len(COLORS)))
    hue_b = int((hue_a + 1 + rng.integers(len(COLORS) - 1)) % len(COLORS))
    sprites = []
    for _ in range(int(rng.integers(0, max_sprites + 1))):
        w = float(rng.uniform(16, 40))
        h = float(rng.uniform(16, 40))
        box = BoundingBox(cx=float(rng.uniform(8, SCENE_HW - 8)),
                          cy=float(rng.uniform(8, SCENE_HW - 8)), w=w, h=h)
        sprites.append((random_sprite_spec(rng), box))
    return SceneSpec(background, hue_a, hue_b, tuple(sprites))


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass
class DatasetConfig:
    kind: str            # "sprites" | "scenes"
    n: int
    out_dir: Path
    split: tuple = (0.8, 0.1, 0.1)
    max_sprites: int = 3

    def __post_init__(self):
        if self.kind not in ("sprites", "scenes"):
            raise ConfigurationError(f"unknown dataset kind {self.kind!r}")
        if self.n < 1:
            raise ConfigurationError("dataset size must be >= 1")
        if abs(sum(self.split) - 1.0) > 1e-9 or len(self.split) != 3:
            raise ConfigurationError("split must be three fractions summing to 1")
        self.out_dir = Path(self.out_dir)


def _spec_to_jsonable(spec) -> dict:
    if isinstance(spec, SpriteSpec):
        return {**spec.as_condition(), "jitter": list(spec.jitter), "rotation": spec.rotation}
    d = {"background": spec.background, "hue_a": spec.hue_a, "hue_b": spec.hue_b,
         "sprites": [[_spec_to_jsonable(s), [b.cx, b.cy, b.w, b.h]] for s, b in spec.sprites]}
    return d


def make_dataset(config: DatasetConfig, rng: np.random.Generator) -> dict:
    """Render a corpus to disk and return (and write) its manifest.

    The manifest lists id, relative path, split, and the full generating spec
    for every item, so ground truth is recoverable exactly.
    """
    root = config.out_dir
    (root / "images").mkdir(parents=True, exist_ok=True)
    order = rng.permutation(config.n)
    n_train = int(round(config.split[0] * config.n))
    n_val = int(round(config.split[1] * config.n))
    split_of = {}
    for rank, idx in enumerate(order):
        split_of[int(idx)] = ("train" if rank < n_train
                              else "val" if rank < n_train + n_val else "test")
    items, alphas = [], {}
    for i in range(config.n):
        item_id = f"{config.kind[:-1]}_{i:05d}"
        rel = f"images/{item_id}.png"
        if config.kind == "sprites":
            spec = random_sprite_spec(rng)
            image, truth = render_sprite(spec)
            save_png(root / rel, image)
            alphas[item_id] = truth["alpha"]
        else:
            spec = random_scene_spec(rng, config.max_sprites)
            with open(root / rel, "wb") as fh:
                fh.write(rgb_to_png_bytes(render_scene(spec)))
        items.append({"id": item_id, "path": rel, "split": split_of[i],
                      "spec": _spec_to_jsonable(spec)})
    if alphas:
        np.savez_compressed(root / "alphas.npz", **alphas)
    manifest = {"kind": config.kind, "n": config.n, "items": items}
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def sprite_corpus(n: int, seed: int):
    """In-memory training corpus: (images [n,32,32,4] float32, condition dicts)."""
    rng = np.random.default_rng(seed)
    images = np.zeros((n, SPRITE_HW, SPRITE_HW, 4), dtype=np.float32)
    conds = []
    for i in range(n):
        spec = random_sprite_spec(rng)
        image, _ = render_sprite(spec)
        images[i] = image.pixels
        conds.append(spec.as_condition())
    return images, conds


def scene_corpus(n: int, seed: int, max_sprites: int = 3):
    """In-memory scene corpus: (rgb [n,64,64,3] float32, condition dicts)."""
    rng = np.random.default_rng(seed)
    images = np.zeros((n, SCENE_HW, SCENE_HW, 3), dtype=np.float32)
    conds = []
    for i in range(n):
        spec = random_scene_spec(rng, max_sprites)
        images[i] = render_scene(spec)
        conds.append(spec.as_condition())
    return images, conds


# ---------------------------------------------------------------------------
# Attribute oracle
# ---------------------------------------------------------------------------

def _pixel_hues(rgb: np.ndarray):
    """Vectorized RGB -> (hue degrees, chroma)."""
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    chroma = maxc - minc
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    safe = np.where(chroma > 0, chroma, 1.0)
    hue = np.where(maxc == r, ((g - b) / safe) % 6,
                   np.where(maxc == g, (b - r) / safe + 2, (r - g) / safe + 4))
    return (hue * 60.0) % 360.0, chroma


def _circular_mean_deg(angles_deg: np.ndarray, weights: np.ndarray) -> float:
    rad = np.radians(angles_deg)
    s = float((weights * np.sin(rad)).sum())
    c = float((weights * np.cos(rad)).sum())
    return math.degrees(math.atan2(s, c)) % 360.0


def _circular_dist_deg(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def _ideal_area(shape: str, radius: float) -> float:
    return float((_shape_mask(shape, radius, 0.0, (SPRITE_HW / 2, SPRITE_HW / 2),
                              SPRITE_HW, ss=4) > 0.5).sum())


_SYMMETRY_PERIOD = {"circle": 0.0, "square": 90.0, "triangle": 120.0, "star": 72.0}


_SUB_OFFSETS = (-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0)


def _centroid(field: np.ndarray) -> "tuple[float, float]":
    """(cx, cy) of a non-negative coverage field, pixel-center convention."""
    hw = field.shape[0]
    mids = np.arange(hw) + 0.5
    total = float(field.sum())
    return (float((field.sum(axis=0) * mids).sum() / total),
            float((field.sum(axis=1) * mids).sum() / total))


def _centroid_aligned_ideal(shape: str, radius: float, rotation: float,
                            target, hw: int) -> np.ndarray:
    """Render an ideal mask whose coverage centroid lands on `target`.

    The rasterizer carries a small subpixel placement bias, so measure the
    rendered centroid and re-aim until it sits within 0.005 px of target
    (thin-featured shapes lose IoU fast under even ~0.05 px misalignment).
    """
    aim = (target[0], target[1])
    out = _shape_mask(shape, radius, rotation, aim, hw)
    for _ in range(4):
        cx, cy = _centroid(out)
        err = math.hypot(target[0] - cx, target[1] - cy)
        if err < 0.005:
            break
        aim = (aim[0] + (target[0] - cx), aim[1] + (target[1] - cy))
        out = _shape_mask(shape, radius, rotation, aim, hw)
    return out


def _refined_iou(mask: np.ndarray, shape: str, radius: float, rotations,
                 center, hw: int) -> float:
    """Max IoU over subpixel center offsets (full-res ideal renders)."""
    best = 0.0
    for rot in rotations:
        for dy in _SUB_OFFSETS:
            for dx in _SUB_OFFSETS:
                ideal = _shape_mask(shape, radius, rot,
                                    (center[0] + dx, center[1] + dy), hw) > 0.5
                best = max(best, iou(mask, ideal, threshold=0.5))
    return best


def attribute_oracle(image: RgbaImage, expected: SpriteSpec) -> dict:
    """Score a (possibly generated) sprite against an expected spec.

    color_ok: chroma-weighted circular-mean hue inside alpha>0.5 lands in the
    expected color's 45°-wide band.  shape_iou: best IoU between the observed
    mask and an ideal mask, searched over translation (centroid plus subpixel
    offsets), scale (spec radius and area-matched radius), and in-plane
    rotation.  The search tries the expected radius/rotation first and only
    widens when that alignment scores below 0.98.
    """
    mask = image.alpha > 0.5
    hw = mask.shape[0]
    if not mask.any():
        return {"degenerate": True, "color_ok": False, "shape_iou": 0.0, "size_ok": False}

    hues, chroma = _pixel_hues(image.rgb)
    weights = chroma * image.alpha * mask
    if weights.sum() <= 0:
        color_ok = False
    else:
        mean_hue = _circular_mean_deg(hues[mask], weights[mask])
        color_ok = _circular_dist_deg(mean_hue, COLOR_HUES[expected.color]) <= HUE_BAND

    area = float(mask.sum())
    # anti-aliased coverage gives a far more precise centroid than the
    # binarized mask (thin-featured shapes lose IoU fast under misalignment)
    center = _centroid(image.alpha)
    base_r = SIZES[expected.size]
    matched_r = float(np.clip(
        base_r * math.sqrt(area / max(_ideal_area(expected.shape, base_r), 1.0)), 3.0, 15.0))
    period = _SYMMETRY_PERIOD[expected.shape]

    # fast path: the spec's own radius/rotation, first at the spec's intended
    # position (bit-exact when the sprite honours it), then centroid-aligned
    best = 0.0
    if expected.jitter is not None:
        intended = (hw / 2 + expected.jitter[0], hw / 2 + expected.jitter[1])
        ideal = _shape_mask(expected.shape, base_r, expected.rotation, intended, hw) > 0.5
        best = iou(mask, ideal, threshold=0.5)
    if best < 0.98:
        ideal = _centroid_aligned_ideal(
            expected.shape, base_r, expected.rotation, center, hw) > 0.5
        best = max(best, iou(mask, ideal, threshold=0.5))
    if best < 0.98:
        best = max(best, _refined_iou(mask, expected.shape, base_r,
                                      [expected.rotation], center, hw))
    if best < 0.98:
        rotations = [0.0] if period == 0.0 else [k * period / 12.0 for k in range(12)]
        coarse = []
        for r in {round(base_r, 3), round(matched_r, 3)}:
            for rot in rotations:
                ideal = _shape_mask(expected.shape, r, rot, center, hw, ss=4) > 0.5
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        cand = np.roll(ideal, (dy, dx), axis=(0, 1))
                        coarse.append((iou(mask, cand, threshold=0.5), r, rot, dy, dx))
        score, r, rot, dy, dx = max(coarse, key=lambda c: c[0])
        best = max(best, score)
        fine_rots = [rot] if period == 0.0 else [rot - 3.0, rot, rot + 3.0]
        best = max(best, _refined_iou(mask, expected.shape, r, fine_rots,
                                      (center[0] + dx, center[1] + dy), hw))
    size_ok = min(SIZES, key=lambda s: abs(_ideal_area(expected.shape, SIZES[s]) - area)) \
        == expected.size
    return {"degenerate": False, "color_ok": bool(color_ok),
            "shape_iou": float(best), "size_ok": bool(size_ok)}
