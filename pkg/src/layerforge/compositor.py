"""Multi-layer scene composition by noise blending.

A layout of K placed RGBA instances plus a background are generated as K+1
concurrent denoising trajectories that all start from the SAME Gaussian
noise.  Each iteration denoises every layer under the shared scene
condition, then splices latents across layers:

  instance blending   y^k <- y^{k-1}*(1-m_k) + x^k*m_k   (k = 1..K)
  background blending y^0 <- y^0*m* + (y^0 + y^K)/2 * (1-m*)
  consistency         y^K <- y^K*(1-m_k) + y^{k-1}*m_k   (k = 1..K-1)

where x^k is the k-th instance's DDIM-inversion trajectory at the current
noise level and m_k its latent-resolution alpha mask.  Instance blending
runs for the first n iterations, background blending for the first b, and
consistency for iterations [n, n+n_s).  Because every splice is applied at
matching noise levels, the final layers decode into a coherent stack:
background, then progressively composited scenes, ending in the full
composite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .diffusion import CLEAN_T, GuidanceParams, TimestepGrid, ddim_invert_step, ddim_step
from .errors import ConfigurationError, ContractError
from .images import (
    RgbaImage,
    rgb_to_png_bytes,
    resize_rgba,
    tight_alpha_bbox,
)
from .metrics import psnr


# ---------------------------------------------------------------------------
# Layout types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundingBox:
    """Center (cx, cy) and extent (w, h) in canvas pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ContractError(f"box extent must be positive, got w={self.w}, h={self.h}")

    def intersects(self, canvas: tuple) -> bool:
        H, W = canvas
        return (self.cx + self.w / 2 > 0 and self.cx - self.w / 2 < W
                and self.cy + self.h / 2 > 0 and self.cy - self.h / 2 < H)


@dataclass(frozen=True)
class Layout:
    """Ordered (instance_id, BoundingBox) entries; index = back-to-front z."""

    entries: tuple

    def __post_init__(self):
        ids = [e[0] for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"duplicate instance ids in layout: {ids}")

    def ids(self) -> list:
        return [e[0] for e in self.entries]


@dataclass(frozen=True)
class InstanceAsset:
    image: RgbaImage
    id: str
    condition: dict | None = None


@dataclass(frozen=True)
class BlendParams:
    n: int = 30          # instance-blending iterations
    b: int = 20          # background-blending iterations
    n_s: int = 10        # consistency iterations, applied over [n, n+n_s)
    steps: int = 50
    guidance: GuidanceParams = field(default_factory=lambda: GuidanceParams(4.5, 0.25))
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.n <= self.steps:
            raise ConfigurationError(f"need 0 <= n <= steps, got n={self.n}, steps={self.steps}")
        if not 0 <= self.b <= self.steps:
            raise ConfigurationError(f"need 0 <= b <= steps, got b={self.b}, steps={self.steps}")
        if not 0 <= self.n_s <= self.steps - self.n:
            raise ConfigurationError(
                f"need 0 <= n_s <= steps - n, got n_s={self.n_s}, n={self.n}, steps={self.steps}")


@dataclass
class LayerStack:
    """K+1 finished trajectories: clean latents, decoded RGBs, and the masks."""

    latents: torch.Tensor        # [K+1, c, h, w] at the clean level (model scale)
    decoded: list                # K+1 np.float32 [H, W, 3]: y^0 .. y^K
    masks: torch.Tensor          # [K, h, w] latent-resolution instance masks
    union_mask: torch.Tensor     # [h, w] elementwise max over masks

    def __post_init__(self):
        if self.latents.shape[0] != len(self.decoded):
            raise ContractError("latents and decoded layer counts differ")
        if self.masks.shape[0] != self.latents.shape[0] - 1:
            raise ContractError("need exactly K masks for K+1 layers")
        expected = (self.masks.amax(dim=0) if self.masks.shape[0]
                    else torch.zeros_like(self.union_mask))
        if not torch.equal(self.union_mask, expected):
            raise ContractError("union_mask must be the elementwise max of masks")

    @property
    def composite(self) -> np.ndarray:
        return self.decoded[-1]


# ---------------------------------------------------------------------------
# Placement and masks
# ---------------------------------------------------------------------------

def place_instance(asset: RgbaImage, box: BoundingBox, canvas: tuple) -> RgbaImage:
    """Resize the asset's tight alpha content into the box on an empty canvas.

    The crop around alpha > 0 is what gets scaled to (h, w), so padding in
    the source image does not shrink the visible sprite.  Off-canvas parts
    of the box are clipped.
    """
    H, W = canvas
    if not box.intersects(canvas):
        raise ContractError(f"box {box} does not intersect the {canvas} canvas")
    out = np.zeros((H, W, 4), dtype=np.float32)
    try:
        top, left, bottom, right = tight_alpha_bbox(asset.alpha)
    except ContractError:
        return RgbaImage(out)  # nothing visible to place
    crop = RgbaImage(asset.pixels[top:bottom, left:right])
    th, tw = max(1, round(box.h)), max(1, round(box.w))
    scaled = resize_rgba(crop, th, tw)
    y0 = round(box.cy - th / 2.0)
    x0 = round(box.cx - tw / 2.0)
    sy, sx = max(0, -y0), max(0, -x0)
    dy, dx = max(0, y0), max(0, x0)
    h = min(th - sy, H - dy)
    w = min(tw - sx, W - dx)
    if h > 0 and w > 0:
        out[dy:dy + h, dx:dx + w] = scaled.pixels[sy:sy + h, sx:sx + w]
    return RgbaImage(out)


def latent_mask(alpha, latent_hw: tuple) -> torch.Tensor:
    """Area-average an [H, W] alpha down to the latent grid; stays soft."""
    arr = np.asarray(alpha, dtype=np.float32)
    H, W = arr.shape
    h, w = latent_hw
    if H % h or W % w:
        raise ContractError(f"image dims {(H, W)} not divisible by latent dims {(h, w)}")
    m = arr.reshape(h, H // h, w, W // w).mean(axis=(1, 3))
    return torch.from_numpy(m)


# ---------------------------------------------------------------------------
# Inversion
# ---------------------------------------------------------------------------

@dataclass
class InversionTrajectory:
    """states[i] is the latent at grid.indices[i]; states[-1] is clean."""

    states: torch.Tensor  # [steps+1, B, c, h, w]
    grid: TimestepGrid


def invert_instances(placed: list, scene_model, grid: TimestepGrid) -> InversionTrajectory:
    """DDIM-invert placed instances through the scene model, null-conditioned.

    Each inversion step evaluates the model at the DESTINATION timestep with
    the current (lower-noise) state — the usual first-order inversion — so
    regenerating with the matching sampler retraces the trajectory closely.

    Instances are inverted one at a time (batch of 1): an instance's
    trajectory must be bit-identical no matter how many other instances are
    in the stack, or editing could never reproduce untouched layers exactly.
    """
    if scene_model is None:
        raise ConfigurationError("inversion requires a trained scene model")
    vae = scene_model.vae
    vae.eval()
    steps = grid.steps
    if not placed:
        c = vae.config.latent_channels
        h, w = scene_model.latent_hw
        return InversionTrajectory(torch.zeros(steps + 1, 0, c, h, w), grid)
    null = [scene_model.vocab.encode(None)]
    ups = list(reversed(list(grid.transitions())))  # ascending: (t_dst, t_src) pairs
    per_instance = []
    for p in placed:
        x = torch.from_numpy(np.ascontiguousarray(p.rgb.transpose(2, 0, 1)))[None]
        with torch.no_grad():
            mu, _ = vae.encode_moments(x)
        z = mu * scene_model.scale
        states = torch.empty((steps + 1, *z.shape), dtype=z.dtype)
        states[steps] = z
        for t_dst, t_src in ups:
            eps = scene_model.eps(z, t_dst, t_dst, null)
            z = ddim_invert_step(z, eps, t_src, t_dst, scene_model.schedule)
            states[grid.indices.index(t_dst)] = z
        per_instance.append(states)
    return InversionTrajectory(torch.cat(per_instance, dim=1), grid)


def invert_instance(placed: RgbaImage, scene_model, grid: TimestepGrid) -> InversionTrajectory:
    return invert_instances([placed], scene_model, grid)


# ---------------------------------------------------------------------------
# Blending steps (pure latent splices; all linear in their inputs)
# ---------------------------------------------------------------------------

def _check_blend_shapes(layers: torch.Tensor, masks: torch.Tensor) -> None:
    if masks.shape[0] != layers.shape[0] - 1:
        raise ContractError(
            f"got {layers.shape[0]} layers but {masks.shape[0]} masks (need K for K+1)")
    if masks.shape[-2:] != layers.shape[-2:]:
        raise ContractError(
            f"mask spatial dims {tuple(masks.shape[-2:])} != latent {tuple(layers.shape[-2:])}")


def blend_step_instances(layers: torch.Tensor, traj_values: torch.Tensor,
                         masks: torch.Tensor) -> torch.Tensor:
    """y^k = y^{k-1}*(1-m_k) + x^k*m_k for k=1..K, ascending, in place of layer k.

    layers: [K+1, c, h, w]; traj_values: [K, c, h, w] instance latents at the
    same noise level; masks: [K, h, w].  Layer 0 is untouched; each layer k
    is rebuilt from the just-updated layer k-1.
    """
    _check_blend_shapes(layers, masks)
    if traj_values.shape != layers[1:].shape:
        raise ContractError("instance trajectory values must match layer shapes")
    out = layers.clone()
    for k in range(1, layers.shape[0]):
        m = masks[k - 1].unsqueeze(0)
        out[k] = out[k - 1] * (1 - m) + traj_values[k - 1] * m
    return out


def blend_step_background(layers: torch.Tensor, union_mask: torch.Tensor) -> torch.Tensor:
    """y^0 = y^0*m* + (y^0 + y^K)/2 * (1-m*); only layer 0 changes."""
    if union_mask.shape != layers.shape[-2:]:
        raise ContractError(
            f"union mask {tuple(union_mask.shape)} != latent dims {tuple(layers.shape[-2:])}")
    out = layers.clone()
    m = union_mask.unsqueeze(0)
    out[0] = layers[0] * m + 0.5 * (layers[0] + layers[-1]) * (1 - m)
    return out


def blend_step_consistency(layers: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
    """y^K = y^K*(1-m_k) + y^{k-1}*m_k for k=1..K-1; no-op when K <= 1."""
    _check_blend_shapes(layers, masks)
    out = layers.clone()
    K = layers.shape[0] - 1
    for k in range(1, K):
        m = masks[k - 1].unsqueeze(0)
        out[K] = out[K] * (1 - m) + out[k - 1] * m
    return out


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------

def _canvas_of(scene_model) -> tuple:
    f = scene_model.vae.config.downsample
    h, w = scene_model.latent_hw
    return (h * f, w * f)


def compose(scene_cond, layout: Layout, assets: dict, params: BlendParams,
            scene_model, canvas: tuple | None = None) -> LayerStack:
    """Generate the K+1-layer stack for a layout (Algorithm-1-style loop).

    assets maps instance id -> InstanceAsset.  All K+1 trajectories start
    from the same seed-derived noise; per iteration i: denoise every layer
    (shared scene condition, CFG), then apply background blending while
    i < b, instance blending while i < n, and consistency for i in
    [n, n+n_s).  Splices use each instance's inversion trajectory at the
    just-reached noise level.
    """
    missing = [i for i in layout.ids() if i not in assets]
    if missing:
        raise ConfigurationError(f"layout references unknown assets: {missing}")
    canvas = canvas or _canvas_of(scene_model)
    K = len(layout.entries)
    h, w = scene_model.latent_hw
    c = scene_model.vae.config.latent_channels
    from .diffusion import make_timestep_grid
    grid = make_timestep_grid(scene_model.schedule.T_train, params.steps, "trailing")

    placed = [place_instance(assets[eid].image, box, canvas) for eid, box in layout.entries]
    masks = (torch.stack([latent_mask(p.alpha, (h, w)) for p in placed])
             if K else torch.zeros(0, h, w))
    union = masks.amax(dim=0) if K else torch.zeros(h, w)
    traj = invert_instances(placed, scene_model, grid) if K else None

    gen = torch.Generator().manual_seed(params.seed)
    eta = torch.randn((c, h, w), generator=gen)
    layers = eta.unsqueeze(0).repeat(K + 1, 1, 1, 1)
    vec = scene_model.vocab.encode(scene_cond) if not hasattr(scene_cond, "null_flag") \
        else scene_cond
    vecs = [vec] * (K + 1)

    transitions = list(grid.transitions())
    for i, (t, t_prev) in enumerate(transitions):
        # one forward per layer: a layer's update must not depend on how many
        # other layers share the stack, so identical trajectories stay
        # bit-identical across compositions of different size
        eps = torch.cat([
            scene_model.eps_guided(layers[k:k + 1], t, t, vecs[k:k + 1], params.guidance)
            for k in range(K + 1)])
        layers = ddim_step(layers, eps, t, t_prev, scene_model.schedule)
        if i < params.b:
            layers = blend_step_background(layers, union)
        if i < params.n:
            if K:
                layers = blend_step_instances(layers, traj.states[i + 1], masks)
        elif i < params.n + params.n_s:
            layers = blend_step_consistency(layers, masks)

    decoded = []
    with torch.no_grad():
        for k in range(K + 1):  # per-layer decode, for the same stability reason
            out = scene_model.vae.decode_latent(layers[k:k + 1] / scene_model.scale)[0]
            decoded.append(out.permute(1, 2, 0).numpy().astype(np.float32))
    return LayerStack(layers, decoded, masks, union)


# ---------------------------------------------------------------------------
# Editing
# ---------------------------------------------------------------------------

def apply_edits(layout: Layout, edits: list) -> Layout:
    """Apply move/rescale/replace/remove/reorder edit ops to a layout.

    Each edit is a dict with an "op" key:
      {"op": "move"|"rescale", "id", "box": [cx, cy, w, h]}
      {"op": "replace", "id", "asset": new_asset_id}
      {"op": "remove", "id"}
      {"op": "reorder", "order": [ids back-to-front]}
    """
    entries = list(layout.entries)
    for edit in edits:
        op = edit.get("op")
        if op in ("move", "rescale"):
            eid = edit["id"]
            idx = [k for k, (i, _) in enumerate(entries) if i == eid]
            if not idx:
                raise ConfigurationError(f"edit references unknown instance id {eid!r}")
            entries[idx[0]] = (eid, BoundingBox(*edit["box"]))
        elif op == "replace":
            eid = edit["id"]
            idx = [k for k, (i, _) in enumerate(entries) if i == eid]
            if not idx:
                raise ConfigurationError(f"edit references unknown instance id {eid!r}")
            entries[idx[0]] = (str(edit["asset"]), entries[idx[0]][1])
        elif op == "remove":
            eid = edit["id"]
            if eid not in [i for i, _ in entries]:
                raise ConfigurationError(f"edit references unknown instance id {eid!r}")
            entries = [(i, b) for i, b in entries if i != eid]
        elif op == "reorder":
            by_id = dict(entries)
            order = edit["order"]
            if sorted(order) != sorted(by_id):
                raise ConfigurationError(
                    f"reorder must permute existing ids {sorted(by_id)}, got {order}")
            entries = [(i, by_id[i]) for i in order]
        else:
            raise ConfigurationError(f"unknown edit op {op!r}")
    return Layout(tuple(entries))


def edit_scene(scene_cond, layout: Layout, assets: dict, params: BlendParams,
               scene_model, edits: list, canvas: tuple | None = None,
               force_b_zero: bool = True) -> tuple:
    """Re-compose with edited layout under the SAME seed; returns (stack, layout).

    Keeping the seed (and, per the manipulation protocol, b=0) makes
    untouched layers reproduce exactly: their trajectories see identical
    noise and identical blend inputs.
    """
    new_layout = apply_edits(layout, edits)
    p = replace(params, b=0) if force_b_zero else params
    return compose(scene_cond, new_layout, assets, p, scene_model, canvas), new_layout


def boxes_region_mask(boxes: list, canvas: tuple) -> np.ndarray:
    """Boolean [H, W] mask covering the union of pixel-clipped boxes."""
    H, W = canvas
    m = np.zeros((H, W), dtype=bool)
    for box in boxes:
        y0 = max(0, int(np.floor(box.cy - box.h / 2)))
        x0 = max(0, int(np.floor(box.cx - box.w / 2)))
        y1 = min(H, int(np.ceil(box.cy + box.h / 2)))
        x1 = min(W, int(np.ceil(box.cx + box.w / 2)))
        if y1 > y0 and x1 > x0:
            m[y0:y1, x0:x1] = True
    return m


def psnr_outside_regions(img_a: np.ndarray, img_b: np.ndarray,
                         boxes: list, canvas: tuple) -> float:
    """Composite agreement outside the given boxes (the edit-consistency report)."""
    outside = ~boxes_region_mask(boxes, canvas)
    if not outside.any():
        return float("nan")
    return psnr(img_a, img_b, outside)


# ---------------------------------------------------------------------------
# Stack export
# ---------------------------------------------------------------------------

def export_layer_stack(stack: LayerStack, directory) -> dict:
    """Write layer_00..layer_K PNGs plus a manifest; returns the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for k, rgb in enumerate(stack.decoded):
        name = f"layer_{k:02d}.png"
        with open(directory / name, "wb") as fh:
            fh.write(rgb_to_png_bytes(rgb))
        names.append(name)
    manifest = {"layers": names, "n_layers": len(names)}
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest
