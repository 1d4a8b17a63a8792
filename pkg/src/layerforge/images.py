"""RGBA image container and pixel-space helpers.

Images are float arrays of shape [H, W, 4] with every channel in [0, 1].
Alpha uses straight (non-premultiplied) storage with the convention that
fully transparent pixels carry black RGB, so an RGBA image composited onto
a black background equals its premultiplied RGB content.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from .errors import ContractError


@dataclass(frozen=True)
class RgbaImage:
    """Four-channel image; RGB and alpha in [0, 1], black RGB where alpha is 0."""

    pixels: np.ndarray  # float32 [H, W, 4]

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 4:
            raise ContractError(f"RGBA pixels must have shape [H, W, 4], got {px.shape}")
        if px.dtype != np.float32:
            object.__setattr__(self, "pixels", px.astype(np.float32))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def rgb(self) -> np.ndarray:
        return self.pixels[:, :, :3]

    @property
    def alpha(self) -> np.ndarray:
        return self.pixels[:, :, 3]

    def validate(self) -> None:
        """Check the range and transparent-pixels-are-black invariants."""
        px = self.pixels
        if not np.isfinite(px).all():
            raise ContractError("RGBA pixels contain non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ContractError("RGBA pixels outside [0, 1]")
        transparent = px[:, :, 3] == 0.0
        if np.any(px[transparent, :3] != 0.0):
            raise ContractError("RGB must be black wherever alpha is exactly 0")


def apply_transparency_convention(pixels: np.ndarray) -> np.ndarray:
    """Zero the RGB of fully transparent pixels (alpha == 0)."""
    out = pixels.copy()
    out[:, :, :3] *= (out[:, :, 3:4] > 0.0)
    return out


def rgba_from_parts(rgb: np.ndarray, alpha: np.ndarray) -> RgbaImage:
    pixels = np.concatenate([rgb, alpha[:, :, None]], axis=2).astype(np.float32)
    return RgbaImage(apply_transparency_convention(pixels))


def composite_over(fg: RgbaImage, background_rgb: np.ndarray) -> np.ndarray:
    """Straight-alpha "over" composite of an RGBA image onto an opaque RGB background."""
    a = fg.alpha[:, :, None]
    return fg.rgb * a + background_rgb * (1.0 - a)


def resize_rgba(image: RgbaImage, height: int, width: int) -> RgbaImage:
    """Bilinear resize of all four channels; re-applies the black-transparent convention."""
    if height < 1 or width < 1:
        raise ContractError(f"target size must be positive, got ({height}, {width})")
    channels = []
    for c in range(4):
        pil = Image.fromarray(image.pixels[:, :, c], mode="F")
        channels.append(np.asarray(pil.resize((width, height), Image.BILINEAR)))
    pixels = np.clip(np.stack(channels, axis=2), 0.0, 1.0).astype(np.float32)
    return RgbaImage(apply_transparency_convention(pixels))


def tight_alpha_bbox(alpha: np.ndarray, threshold: float = 0.0) -> tuple[int, int, int, int]:
    """(top, left, bottom, right) bounds of alpha > threshold, end-exclusive."""
    rows = np.any(alpha > threshold, axis=1)
    cols = np.any(alpha > threshold, axis=0)
    if not rows.any():
        raise ContractError("alpha has no support; cannot compute a tight bounding box")
    top, bottom = np.nonzero(rows)[0][[0, -1]]
    left, right = np.nonzero(cols)[0][[0, -1]]
    return int(top), int(left), int(bottom) + 1, int(right) + 1


# ---------------------------------------------------------------------------
# PNG I/O (8-bit, straight alpha) and tensor conversion
# ---------------------------------------------------------------------------

def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.round(values * 255.0), 0, 255).astype(np.uint8)


def rgba_to_png_bytes(image: RgbaImage) -> bytes:
    quantized = to_uint8(image.pixels)
    quantized[quantized[:, :, 3] == 0, :3] = 0  # keep the convention after 8-bit rounding
    buf = io.BytesIO()
    Image.fromarray(quantized, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def rgba_from_png_bytes(data: bytes) -> RgbaImage:
    pil = Image.open(io.BytesIO(data)).convert("RGBA")
    pixels = np.asarray(pil).astype(np.float32) / 255.0
    return RgbaImage(apply_transparency_convention(pixels))


def rgb_to_png_bytes(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(rgb), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def rgb_from_png_bytes(data: bytes) -> np.ndarray:
    pil = Image.open(io.BytesIO(data)).convert("RGB")
    return np.asarray(pil).astype(np.float32) / 255.0


def save_png(path, image) -> None:
    data = rgba_to_png_bytes(image) if isinstance(image, RgbaImage) else rgb_to_png_bytes(image)
    with open(path, "wb") as fh:
        fh.write(data)


def image_to_tensor(pixels: np.ndarray) -> torch.Tensor:
    """[H, W, C] float array -> [C, H, W] float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(pixels.transpose(2, 0, 1))).float()


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    """[C, H, W] tensor -> [H, W, C] float32 array."""
    return t.detach().cpu().numpy().transpose(1, 2, 0).astype(np.float32)
