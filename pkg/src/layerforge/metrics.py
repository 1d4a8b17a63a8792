"""Evaluation metrics: mask IoU, (masked) PSNR, KID, and a generator harness.

KID is the unbiased kernel-MMD² estimator with the cubic polynomial kernel
k(x, y) = (<x, y>/d + 1)³, averaged over seeded random subsets.  Features
come from raw pixels or a small frozen randomly-initialized conv net; the
estimator math, not the backbone, is what matters here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .errors import ConfigurationError, ContractError

PSNR_CAP_DB = 99.0


def iou(mask_a, mask_b, threshold: float = 0.5) -> float:
    """Intersection-over-union of thresholded masks; both-empty counts as 1."""
    a = np.asarray(mask_a)
    b = np.asarray(mask_b)
    if a.shape != b.shape:
        raise ContractError(f"mask shapes differ: {a.shape} vs {b.shape}")
    if not 0.0 < threshold < 1.0:
        raise ContractError(f"threshold must be in (0, 1), got {threshold}")
    A = a > threshold
    B = b > threshold
    union = np.logical_or(A, B).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(A, B).sum() / union)


def psnr(a, b, region_mask=None) -> float:
    """10·log10(1/MSE) in dB for [0,1]-ranged images; equality caps at 99 dB."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ContractError(f"image shapes differ: {x.shape} vs {y.shape}")
    if region_mask is not None:
        sel = np.asarray(region_mask).astype(bool)
        x = x[sel]
        y = y[sel]
        if x.size == 0:
            raise ContractError("region mask selects no elements")
    mse = float(np.mean((x - y) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


# ---------------------------------------------------------------------------
# KID
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KidConfig:
    """Subset-averaged unbiased MMD²; kernel fixed to (<x,y>/d + 1)³."""

    feature_extractor: str = "pixels"  # "pixels" | "fixed_random_conv"
    subset_size: int = 50
    n_subsets: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.subset_size < 2:
            raise ConfigurationError(f"subset_size must be >= 2, got {self.subset_size}")
        if self.n_subsets < 1:
            raise ConfigurationError(f"n_subsets must be >= 1, got {self.n_subsets}")
        if self.feature_extractor not in ("pixels", "fixed_random_conv"):
            raise ConfigurationError(f"unknown feature extractor {self.feature_extractor!r}")


def _poly_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    """Unbiased MMD² between equal-size sample sets (diagonals excluded)."""
    m = x.shape[0]
    kxx = _poly_kernel(x, x)
    kyy = _poly_kernel(y, y)
    kxy = _poly_kernel(x, y)
    sum_xx = kxx.sum() - np.trace(kxx)
    sum_yy = kyy.sum() - np.trace(kyy)
    return float(sum_xx / (m * (m - 1)) + sum_yy / (m * (m - 1)) - 2.0 * kxy.mean())


def kid(features_a, features_b, cfg: KidConfig = KidConfig()) -> tuple:
    """(mean, std) of unbiased MMD² over cfg.n_subsets seeded random subsets."""
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError("features must be 2-D [n, d] arrays")
    if a.shape[0] < cfg.subset_size or b.shape[0] < cfg.subset_size:
        raise ContractError(
            f"need at least subset_size={cfg.subset_size} vectors per set, "
            f"got {a.shape[0]} and {b.shape[0]}")
    rng = np.random.default_rng(cfg.seed)
    vals = []
    for _ in range(cfg.n_subsets):
        ia = rng.choice(a.shape[0], cfg.subset_size, replace=False)
        ib = rng.choice(b.shape[0], cfg.subset_size, replace=False)
        vals.append(mmd2_unbiased(a[ia], b[ib]))
    mean = float(np.mean(vals))
    std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return mean, std


@lru_cache(maxsize=4)
def _frozen_conv_net(in_channels: int) -> torch.nn.Module:
    torch.manual_seed(0)
    net = torch.nn.Sequential(
        torch.nn.Conv2d(in_channels, 8, 3, stride=2, padding=1), torch.nn.SiLU(),
        torch.nn.Conv2d(8, 16, 3, stride=2, padding=1), torch.nn.SiLU(),
        torch.nn.Conv2d(16, 32, 3, stride=2, padding=1),
        torch.nn.AdaptiveAvgPool2d(2),
    )
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net


def extract_features(images: np.ndarray, cfg: KidConfig = KidConfig()) -> np.ndarray:
    """[N, H, W, C] images -> [N, d] float64 feature vectors per cfg."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim != 4:
        raise ContractError(f"expected [N, H, W, C] images, got shape {arr.shape}")
    if cfg.feature_extractor == "pixels":
        return arr.reshape(arr.shape[0], -1).astype(np.float64)
    net = _frozen_conv_net(arr.shape[3])
    with torch.no_grad():
        t = torch.from_numpy(arr.transpose(0, 3, 1, 2))
        feats = net(t).reshape(arr.shape[0], -1)
    return feats.numpy().astype(np.float64)


# ---------------------------------------------------------------------------
# Generator evaluation harness
# ---------------------------------------------------------------------------

def eval_generator(sampler, oracle, n_samples: int, seed: int,
                   reference_images=None, kid_cfg: KidConfig | None = None) -> dict:
    """Score a generator: per-sample oracle reports plus optional KID.

    sampler(seed_i) must return (image, expected_spec) deterministically;
    oracle(image, expected) returns a dict with color_ok and shape_iou.
    Per-sample sampler failures are excluded and counted.  Report schema is
    {metric: {mean, std, n}} plus n_failed.
    """
    if n_samples < 1:
        raise ContractError(f"n_samples must be >= 1, got {n_samples}")
    ious, colors, images = [], [], []
    n_failed = 0
    for i in range(n_samples):
        try:
            image, expected = sampler(seed + i)
            report = oracle(image, expected)
        except Exception:
            n_failed += 1
            continue
        ious.append(float(report["shape_iou"]))
        colors.append(1.0 if report["color_ok"] else 0.0)
        images.append(image.pixels)
    out = {"n_failed": n_failed}
    for key, vals in (("alpha_iou_mean", ious), ("color_acc", colors)):
        n = len(vals)
        out[key] = {"mean": float(np.mean(vals)) if n else float("nan"),
                    "std": float(np.std(vals)) if n else float("nan"), "n": n}
    if reference_images is not None and images:
        cfg = kid_cfg or KidConfig(subset_size=min(50, len(images), len(reference_images)))
        feats_gen = extract_features(np.stack(images), cfg)
        feats_ref = extract_features(np.asarray(reference_images), cfg)
        mean, std = kid(feats_gen, feats_ref, cfg)
        out["kid_vs_test_set"] = {"mean": mean, "std": std, "n": cfg.n_subsets}
    return out
