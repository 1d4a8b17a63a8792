"""Dual-distribution variational autoencoder for RGBA images.

The encoder maps an RGBA image to a latent whose channels are split into
two independently regularized groups — group_a carries the RGB content,
group_b the transparency — each with its own diagonal-Gaussian posterior
and its own KL term.  Trained with L1 reconstruction, a split perceptual
distance (RGB features and alpha features scored separately), and the two
KL losses.  A 3-channel, single-group configuration of the same machinery
serves as the scene autoencoder.

Loss normalization: the reconstruction and perceptual terms are means; each
KL term is the latent-sum divided by the input pixel count H*W, so a KL
weight of 1.0 regularizes hard (posteriors near N(0,1)) while 1e-6 leaves
the latent space effectively free — the two regimes the weight sweep in the
tests compares.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, ContractError, TrainingError
from .images import RgbaImage, apply_transparency_convention

LOGVAR_MIN, LOGVAR_MAX = -30.0, 20.0


@dataclass(frozen=True)
class VaeConfig:
    in_channels: int = 4
    latent_channels: int = 4
    split: tuple = (2, 2)          # channels of (group_a, group_b)
    width: int = 48
    seed: int = 0
    adversarial: bool = False      # reserved extension point, must stay False

    downsample: int = 4            # fixed by the two stride-2 stages

    def __post_init__(self):
        if sum(self.split) != self.latent_channels:
            raise ConfigurationError(
                f"split {self.split} must sum to latent_channels={self.latent_channels}")
        if any(c < 0 for c in self.split) or len(self.split) != 2:
            raise ConfigurationError(f"split must be two non-negative counts, got {self.split}")
        if self.adversarial:
            raise ConfigurationError("adversarial training is a reserved, unimplemented flag")


@dataclass(frozen=True)
class LatentPosterior:
    """Two diagonal-Gaussian posteriors, channel-last [h, w, c_group]."""

    mu_a: torch.Tensor
    logvar_a: torch.Tensor
    mu_b: torch.Tensor
    logvar_b: torch.Tensor

    def __post_init__(self):
        for name in ("mu_a", "logvar_a", "mu_b", "logvar_b"):
            t = getattr(self, name)
            if t.numel() and not torch.isfinite(t).all():
                raise ContractError(f"posterior field {name} contains non-finite values")
        if self.mu_a.shape != self.logvar_a.shape or self.mu_b.shape != self.logvar_b.shape:
            raise ContractError("mu/logvar shapes must match within each group")
        if self.mu_b.shape[-1] and self.mu_a.shape[:2] != self.mu_b.shape[:2]:
            raise ContractError("group posteriors must share spatial dims")


@dataclass(frozen=True)
class LatentPair:
    """A sampled latent split into its two groups, channel-last."""

    group_a: torch.Tensor
    group_b: torch.Tensor

    def concat(self) -> torch.Tensor:
        """Full latent [h, w, c] — the denoiser's input layout."""
        return torch.cat([self.group_a, self.group_b], dim=-1)


@dataclass(frozen=True)
class VaeLossWeights:
    w_recon: float = 1.0
    w_perceptual: float = 1.0
    w_kl: float = 1.0

    def __post_init__(self):
        if min(self.w_recon, self.w_perceptual, self.w_kl) < 0:
            raise ConfigurationError("loss weights must be non-negative")


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class RgbaVae(nn.Module):
    """Convolutional encoder/decoder, two stride-2 stages (f=4)."""

    def __init__(self, config: VaeConfig = VaeConfig()):
        torch.manual_seed(config.seed)  # deterministic initialization
        super().__init__()
        self.config = config
        w, c = config.width, config.latent_channels
        self.encoder = nn.Sequential(
            nn.Conv2d(config.in_channels, w, 3, padding=1), _norm(w), nn.SiLU(),
            nn.Conv2d(w, w, 3, stride=2, padding=1), _norm(w), nn.SiLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1), _norm(2 * w), nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 3, padding=1), _norm(2 * w), nn.SiLU(),
            nn.Conv2d(2 * w, 2 * c, 1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(c, 2 * w, 3, padding=1), _norm(2 * w), nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 3, padding=1), _norm(2 * w), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * w, w, 3, padding=1), _norm(w), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(w, w, 3, padding=1), _norm(w), nn.SiLU(),
            nn.Conv2d(w, config.in_channels, 3, padding=1),
        )

    def encode_moments(self, x: torch.Tensor):
        """[B, C, H, W] -> (mu, logvar) each [B, latent, h, w], logvar clamped."""
        moments = self.encoder(x)
        mu, logvar = moments.chunk(2, dim=1)
        return mu, logvar.clamp(LOGVAR_MIN, LOGVAR_MAX)

    def decode_latent(self, z: torch.Tensor) -> torch.Tensor:
        """[B, latent, h, w] -> [B, C, H, W] in (0, 1) via sigmoid."""
        return torch.sigmoid(self.decoder(z))


# ---------------------------------------------------------------------------
# Per-image functional API (channel-last at the boundary)
# ---------------------------------------------------------------------------

def _to_chw(image) -> torch.Tensor:
    if isinstance(image, RgbaImage):
        image = image.pixels
    if isinstance(image, np.ndarray):
        image = torch.from_numpy(np.ascontiguousarray(image)).float()
    return image.permute(2, 0, 1)


def encode(image, vae: RgbaVae) -> LatentPosterior:
    """Single image -> posterior; deterministic (eval-mode network)."""
    x = _to_chw(image)
    if x.shape[0] != vae.config.in_channels:
        raise ContractError(
            f"expected {vae.config.in_channels}-channel input, got {x.shape[0]}")
    f = vae.config.downsample
    if x.shape[1] % f or x.shape[2] % f:
        raise ContractError(f"spatial dims {tuple(x.shape[1:])} not divisible by {f}")
    vae.eval()
    with torch.no_grad():
        mu, logvar = vae.encode_moments(x.unsqueeze(0))
    ca = vae.config.split[0]
    mu, logvar = mu[0].permute(1, 2, 0), logvar[0].permute(1, 2, 0)
    return LatentPosterior(mu[..., :ca], logvar[..., :ca], mu[..., ca:], logvar[..., ca:])


def sample_latent(post: LatentPosterior, generator: torch.Generator | None = None,
                  mean_only: bool = False) -> LatentPair:
    """Reparameterized draw with independent noise per group (or the mean)."""
    if mean_only:
        return LatentPair(post.mu_a.clone(), post.mu_b.clone())
    eps_a = torch.randn(post.mu_a.shape, generator=generator)
    eps_b = torch.randn(post.mu_b.shape, generator=generator)
    return LatentPair(post.mu_a + torch.exp(post.logvar_a / 2) * eps_a,
                      post.mu_b + torch.exp(post.logvar_b / 2) * eps_b)


def decode(latent: LatentPair, vae: RgbaVae):
    """Latent pair -> RgbaImage (4-channel config) or RGB array (3-channel)."""
    z = latent.concat()
    if z.shape[-1] != vae.config.latent_channels:
        raise ContractError(
            f"latent has {z.shape[-1]} channels, model expects {vae.config.latent_channels}")
    vae.eval()
    with torch.no_grad():
        out = vae.decode_latent(z.permute(2, 0, 1).unsqueeze(0))[0]
    pixels = out.permute(1, 2, 0).numpy().astype(np.float32)
    if vae.config.in_channels == 4:
        return RgbaImage(apply_transparency_convention(pixels))
    return pixels


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

@lru_cache(maxsize=2)
def _perceptual_net() -> nn.Module:
    # Fixed random feature stack standing in for a pretrained perceptual net;
    # seeded so the distance is a constant of the package.
    torch.manual_seed(7)
    net = nn.Sequential(
        nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.SiLU(),
        nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.SiLU(),
        nn.Conv2d(32, 64, 3, stride=2, padding=1),
    )
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net


def _feature_distance(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean squared feature-map distance, averaged over the three depths."""
    net = _perceptual_net()
    dist = x.new_zeros(())
    fx, fy = x, y
    count = 0
    for layer in net:
        fx, fy = layer(fx), layer(fy)
        if isinstance(layer, nn.Conv2d):
            dist = dist + torch.mean((fx - fy) ** 2)
            count += 1
    return dist / count


def perceptual_distance(rgb_x: torch.Tensor, rgb_y: torch.Tensor) -> torch.Tensor:
    """P(x, y) on [B, 3, H, W] tensors (alpha callers replicate to 3 channels)."""
    return _feature_distance(rgb_x, rgb_y)


def _kl_sum(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    if mu.numel() == 0:
        return mu.new_zeros(())
    return 0.5 * torch.sum(mu ** 2 + torch.exp(logvar) - 1.0 - logvar)


def vae_loss(image, recon, post: LatentPosterior,
             weights: VaeLossWeights = VaeLossWeights()) -> dict:
    """Loss breakdown {recon, perceptual, kl_a, kl_b, total} for one image.

    recon: mean L1 over every channel.  perceptual: half the sum of the RGB
    feature distance and the alpha feature distance (alpha replicated to 3
    channels).  kl_*: per-group analytic KL to N(0,1), summed over the group
    and divided by the image pixel count.
    """
    x = _to_chw(image).unsqueeze(0)
    y = _to_chw(recon).unsqueeze(0)
    if x.shape != y.shape:
        raise ContractError(f"image/recon shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    n_pixels = x.shape[-2] * x.shape[-1]
    rec = torch.mean(torch.abs(x - y))
    if x.shape[1] == 4:
        perc = 0.5 * (perceptual_distance(x[:, :3], y[:, :3])
                      + perceptual_distance(x[:, 3:].expand(-1, 3, -1, -1),
                                            y[:, 3:].expand(-1, 3, -1, -1)))
    else:
        perc = perceptual_distance(x, y)
    kl_a = _kl_sum(post.mu_a, post.logvar_a) / n_pixels
    kl_b = _kl_sum(post.mu_b, post.logvar_b) / n_pixels
    total = (weights.w_recon * rec + weights.w_perceptual * perc
             + weights.w_kl * (kl_a + kl_b))
    return {"recon": rec, "perceptual": perc, "kl_a": kl_a, "kl_b": kl_b, "total": total}


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class VaeTrainConfig:
    steps: int = 3000
    batch_size: int = 32
    lr: float = 2e-3
    weights: VaeLossWeights = field(default_factory=VaeLossWeights)
    seed: int = 0
    model: VaeConfig = field(default_factory=VaeConfig)


def _ingest(dataset: np.ndarray, channels: int) -> torch.Tensor:
    arr = np.asarray(dataset, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[3] != channels:
        raise ContractError(f"expected [N, H, W, {channels}] dataset, got {arr.shape}")
    if arr.min() < 0 or arr.max() > 1:
        raise ContractError("dataset values must lie in [0, 1]")
    if channels == 4:
        arr = np.stack([apply_transparency_convention(a) for a in arr])
    return torch.from_numpy(arr.transpose(0, 3, 1, 2))


def train_vae(dataset: np.ndarray, config: VaeTrainConfig,
              rng: np.random.Generator | None = None):
    """Train on [N, H, W, C] images; returns (vae, per-step loss history)."""
    model_cfg = config.model
    data = _ingest(dataset, model_cfg.in_channels)
    vae = RgbaVae(model_cfg)
    vae.train()
    opt = torch.optim.Adam(vae.parameters(), lr=config.lr)
    rng = rng or np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    ca = model_cfg.split[0]
    n_pixels = data.shape[-2] * data.shape[-1]
    w = config.weights
    history = []
    for step in range(config.steps):
        idx = rng.integers(0, data.shape[0], size=min(config.batch_size, data.shape[0]))
        x = data[torch.from_numpy(np.ascontiguousarray(idx))]
        mu, logvar = vae.encode_moments(x)
        eps = torch.randn(mu.shape, generator=gen)
        z = mu + torch.exp(logvar / 2) * eps
        y = vae.decode_latent(z)
        rec = torch.mean(torch.abs(x - y))
        if model_cfg.in_channels == 4:
            perc = 0.5 * (perceptual_distance(x[:, :3], y[:, :3])
                          + perceptual_distance(x[:, 3:].expand(-1, 3, -1, -1),
                                                y[:, 3:].expand(-1, 3, -1, -1)))
        else:
            perc = perceptual_distance(x, y)
        batch = x.shape[0]
        kl_a = _kl_sum(mu[:, :ca], logvar[:, :ca]) / (batch * n_pixels)
        kl_b = _kl_sum(mu[:, ca:], logvar[:, ca:]) / (batch * n_pixels)
        loss = w.w_recon * rec + w.w_perceptual * perc + w.w_kl * (kl_a + kl_b)
        if not torch.isfinite(loss):
            raise TrainingError(
                f"non-finite loss at step {step}: recon={rec.item():.4g} "
                f"perceptual={perc.item():.4g} kl_a={kl_a.item():.4g} kl_b={kl_b.item():.4g}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append({"step": step, "recon": rec.item(), "perceptual": perc.item(),
                        "kl_a": kl_a.item(), "kl_b": kl_b.item(), "total": loss.item()})
    vae.eval()
    return vae, history


# ---------------------------------------------------------------------------
# Checkpoints: parameter tensors + a JSON config block in one archive
# ---------------------------------------------------------------------------

def save_vae(vae: RgbaVae, path) -> None:
    payload = {"state_dict": vae.state_dict(),
               "config_json": json.dumps(asdict(vae.config), sort_keys=True)}
    torch.save(payload, path)


def load_vae(path) -> RgbaVae:
    if not Path(path).exists():
        raise ConfigurationError(f"no VAE checkpoint at {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    cfg_dict = json.loads(payload["config_json"])
    cfg_dict["split"] = tuple(cfg_dict["split"])
    vae = RgbaVae(VaeConfig(**cfg_dict))
    vae.load_state_dict(payload["state_dict"])
    vae.eval()
    return vae
