"""Noise prediction over paired latent groups, training, and sampling.

The denoiser sees the concatenated (RGB-group, alpha-group) latent along
with TWO timestep embeddings — one per group — so the groups can sit at
different noise levels.  Training draws per-sample timestep pairs from a
near-diagonal set early on, widening to arbitrary (t, k) pairs halfway
through; conditioning is dropped to a learned null token with probability
drop_p for classifier-free guidance.  Conditional sampling alternates:
first the alpha group steps down using a prediction at (t, t), then the RGB
group steps using a prediction at (t, t_prev), so each group's update sees
the other's freshest state.

The same network class, driven with identical timesteps for both groups,
doubles as the plain RGB scene model used by the compositor.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .diffusion import (
    GuidanceParams,
    NoiseSchedule,
    TimestepGrid,
    apply_guidance,
    ddim_step,
    sample_noise,
)
from .errors import ConfigurationError, ContractError, TrainingError
from .images import RgbaImage, apply_transparency_convention
from .vae import RgbaVae, VaeConfig


# ---------------------------------------------------------------------------
# Conditioning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Vocabulary:
    """Ordered attribute fields, each with a closed set of token values."""

    fields: tuple  # ((name, (value, ...)), ...)

    def sizes(self) -> tuple:
        return tuple(len(values) for _, values in self.fields)

    def encode(self, cond: dict | None, crop_coords=(0, 0)) -> "ConditioningVector":
        if cond is None:
            return ConditioningVector(tuple(0 for _ in self.fields), tuple(crop_coords), True)
        tokens = []
        for name, values in self.fields:
            if name not in cond:
                raise ConfigurationError(f"condition missing attribute {name!r}")
            try:
                tokens.append(values.index(cond[name]))
            except ValueError:
                raise ConfigurationError(
                    f"unknown {name} token {cond[name]!r}; vocabulary: {list(values)}") from None
        return ConditioningVector(tuple(tokens), tuple(crop_coords), False)


@dataclass(frozen=True)
class ConditioningVector:
    attr_tokens: tuple
    crop_coords: tuple = (0, 0)
    null_flag: bool = False

    def __post_init__(self):
        if any(t < 0 for t in self.attr_tokens):
            raise ContractError("attribute tokens must be non-negative")
        if any(c < 0 for c in self.crop_coords):
            raise ContractError("crop coordinates must be non-negative")


def batch_conditioning(n_attrs: int, vecs: list) -> tuple:
    """Stack ConditioningVectors into (tokens, crop, null_mask) tensors."""
    tokens = torch.zeros(len(vecs), max(n_attrs, 1), dtype=torch.long)
    crop = torch.zeros(len(vecs), 2)
    null = torch.zeros(len(vecs), dtype=torch.bool)
    for i, cv in enumerate(vecs):
        if n_attrs:
            tokens[i, :n_attrs] = torch.tensor(cv.attr_tokens[:n_attrs], dtype=torch.long)
        crop[i] = torch.tensor(cv.crop_coords, dtype=torch.float32)
        null[i] = cv.null_flag
    return tokens, crop, null


@dataclass(frozen=True)
class TimestepPair:
    t_rgb: int
    t_alpha: int

    def __post_init__(self):
        if self.t_rgb < 0 or self.t_alpha < 0:
            raise ContractError("paired timesteps must be >= 0")


def sample_training_pair(t: int, phase: str, rng: np.random.Generator) -> TimestepPair:
    """Draw the per-sample (t_rgb, t_alpha) noise levels.

    early: uniform over {(t,t), (t,t-1), (t-1,t)}.  late: uniform over those
    three plus {(t,k), (k,t)} with k ~ Uniform[0, t-1].  t=0 degenerates to
    (0,0) since no lower level exists.
    """
    if t < 0:
        raise ContractError(f"timestep must be >= 0, got {t}")
    if phase not in ("early", "late"):
        raise ConfigurationError(f"unknown phase {phase!r}")
    if t == 0:
        return TimestepPair(0, 0)
    kind = int(rng.integers(3 if phase == "early" else 5))
    if kind == 0:
        return TimestepPair(t, t)
    if kind == 1:
        return TimestepPair(t, t - 1)
    if kind == 2:
        return TimestepPair(t - 1, t)
    k = int(rng.integers(t))
    return TimestepPair(t, k) if kind == 3 else TimestepPair(k, t)


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

def sinusoidal_embedding(x: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """[B] float scalars -> [B, dim] sin/cos features (keeps x's dtype)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=x.dtype) / half)
    args = x[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class _ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, cout)
        self.norm2 = nn.GroupNorm(8, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class _SelfAttention(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.GroupNorm(8, channels)
        self.qkv = nn.Conv2d(channels, 3 * channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        B, C, H, W = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(B, 3, C, H * W).unbind(1)
        attn = torch.softmax(q.transpose(1, 2) @ k / math.sqrt(C), dim=-1)
        out = (v @ attn.transpose(1, 2)).reshape(B, C, H, W)
        return x + self.proj(out)


@dataclass(frozen=True)
class DenoiserConfig:
    latent_channels: int = 4
    split: tuple = (2, 2)
    width: int = 64
    emb_dim: int = 128
    T_train: int = 1000
    vocab_sizes: tuple = ()
    seed: int = 0


class LatentDenoiser(nn.Module):
    """Small UNet with one attention bottleneck and dual timestep embeddings."""

    def __init__(self, config: DenoiserConfig):
        torch.manual_seed(config.seed)  # deterministic initialization
        super().__init__()
        self.config = config
        self.calls = 0  # forward-invocation counter for call-count audits
        w, d = config.width, config.emb_dim

        def mlp():
            return nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))

        self.t_mlp_rgb = mlp()
        self.t_mlp_alpha = mlp()
        self.crop_mlp = mlp()
        self.attr_embeddings = nn.ModuleList(
            [nn.Embedding(size, d) for size in config.vocab_sizes])
        self.null_embedding = nn.Parameter(torch.randn(d) * 0.02)

        c = config.latent_channels
        self.conv_in = nn.Conv2d(c, w, 3, padding=1)
        self.res_down = _ResBlock(w, w, d)
        self.downsample = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.res_mid1 = _ResBlock(2 * w, 2 * w, d)
        self.attn = _SelfAttention(2 * w)
        self.res_mid2 = _ResBlock(2 * w, 2 * w, d)
        self.conv_up = nn.Conv2d(2 * w, w, 3, padding=1)
        self.res_up = _ResBlock(2 * w, w, d)
        self.norm_out = nn.GroupNorm(8, w)
        self.conv_out = nn.Conv2d(w, c, 3, padding=1)

    def _embed(self, t_rgb, t_alpha, tokens, crop, null_mask):
        d = self.config.emb_dim
        emb = (self.t_mlp_rgb(sinusoidal_embedding(t_rgb, d))
               + self.t_mlp_alpha(sinusoidal_embedding(t_alpha, d)))
        if len(self.attr_embeddings):
            attr = sum(e(tokens[:, i]) for i, e in enumerate(self.attr_embeddings))
            attr = torch.where(null_mask[:, None], self.null_embedding.expand_as(attr), attr)
        else:
            attr = self.null_embedding.expand(t_rgb.shape[0], d).to(t_rgb.dtype)
        half = d // 2
        crop_feat = torch.cat([sinusoidal_embedding(crop[:, 0], half),
                               sinusoidal_embedding(crop[:, 1], half)], dim=1)
        return emb + attr + self.crop_mlp(crop_feat)

    def forward(self, z, t_rgb, t_alpha, tokens, crop, null_mask):
        """z: [B, c, h, w]; t_*: [B] integer timesteps; tokens: [B, n_attr];
        crop: [B, 2]; null_mask: [B] bool -> predicted noise [B, c, h, w]."""
        T = self.config.T_train
        if not bool(((t_rgb >= 0) & (t_rgb < T)).all() and ((t_alpha >= 0) & (t_alpha < T)).all()):
            raise ContractError(f"timesteps must lie in [0, {T - 1}]")
        self.calls += 1
        emb = self._embed(t_rgb.to(z.dtype), t_alpha.to(z.dtype), tokens,
                          crop.to(z.dtype), null_mask)
        h0 = self.conv_in(z)
        h1 = self.res_down(h0, emb)
        h2 = self.res_mid1(self.downsample(h1), emb)
        h2 = self.attn(h2)
        h2 = self.res_mid2(h2, emb)
        h3 = self.conv_up(F.interpolate(h2, scale_factor=2, mode="nearest"))
        h4 = self.res_up(torch.cat([h3, h1], dim=1), emb)
        return self.conv_out(F.silu(self.norm_out(h4)))


# ---------------------------------------------------------------------------
# Trained-model bundle
# ---------------------------------------------------------------------------

@dataclass
class TrainedDenoiser:
    """Everything sampling needs: net, frozen VAE, schedule, vocab, latent scale."""

    net: LatentDenoiser
    vae: RgbaVae
    schedule: NoiseSchedule
    vocab: Vocabulary
    scale: float          # latents are multiplied by this during diffusion
    latent_hw: tuple      # (h, w) of the latent grid

    def eps(self, z: torch.Tensor, t_rgb: int, t_alpha: int, conds) -> torch.Tensor:
        """One forward pass at shared integer timesteps for the whole batch."""
        tokens, crop, null = batch_conditioning(len(self.vocab.fields), conds)
        tr = torch.full((z.shape[0],), t_rgb, dtype=torch.long)
        ta = torch.full((z.shape[0],), t_alpha, dtype=torch.long)
        with torch.no_grad():
            return self.net(z, tr, ta, tokens, crop, null)

    def eps_guided(self, z, t_rgb: int, t_alpha: int, conds, g: GuidanceParams) -> torch.Tensor:
        """CFG prediction; the unconditional branch is a separate forward call."""
        eps_cond = self.eps(z, t_rgb, t_alpha, conds)
        if g.scale == 1.0:
            return eps_cond
        null_conds = [self.vocab.encode(None) for _ in conds]
        eps_uncond = self.eps(z, t_rgb, t_alpha, null_conds)
        return apply_guidance(eps_cond, eps_uncond, g)

    def encode_conds(self, conds) -> list:
        return [c if isinstance(c, ConditioningVector) else self.vocab.encode(c)
                for c in conds]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class LdmTrainConfig:
    steps: int = 4000
    batch_size: int = 32
    lr: float = 2e-4
    drop_p: float = 0.1
    switch_fraction: float = 0.5
    offset_strength: float = 0.05
    paired: bool = True        # False: both groups always at (t, t)
    T_train: int = 1000
    schedule_kind: str = "linear"
    width: int = 64
    emb_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_p <= 1.0:
            raise ConfigurationError(f"drop_p must be in [0, 1], got {self.drop_p}")
        if not 0.0 <= self.switch_fraction <= 1.0:
            raise ConfigurationError("switch_fraction must be in [0, 1]")


def ldm_train_step(latents: torch.Tensor, conds: list, schedule: NoiseSchedule,
                   net: LatentDenoiser, vocab: Vocabulary, drop_p: float, phase: str,
                   rng: np.random.Generator, torch_gen: torch.Generator,
                   offset_strength: float = 0.0, paired: bool = True,
                   record: list | None = None) -> torch.Tensor:
    """One training loss: each group noised to its own timestep, MSE on both.

    latents: [B, c, h, w] clean (already scaled); conds: per-item dict or
    None.  Appends {pair, dropped} per item to `record` when provided.
    """
    B = latents.shape[0]
    ca = net.config.split[0]
    dtype = latents.dtype
    ts = rng.integers(0, schedule.T_train, size=B)
    pairs = [sample_training_pair(int(t), phase, rng) if paired
             else TimestepPair(int(t), int(t)) for t in ts]
    dropped = rng.random(B) < drop_p
    vecs = [vocab.encode(None) if dropped[i] else vocab.encode(conds[i]) for i in range(B)]
    if record is not None:
        record.extend({"pair": (p.t_rgb, p.t_alpha), "dropped": bool(d)}
                      for p, d in zip(pairs, dropped))
    eps = sample_noise(tuple(latents.shape), offset_strength, torch_gen).to(dtype)
    t_rgb = torch.tensor([p.t_rgb for p in pairs], dtype=torch.long)
    t_alpha = torch.tensor([p.t_alpha for p in pairs], dtype=torch.long)
    bars = schedule.alpha_bars.to(dtype)
    ab_rgb = bars[t_rgb][:, None, None, None]
    ab_alpha = bars[t_alpha][:, None, None, None]
    z_t = torch.cat([
        ab_rgb.sqrt() * latents[:, :ca] + (1 - ab_rgb).sqrt() * eps[:, :ca],
        ab_alpha.sqrt() * latents[:, ca:] + (1 - ab_alpha).sqrt() * eps[:, ca:],
    ], dim=1)
    tokens, crop, null = batch_conditioning(len(vocab.fields), vecs)
    pred = net(z_t, t_rgb, t_alpha, tokens, crop.to(dtype), null)
    return torch.mean((pred - eps) ** 2)


def _encode_dataset(vae: RgbaVae, images: np.ndarray) -> tuple:
    """Frozen-VAE posterior moments for the whole corpus, channel-first."""
    x = torch.from_numpy(np.asarray(images, dtype=np.float32).transpose(0, 3, 1, 2))
    vae.eval()
    mus, logvars = [], []
    with torch.no_grad():
        for i in range(0, x.shape[0], 256):
            mu, logvar = vae.encode_moments(x[i:i + 256])
            mus.append(mu)
            logvars.append(logvar)
    return torch.cat(mus), torch.cat(logvars)


def train_ldm(dataset: tuple, vae: RgbaVae, config: LdmTrainConfig,
              rng: np.random.Generator | None = None,
              vocab: Vocabulary | None = None):
    """Train the latent denoiser on (images [N,H,W,C], condition dicts).

    Returns (TrainedDenoiser, history).  The VAE is frozen; latents are
    re-sampled from its posteriors each step and multiplied by a scale
    factor computed once so diffusion sees roughly unit-variance inputs.
    """
    if vae is None:
        raise ConfigurationError("train_ldm requires a trained VAE")
    if vocab is None:
        raise ConfigurationError("train_ldm requires a conditioning vocabulary")
    images, conds = dataset
    mu, logvar = _encode_dataset(vae, images)
    scale = float(1.0 / max(mu.std().item(), 1e-6))
    schedule = make_schedule_for(config)
    net_cfg = DenoiserConfig(latent_channels=vae.config.latent_channels,
                             split=vae.config.split, width=config.width,
                             emb_dim=config.emb_dim, T_train=config.T_train,
                             vocab_sizes=vocab.sizes(), seed=config.seed)
    net = LatentDenoiser(net_cfg)
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    rng = rng or np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    switch_at = int(config.switch_fraction * config.steps)
    history = []
    for step in range(config.steps):
        phase = "early" if step < switch_at else "late"
        idx = torch.from_numpy(rng.integers(0, mu.shape[0], size=config.batch_size))
        noise = torch.randn(mu[idx].shape, generator=gen)
        z0 = (mu[idx] + torch.exp(logvar[idx] / 2) * noise) * scale
        record: list = []
        loss = ldm_train_step(z0, [conds[i] for i in idx.tolist()], schedule, net,
                              vocab, config.drop_p, phase, rng, gen,
                              config.offset_strength, config.paired, record)
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite diffusion loss at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append({"step": step, "loss": loss.item(), "phase": phase,
                        "pairs": [r["pair"] for r in record]})
    net.eval()
    h = images.shape[1] // vae.config.downsample
    w = images.shape[2] // vae.config.downsample
    return TrainedDenoiser(net, vae, schedule, vocab, scale, (h, w)), history


def make_schedule_for(config: LdmTrainConfig) -> NoiseSchedule:
    from .diffusion import make_schedule
    if config.schedule_kind == "cosine":
        return make_schedule("cosine", config.T_train, 1e-5, 0.999)
    return make_schedule("linear", config.T_train)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _initial_noise(model: TrainedDenoiser, n: int, seed: int) -> torch.Tensor:
    h, w = model.latent_hw
    c = model.vae.config.latent_channels
    outs = []
    for i in range(n):  # independent stream per sample, derived from the seed
        gen = torch.Generator().manual_seed(seed + i)
        outs.append(torch.randn((c, h, w), generator=gen))
    return torch.stack(outs)


def _decode_batch(model: TrainedDenoiser, z: torch.Tensor) -> list:
    with torch.no_grad():
        out = model.vae.decode_latent(z / model.scale)
    images = []
    for i in range(out.shape[0]):
        pixels = out[i].permute(1, 2, 0).numpy().astype(np.float32)
        if model.vae.config.in_channels == 4:
            images.append(RgbaImage(apply_transparency_convention(pixels)))
        else:
            images.append(pixels)
    return images


def conditional_sample_batch(conds: list, grid: TimestepGrid, g: GuidanceParams,
                             model: TrainedDenoiser, seed: int,
                             ordering: str = "alpha_first") -> list:
    """Alternating-group sampler: 2 denoiser calls per grid step (4 with CFG).

    The first group to move uses a prediction with both groups at t; the
    second group's prediction then sees the first already at t_prev.  The
    clean level (-1) is embedded as timestep 0, the closest trained point.
    """
    if ordering not in ("alpha_first", "rgb_first"):
        raise ConfigurationError(f"unknown ordering {ordering!r}")
    vecs = model.encode_conds(conds)
    ca = model.net.config.split[0]
    z = _initial_noise(model, len(vecs), seed)
    sched = model.schedule
    for t, t_prev in grid.transitions():
        emb_prev = max(t_prev, 0)
        eps1 = model.eps_guided(z, t, t, vecs, g)
        if ordering == "alpha_first":
            z = torch.cat([z[:, :ca],
                           ddim_step(z[:, ca:], eps1[:, ca:], t, t_prev, sched)], dim=1)
            eps2 = model.eps_guided(z, t, emb_prev, vecs, g)
            z = torch.cat([ddim_step(z[:, :ca], eps2[:, :ca], t, t_prev, sched),
                           z[:, ca:]], dim=1)
        else:
            z = torch.cat([ddim_step(z[:, :ca], eps1[:, :ca], t, t_prev, sched),
                           z[:, ca:]], dim=1)
            eps2 = model.eps_guided(z, emb_prev, t, vecs, g)
            z = torch.cat([z[:, :ca],
                           ddim_step(z[:, ca:], eps2[:, ca:], t, t_prev, sched)], dim=1)
    return _decode_batch(model, z)


def conditional_sample(cond, grid: TimestepGrid, g: GuidanceParams,
                       model: TrainedDenoiser, seed: int,
                       ordering: str = "alpha_first"):
    return conditional_sample_batch([cond], grid, g, model, seed, ordering)[0]


def joint_sample_batch(conds: list, grid: TimestepGrid, g: GuidanceParams,
                       model: TrainedDenoiser, seed: int) -> list:
    """Both groups updated simultaneously at (t, t): 1 call per step (2 with CFG)."""
    vecs = model.encode_conds(conds)
    z = _initial_noise(model, len(vecs), seed)
    for t, t_prev in grid.transitions():
        eps = model.eps_guided(z, t, t, vecs, g)
        z = ddim_step(z, eps, t, t_prev, model.schedule)
    return _decode_batch(model, z)


def joint_sample(cond, grid: TimestepGrid, g: GuidanceParams,
                 model: TrainedDenoiser, seed: int):
    return joint_sample_batch([cond], grid, g, model, seed)[0]


# ---------------------------------------------------------------------------
# Scene model
# ---------------------------------------------------------------------------

@dataclass
class SceneTrainConfig:
    vae_steps: int = 2500
    ldm_steps: int = 3000
    batch_size: int = 32
    vae_lr: float = 2e-3
    ldm_lr: float = 2e-4
    vae_w_kl: float = 1e-3     # strong enough for smooth, invertible latents
    vae_width: int = 48
    drop_p: float = 0.1
    offset_strength: float = 0.05
    T_train: int = 1000
    width: int = 64
    seed: int = 0


def build_scene_model(dataset: tuple, config: SceneTrainConfig,
                      rng: np.random.Generator | None = None,
                      vocab: Vocabulary | None = None):
    """Train the RGB scene stack: 3-channel single-group VAE, then its LDM.

    dataset = (rgb images [N, H, W, 3], scene condition dicts).  Returns
    (TrainedDenoiser, history dict).  The scene latent is one undivided
    group, so training always uses matched timesteps and sampling is joint.
    """
    from .vae import VaeLossWeights, VaeTrainConfig, train_vae
    images, conds = dataset
    rng = rng or np.random.default_rng(config.seed)
    vae_cfg = VaeTrainConfig(
        steps=config.vae_steps, batch_size=config.batch_size, lr=config.vae_lr,
        weights=VaeLossWeights(w_kl=config.vae_w_kl), seed=config.seed,
        model=VaeConfig(in_channels=3, latent_channels=4, split=(4, 0),
                        width=config.vae_width, seed=config.seed))
    vae, vae_history = train_vae(images, vae_cfg, rng)
    ldm_cfg = LdmTrainConfig(
        steps=config.ldm_steps, batch_size=config.batch_size, lr=config.ldm_lr,
        drop_p=config.drop_p, offset_strength=config.offset_strength,
        paired=False, T_train=config.T_train, width=config.width, seed=config.seed)
    model, ldm_history = train_ldm((images, conds), vae, ldm_cfg, rng, vocab)
    return model, {"vae": vae_history, "ldm": ldm_history}


def sample_scene(cond, grid: TimestepGrid, g: GuidanceParams,
                 model: TrainedDenoiser, seed: int) -> np.ndarray:
    """One RGB scene sample (joint updates; scene latents have one group)."""
    return joint_sample(cond, grid, g, model, seed)


# ---------------------------------------------------------------------------
# Checkpoints: parameter tensors + JSON config block in one archive
# ---------------------------------------------------------------------------

def save_model(model: TrainedDenoiser, path) -> None:
    meta = {"denoiser_config": asdict(model.net.config),
            "vae_config": asdict(model.vae.config),
            "schedule_kind": model.schedule.schedule_kind,
            "T_train": model.schedule.T_train,
            "vocab": [[name, list(values)] for name, values in model.vocab.fields],
            "scale": model.scale, "latent_hw": list(model.latent_hw)}
    torch.save({"net": model.net.state_dict(), "vae": model.vae.state_dict(),
                "betas": model.schedule.betas,
                "meta_json": json.dumps(meta, sort_keys=True)}, path)


def load_model(path) -> TrainedDenoiser:
    from pathlib import Path
    if not Path(path).exists():
        raise ConfigurationError(f"no model checkpoint at {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    meta = json.loads(payload["meta_json"])
    dc = meta["denoiser_config"]
    dc["split"] = tuple(dc["split"])
    dc["vocab_sizes"] = tuple(dc["vocab_sizes"])
    net = LatentDenoiser(DenoiserConfig(**dc))
    net.load_state_dict(payload["net"])
    net.eval()
    vc = meta["vae_config"]
    vc["split"] = tuple(vc["split"])
    vae = RgbaVae(VaeConfig(**vc))
    vae.load_state_dict(payload["vae"])
    vae.eval()
    betas = payload["betas"]
    schedule = NoiseSchedule(meta["T_train"], betas, 1.0 - betas,
                             torch.cumprod(1.0 - betas, dim=0), meta["schedule_kind"])
    vocab = Vocabulary(tuple((name, tuple(values)) for name, values in meta["vocab"]))
    return TrainedDenoiser(net, vae, schedule, vocab, meta["scale"],
                           tuple(meta["latent_hw"]))


def sprite_vocabulary() -> Vocabulary:
    """Canonical conditioning vocabulary for the RGBA instance model."""
    from .spriteworld import COLORS, PATTERNS, SHAPES, SIZES
    return Vocabulary((("shape", tuple(SHAPES)), ("color", tuple(COLORS)),
                       ("size", tuple(SIZES)), ("pattern", tuple(PATTERNS))))


def scene_vocabulary() -> Vocabulary:
    """Canonical conditioning vocabulary for the RGB scene model."""
    from .spriteworld import BACKGROUNDS
    return Vocabulary((("background", tuple(BACKGROUNDS)),))
