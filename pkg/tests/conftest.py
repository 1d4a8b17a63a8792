"""Session fixtures: trained models, disk-cached under .cache/.

Training configurations are pinned here; cache files are keyed by a hash of
the exact configuration, so editing a budget invalidates stale checkpoints.
Each cache entry records the wall-clock seconds the original training took —
the acceptance suite asserts those against the stated budgets, whether the
model was trained this run or loaded back.
"""

import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

CACHE_DIR = Path(__file__).resolve().parent.parent / ".cache"

SPRITE_CORPUS = dict(n=2048, seed=1000)
HELD_CORPUS = dict(n=128, seed=2000)
SCENE_CORPUS = dict(n=1024, seed=3000)

SPRITE_VAE_CFG = dict(steps=6000, batch_size=32, lr=2e-3, w_kl=1e-3,
                      width=48, seed=0)
SPRITE_LDM_CFG = dict(steps=12000, batch_size=32, lr=2e-4, T_train=1000,
                      width=64, emb_dim=128, seed=0)
SCENE_CFG = dict(vae_steps=3000, ldm_steps=2000, batch_size=32,
                 vae_width=32, width=48, seed=0)


def _key(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


def cached_model(name: str, payload: dict, build, save, load):
    """Disk-backed build: returns (artifact, wall_seconds_of_original_build)."""
    CACHE_DIR.mkdir(exist_ok=True)
    stem = CACHE_DIR / f"{name}-{_key(payload)}"
    ckpt, sidecar = stem.with_suffix(".pt"), stem.with_suffix(".json")
    if ckpt.exists() and sidecar.exists():
        with open(sidecar) as fh:
            meta = json.load(fh)
        return load(ckpt), meta["wall_seconds"]
    t0 = time.monotonic()
    artifact = build()
    seconds = time.monotonic() - t0
    save(artifact, ckpt)
    with open(sidecar, "w") as fh:
        json.dump({"wall_seconds": seconds, "config": payload}, fh, indent=1)
    return artifact, seconds


@pytest.fixture(scope="session")
def sprite_dataset():
    from layerforge.spriteworld import sprite_corpus
    return sprite_corpus(SPRITE_CORPUS["n"], seed=SPRITE_CORPUS["seed"])


@pytest.fixture(scope="session")
def held_sprites():
    from layerforge.spriteworld import sprite_corpus
    return sprite_corpus(HELD_CORPUS["n"], seed=HELD_CORPUS["seed"])


@pytest.fixture(scope="session")
def sprite_vae(sprite_dataset):
    """Trained RGBA instance VAE + its training wall time."""
    from layerforge.vae import (VaeConfig, VaeLossWeights, VaeTrainConfig,
                                load_vae, save_vae, train_vae)

    def build():
        cfg = VaeTrainConfig(
            steps=SPRITE_VAE_CFG["steps"], batch_size=SPRITE_VAE_CFG["batch_size"],
            lr=SPRITE_VAE_CFG["lr"],
            weights=VaeLossWeights(w_kl=SPRITE_VAE_CFG["w_kl"]),
            seed=SPRITE_VAE_CFG["seed"],
            model=VaeConfig(width=SPRITE_VAE_CFG["width"],
                            seed=SPRITE_VAE_CFG["seed"]))
        vae, _ = train_vae(sprite_dataset[0], cfg)
        return vae

    return cached_model("sprite-vae", {**SPRITE_CORPUS, **SPRITE_VAE_CFG},
                        build, save_vae, load_vae)


def _train_sprite_ldm(sprite_dataset, vae, paired: bool):
    from layerforge.denoiser import LdmTrainConfig, sprite_vocabulary, train_ldm
    cfg = LdmTrainConfig(
        steps=SPRITE_LDM_CFG["steps"], batch_size=SPRITE_LDM_CFG["batch_size"],
        lr=SPRITE_LDM_CFG["lr"], paired=paired, T_train=SPRITE_LDM_CFG["T_train"],
        width=SPRITE_LDM_CFG["width"], emb_dim=SPRITE_LDM_CFG["emb_dim"],
        seed=SPRITE_LDM_CFG["seed"])
    model, _ = train_ldm(sprite_dataset, vae, cfg, vocab=sprite_vocabulary())
    return model


@pytest.fixture(scope="session")
def sprite_model(sprite_dataset, sprite_vae):
    """Trained instance denoiser (paired) + wall seconds (VAE time excluded)."""
    from layerforge.denoiser import load_model, save_model
    vae, _ = sprite_vae
    return cached_model(
        "sprite-ldm", {**SPRITE_CORPUS, **SPRITE_VAE_CFG, **SPRITE_LDM_CFG,
                       "paired": True},
        lambda: _train_sprite_ldm(sprite_dataset, vae, True),
        save_model, load_model)


@pytest.fixture(scope="session")
def sprite_model_unpaired(sprite_dataset, sprite_vae):
    """Ablation arm: trained with matched timesteps only."""
    from layerforge.denoiser import load_model, save_model
    vae, _ = sprite_vae
    return cached_model(
        "sprite-ldm-unpaired", {**SPRITE_CORPUS, **SPRITE_VAE_CFG,
                                **SPRITE_LDM_CFG, "paired": False},
        lambda: _train_sprite_ldm(sprite_dataset, vae, False),
        save_model, load_model)


@pytest.fixture(scope="session")
def scene_model():
    """Trained RGB scene stack (VAE + denoiser) + wall seconds."""
    from layerforge.denoiser import (SceneTrainConfig, build_scene_model,
                                     load_model, save_model, scene_vocabulary)
    from layerforge.spriteworld import scene_corpus

    def build():
        dataset = scene_corpus(SCENE_CORPUS["n"], seed=SCENE_CORPUS["seed"])
        cfg = SceneTrainConfig(**SCENE_CFG)
        model, _ = build_scene_model(dataset, cfg, vocab=scene_vocabulary())
        return model

    return cached_model("scene", {**SCENE_CORPUS, **SCENE_CFG},
                        build, save_model, load_model)


def cached_samples(name: str, payload: dict, generate):
    """Disk-backed sample batches (list of [H, W, C] float32 arrays)."""
    CACHE_DIR.mkdir(exist_ok=True)
    path = CACHE_DIR / f"{name}-{_key(payload)}.npz"
    if path.exists():
        with np.load(path) as z:
            return [z[k] for k in sorted(z.files, key=lambda s: int(s))]
    arrays = generate()
    np.savez_compressed(path, **{str(i): a for i, a in enumerate(arrays)})
    return arrays
