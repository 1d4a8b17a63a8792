"""Command-line entry points mirroring the HTTP API 1:1.

Training commands produce checkpoint files; generation/composition commands
load them and operate on a project directory (env LAYERFORGE_ROOT or
--root).  Every command is deterministic given its --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from ..errors import LayerforgeError


def _root(args) -> Path:
    root = args.root or os.environ.get("LAYERFORGE_ROOT") or "."
    return Path(root)


def _load_models(checkpoint_dir):
    from ..denoiser import load_model
    ckpt = Path(checkpoint_dir)
    instance = ckpt / "instance.pt"
    scene = ckpt / "scene.pt"
    if not instance.exists() or not scene.exists():
        raise LayerforgeError(
            f"checkpoint dir {ckpt} must contain instance.pt and scene.pt")
    return load_model(instance), load_model(scene)


# ---------------------------------------------------------------------------
# Training commands
# ---------------------------------------------------------------------------

def cmd_train_vae(args) -> int:
    from ..spriteworld import sprite_corpus
    from ..vae import VaeConfig, VaeLossWeights, VaeTrainConfig, save_vae, train_vae
    images, _ = sprite_corpus(args.n, seed=args.seed)
    cfg = VaeTrainConfig(steps=args.steps, batch_size=args.batch, lr=args.lr,
                         weights=VaeLossWeights(w_kl=args.w_kl), seed=args.seed,
                         model=VaeConfig(width=args.width, seed=args.seed))
    vae, history = train_vae(images, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_vae(vae, out)
    print(f"saved VAE to {out} (final recon {history[-1]['recon']:.4f})")
    return 0


def cmd_train_ldm(args) -> int:
    from ..denoiser import LdmTrainConfig, save_model, sprite_vocabulary, train_ldm
    from ..spriteworld import sprite_corpus
    from ..vae import load_vae
    vae = load_vae(args.vae)
    dataset = sprite_corpus(args.n, seed=args.seed)
    cfg = LdmTrainConfig(steps=args.steps, batch_size=args.batch, lr=args.lr,
                         paired=not args.unpaired, T_train=args.T,
                         width=args.width, seed=args.seed)
    model, history = train_ldm(dataset, vae, cfg, vocab=sprite_vocabulary())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    print(f"saved instance model to {out} (final loss {history[-1]['loss']:.4f})")
    return 0


def cmd_train_scene(args) -> int:
    from ..denoiser import SceneTrainConfig, build_scene_model, save_model, scene_vocabulary
    from ..spriteworld import scene_corpus
    dataset = scene_corpus(args.n, seed=args.seed)
    cfg = SceneTrainConfig(vae_steps=args.vae_steps, ldm_steps=args.ldm_steps,
                           batch_size=args.batch, width=args.width, seed=args.seed)
    model, history = build_scene_model(dataset, cfg, vocab=scene_vocabulary())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    print(f"saved scene model to {out} "
          f"(final ldm loss {history['ldm'][-1]['loss']:.4f})")
    return 0


# ---------------------------------------------------------------------------
# Generation / composition commands
# ---------------------------------------------------------------------------

def cmd_gen_instance(args) -> int:
    from ..denoiser import conditional_sample, load_model
    from ..diffusion import GuidanceParams, make_timestep_grid
    from ..images import rgba_to_png_bytes
    from . import store
    model = load_model(Path(args.checkpoint_dir) / "instance.pt")
    condition = {"shape": args.shape, "color": args.color,
                 "size": args.size, "pattern": args.pattern}
    cond = model.vocab.encode(condition)
    grid = make_timestep_grid(model.schedule.T_train, args.steps, "trailing")
    image = conditional_sample(cond, grid, GuidanceParams(args.gs, args.gr),
                               model, args.seed)
    if args.out:
        Path(args.out).write_bytes(rgba_to_png_bytes(image))
        print(f"wrote {args.out}")
    if args.project:
        project = store.init_project(_root(args) / args.project)
        aid = store.store_asset(project, image, condition)
        print(f"asset {aid}")
    return 0


def cmd_compose(args) -> int:
    from ..compositor import compose
    from . import store
    instance_model, scene_model = _load_models(args.checkpoint_dir)
    project = store.init_project(_root(args) / args.project)
    with open(args.layout) as fh:
        layout = store.layout_from_json(json.load(fh))
    params = store.params_from_json({
        "n": args.n, "b": args.b, "n_s": args.n_s, "steps": args.steps,
        "guidance": {"scale": args.gs, "rescale": args.gr}, "seed": args.seed})
    scene_condition = {"background": args.background} if args.background else None
    cond = scene_model.vocab.encode(scene_condition)
    assets = {eid: store.load_asset(project, eid) for eid in layout.ids()}
    stack = compose(cond, layout, assets, params, scene_model)
    sid, manifest = store.store_stack(project, stack, {
        "scene_condition": scene_condition or {},
        "layout": store.layout_to_json(layout),
        "params": store.params_to_json(params)})
    project.layout = layout
    project.params = params
    project.history.append(["compose", sid])
    store.save_project(project)
    print(f"stack {sid} ({manifest['n_layers']} layers) "
          f"under {project.root / 'stacks' / sid}")
    return 0


def cmd_edit(args) -> int:
    from ..compositor import edit_scene
    from . import store
    instance_model, scene_model = _load_models(args.checkpoint_dir)
    project = store.init_project(_root(args) / args.project)
    base = store.load_stack_manifest(project, args.stack)
    with open(args.edits) as fh:
        edits = json.load(fh)
    layout = store.layout_from_json(base["request"]["layout"])
    params = store.params_from_json(base["request"]["params"])
    scene_condition = base["request"].get("scene_condition") or None
    cond = scene_model.vocab.encode(scene_condition)
    from ..compositor import apply_edits
    new_layout = apply_edits(layout, edits)
    assets = {eid: store.load_asset(project, eid)
              for eid in set(layout.ids()) | set(new_layout.ids())}
    stack, new_layout = edit_scene(cond, layout, assets, params, scene_model,
                                   edits, force_b_zero=not args.keep_b)
    sid, manifest = store.store_stack(project, stack, {
        "scene_condition": scene_condition or {},
        "layout": store.layout_to_json(new_layout),
        "params": base["request"]["params"]})
    project.history.append([f"edit:{[e.get('op') for e in edits]}", sid])
    store.save_project(project)
    print(f"stack {sid} ({manifest['n_layers']} layers)")
    return 0


def cmd_eval(args) -> int:
    from ..denoiser import conditional_sample_batch, load_model
    from ..diffusion import GuidanceParams, make_timestep_grid
    from ..spriteworld import SpriteSpec, attribute_oracle, random_sprite_spec
    model = load_model(Path(args.checkpoint_dir) / "instance.pt")
    rng = np.random.default_rng(args.seed)
    specs = [random_sprite_spec(rng) for _ in range(args.n)]
    conds = [s.as_condition() for s in specs]
    grid = make_timestep_grid(model.schedule.T_train, args.steps, "trailing")
    images = conditional_sample_batch(
        [model.vocab.encode(c) for c in conds], grid,
        GuidanceParams(args.gs, args.gr), model, args.seed)
    reports = [attribute_oracle(img, SpriteSpec(**c, jitter=None))
               for img, c in zip(images, conds)]
    color = float(np.mean([r["color_ok"] for r in reports]))
    size = float(np.mean([r["size_ok"] for r in reports]))
    iou_mean = float(np.mean([r["shape_iou"] for r in reports]))
    print(f"n={args.n} color_acc={color:.3f} size_acc={size:.3f} "
          f"shape_iou={iou_mean:.3f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from . import store
    from .service import create_app
    instance_model, scene_model = _load_models(args.checkpoint_dir)
    project = store.init_project(_root(args) / args.project)
    app = create_app(instance_model, scene_model, project)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# Argument wiring
# ---------------------------------------------------------------------------

def _add_common(p, project=True):
    p.add_argument("--root", default=None, help="store root (or env LAYERFORGE_ROOT)")
    p.add_argument("--seed", type=int, default=0)
    if project:
        p.add_argument("--project", default="project")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layerforge")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-vae", help="train the RGBA instance VAE")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--w-kl", type=float, default=1e-3)
    p.add_argument("--width", type=int, default=48)
    _add_common(p, project=False)
    p.set_defaults(func=cmd_train_vae)

    p = sub.add_parser("train-ldm", help="train the RGBA instance denoiser")
    p.add_argument("--vae", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--unpaired", action="store_true",
                   help="train with matched timesteps only")
    _add_common(p, project=False)
    p.set_defaults(func=cmd_train_ldm)

    p = sub.add_parser("train-scene", help="train the RGB scene VAE + denoiser")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--vae-steps", type=int, default=2500)
    p.add_argument("--ldm-steps", type=int, default=3000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--width", type=int, default=64)
    _add_common(p, project=False)
    p.set_defaults(func=cmd_train_scene)

    p = sub.add_parser("gen-instance", help="sample one RGBA instance")
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--shape", required=True)
    p.add_argument("--color", required=True)
    p.add_argument("--size", required=True)
    p.add_argument("--pattern", default="solid")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--gs", type=float, default=2.5)
    p.add_argument("--gr", type=float, default=0.25)
    p.add_argument("--out", default=None, help="write the PNG here")
    _add_common(p)
    p.set_defaults(func=cmd_gen_instance)

    p = sub.add_parser("compose", help="compose a layer stack from a layout")
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--layout", required=True, help="layout JSON file")
    p.add_argument("--background", default=None)
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--b", type=int, default=20)
    p.add_argument("--n-s", type=int, default=10)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--gs", type=float, default=4.5)
    p.add_argument("--gr", type=float, default=0.25)
    _add_common(p)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("edit", help="re-compose an edited layout, same seed")
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--stack", required=True, help="base stack id")
    p.add_argument("--edits", required=True, help="edits JSON file")
    p.add_argument("--keep-b", action="store_true",
                   help="keep background blending instead of forcing b=0")
    _add_common(p)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("eval", help="attribute-oracle metrics on fresh samples")
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--gs", type=float, default=2.5)
    p.add_argument("--gr", type=float, default=0.25)
    _add_common(p, project=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    _add_common(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LayerforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
