"""On-disk project store: assets, layer stacks, and a project.json manifest.

A project directory looks like

    project.json     canvas, layout, asset registry, params, history
    assets/          content-addressed RGBA PNGs (<sha256[:16]>.png)
    stacks/          one directory per composition (layer PNGs + manifest)

Asset and stack ids are hashes of their bytes, so re-generating identical
content never duplicates storage and existing artifacts are never mutated.
project.json serialization is canonical (sorted keys, fixed separators):
serialize -> parse -> serialize is byte-stable, which the tests rely on.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from ..compositor import BlendParams, BoundingBox, InstanceAsset, Layout
from ..diffusion import GuidanceParams
from ..errors import LayerforgeError
from ..images import RgbaImage, rgba_from_png_bytes, rgba_to_png_bytes


class ProjectParseError(LayerforgeError, ValueError):
    """project.json is corrupt; `field` names the offending entry."""

    def __init__(self, field_name: str, detail: str):
        self.field = field_name
        super().__init__(f"project.json field {field_name!r}: {detail}")


# one writer at a time per project id (service handles requests concurrently)
_write_locks: dict = {}
_write_locks_guard = threading.Lock()


def write_lock(project_id: str) -> threading.Lock:
    with _write_locks_guard:
        return _write_locks.setdefault(project_id, threading.Lock())


def content_id(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


# ---------------------------------------------------------------------------
# JSON forms of the compositor types (the wire/storage schema)
# ---------------------------------------------------------------------------

def layout_to_json(layout: Layout) -> list:
    return [{"id": eid, "box": [box.cx, box.cy, box.w, box.h]}
            for eid, box in layout.entries]


def layout_from_json(entries: list) -> Layout:
    try:
        return Layout(tuple((str(e["id"]), BoundingBox(*map(float, e["box"])))
                            for e in entries))
    except (KeyError, TypeError) as exc:
        raise ProjectParseError("layout", f"malformed entry list: {exc}") from exc


def params_to_json(params: BlendParams) -> dict:
    return {"n": params.n, "b": params.b, "n_s": params.n_s, "steps": params.steps,
            "guidance": {"scale": params.guidance.scale,
                         "rescale": params.guidance.rescale},
            "seed": params.seed}


def params_from_json(d: dict) -> BlendParams:
    g = d.get("guidance", {})
    base = BlendParams()
    return BlendParams(
        n=int(d.get("n", base.n)), b=int(d.get("b", base.b)),
        n_s=int(d.get("n_s", base.n_s)), steps=int(d.get("steps", base.steps)),
        guidance=GuidanceParams(float(g.get("scale", base.guidance.scale)),
                                float(g.get("rescale", base.guidance.rescale))),
        seed=int(d.get("seed", base.seed)))


# ---------------------------------------------------------------------------
# Project
# ---------------------------------------------------------------------------

@dataclass
class Project:
    """In-memory view of one project directory."""

    id: str
    root: Path
    canvas: tuple                    # (H, W)
    layout: Layout = Layout(())
    assets: dict = field(default_factory=dict)   # id -> {"condition": ...}
    params: BlendParams = field(default_factory=BlendParams)
    history: list = field(default_factory=list)  # append-only (description, stack_id)

    def to_json(self) -> dict:
        return {"id": self.id, "canvas": list(self.canvas),
                "layout": layout_to_json(self.layout),
                "assets": {aid: {"condition": meta.get("condition")}
                           for aid, meta in sorted(self.assets.items())},
                "params": params_to_json(self.params),
                "history": self.history}

    def serialize(self) -> bytes:
        return (json.dumps(self.to_json(), sort_keys=True,
                           separators=(",", ": "), indent=1) + "\n").encode()


_REQUIRED = {"id": str, "canvas": list, "layout": list, "assets": dict,
             "params": dict, "history": list}


def _parse_project(raw: bytes, root: Path) -> Project:
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ProjectParseError("<document>", f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ProjectParseError("<document>", "top level must be an object")
    for name, kind in _REQUIRED.items():
        if name not in doc:
            raise ProjectParseError(name, "missing")
        if not isinstance(doc[name], kind):
            raise ProjectParseError(name, f"expected {kind.__name__}, "
                                          f"got {type(doc[name]).__name__}")
    if len(doc["canvas"]) != 2 or not all(isinstance(v, int) and v > 0
                                          for v in doc["canvas"]):
        raise ProjectParseError("canvas", "must be two positive integers")
    for aid, meta in doc["assets"].items():
        if not isinstance(meta, dict):
            raise ProjectParseError("assets", f"entry {aid!r} must be an object")
    try:
        params = params_from_json(doc["params"])
    except (ValueError, LayerforgeError) as exc:
        raise ProjectParseError("params", str(exc)) from exc
    history = doc["history"]
    if not all(isinstance(h, list) and len(h) == 2 for h in history):
        raise ProjectParseError("history", "entries must be [description, stack_id] pairs")
    return Project(id=doc["id"], root=root, canvas=tuple(doc["canvas"]),
                   layout=layout_from_json(doc["layout"]),
                   assets={aid: {"condition": meta.get("condition")}
                           for aid, meta in doc["assets"].items()},
                   params=params, history=history)


def init_project(root_path, canvas: tuple = (64, 64)) -> Project:
    """Create (or re-open) the project skeleton under root_path."""
    root = Path(root_path)
    try:
        (root / "assets").mkdir(parents=True, exist_ok=True)
        (root / "stacks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise LayerforgeError(f"cannot create project skeleton at {root}: {exc}") from exc
    manifest = root / "project.json"
    if manifest.exists():
        return _parse_project(manifest.read_bytes(), root)
    project = Project(id=root.name or "project", root=root,
                      canvas=(int(canvas[0]), int(canvas[1])))
    save_project(project)
    return project


def load_project(root_path) -> Project:
    root = Path(root_path)
    manifest = root / "project.json"
    if not manifest.exists():
        raise LayerforgeError(f"no project.json under {root}")
    return _parse_project(manifest.read_bytes(), root)


def save_project(project: Project) -> None:
    with write_lock(project.id):
        tmp = project.root / "project.json.tmp"
        tmp.write_bytes(project.serialize())
        tmp.replace(project.root / "project.json")


# ---------------------------------------------------------------------------
# Assets and stacks
# ---------------------------------------------------------------------------

def store_asset(project: Project, image: RgbaImage, condition: dict | None = None) -> str:
    """Persist an RGBA asset; returns its content-addressed id."""
    data = rgba_to_png_bytes(image)
    aid = content_id(data)
    path = project.root / "assets" / f"{aid}.png"
    if not path.exists():
        path.write_bytes(data)
    project.assets[aid] = {"condition": condition}
    save_project(project)
    return aid


def load_asset(project: Project, asset_id: str) -> InstanceAsset:
    path = project.root / "assets" / f"{asset_id}.png"
    if not path.exists():
        raise LayerforgeError(f"unknown asset {asset_id!r}")
    meta = project.assets.get(asset_id, {})
    return InstanceAsset(rgba_from_png_bytes(path.read_bytes()), asset_id,
                         meta.get("condition"))


def asset_png_path(project: Project, asset_id: str) -> Path:
    path = project.root / "assets" / f"{asset_id}.png"
    if not path.exists():
        raise LayerforgeError(f"unknown asset {asset_id!r}")
    return path


def store_stack(project: Project, stack, request: dict) -> tuple:
    """Persist a composed LayerStack plus the request that produced it.

    The stack id is the hash of the concatenated layer PNGs, so identical
    results share an id.  Returns (stack_id, manifest dict).
    """
    from ..images import rgb_to_png_bytes
    blobs = [rgb_to_png_bytes(rgb) for rgb in stack.decoded]
    sid = content_id(b"".join(blobs))
    directory = project.root / "stacks" / sid
    manifest = {"stack_id": sid, "n_layers": len(blobs),
                "layers": [f"layer_{k:02d}.png" for k in range(len(blobs))],
                "request": request}
    with write_lock(project.id):
        directory.mkdir(parents=True, exist_ok=True)
        for name, blob in zip(manifest["layers"], blobs):
            target = directory / name
            if not target.exists():
                target.write_bytes(blob)
        with open(directory / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
    return sid, manifest


def load_stack_manifest(project: Project, stack_id: str) -> dict:
    path = project.root / "stacks" / stack_id / "manifest.json"
    if not path.exists():
        raise LayerforgeError(f"unknown stack {stack_id!r}")
    with open(path) as fh:
        return json.load(fh)


def stack_layer_path(project: Project, stack_id: str, k: int) -> Path:
    manifest = load_stack_manifest(project, stack_id)
    if not 0 <= k < manifest["n_layers"]:
        raise LayerforgeError(f"stack {stack_id!r} has no layer {k}")
    return project.root / "stacks" / stack_id / manifest["layers"][k]
