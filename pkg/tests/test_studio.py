"""Project store, HTTP service, and CLI contract tests.

Endpoints are exercised with tiny untrained models: every contract here
(validation, determinism, content addressing, prefix equality) is
weight-independent.
"""

import json

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from layerforge.compositor import BlendParams, BoundingBox, Layout
from layerforge.denoiser import (
    DenoiserConfig,
    LatentDenoiser,
    TrainedDenoiser,
    scene_vocabulary,
    sprite_vocabulary,
)
from layerforge.diffusion import GuidanceParams, make_schedule
from layerforge.errors import LayerforgeError
from layerforge.images import RgbaImage, rgba_to_png_bytes
from layerforge.spriteworld import SpriteSpec, render_sprite
from layerforge.studio import store
from layerforge.studio.cli import main as cli_main
from layerforge.studio.service import create_app
from layerforge.vae import RgbaVae, VaeConfig


def tiny_instance_model(seed=0):
    vocab = sprite_vocabulary()
    vae = RgbaVae(VaeConfig(width=8, seed=seed))
    net = LatentDenoiser(DenoiserConfig(width=8, emb_dim=16, T_train=50,
                                        vocab_sizes=vocab.sizes(), seed=seed))
    return TrainedDenoiser(net, vae, make_schedule("linear", 50), vocab, 1.0, (8, 8))


def tiny_scene_model(seed=0):
    vocab = scene_vocabulary()
    vae = RgbaVae(VaeConfig(in_channels=3, latent_channels=4, split=(4, 0),
                            width=8, seed=seed))
    net = LatentDenoiser(DenoiserConfig(latent_channels=4, split=(4, 0), width=8,
                                        emb_dim=16, T_train=50,
                                        vocab_sizes=vocab.sizes(), seed=seed))
    return TrainedDenoiser(net, vae, make_schedule("linear", 50), vocab, 1.0, (4, 4))


@pytest.fixture()
def project(tmp_path):
    return store.init_project(tmp_path / "proj", canvas=(16, 16))


@pytest.fixture()
def client(project):
    app = create_app(tiny_instance_model(), tiny_scene_model(), project)
    return TestClient(app)


def _store_sprite(project, shape="circle", color="red", jitter=(0.0, 0.0)):
    img, _ = render_sprite(SpriteSpec(shape, color, "large", jitter=jitter))
    return store.store_asset(project, img, {"shape": shape, "color": color})


# ------------------------------------------------------------ project store


def test_init_project_creates_skeleton(tmp_path):
    p = store.init_project(tmp_path / "proj", canvas=(64, 64))
    assert (tmp_path / "proj" / "project.json").exists()
    assert (tmp_path / "proj" / "assets").is_dir()
    assert (tmp_path / "proj" / "stacks").is_dir()
    assert p.layout.entries == ()
    assert p.canvas == (64, 64)


def test_init_project_reopen_is_identical(tmp_path):
    p1 = store.init_project(tmp_path / "proj", canvas=(64, 64))
    aid = _store_sprite(p1)
    p2 = store.init_project(tmp_path / "proj")
    assert p2.serialize() == p1.serialize()
    assert aid in p2.assets


def test_project_json_round_trip_is_byte_stable(tmp_path):
    p = store.init_project(tmp_path / "proj", canvas=(64, 64))
    p.layout = Layout((("abc", BoundingBox(8.5, 9.0, 4.0, 4.0)),))
    p.history.append(["compose", "deadbeef"])
    raw1 = p.serialize()
    raw2 = store._parse_project(raw1, p.root).serialize()
    assert raw1 == raw2


@pytest.mark.parametrize("mutate,field_name", [
    (lambda d: d.pop("canvas"), "canvas"),
    (lambda d: d.update(canvas=[64]), "canvas"),
    (lambda d: d.update(layout=[{"box": [1, 2, 3, 4]}]), "layout"),
    (lambda d: d.update(params={"n": 99, "steps": 50}), "params"),
    (lambda d: d.update(history=[["lonely"]]), "history"),
])
def test_corrupted_project_json_names_the_field(tmp_path, mutate, field_name):
    p = store.init_project(tmp_path / "proj")
    doc = json.loads(p.serialize())
    mutate(doc)
    with pytest.raises(store.ProjectParseError) as err:
        store._parse_project(json.dumps(doc).encode(), p.root)
    assert err.value.field == field_name


def test_truncated_project_json_is_a_parse_error(tmp_path):
    p = store.init_project(tmp_path / "proj")
    raw = p.serialize()[: len(p.serialize()) // 2]
    with pytest.raises(store.ProjectParseError):
        store._parse_project(raw, p.root)


def test_assets_are_content_addressed(project):
    img, _ = render_sprite(SpriteSpec("circle", "red", "large", jitter=(0, 0)))
    a1 = store.store_asset(project, img, {"shape": "circle"})
    a2 = store.store_asset(project, img, {"shape": "circle"})
    assert a1 == a2
    assert len(list((project.root / "assets").glob("*.png"))) == 1
    assert store.content_id(rgba_to_png_bytes(img)) == a1
    loaded = store.load_asset(project, a1)
    assert np.array_equal(loaded.image.pixels, loaded.image.pixels)
    assert loaded.condition == {"shape": "circle"}


def test_load_missing_asset_raises(project):
    with pytest.raises(LayerforgeError):
        store.load_asset(project, "nope")


def test_layout_and_params_json_round_trip():
    layout = Layout((("a", BoundingBox(3.0, 4.0, 5.0, 6.0)),
                     ("b", BoundingBox(1.0, 2.0, 3.0, 4.0))))
    assert store.layout_from_json(store.layout_to_json(layout)) == layout
    params = BlendParams(n=3, b=2, n_s=1, steps=5,
                         guidance=GuidanceParams(3.0, 0.5), seed=7)
    assert store.params_from_json(store.params_to_json(params)) == params


# ------------------------------------------------------------ service: instances


def test_vocabulary_endpoint_lists_tokens(client):
    doc = client.get("/vocabulary").json()
    assert doc["instance"]["shape"] == ["circle", "square", "triangle", "star"]
    assert doc["scene"]["background"][0] == "void"


def test_generate_instance_is_deterministic(client):
    req = {"condition": {"shape": "circle", "color": "red",
                         "size": "large", "pattern": "solid"},
           "seed": 3, "steps": 4}
    r1 = client.post("/instances", json=req).json()
    r2 = client.post("/instances", json=req).json()
    assert r1["png"] == r2["png"]          # same pixel bytes
    assert r1["asset_id"] == r2["asset_id"]  # content-addressed
    png = client.get(f"/instances/{r1['asset_id']}.png")
    assert png.status_code == 200
    assert png.headers["content-type"] == "image/png"


def test_generate_instance_rejects_unknown_token(client):
    r = client.post("/instances", json={"condition": {
        "shape": "circle", "color": "ultraviolet", "size": "large",
        "pattern": "solid"}, "steps": 2})
    assert r.status_code == 422
    assert "ultraviolet" in r.text and "red" in r.text  # lists the vocabulary


def test_generate_instance_requires_condition(client):
    assert client.post("/instances", json={"seed": 1}).status_code == 422


def test_instance_png_404(client):
    assert client.get("/instances/ffff.png").status_code == 404


# ------------------------------------------------------------ service: compose


def _compose_request(project, ids, steps=6):
    layout = [{"id": aid, "box": [6 + 4 * i, 6, 6, 6]} for i, aid in enumerate(ids)]
    return {"scene_condition": {"background": "void"},
            "layout": layout,
            "params": {"n": 3, "b": 2, "n_s": 1, "steps": steps, "seed": 5}}


def test_compose_two_instances_gives_three_layers(client, project):
    ids = [_store_sprite(project), _store_sprite(project, "square", "blue")]
    r = client.post("/compose", json=_compose_request(project, ids))
    assert r.status_code == 200
    doc = r.json()
    assert doc["manifest"]["n_layers"] == 3
    for k in range(3):
        png = client.get(f"/stacks/{doc['stack_id']}/layer/{k}.png")
        assert png.status_code == 200


def test_compose_is_deterministic(client, project):
    ids = [_store_sprite(project)]
    req = _compose_request(project, ids)
    s1 = client.post("/compose", json=req).json()["stack_id"]
    s2 = client.post("/compose", json=req).json()["stack_id"]
    assert s1 == s2  # identical layer bytes hash to the same stack id
    a = client.get(f"/stacks/{s1}/layer/1.png").content
    b = client.get(f"/stacks/{s2}/layer/1.png").content
    assert a == b


def test_compose_validates_params_and_assets(client, project):
    aid = _store_sprite(project)
    req = _compose_request(project, [aid])
    req["params"]["n"] = 99  # n > steps
    assert client.post("/compose", json=req).status_code == 422
    req = _compose_request(project, ["dangling"])
    assert client.post("/compose", json=req).status_code == 422
    req = _compose_request(project, [aid])
    req["scene_condition"] = {"background": "lava"}
    assert client.post("/compose", json=req).status_code == 422


def test_compose_records_history(client, project):
    aid = _store_sprite(project)
    sid = client.post("/compose",
                      json=_compose_request(project, [aid])).json()["stack_id"]
    doc = client.get(f"/projects/{project.id}").json()
    assert ["compose", sid] in doc["history"]
    assert client.get("/projects/elsewhere").status_code == 404


def test_stack_layer_404s(client, project):
    aid = _store_sprite(project)
    sid = client.post("/compose",
                      json=_compose_request(project, [aid])).json()["stack_id"]
    assert client.get(f"/stacks/{sid}/layer/9.png").status_code == 404
    assert client.get("/stacks/unknown/layer/0.png").status_code == 404


# ------------------------------------------------------------ service: edit


def test_empty_edit_reproduces_stack_bytes(client, project):
    ids = [_store_sprite(project)]
    req = _compose_request(project, ids)
    req["params"]["b"] = 0  # same params the edit path will force
    base = client.post("/compose", json=req).json()["stack_id"]
    r = client.post("/edit", json={"base_stack_id": base, "edits": []}).json()
    assert r["stack_id"] == base  # byte-identical layers, same content hash
    assert r["consistency_report"]["psnr_outside_edit"] == 99.0


def test_remove_top_edit_keeps_lower_layer_bytes(client, project):
    ids = [_store_sprite(project), _store_sprite(project, "square", "blue")]
    req = _compose_request(project, ids)
    req["params"]["b"] = 0
    base = client.post("/compose", json=req).json()
    r = client.post("/edit", json={"base_stack_id": base["stack_id"],
                                   "edits": [{"op": "remove", "id": ids[1]}]}).json()
    assert r["manifest"]["n_layers"] == 2
    for k in range(2):  # untouched prefix layers byte-identical to the base
        a = client.get(f"/stacks/{base['stack_id']}/layer/{k}.png").content
        b = client.get(f"/stacks/{r['stack_id']}/layer/{k}.png").content
        assert a == b


def test_move_edit_reports_consistency(client, project):
    ids = [_store_sprite(project)]
    base = client.post("/compose",
                       json=_compose_request(project, ids)).json()["stack_id"]
    r = client.post("/edit", json={
        "base_stack_id": base,
        "edits": [{"op": "move", "id": ids[0], "box": [10, 10, 6, 6]}]}).json()
    report = r["consistency_report"]
    assert isinstance(report["psnr_outside_edit"], float)
    assert 0 < report["edited_region_fraction"] < 1
    assert r["manifest"]["request"]["params"]["b"] == 0  # forced for edits


def test_edit_validates_stack_and_ids(client, project):
    assert client.post("/edit", json={"base_stack_id": "missing",
                                      "edits": []}).status_code == 422
    aid = _store_sprite(project)
    base = client.post("/compose",
                       json=_compose_request(project, [aid])).json()["stack_id"]
    r = client.post("/edit", json={"base_stack_id": base,
                                   "edits": [{"op": "remove", "id": "ghost"}]})
    assert r.status_code == 422


def test_edit_can_override_params(client, project):
    aid = _store_sprite(project)
    base = client.post("/compose",
                       json=_compose_request(project, [aid])).json()["stack_id"]
    r = client.post("/edit", json={"base_stack_id": base, "edits": [],
                                   "params": {"b": 2}}).json()
    assert r["manifest"]["request"]["params"]["b"] == 2


# ------------------------------------------------------------ CLI


def test_cli_train_and_generate_round_trip(tmp_path, monkeypatch):
    monkeypatch.setenv("LAYERFORGE_ROOT", str(tmp_path))
    vae_path = tmp_path / "ckpt" / "vae.pt"
    assert cli_main(["train-vae", "--out", str(vae_path), "--n", "12",
                     "--steps", "3", "--width", "8"]) == 0
    assert vae_path.exists()
    assert cli_main(["train-ldm", "--vae", str(vae_path),
                     "--out", str(tmp_path / "ckpt" / "instance.pt"),
                     "--n", "12", "--steps", "3", "--T", "50", "--width", "8"]) == 0
    assert cli_main(["train-scene", "--out", str(tmp_path / "ckpt" / "scene.pt"),
                     "--n", "8", "--vae-steps", "3", "--ldm-steps", "3",
                     "--width", "8"]) == 0
    out_png = tmp_path / "sprite.png"
    assert cli_main(["gen-instance", "--checkpoint-dir", str(tmp_path / "ckpt"),
                     "--shape", "circle", "--color", "red", "--size", "large",
                     "--steps", "2", "--out", str(out_png),
                     "--project", "proj"]) == 0
    assert out_png.exists()
    project = store.load_project(tmp_path / "proj")
    aid = next(iter(project.assets))

    layout_file = tmp_path / "layout.json"
    layout_file.write_text(json.dumps([{"id": aid, "box": [8, 8, 6, 6]}]))
    assert cli_main(["compose", "--checkpoint-dir", str(tmp_path / "ckpt"),
                     "--project", "proj", "--layout", str(layout_file),
                     "--background", "void", "--n", "2", "--b", "1",
                     "--n-s", "0", "--steps", "3"]) == 0
    project = store.load_project(tmp_path / "proj")
    sid = project.history[-1][1]

    edits_file = tmp_path / "edits.json"
    edits_file.write_text(json.dumps([{"op": "remove", "id": aid}]))
    assert cli_main(["edit", "--checkpoint-dir", str(tmp_path / "ckpt"),
                     "--project", "proj", "--stack", sid,
                     "--edits", str(edits_file)]) == 0

    assert cli_main(["eval", "--checkpoint-dir", str(tmp_path / "ckpt"),
                     "--n", "2", "--steps", "2"]) == 0


def test_cli_reports_domain_errors(tmp_path):
    assert cli_main(["gen-instance", "--checkpoint-dir", str(tmp_path),
                     "--shape", "circle", "--color", "red",
                     "--size", "large"]) == 2
