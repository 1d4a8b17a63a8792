"""HTTP JSON service: generate instances, compose layer stacks, apply edits.

Thin layer over the library: endpoints validate, dispatch, persist.  All
math lives in the library modules; every response is reproducible from
{request, seed, model checkpoints}.

Endpoints
    GET  /vocabulary                instance + scene attribute vocabularies
    POST /instances                 {condition, seed, steps, gs, gr} -> {asset_id, png}
    GET  /instances/{id}.png
    POST /compose                   {scene_condition, layout, params} -> {stack_id, manifest}
    GET  /stacks/{id}/layer/{k}.png
    POST /edit                      {base_stack_id, edits, keep_seed} -> {stack_id, manifest,
                                                                          consistency_report}
    GET  /projects/{id}
"""

from __future__ import annotations

import base64
from dataclasses import replace

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, Response

from ..compositor import (
    apply_edits,
    boxes_region_mask,
    compose,
    edit_scene,
    psnr_outside_regions,
)
from ..denoiser import TrainedDenoiser, conditional_sample
from ..diffusion import GuidanceParams, make_timestep_grid
from ..errors import LayerforgeError
from ..images import rgb_from_png_bytes, rgb_to_png_bytes, rgba_to_png_bytes
from . import store


def _bad_request(exc: Exception) -> HTTPException:
    return HTTPException(status_code=422, detail=str(exc))


def create_app(instance_model: TrainedDenoiser, scene_model: TrainedDenoiser,
               project: store.Project) -> FastAPI:
    """Build the service around loaded models and one open project."""
    app = FastAPI(title="layerforge studio")
    app.state.project = project

    @app.get("/vocabulary")
    def vocabulary():
        return {"instance": {name: list(values)
                             for name, values in instance_model.vocab.fields},
                "scene": {name: list(values)
                          for name, values in scene_model.vocab.fields}}

    @app.get("/projects/{project_id}")
    def get_project(project_id: str):
        if project_id != project.id:
            raise HTTPException(status_code=404, detail=f"unknown project {project_id!r}")
        return project.to_json()

    @app.post("/instances")
    def generate_instance(request: dict):
        condition = request.get("condition")
        if not isinstance(condition, dict):
            raise _bad_request(ValueError("request needs a 'condition' object"))
        seed = int(request.get("seed", 0))
        steps = int(request.get("steps", 50))
        gs = float(request.get("gs", 2.5))
        gr = float(request.get("gr", 0.25))
        try:
            cond = instance_model.vocab.encode(condition)
            grid = make_timestep_grid(instance_model.schedule.T_train, steps, "trailing")
            g = GuidanceParams(gs, gr)
        except LayerforgeError as exc:
            raise _bad_request(exc) from exc
        image = conditional_sample(cond, grid, g, instance_model, seed)
        asset_id = store.store_asset(project, image, condition)
        return {"asset_id": asset_id,
                "png": base64.b64encode(rgba_to_png_bytes(image)).decode("ascii")}

    @app.get("/instances/{asset_id}.png")
    def instance_png(asset_id: str):
        try:
            path = store.asset_png_path(project, asset_id)
        except LayerforgeError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        return FileResponse(path, media_type="image/png")

    def _compose_request(request: dict) -> tuple:
        """Validate and run one composition; returns (stack, layout, params, cond)."""
        try:
            layout = store.layout_from_json(request.get("layout", []))
            params = store.params_from_json(request.get("params", {}))
            scene_condition = request.get("scene_condition") or {}
            cond = scene_model.vocab.encode(scene_condition) \
                if scene_condition else scene_model.vocab.encode(None)
            assets = {eid: store.load_asset(project, eid) for eid in layout.ids()}
        except (LayerforgeError, ValueError) as exc:
            raise _bad_request(exc) from exc
        stack = compose(cond, layout, assets, params, scene_model)
        return stack, layout, params, scene_condition

    @app.post("/compose")
    def compose_stack(request: dict):
        stack, layout, params, scene_condition = _compose_request(request)
        stack_id, manifest = store.store_stack(project, stack, {
            "scene_condition": scene_condition,
            "layout": store.layout_to_json(layout),
            "params": store.params_to_json(params)})
        project.history.append(["compose", stack_id])
        store.save_project(project)
        return {"stack_id": stack_id, "manifest": manifest}

    @app.post("/edit")
    def edit_stack(request: dict):
        base_id = request.get("base_stack_id")
        try:
            base = store.load_stack_manifest(project, str(base_id))
        except LayerforgeError as exc:
            raise _bad_request(exc) from exc
        edits = request.get("edits", [])
        base_req = base["request"]
        try:
            layout = store.layout_from_json(base_req["layout"])
            params = store.params_from_json(base_req["params"])
            if not request.get("keep_seed", True):
                params = replace(params, seed=int(request.get("seed", params.seed)))
            if "params" in request:  # explicit override, e.g. to keep b > 0
                params = store.params_from_json({**store.params_to_json(params),
                                                 **request["params"]})
                force_b_zero = "b" not in request["params"]
            else:
                force_b_zero = True
            scene_condition = base_req.get("scene_condition") or {}
            cond = scene_model.vocab.encode(scene_condition) \
                if scene_condition else scene_model.vocab.encode(None)
            new_layout = apply_edits(layout, edits)
            assets = {eid: store.load_asset(project, eid)
                      for eid in set(layout.ids()) | set(new_layout.ids())}
        except (LayerforgeError, ValueError, KeyError) as exc:
            raise _bad_request(exc) from exc
        stack, new_layout = edit_scene(cond, layout, assets, params, scene_model,
                                       edits, force_b_zero=force_b_zero)
        stack_id, manifest = store.store_stack(project, stack, {
            "scene_condition": scene_condition,
            "layout": store.layout_to_json(new_layout),
            "params": store.params_to_json(replace(params, b=0)
                                           if force_b_zero else params)})
        project.history.append([f"edit:{[e.get('op') for e in edits]}", stack_id])
        store.save_project(project)

        # agreement with the base composite outside the edited regions
        touched_ids = {e["id"] for e in edits if "id" in e}
        boxes = [box for eid, box in tuple(layout.entries) + tuple(new_layout.entries)
                 if eid in touched_ids]
        canvas = stack.decoded[-1].shape[:2]
        base_composite_path = project.root / "stacks" / str(base_id) / base["layers"][-1]
        base_composite = rgb_from_png_bytes(base_composite_path.read_bytes())
        new_composite = rgb_from_png_bytes(rgb_to_png_bytes(stack.decoded[-1]))
        value = psnr_outside_regions(new_composite, base_composite, boxes, canvas)
        report = {"psnr_outside_edit": None if value != value else float(value),
                  "edited_region_fraction":
                      float(boxes_region_mask(boxes, canvas).mean())}
        return {"stack_id": stack_id, "manifest": manifest,
                "consistency_report": report}

    @app.get("/stacks/{stack_id}/layer/{k}.png")
    def stack_layer_png(stack_id: str, k: int):
        try:
            path = store.stack_layer_path(project, stack_id, k)
        except LayerforgeError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        return FileResponse(path, media_type="image/png")

    @app.exception_handler(LayerforgeError)
    def _domain_error(_, exc: LayerforgeError):
        return Response(content=str(exc), status_code=422)

    return app
