import { StudioClient } from "./client";
import { EditorApp } from "./editor";
import type { StackView } from "./editor";
import { drawScene, hitTest, layerBitmap, readoutText } from "./render";
import type { BlendParams } from "./schema";
import {
    addEntry,
    dragEntry,
    removeEntry,
    reorderEntries,
    resizeEntry,
    selectEntry,
} from "./state";

// DOM bootstrap for the single-page editor. Everything testable lives in the
// imported modules; this file only wires events.

const CANVAS_SIZE = 64;
const VIEW_SCALE = 6; // screen pixels per canvas pixel

function el<T extends HTMLElement>(id: string): T {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing #${id}`);
    return node as T;
}

async function boot(): Promise<void> {
    const client = new StudioClient("");
    const app = new EditorApp(client, "default", {
        width: CANVAS_SIZE,
        height: CANVAS_SIZE,
    });

    const canvas = el<HTMLCanvasElement>("editor-canvas");
    canvas.width = CANVAS_SIZE;
    canvas.height = CANVAS_SIZE;
    canvas.style.width = `${CANVAS_SIZE * VIEW_SCALE}px`;
    canvas.style.height = `${CANVAS_SIZE * VIEW_SCALE}px`;
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas unavailable");

    const statusLine = el<HTMLDivElement>("status");
    const errorLine = el<HTMLDivElement>("error");
    const readoutLine = el<HTMLDivElement>("readout");
    const badgeLine = el<HTMLDivElement>("badge");
    const gallery = el<HTMLDivElement>("gallery");
    const beforePane = el<HTMLImageElement>("before-pane");
    const afterPane = el<HTMLImageElement>("after-pane");
    const layerSlider = el<HTMLInputElement>("layer-slider");

    client.onQueueChange = ({ busy, queued }) => {
        statusLine.textContent = busy
            ? queued > 0
                ? `working… (${queued} queued)`
                : "working…"
            : "idle";
    };

    let activeBitmap: ImageBitmap | null = null;

    async function showStack(view: StackView | null): Promise<void> {
        errorLine.textContent = app.lastError ?? "";
        if (!view) {
            repaint();
            return;
        }
        layerSlider.max = String(view.layers.length - 1);
        layerSlider.value = String(view.activeLayer);
        activeBitmap = await layerBitmap(
            `${view.stackId}/${view.activeLayer}`,
            view.layers[view.activeLayer]!,
        );
        const badge = app.badge;
        badgeLine.textContent = badge
            ? badge.identical
                ? "identical"
                : `layers changed: ${badge.changedLayers.join(", ")}` +
                  (badge.psnrOutsideEdit !== null
                      ? ` (PSNR outside edit ${badge.psnrOutsideEdit.toFixed(1)} dB)`
                      : "")
            : "";
        await paneImage(beforePane, app.baseView);
        await paneImage(afterPane, app.editedView);
        repaint();
    }

    async function paneImage(pane: HTMLImageElement, view: StackView | null): Promise<void> {
        if (!view) {
            pane.removeAttribute("src");
            return;
        }
        const composite = view.layers[view.layers.length - 1]!;
        pane.src = URL.createObjectURL(new Blob([composite.slice().buffer], { type: "image/png" }));
    }

    function repaint(): void {
        drawScene(ctx!, app.state, activeBitmap);
        readoutLine.textContent = readoutText(app.state);
    }

    // --- params panel -------------------------------------------------------
    const paramInputs: Array<[keyof BlendParams & ("n" | "b" | "n_s" | "steps" | "seed"), string]> =
        [
            ["n", "param-n"],
            ["b", "param-b"],
            ["n_s", "param-ns"],
            ["steps", "param-steps"],
            ["seed", "param-seed"],
        ];
    for (const [key, id] of paramInputs) {
        const input = el<HTMLInputElement>(id);
        input.value = String(app.params[key]);
        input.addEventListener("change", () => {
            app.params = { ...app.params, [key]: Number(input.value) };
        });
    }
    const gsInput = el<HTMLInputElement>("param-gs");
    const grInput = el<HTMLInputElement>("param-gr");
    gsInput.value = String(app.params.guidance.scale);
    grInput.value = String(app.params.guidance.rescale);
    const syncGuidance = () => {
        app.params = {
            ...app.params,
            guidance: { scale: Number(gsInput.value), rescale: Number(grInput.value) },
        };
    };
    gsInput.addEventListener("change", syncGuidance);
    grInput.addEventListener("change", syncGuidance);

    // --- attribute pickers from /vocabulary ---------------------------------
    await app.loadVocabulary();
    const pickerBox = el<HTMLDivElement>("pickers");
    const pickers = new Map<string, HTMLSelectElement>();
    for (const field of app.instancePickers()) {
        const label = document.createElement("label");
        label.textContent = field.name;
        const select = document.createElement("select");
        for (const option of field.options) {
            const node = document.createElement("option");
            node.value = option;
            node.textContent = option;
            select.appendChild(node);
        }
        label.appendChild(select);
        pickerBox.appendChild(label);
        pickers.set(field.name, select);
    }
    const scenePickerBox = el<HTMLDivElement>("scene-pickers");
    for (const field of app.scenePickers()) {
        const label = document.createElement("label");
        label.textContent = field.name;
        const select = document.createElement("select");
        for (const option of field.options) {
            const node = document.createElement("option");
            node.value = option;
            node.textContent = option;
            select.appendChild(node);
        }
        select.addEventListener("change", () => {
            app.sceneCondition = { ...app.sceneCondition, [field.name]: select.value };
        });
        label.appendChild(select);
        scenePickerBox.appendChild(label);
        app.sceneCondition[field.name] = field.options[0] ?? "";
    }

    // --- gallery ------------------------------------------------------------
    el<HTMLButtonElement>("generate").addEventListener("click", async () => {
        const condition: Record<string, string> = {};
        for (const [name, select] of pickers) condition[name] = select.value;
        try {
            const response = await client.generateInstance({ condition });
            const item = document.createElement("img");
            item.src = `data:image/png;base64,${response.png}`;
            item.title = response.asset_id;
            item.addEventListener("click", () => {
                app.state = addEntry(app.state, response.asset_id, [
                    CANVAS_SIZE / 2,
                    CANVAS_SIZE / 2,
                    20,
                    20,
                ]);
                repaint();
            });
            gallery.appendChild(item);
            errorLine.textContent = "";
        } catch (err) {
            errorLine.textContent = err instanceof Error ? err.message : String(err);
        }
    });

    // --- direct manipulation --------------------------------------------------
    let gesture: { id: string; kind: "corner" | "body"; x: number; y: number } | null = null;
    const canvasPoint = (event: PointerEvent): [number, number] => {
        const rect = canvas.getBoundingClientRect();
        return [
            ((event.clientX - rect.left) / rect.width) * CANVAS_SIZE,
            ((event.clientY - rect.top) / rect.height) * CANVAS_SIZE,
        ];
    };
    canvas.addEventListener("pointerdown", (event) => {
        const [x, y] = canvasPoint(event);
        const hit = hitTest(app.state, x, y);
        if (hit.kind) {
            gesture = { id: hit.id, kind: hit.kind, x, y };
            app.state = selectEntry(app.state, hit.id);
        } else {
            gesture = null;
            app.state = selectEntry(app.state, null);
        }
        repaint();
    });
    canvas.addEventListener("pointermove", (event) => {
        if (!gesture) return;
        const [x, y] = canvasPoint(event);
        const dx = x - gesture.x;
        const dy = y - gesture.y;
        gesture.x = x;
        gesture.y = y;
        app.state =
            gesture.kind === "body"
                ? dragEntry(app.state, gesture.id, dx, dy)
                : resizeEntry(app.state, gesture.id, dx * 2, dy * 2);
        repaint();
    });
    canvas.addEventListener("pointerup", () => {
        gesture = null;
    });

    // --- stack actions --------------------------------------------------------
    el<HTMLButtonElement>("compose").addEventListener("click", async () => {
        await showStack(await app.triggerCompose());
    });
    el<HTMLButtonElement>("recompose").addEventListener("click", async () => {
        await showStack(await app.applyEdit([]));
    });
    el<HTMLButtonElement>("remove-selected").addEventListener("click", async () => {
        const id = app.state.selected;
        if (!id) return;
        app.state = removeEntry(app.state, id);
        if (app.baseView) await showStack(await app.applyEdit([{ op: "remove", id }]));
        else repaint();
    });
    el<HTMLButtonElement>("raise-selected").addEventListener("click", () => {
        const id = app.state.selected;
        if (!id) return;
        const order = app.state.layout.map((e) => e.id);
        const at = order.indexOf(id);
        if (at < 0 || at === order.length - 1) return;
        [order[at], order[at + 1]] = [order[at + 1]!, order[at]!];
        app.state = reorderEntries(app.state, order);
        repaint();
    });
    layerSlider.addEventListener("input", async () => {
        const view = app.editedView ?? app.baseView;
        if (!view) return;
        view.activeLayer = Number(layerSlider.value);
        await showStack(view);
    });

    repaint();
}

boot().catch((err) => {
    const line = document.getElementById("error");
    if (line) line.textContent = err instanceof Error ? err.message : String(err);
});
