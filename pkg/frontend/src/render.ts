import type { EditorState } from "./state";
import { readout } from "./state";

// Canvas painting. Scene pixels always come from the service as PNGs; the
// canvas only draws those plus the direct-manipulation chrome on top.

export const HANDLE_PX = 8;

const layerBitmapCache = new Map<string, ImageBitmap>();

export async function layerBitmap(key: string, png: Uint8Array): Promise<ImageBitmap> {
    const cached = layerBitmapCache.get(key);
    if (cached) return cached;
    const bitmap = await createImageBitmap(new Blob([png.slice().buffer], { type: "image/png" }));
    layerBitmapCache.set(key, bitmap);
    if (layerBitmapCache.size > 64) {
        const oldest = layerBitmapCache.keys().next().value;
        if (oldest !== undefined) layerBitmapCache.delete(oldest);
    }
    return bitmap;
}

export function drawScene(
    ctx: CanvasRenderingContext2D,
    state: EditorState,
    background: ImageBitmap | null,
): void {
    const { width, height } = state.viewport;
    ctx.clearRect(0, 0, width, height);
    if (background) {
        ctx.drawImage(background, 0, 0, width, height);
    } else {
        drawChecker(ctx, width, height);
    }
    for (const entry of state.layout) {
        const [cx, cy, w, h] = entry.box;
        const selected = entry.id === state.selected;
        ctx.lineWidth = selected ? 2 : 1;
        ctx.strokeStyle = selected ? "#ff9500" : "#4a90d9";
        ctx.strokeRect(cx - w / 2, cy - h / 2, w, h);
        if (selected) drawHandles(ctx, cx, cy, w, h);
    }
}

function drawChecker(ctx: CanvasRenderingContext2D, width: number, height: number): void {
    const cell = 8;
    for (let y = 0; y < height; y += cell) {
        for (let x = 0; x < width; x += cell) {
            ctx.fillStyle = ((x + y) / cell) % 2 === 0 ? "#e8e8e8" : "#d0d0d0";
            ctx.fillRect(x, y, cell, cell);
        }
    }
}

function drawHandles(
    ctx: CanvasRenderingContext2D,
    cx: number,
    cy: number,
    w: number,
    h: number,
): void {
    ctx.fillStyle = "#ff9500";
    for (const [hx, hy] of corners(cx, cy, w, h)) {
        ctx.fillRect(hx - HANDLE_PX / 2, hy - HANDLE_PX / 2, HANDLE_PX, HANDLE_PX);
    }
}

function corners(cx: number, cy: number, w: number, h: number): Array<[number, number]> {
    return [
        [cx - w / 2, cy - h / 2],
        [cx + w / 2, cy - h / 2],
        [cx - w / 2, cy + h / 2],
        [cx + w / 2, cy + h / 2],
    ];
}

export type HitKind = "corner" | "body" | null;

/** What a pointer-down at (x, y) grabs: a resize handle, a box body, or
 * nothing. Top-most entry wins, matching the visual stacking. */
export function hitTest(state: EditorState, x: number, y: number): { id: string; kind: HitKind } {
    for (let i = state.layout.length - 1; i >= 0; i--) {
        const entry = state.layout[i];
        if (!entry) continue;
        const [cx, cy, w, h] = entry.box;
        for (const [hx, hy] of corners(cx, cy, w, h)) {
            if (Math.abs(x - hx) <= HANDLE_PX && Math.abs(y - hy) <= HANDLE_PX) {
                return { id: entry.id, kind: "corner" };
            }
        }
        if (Math.abs(x - cx) <= w / 2 && Math.abs(y - cy) <= h / 2) {
            return { id: entry.id, kind: "body" };
        }
    }
    return { id: "", kind: null };
}

export function readoutText(state: EditorState): string {
    const box = readout(state);
    if (!box) return "";
    const [cx, cy, w, h] = box;
    return `[${cx.toFixed(1)}, ${cy.toFixed(1)}, ${w.toFixed(1)}, ${h.toFixed(1)}]`;
}
