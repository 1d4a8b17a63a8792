import { layoutSchema } from "./schema";
import type { BoundingBox, Layout, StackManifest } from "./schema";

// Local editor state. The layout mirrors the service wire format exactly so
// that serialization is the identity; all gesture handlers below return a new
// state and keep every box inside the canvas (gestures clamp, they never
// error).

export interface Viewport {
    width: number;
    height: number;
}

export interface GalleryItem {
    assetId: string;
    condition: Record<string, string>;
    pngBase64: string;
}

export interface EditorState {
    projectId: string;
    viewport: Viewport;
    layout: Layout; // back-to-front z-order; index == z
    selected: string | null;
    gallery: GalleryItem[];
    lastStack: StackManifest | null;
}

export const MIN_BOX_PX = 1;

export function initialState(projectId: string, viewport: Viewport): EditorState {
    return {
        projectId,
        viewport,
        layout: [],
        selected: null,
        gallery: [],
        lastStack: null,
    };
}

function clampBox(box: BoundingBox, viewport: Viewport): BoundingBox {
    const [cx, cy, w, h] = box;
    const cw = Math.min(Math.max(w, MIN_BOX_PX), viewport.width);
    const ch = Math.min(Math.max(h, MIN_BOX_PX), viewport.height);
    const ccx = Math.min(Math.max(cx, cw / 2), viewport.width - cw / 2);
    const ccy = Math.min(Math.max(cy, ch / 2), viewport.height - ch / 2);
    return [ccx, ccy, cw, ch];
}

function withBox(state: EditorState, id: string, box: BoundingBox): EditorState {
    const layout = state.layout.map((e) =>
        e.id === id ? { id: e.id, box: clampBox(box, state.viewport) } : e,
    );
    return { ...state, layout };
}

function entryOf(state: EditorState, id: string) {
    return state.layout.find((e) => e.id === id);
}

/** Drag gesture: translate the whole box by (dx, dy). */
export function dragEntry(state: EditorState, id: string, dx: number, dy: number): EditorState {
    const entry = entryOf(state, id);
    if (!entry) return state;
    const [cx, cy, w, h] = entry.box;
    return withBox(state, id, [cx + dx, cy + dy, w, h]);
}

/** Resize gesture: grow/shrink the extent about the center. */
export function resizeEntry(state: EditorState, id: string, dw: number, dh: number): EditorState {
    const entry = entryOf(state, id);
    if (!entry) return state;
    const [cx, cy, w, h] = entry.box;
    return withBox(state, id, [cx, cy, w + dw, h + dh]);
}

/** Place a gallery asset on the canvas. The layout entry id *is* the asset id
 * (that's how the service resolves pixels), so an asset can appear once. */
export function addEntry(state: EditorState, assetId: string, box: BoundingBox): EditorState {
    if (entryOf(state, assetId)) return state;
    const layout = [...state.layout, { id: assetId, box: clampBox(box, state.viewport) }];
    return { ...state, layout, selected: assetId };
}

export function removeEntry(state: EditorState, id: string): EditorState {
    const layout = state.layout.filter((e) => e.id !== id);
    const selected = state.selected === id ? null : state.selected;
    return { ...state, layout, selected };
}

/** Reorder the z-stack; `order` must be a permutation of the current ids. */
export function reorderEntries(state: EditorState, order: string[]): EditorState {
    const byId = new Map(state.layout.map((e) => [e.id, e]));
    if (order.length !== byId.size || order.some((id) => !byId.has(id))) {
        throw new Error(`reorder must permute existing ids, got [${order.join(", ")}]`);
    }
    return { ...state, layout: order.map((id) => byId.get(id)!) };
}

export function selectEntry(state: EditorState, id: string | null): EditorState {
    if (id !== null && !entryOf(state, id)) return { ...state, selected: null };
    return { ...state, selected: id };
}

/** Live numeric readout for the selected box: [cx, cy, w, h]. */
export function readout(state: EditorState): BoundingBox | null {
    if (state.selected === null) return null;
    const entry = entryOf(state, state.selected);
    return entry ? [...entry.box] : null;
}

/** Serialize for the wire; parses through the service schema so a bug that
 * produces an invalid layout fails here, not on the server. */
export function serializeLayout(state: EditorState): Layout {
    return layoutSchema.parse(state.layout.map((e) => ({ id: e.id, box: [...e.box] })));
}
