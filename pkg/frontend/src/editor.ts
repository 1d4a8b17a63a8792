import { StudioClient, ServiceError, bytesEqual } from "./client";
import { blendParamsSchema, defaultParams } from "./schema";
import type {
    BlendParams,
    EditOp,
    StackManifest,
    Vocabulary,
} from "./schema";
import { initialState, serializeLayout } from "./state";
import type { EditorState, Viewport } from "./state";

// Controller between gestures/panels and the HTTP client. Holds the optimistic
// local state plus the authoritative server results (stack views); all pixel
// math happens server-side.

export interface StackView {
    stackId: string;
    manifest: StackManifest;
    layers: Uint8Array[]; // PNG bytes, back-to-front; last = composite
    activeLayer: number; // layer-slider position
}

export interface ConsistencyBadge {
    identical: boolean; // every layer byte-equal to the base stack
    changedLayers: number[]; // indices that differ (or appeared/vanished)
    psnrOutsideEdit: number | null;
}

export interface PickerField {
    name: string;
    options: string[];
}

/** Attribute pickers straight from /vocabulary — the UI holds no enum copies. */
export function pickerFields(vocabulary: Vocabulary, which: keyof Vocabulary): PickerField[] {
    return Object.entries(vocabulary[which]).map(([name, options]) => ({
        name,
        options: [...options],
    }));
}

export function validateParams(params: BlendParams): string | null {
    const result = blendParamsSchema.safeParse(params);
    if (result.success) return null;
    const issue = result.error.issues[0];
    return issue ? issue.message : "invalid parameters";
}

function diffLayers(base: Uint8Array[], next: Uint8Array[]): number[] {
    const changed: number[] = [];
    const count = Math.max(base.length, next.length);
    for (let k = 0; k < count; k++) {
        const a = base[k];
        const b = next[k];
        if (a === undefined || b === undefined || !bytesEqual(a, b)) changed.push(k);
    }
    return changed;
}

export class EditorApp {
    state: EditorState;
    params: BlendParams = defaultParams();
    sceneCondition: Record<string, string> = {};
    vocabulary: Vocabulary | null = null;

    baseView: StackView | null = null; // "before" pane
    editedView: StackView | null = null; // "after" pane
    badge: ConsistencyBadge | null = null;
    lastError: string | null = null; // inline error line, null = clear

    constructor(
        private readonly client: StudioClient,
        projectId: string,
        viewport: Viewport,
    ) {
        this.state = initialState(projectId, viewport);
    }

    async loadVocabulary(): Promise<Vocabulary> {
        this.vocabulary = await this.client.vocabulary();
        return this.vocabulary;
    }

    instancePickers(): PickerField[] {
        return this.vocabulary ? pickerFields(this.vocabulary, "instance") : [];
    }

    scenePickers(): PickerField[] {
        return this.vocabulary ? pickerFields(this.vocabulary, "scene") : [];
    }

    /** Compose the current layout. Validation failures stay local: the error
     * is set inline and nothing is sent. */
    async triggerCompose(): Promise<StackView | null> {
        const paramsError = validateParams(this.params);
        if (paramsError !== null) {
            this.lastError = paramsError;
            return null;
        }
        this.lastError = null;
        let view: StackView;
        try {
            const response = await this.client.compose({
                scene_condition: this.sceneCondition,
                layout: serializeLayout(this.state),
                params: this.params,
            });
            view = await this.loadView(response.stack_id, response.manifest);
        } catch (err) {
            this.lastError = messageOf(err);
            return null;
        }
        this.state = { ...this.state, lastStack: view.manifest };
        this.baseView = view;
        this.editedView = null;
        this.badge = null;
        return view;
    }

    /** Recompose with edits applied server-side (same seed), then diff the
     * returned layers against the base stack for the consistency badge. */
    async applyEdit(edits: EditOp[]): Promise<StackView | null> {
        const base = this.baseView;
        if (base === null) {
            this.lastError = "compose a base stack before editing";
            return null;
        }
        this.lastError = null;
        let view: StackView;
        let psnr: number | null;
        try {
            const response = await this.client.edit(base.stackId, edits, true);
            psnr = response.consistency_report.psnr_outside_edit;
            view = await this.loadView(response.stack_id, response.manifest);
        } catch (err) {
            this.lastError = messageOf(err);
            return null;
        }
        const changed = diffLayers(base.layers, view.layers);
        this.badge = {
            identical: changed.length === 0,
            changedLayers: changed,
            psnrOutsideEdit: psnr,
        };
        this.state = { ...this.state, lastStack: view.manifest };
        this.editedView = view;
        return view;
    }

    private async loadView(stackId: string, manifest: StackManifest): Promise<StackView> {
        const layers = await this.client.fetchStackLayers(manifest);
        return { stackId, manifest, layers, activeLayer: layers.length - 1 };
    }
}

function messageOf(err: unknown): string {
    if (err instanceof ServiceError) return err.message;
    if (err instanceof Error) return err.message;
    return String(err);
}
