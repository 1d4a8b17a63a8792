import {
    composeResponseSchema,
    editResponseSchema,
    instanceResponseSchema,
    stackManifestSchema,
    vocabularySchema,
} from "./schema";
import type {
    ComposeRequest,
    ComposeResponse,
    EditOp,
    EditResponse,
    InstanceRequest,
    InstanceResponse,
    StackManifest,
    Vocabulary,
} from "./schema";
import type { z } from "zod";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Non-2xx answer from the service; `detail` is what the UI shows inline. */
export class ServiceError extends Error {
    constructor(
        readonly status: number,
        detail: string,
    ) {
        super(detail);
        this.name = "ServiceError";
    }
}

export interface QueueStatus {
    busy: boolean;
    queued: number; // waiting behind the in-flight request
}

export function bytesEqual(a: Uint8Array, b: Uint8Array): boolean {
    if (a.length !== b.length) return false;
    for (let i = 0; i < a.length; i++) {
        if (a[i] !== b[i]) return false;
    }
    return true;
}

/**
 * HTTP client for the studio service.
 *
 * Compose and edit share a FIFO queue: at most one such request is in flight
 * per client (one client per project), further triggers wait their turn and
 * the queue depth is observable for the status line.
 */
export class StudioClient {
    private tail: Promise<unknown> = Promise.resolve();
    private inFlight = 0;
    private waiting = 0;
    private bust = 0;
    onQueueChange?: (status: QueueStatus) => void;

    constructor(
        private readonly baseUrl: string,
        private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
    ) {}

    queueStatus(): QueueStatus {
        return { busy: this.inFlight > 0, queued: this.waiting };
    }

    private notify(): void {
        this.onQueueChange?.(this.queueStatus());
    }

    private enqueue<T>(job: () => Promise<T>): Promise<T> {
        this.waiting += 1;
        this.notify();
        const run = this.tail.then(async () => {
            this.waiting -= 1;
            this.inFlight += 1;
            this.notify();
            try {
                return await job();
            } finally {
                this.inFlight -= 1;
                this.notify();
            }
        });
        this.tail = run.then(
            () => undefined,
            () => undefined,
        );
        return run;
    }

    private async getJson<S extends z.ZodTypeAny>(path: string, schema: S): Promise<z.infer<S>> {
        const response = await this.fetchImpl(this.baseUrl + path);
        if (!response.ok) throw new ServiceError(response.status, await detailOf(response));
        return schema.parse(await response.json());
    }

    private async postJson<S extends z.ZodTypeAny>(
        path: string,
        body: unknown,
        schema: S,
    ): Promise<z.infer<S>> {
        const response = await this.fetchImpl(this.baseUrl + path, {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify(body),
        });
        if (!response.ok) throw new ServiceError(response.status, await detailOf(response));
        return schema.parse(await response.json());
    }

    vocabulary(): Promise<Vocabulary> {
        return this.getJson("/vocabulary", vocabularySchema);
    }

    generateInstance(request: InstanceRequest): Promise<InstanceResponse> {
        return this.postJson("/instances", request, instanceResponseSchema);
    }

    compose(request: ComposeRequest): Promise<ComposeResponse> {
        return this.enqueue(() => this.postJson("/compose", request, composeResponseSchema));
    }

    edit(baseStackId: string, edits: EditOp[], keepSeed = true): Promise<EditResponse> {
        return this.enqueue(() =>
            this.postJson(
                "/edit",
                { base_stack_id: baseStackId, edits, keep_seed: keepSeed },
                editResponseSchema,
            ),
        );
    }

    /** Raw PNG bytes of one stack layer. Cache-busted: the browser never gets
     * to reuse a stale body when we byte-compare two composition results. */
    async fetchLayerPng(stackId: string, k: number): Promise<Uint8Array> {
        const url = `${this.baseUrl}/stacks/${stackId}/layer/${k}.png?r=${this.bust++}`;
        const response = await this.fetchImpl(url);
        if (!response.ok) throw new ServiceError(response.status, await detailOf(response));
        return new Uint8Array(await response.arrayBuffer());
    }

    async fetchStackLayers(manifest: StackManifest): Promise<Uint8Array[]> {
        stackManifestSchema.parse(manifest);
        const layers: Uint8Array[] = [];
        for (let k = 0; k < manifest.n_layers; k++) {
            layers.push(await this.fetchLayerPng(manifest.stack_id, k));
        }
        return layers;
    }
}

async function detailOf(response: Response): Promise<string> {
    const text = await response.text();
    try {
        const doc = JSON.parse(text);
        if (doc && typeof doc.detail === "string") return doc.detail;
    } catch {
        // plain-text error body
    }
    return text || `HTTP ${response.status}`;
}
