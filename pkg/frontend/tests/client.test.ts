import { describe, expect, it } from "vitest";

import { ServiceError, StudioClient, bytesEqual } from "../src/client";
import { defaultParams } from "../src/schema";
import { FakeStudio } from "./fake_service";

function deferred<T>() {
    let resolve!: (value: T) => void;
    const promise = new Promise<T>((r) => (resolve = r));
    return { promise, resolve };
}

/** Flush every pending microtask (and one macrotask turn). */
function tick(): Promise<void> {
    return new Promise((r) => setTimeout(r, 0));
}

const LAYOUT = [{ id: "a", box: [32, 32, 20, 20] as [number, number, number, number] }];

describe("request queue", () => {
    it("keeps at most one compose/edit in flight, FIFO, with visible depth", async () => {
        const gates: Array<ReturnType<typeof deferred<void>>> = [];
        let active = 0;
        let maxActive = 0;
        const order: number[] = [];
        const studio = new FakeStudio();
        const client = new StudioClient("http://fake", async (url, init) => {
            const index = gates.length;
            order.push(index);
            const gate = deferred<void>();
            gates.push(gate);
            active += 1;
            maxActive = Math.max(maxActive, active);
            await gate.promise;
            active -= 1;
            return studio.fetch(url, init);
        });
        const statuses: Array<{ busy: boolean; queued: number }> = [];
        client.onQueueChange = (s) => statuses.push({ ...s });

        const request = { layout: LAYOUT, params: defaultParams() };
        const first = client.compose(request);
        const second = client.compose(request);
        const third = client.compose(request);
        await tick();
        expect(client.queueStatus().queued).toBe(2);

        // only the first request has reached the wire
        expect(gates).toHaveLength(1);
        gates[0]!.resolve();
        await first;
        await tick();
        expect(gates).toHaveLength(2);
        gates[1]!.resolve();
        await second;
        await tick();
        gates[2]!.resolve();
        await third;

        expect(maxActive).toBe(1);
        expect(order).toEqual([0, 1, 2]);
        expect(statuses.some((s) => s.queued === 2)).toBe(true);
        expect(client.queueStatus()).toEqual({ busy: false, queued: 0 });
    });

    it("a failed request does not wedge the queue", async () => {
        const studio = new FakeStudio();
        const client = new StudioClient("http://fake", studio.fetch);
        await expect(client.edit("missing", [])).rejects.toBeInstanceOf(ServiceError);
        const good = await client.compose({ layout: LAYOUT, params: defaultParams() });
        expect(good.stack_id).toBeTruthy();
    });
});

describe("error surfacing", () => {
    it("non-2xx answers raise ServiceError with the service's detail text", async () => {
        const studio = new FakeStudio();
        const client = new StudioClient("http://fake", studio.fetch);
        const error = await client
            .compose({ layout: LAYOUT, params: { ...defaultParams(), n: 50, steps: 50, n_s: 0 } })
            .then(
                () => null,
                (e) => e,
            );
        expect(error).toBeNull(); // n == steps is valid
        const bad = await client
            .edit("nope", [{ op: "remove", id: "a" }])
            .then(
                () => null,
                (e) => e,
            );
        expect(bad).toBeInstanceOf(ServiceError);
        expect((bad as ServiceError).status).toBe(422);
        expect((bad as ServiceError).message).toContain("unknown stack");
    });
});

describe("layer fetches", () => {
    it("identical stacks produce byte-identical PNGs via cache-busted URLs", async () => {
        const studio = new FakeStudio();
        const client = new StudioClient("http://fake", studio.fetch);
        const request = { layout: LAYOUT, params: defaultParams() };
        const one = await client.compose(request);
        const two = await client.compose(request);
        expect(two.stack_id).toBe(one.stack_id); // content-addressed

        const a = await client.fetchLayerPng(one.stack_id, 1);
        const b = await client.fetchLayerPng(two.stack_id, 1);
        expect(bytesEqual(a, b)).toBe(true);

        const urls = studio.requests
            .filter((r) => r.path.includes("/layer/1.png"))
            .map((r) => r.path);
        expect(urls).toHaveLength(2);
        expect(urls[0]).not.toBe(urls[1]); // cache buster differs
        expect(urls[0]?.split("?")[0]).toBe(urls[1]?.split("?")[0]);
    });

    it("bytesEqual compares content, not identity", () => {
        expect(bytesEqual(new Uint8Array([1, 2]), new Uint8Array([1, 2]))).toBe(true);
        expect(bytesEqual(new Uint8Array([1, 2]), new Uint8Array([1, 3]))).toBe(false);
        expect(bytesEqual(new Uint8Array([1, 2]), new Uint8Array([1, 2, 3]))).toBe(false);
    });
});
