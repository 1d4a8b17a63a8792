import { z } from "zod";

// Wire formats of the studio service, mirrored here so every payload is
// validated *before* it leaves the browser. The editor never computes any
// blending math — it only builds these shapes and renders what comes back.

export const boundingBoxSchema = z
    .tuple([z.number(), z.number(), z.number(), z.number()])
    .refine(([, , w, h]) => w > 0 && h > 0, {
        message: "box extent must be positive",
    });

export type BoundingBox = z.infer<typeof boundingBoxSchema>; // [cx, cy, w, h]

export const layoutEntrySchema = z.object({
    id: z.string().min(1),
    box: boundingBoxSchema,
});

export type LayoutEntry = z.infer<typeof layoutEntrySchema>;

// Ordered back-to-front; the service rejects duplicate instance ids.
export const layoutSchema = z.array(layoutEntrySchema).superRefine((entries, ctx) => {
    const seen = new Set<string>();
    for (const e of entries) {
        if (seen.has(e.id)) {
            ctx.addIssue({
                code: z.ZodIssueCode.custom,
                message: `duplicate instance id ${e.id}`,
            });
        }
        seen.add(e.id);
    }
});

export type Layout = z.infer<typeof layoutSchema>;

export const guidanceSchema = z.object({
    scale: z.number(),
    rescale: z.number().min(0).max(1),
});

// Same cross-field rules the server enforces (0 <= n <= steps, 0 <= b <= steps,
// 0 <= n_s <= steps - n); violating payloads are shown inline and never sent.
export const blendParamsSchema = z
    .object({
        n: z.number().int().min(0),
        b: z.number().int().min(0),
        n_s: z.number().int().min(0),
        steps: z.number().int().min(1),
        guidance: guidanceSchema,
        seed: z.number().int(),
    })
    .superRefine((p, ctx) => {
        if (p.n > p.steps) {
            ctx.addIssue({
                code: z.ZodIssueCode.custom,
                path: ["n"],
                message: `need 0 <= n <= steps, got n=${p.n}, steps=${p.steps}`,
            });
        }
        if (p.b > p.steps) {
            ctx.addIssue({
                code: z.ZodIssueCode.custom,
                path: ["b"],
                message: `need 0 <= b <= steps, got b=${p.b}, steps=${p.steps}`,
            });
        }
        if (p.n_s > p.steps - p.n) {
            ctx.addIssue({
                code: z.ZodIssueCode.custom,
                path: ["n_s"],
                message: `need 0 <= n_s <= steps - n, got n_s=${p.n_s}, n=${p.n}, steps=${p.steps}`,
            });
        }
    });

export type BlendParams = z.infer<typeof blendParamsSchema>;

// Params panel defaults (same values the service applies when fields are
// omitted).
export function defaultParams(): BlendParams {
    return {
        n: 30,
        b: 20,
        n_s: 10,
        steps: 50,
        guidance: { scale: 4.5, rescale: 0.25 },
        seed: 0,
    };
}

export const editOpSchema = z.discriminatedUnion("op", [
    z.object({ op: z.literal("move"), id: z.string(), box: boundingBoxSchema }),
    z.object({ op: z.literal("rescale"), id: z.string(), box: boundingBoxSchema }),
    z.object({ op: z.literal("replace"), id: z.string(), asset: z.string() }),
    z.object({ op: z.literal("remove"), id: z.string() }),
    z.object({ op: z.literal("reorder"), order: z.array(z.string()) }),
]);

export type EditOp = z.infer<typeof editOpSchema>;

export const sceneConditionSchema = z.record(z.string());

export const composeRequestSchema = z.object({
    scene_condition: sceneConditionSchema.optional(),
    layout: layoutSchema,
    params: blendParamsSchema,
});

export type ComposeRequest = z.infer<typeof composeRequestSchema>;

export const stackManifestSchema = z.object({
    stack_id: z.string(),
    n_layers: z.number().int().min(1),
    layers: z.array(z.string()),
    request: z.object({
        scene_condition: sceneConditionSchema.nullish(),
        layout: layoutSchema,
        params: blendParamsSchema,
    }),
});

export type StackManifest = z.infer<typeof stackManifestSchema>;

export const composeResponseSchema = z.object({
    stack_id: z.string(),
    manifest: stackManifestSchema,
});

export type ComposeResponse = z.infer<typeof composeResponseSchema>;

export const consistencyReportSchema = z.object({
    psnr_outside_edit: z.number().nullable(),
    edited_region_fraction: z.number(),
});

export const editRequestSchema = z.object({
    base_stack_id: z.string(),
    edits: z.array(editOpSchema),
    keep_seed: z.boolean(),
});

export type EditRequest = z.infer<typeof editRequestSchema>;

export const editResponseSchema = composeResponseSchema.extend({
    consistency_report: consistencyReportSchema,
});

export type EditResponse = z.infer<typeof editResponseSchema>;

export const instanceRequestSchema = z.object({
    condition: z.record(z.string()),
    seed: z.number().int().optional(),
    steps: z.number().int().optional(),
    gs: z.number().optional(),
    gr: z.number().optional(),
});

export type InstanceRequest = z.infer<typeof instanceRequestSchema>;

export const instanceResponseSchema = z.object({
    asset_id: z.string(),
    png: z.string(), // base64
});

export type InstanceResponse = z.infer<typeof instanceResponseSchema>;

// /vocabulary: field name -> allowed values, one block per model. Pickers are
// generated from this so the UI carries no enum copies of its own.
export const vocabularySchema = z.object({
    instance: z.record(z.array(z.string())),
    scene: z.record(z.array(z.string())),
});

export type Vocabulary = z.infer<typeof vocabularySchema>;
