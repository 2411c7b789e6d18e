/**
 * Schema of the geocut locus JSON export (validated with zod before any
 * geometry is built, so malformed inputs fail loudly).
 */
import { z } from "zod";

const point = z.array(z.number());

export const metaSchema = z
  .object({
    scheme: z.string(),
    axes: z.array(z.number()).nullable(),
    q0: z.array(z.number()),
    N: z.number().int().positive(),
    mesh: z.array(z.number().int()).nullable(),
    box: z.array(z.array(z.number()).length(2)).nullable(),
    tolerances: z.record(z.string(), z.number()),
    seed: z.number().int(),
    out_chart: z
      .object({
        dropped_axis: z.array(z.number().int()),
        orientation_sign: z.number(),
      })
      .optional(),
  })
  .passthrough();

export const diagramSchema = z
  .object({
    meta: metaSchema,
    critical_set: z.array(point),
    locus: z.array(point),
    cusps: z.array(point),
    umbilics: z.array(point),
    failures: z.number().int().nonnegative(),
    labels: z.array(z.string()).optional(),
    critical_set_paths: z.array(z.array(z.number().int())).optional(),
    critical_set_triangles: z.array(z.array(z.number().int()).length(3)).optional(),
    cusp_polylines: z.array(z.array(z.number().int())).optional(),
    degenerate_cusps: z.boolean().optional(),
    min_sigma2: z.number().nullable().optional(),
  })
  .passthrough();

export type Diagram = z.infer<typeof diagramSchema>;

export const compareSchema = z
  .object({
    diff: z
      .object({
        schemes: z.array(z.string()),
        min_sigma2: z.record(z.string(), z.number().nullable()),
      })
      .passthrough(),
  })
  .passthrough();

export function parseDiagram(text: string): Diagram {
  const doc = JSON.parse(text);
  return diagramSchema.parse(doc);
}

export function parseCompare(text: string): { schemes: string[]; diagrams: Diagram[]; diff: unknown } {
  const doc = JSON.parse(text);
  const parsed = compareSchema.parse(doc);
  const schemes = (parsed.diff as { schemes: string[] }).schemes;
  const diagrams = schemes.map((s) => diagramSchema.parse((doc as Record<string, unknown>)[s]));
  return { schemes, diagrams, diff: parsed.diff };
}
