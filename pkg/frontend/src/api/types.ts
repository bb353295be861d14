/** Service payload schemas (zod) for the /v1 JSON API. */

import { z } from "zod";

export const ValueTypeSchema = z.enum(["Number", "Text", "Date", "Logical"]);
export type ValueType = z.infer<typeof ValueTypeSchema>;

/** One cell as serialized by the service. */
export const CellSchema = z.union([z.number(), z.string(), z.boolean(), z.null()]);
export type Cell = z.infer<typeof CellSchema>;

export const QueryResponseSchema = z.object({
  query_id: z.string().length(64),
  schema: z.array(z.tuple([z.string(), z.string()])),
  rows: z.array(z.array(CellSchema)),
  total_rows: z.number().int().nonnegative(),
  complete: z.boolean(),
  from_cache: z.boolean(),
});
export type QueryResponse = z.infer<typeof QueryResponseSchema>;

export const CompileResponseSchema = z.object({
  query_id: z.string().length(64),
  sql: z.string(),
  plan: z.string(),
});
export type CompileResponse = z.infer<typeof CompileResponseSchema>;

export const ErrorResponseSchema = z.object({ error: z.string() });

export const AdhocResponseSchema = z.object({
  table: z.string(),
  version: z.string(),
});

export const UploadResponseSchema = z.object({
  source: z.object({ kind: z.string(), reference: z.string() }),
  schema: z.array(z.tuple([z.string(), z.string()])),
  row_count: z.number().int(),
});

/** Expansion state sent with a query: which levels are collapsed plus the
 * requested page. */
export interface Expansion {
  collapsed?: boolean[];
  limit?: number;
  offset?: number;
}

export interface QueryRequest {
  document: unknown;
  element_id: string;
  expansion?: Expansion;
  controls?: Record<string, Cell>;
  session_id?: string;
}
