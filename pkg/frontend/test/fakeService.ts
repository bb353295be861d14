/** In-memory stand-in for the /v1 service, used by the state-layer
 * unit tests.  It mirrors the contract the stores depend on — stable
 * query ids per (document, element, expansion-minus-paging, controls),
 * paged rows, stored-result fetch by id — without computing analytics:
 * rows are a deterministic function of the query id so assertions about
 * caching and supersession stay sharp.
 */

import { createHash } from "node:crypto";
import { Transport, TransportRequest, TransportResponse } from "../src/api/client.js";
import { Cell } from "../src/api/types.js";

export interface FakeOptions {
  /** Rows per full result. */
  totalRows?: number;
  /** Latency per request, or a queue of per-request latencies (ms). */
  latencyMs?: number | number[];
}

export class FakeService {
  readonly log: TransportRequest[] = [];
  /** Queries whose AbortSignal fired before the latency elapsed. */
  aborted = 0;
  private readonly totalRows: number;
  private readonly latencies: number[] | number;
  private latencyIdx = 0;

  constructor(options: FakeOptions = {}) {
    this.totalRows = options.totalRows ?? 120;
    this.latencies = options.latencyMs ?? 0;
  }

  get requestCount(): number {
    return this.log.length;
  }

  transport(): Transport {
    return (req) => this.handle(req);
  }

  private nextLatency(): number {
    if (typeof this.latencies === "number") return this.latencies;
    const v = this.latencies[this.latencyIdx] ?? 0;
    this.latencyIdx++;
    return v;
  }

  private queryIdFor(body: Record<string, unknown>): string {
    const expansion = { ...(body.expansion as Record<string, unknown>) };
    delete expansion.limit;
    delete expansion.offset;
    return createHash("sha256")
      .update(
        JSON.stringify([body.document, body.element_id, expansion, body.controls ?? {}]),
      )
      .digest("hex");
  }

  /** Row i of query q is [i, first 8 chars of q] — unique per query. */
  private row(queryId: string, i: number): Cell[] {
    return [i, queryId.slice(0, 8)];
  }

  private page(queryId: string, offset: number, limit: number) {
    const end = Math.min(offset + limit, this.totalRows);
    const rows: Cell[][] = [];
    for (let i = offset; i < end; i++) rows.push(this.row(queryId, i));
    return rows;
  }

  private async handle(req: TransportRequest): Promise<TransportResponse> {
    this.log.push(req);
    const latency = this.nextLatency();
    if (latency > 0) {
      await new Promise<void>((resolve, reject) => {
        const t = setTimeout(resolve, latency);
        req.signal?.addEventListener("abort", () => {
          clearTimeout(t);
          this.aborted++;
          reject(new DOMException("aborted", "AbortError"));
        });
      });
    } else if (req.signal?.aborted) {
      this.aborted++;
      throw new DOMException("aborted", "AbortError");
    }

    if (req.method === "POST" && req.path === "/v1/query") {
      const body = req.body as Record<string, unknown>;
      const expansion = (body.expansion ?? {}) as { limit?: number; offset?: number };
      const queryId = this.queryIdFor(body);
      const offset = expansion.offset ?? 0;
      const limit = expansion.limit ?? this.totalRows;
      const rows = this.page(queryId, offset, limit);
      return {
        status: 200,
        json: {
          query_id: queryId,
          schema: [
            ["Idx", "Number"],
            ["Tag", "Text"],
          ],
          rows,
          total_rows: this.totalRows,
          complete: offset === 0 && rows.length === this.totalRows,
          from_cache: false,
        },
      };
    }

    const results = req.path.match(/^\/v1\/results\/([0-9a-f]{64})\?(.*)$/);
    if (req.method === "GET" && results) {
      const queryId = results[1];
      const params = new URLSearchParams(results[2]);
      const offset = Number(params.get("offset") ?? 0);
      const limit = params.has("limit") ? Number(params.get("limit")) : this.totalRows;
      const rows = this.page(queryId, offset, limit);
      return {
        status: 200,
        json: {
          query_id: queryId,
          schema: [
            ["Idx", "Number"],
            ["Tag", "Text"],
          ],
          rows,
          total_rows: this.totalRows,
          complete: rows.length === this.totalRows,
        },
      };
    }

    return { status: 404, json: { error: `no route ${req.method} ${req.path}` } };
  }
}
