/** Thin typed client for the /v1 HTTP API.
 *
 * The transport is injectable so state-layer tests can run against an
 * in-memory fake service without a browser or a network stack.  Every
 * request accepts an AbortSignal; the stores use that to supersede an
 * in-flight query when the user edits again before it lands.
 */

import {
  AdhocResponseSchema,
  CompileResponse,
  CompileResponseSchema,
  ErrorResponseSchema,
  QueryRequest,
  QueryResponse,
  QueryResponseSchema,
  UploadResponseSchema,
} from "./types.js";

export interface TransportRequest {
  method: string;
  path: string; // path + query string, e.g. "/v1/results/ab..?limit=50"
  body?: unknown; // JSON body (objects) or raw string (CSV upload)
  headers?: Record<string, string>;
  signal?: AbortSignal;
}

export interface TransportResponse {
  status: number;
  json: unknown;
}

export type Transport = (req: TransportRequest) => Promise<TransportResponse>;

/** Raised for any non-2xx service response. */
export class ServiceRequestError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ServiceRequestError";
  }
}

export function fetchTransport(baseUrl: string): Transport {
  return async (req) => {
    const headers: Record<string, string> = { ...req.headers };
    let body: string | undefined;
    if (req.body !== undefined) {
      if (typeof req.body === "string") {
        body = req.body;
        headers["Content-Type"] ??= "text/csv";
      } else {
        body = JSON.stringify(req.body);
        headers["Content-Type"] = "application/json";
      }
    }
    const resp = await fetch(baseUrl + req.path, {
      method: req.method,
      headers,
      body,
      signal: req.signal,
    });
    let json: unknown = null;
    try {
      json = await resp.json();
    } catch {
      // non-JSON body (empty 204 etc.); leave as null
    }
    return { status: resp.status, json };
  };
}

export interface ClientOptions {
  authToken?: string;
  sessionId?: string;
}

export class ServiceClient {
  constructor(
    private readonly transport: Transport,
    private readonly options: ClientOptions = {},
  ) {}

  private headers(): Record<string, string> {
    const h: Record<string, string> = {};
    if (this.options.authToken) {
      h["Authorization"] = `Bearer ${this.options.authToken}`;
    }
    if (this.options.sessionId) {
      h["X-Session-Id"] = this.options.sessionId;
    }
    return h;
  }

  private async call(req: TransportRequest): Promise<unknown> {
    const resp = await this.transport({
      ...req,
      headers: { ...this.headers(), ...req.headers },
    });
    if (resp.status < 200 || resp.status >= 300) {
      const parsed = ErrorResponseSchema.safeParse(resp.json);
      const message = parsed.success
        ? parsed.data.error
        : `service returned status ${resp.status}`;
      throw new ServiceRequestError(resp.status, message);
    }
    return resp.json;
  }

  async query(req: QueryRequest, signal?: AbortSignal): Promise<QueryResponse> {
    const json = await this.call({
      method: "POST",
      path: "/v1/query",
      body: {
        document: req.document,
        element_id: req.element_id,
        expansion: req.expansion ?? {},
        controls: req.controls ?? {},
      },
      signal,
    });
    return QueryResponseSchema.parse(json);
  }

  async compile(req: QueryRequest, signal?: AbortSignal): Promise<CompileResponse> {
    const json = await this.call({
      method: "POST",
      path: "/v1/compile",
      body: {
        document: req.document,
        element_id: req.element_id,
        expansion: req.expansion ?? {},
        controls: req.controls ?? {},
      },
      signal,
    });
    return CompileResponseSchema.parse(json);
  }

  async results(
    queryId: string,
    limit?: number,
    offset = 0,
    signal?: AbortSignal,
  ): Promise<QueryResponse> {
    const params = new URLSearchParams({ offset: String(offset) });
    if (limit !== undefined) params.set("limit", String(limit));
    const json = await this.call({
      method: "GET",
      path: `/v1/results/${queryId}?${params}`,
      signal,
    });
    // GET /v1/results has no from_cache field: it is always served from
    // the stored result.
    return QueryResponseSchema.parse({ from_cache: true, ...(json as object) });
  }

  async saveDocument(document: unknown): Promise<string> {
    const json = (await this.call({
      method: "POST",
      path: "/v1/documents",
      body: document,
    })) as { doc_id: string };
    return json.doc_id;
  }

  async loadDocument(docId: string): Promise<unknown> {
    return this.call({ method: "GET", path: `/v1/documents/${docId}` });
  }

  async uploadCsv(name: string, csvText: string) {
    const json = await this.call({
      method: "POST",
      path: `/v1/uploads/csv?name=${encodeURIComponent(name)}`,
      body: csvText,
    });
    return UploadResponseSchema.parse(json);
  }

  async patchAdhoc(
    tableRef: string,
    edits: Array<{ row: number; column: string; value: unknown }>,
  ) {
    const json = await this.call({
      method: "PATCH",
      path: `/v1/adhoc/${tableRef}`,
      body: { edits },
    });
    return AdhocResponseSchema.parse(json);
  }
}
