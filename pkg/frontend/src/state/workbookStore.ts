/** Client state machine behind the UI.
 *
 * Owns the editable document, the per-element view state, the undo
 * stack, and all traffic to the service.  React components subscribe
 * and render snapshots; nothing here touches the DOM, so the whole
 * steering loop is testable headlessly against a fake transport.
 *
 * Invariants enforced here:
 *  - at most one in-flight query per element; a newer edit aborts and
 *    supersedes it, so after a burst of edits exactly the final
 *    document's result is displayed;
 *  - every displayed value originates from a service response (the grid
 *    holds response rows verbatim, possibly replayed from the client
 *    result cache);
 *  - undo restores the prior document and re-serves its grid from the
 *    ClientResultCache without a network call when cached.
 */

import { ServiceClient } from "../api/client.js";
import { Cell, Expansion, QueryResponse } from "../api/types.js";
import {
  RegroupRejection,
  SourceSpec,
  WorkbookDocument,
  addTable,
  findTable,
  insertLevelAboveBase,
  regroup,
  setCollapsed,
  setFormula,
} from "../document.js";
import { checkFormula, ParseError } from "../formula/parser.js";
import { ClientResultCache } from "./resultCache.js";

export const PAGE_SIZE = 50;

export interface GridView {
  queryId: string;
  schema: Array<[string, string]>;
  /** Sparse by absolute row index; pages fill it in as they arrive. */
  rows: Cell[][];
  totalRows: number;
  /** True while a superseding query is in flight (stale grid shown). */
  pending: boolean;
}

export interface ElementView {
  expansion: Expansion;
  grid: GridView | null;
  /** Last service or parse error for this element, if any. */
  error: string | null;
}

interface InFlight {
  controller: AbortController;
  seq: number;
}

type Listener = () => void;

export class WorkbookStore {
  document: WorkbookDocument;
  controls: Record<string, Cell> = {};
  readonly cache = new ClientResultCache();
  readonly views = new Map<string, ElementView>();

  private readonly undoStack: WorkbookDocument[] = [];
  private readonly redoStack: WorkbookDocument[] = [];
  private readonly inFlight = new Map<string, InFlight>();
  private seq = 0;
  private readonly listeners = new Set<Listener>();
  /** Network request counter, for tests and the debug footer. */
  requestCount = 0;

  constructor(
    private readonly client: ServiceClient,
    document: WorkbookDocument,
  ) {
    this.document = document;
  }

  // -- subscription ---------------------------------------------------------

  subscribe(listener: Listener): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private notify(): void {
    for (const l of this.listeners) l();
  }

  view(elementId: string): ElementView {
    let v = this.views.get(elementId);
    if (!v) {
      v = { expansion: { limit: PAGE_SIZE, offset: 0 }, grid: null, error: null };
      this.views.set(elementId, v);
    }
    return v;
  }

  // -- document edits -------------------------------------------------------

  /** Validate a formula client-side; null when it parses. */
  checkFormulaSyntax(formula: string): ParseError | null {
    const outcome = checkFormula(formula);
    return outcome.ok ? null : outcome.error;
  }

  /** Edit (or add) a formula column.  Syntactically invalid input is
   * rejected locally: the document is unchanged and no request is sent.
   */
  async editFormula(
    elementId: string,
    columnId: string,
    name: string,
    formula: string,
    residentLevel = 0,
  ): Promise<ParseError | null> {
    const error = this.checkFormulaSyntax(formula);
    if (error) {
      this.view(elementId).error = `${error.message} (at offset ${error.offset})`;
      this.notify();
      return error;
    }
    this.pushUndo();
    this.document = setFormula(this.document, elementId, columnId, name, formula, residentLevel);
    this.view(elementId).error = null;
    await this.refresh(elementId);
    return null;
  }

  /** Drag a column onto an existing level; rejections leave everything
   * untouched and are surfaced as the element's error with a hint. */
  async regroupOntoLevel(
    elementId: string,
    columnId: string,
    targetLevel: number,
  ): Promise<RegroupRejection | null> {
    const result = regroup(this.document, elementId, columnId, targetLevel);
    return this.applyRegroup(elementId, result);
  }

  /** Drag a column above the base row area, creating a new level. */
  async regroupNewLevel(
    elementId: string,
    columnId: string,
  ): Promise<RegroupRejection | null> {
    const result = insertLevelAboveBase(this.document, elementId, columnId);
    return this.applyRegroup(elementId, result);
  }

  private async applyRegroup(
    elementId: string,
    result: WorkbookDocument | RegroupRejection,
  ): Promise<RegroupRejection | null> {
    if ("reason" in result) {
      this.view(elementId).error = `${result.reason} — ${result.hint}`;
      this.notify();
      return result;
    }
    this.pushUndo();
    this.document = result;
    const view = this.view(elementId);
    view.error = null;
    // collapse state is per level count; reset the expansion to match
    view.expansion = { limit: PAGE_SIZE, offset: 0 };
    await this.refresh(elementId);
    return null;
  }

  /** Add an empty table element.  No query is issued: an element with
   * no columns has nothing to show until its first formula lands. */
  addTableElement(elementId: string, source: SourceSpec): void {
    this.pushUndo();
    this.document = addTable(this.document, elementId, source);
    this.notify();
  }

  async toggleCollapsed(elementId: string, level: number): Promise<void> {
    const table = findTable(this.document, elementId);
    if (!table) return;
    this.pushUndo();
    this.document = setCollapsed(this.document, elementId, level, !table.levels[level].collapsed);
    const view = this.view(elementId);
    const collapsed = findTable(this.document, elementId)!.levels.map((l) => l.collapsed);
    view.expansion = { ...view.expansion, collapsed, offset: 0 };
    await this.refresh(elementId);
  }

  async setControl(controlId: string, value: Cell): Promise<void> {
    this.controls = { ...this.controls, [controlId]: value };
    // control changes re-query every table currently on screen
    const refreshes = [...this.views.keys()].map((eid) => this.refresh(eid));
    await Promise.all(refreshes);
  }

  /** Controls as URL query parameters for a shareable document link. */
  shareUrl(docId: string): string {
    const params = new URLSearchParams({ doc_id: docId });
    for (const [k, v] of Object.entries(this.controls)) {
      params.set(`c_${k}`, v === null ? "" : String(v));
    }
    return `?${params.toString()}`;
  }

  /** Restore controls from URL query parameters (inverse of shareUrl). */
  static controlsFromUrl(search: string): { docId: string | null; controls: Record<string, string> } {
    const params = new URLSearchParams(search.startsWith("?") ? search.slice(1) : search);
    const controls: Record<string, string> = {};
    for (const [k, v] of params.entries()) {
      if (k.startsWith("c_")) controls[k.slice(2)] = v;
    }
    return { docId: params.get("doc_id"), controls };
  }

  // -- undo / redo ----------------------------------------------------------

  private pushUndo(): void {
    this.undoStack.push(this.document);
    this.redoStack.length = 0;
  }

  get canUndo(): boolean {
    return this.undoStack.length > 0;
  }

  /** Undo the last document edit.  The restored view is served from the
   * client result cache when present — zero network requests then. */
  async undo(elementId: string): Promise<void> {
    const prior = this.undoStack.pop();
    if (!prior) return;
    this.redoStack.push(this.document);
    this.document = prior;
    await this.refresh(elementId);
  }

  async redo(elementId: string): Promise<void> {
    const next = this.redoStack.pop();
    if (!next) return;
    this.undoStack.push(this.document);
    this.document = next;
    await this.refresh(elementId);
  }

  // -- querying -------------------------------------------------------------

  /** Scroll so the viewport needs rows [offset, offset+PAGE_SIZE).
   * Cached pages re-render without a request; uncached ones fetch the
   * stored result by query id (no recompilation).  Rapid scrolls
   * supersede the in-flight page fetch. */
  async scrollTo(elementId: string, offset: number): Promise<void> {
    const view = this.view(elementId);
    view.expansion = { ...view.expansion, offset };
    const grid = view.grid;
    if (!grid) {
      await this.refresh(elementId);
      return;
    }
    const cached = this.cache.pageIfCached(grid.queryId, offset, PAGE_SIZE);
    if (cached !== undefined) {
      this.notify();
      return;
    }
    const seq = this.beginRequest(elementId);
    const flight = this.inFlight.get(elementId)!;
    try {
      this.requestCount++;
      const resp = await this.client.results(
        grid.queryId,
        PAGE_SIZE,
        offset,
        flight.controller.signal,
      );
      if (this.isSuperseded(elementId, seq)) return;
      this.absorb(elementId, resp, offset);
    } catch (err) {
      if (this.isSuperseded(elementId, seq)) return;
      view.grid = { ...grid, pending: false };
      view.error = err instanceof Error ? err.message : String(err);
      this.notify();
    } finally {
      this.endRequest(elementId, seq);
    }
  }

  /** Issue (or replay from cache) the query for an element's current
   * document + expansion.  The single entry point after any edit. */
  async refresh(elementId: string): Promise<void> {
    const view = this.view(elementId);
    const seq = this.beginRequest(elementId);
    const flight = this.inFlight.get(elementId)!;

    // A view we have seen before replays instantly from the client
    // cache.  The cache is keyed by service query id, which we only
    // know after a response — so remember document/expansion
    // fingerprints alongside (see keyFor).
    const known = this.knownQueryIds.get(this.keyFor(elementId));
    const offset = view.expansion.offset ?? 0;
    if (known !== undefined) {
      const page = this.cache.pageIfCached(known, offset, PAGE_SIZE);
      const entry = this.cache.get(known);
      if (page !== undefined && entry) {
        view.grid = {
          queryId: known,
          schema: entry.schema,
          rows: entry.rows,
          totalRows: entry.totalRows,
          pending: false,
        };
        view.error = null;
        this.endRequest(elementId, seq);
        this.notify();
        return;
      }
    }

    if (view.grid) view.grid = { ...view.grid, pending: true };
    this.notify();
    try {
      this.requestCount++;
      const resp = await this.client.query(
        {
          document: this.document,
          element_id: elementId,
          expansion: { ...view.expansion, limit: PAGE_SIZE, offset },
          controls: this.controls,
        },
        flight.controller.signal,
      );
      if (this.isSuperseded(elementId, seq)) return;
      this.knownQueryIds.set(this.keyFor(elementId), resp.query_id);
      this.absorb(elementId, resp, offset);
    } catch (err) {
      if (this.isSuperseded(elementId, seq)) return;
      if (view.grid) view.grid = { ...view.grid, pending: false };
      view.error = err instanceof Error ? err.message : String(err);
      this.notify();
    } finally {
      this.endRequest(elementId, seq);
    }
  }

  /** Map (element, document, expansion-minus-paging, controls) to the
   * query id the service answered with, enabling cache replay on undo. */
  private readonly knownQueryIds = new Map<string, string>();

  private keyFor(elementId: string): string {
    const { collapsed } = this.view(elementId).expansion;
    return JSON.stringify([elementId, this.document, collapsed ?? null, this.controls]);
  }

  private absorb(elementId: string, resp: QueryResponse, offset: number): void {
    const merged = this.cache.mergePage(
      resp.query_id,
      resp.rows,
      offset,
      resp.schema,
      resp.total_rows,
    );
    const view = this.view(elementId);
    view.grid = {
      queryId: resp.query_id,
      schema: merged.schema,
      rows: merged.rows,
      totalRows: merged.totalRows,
      pending: false,
    };
    view.error = null;
    this.notify();
  }

  private beginRequest(elementId: string): number {
    const existing = this.inFlight.get(elementId);
    if (existing) existing.controller.abort();
    const seq = ++this.seq;
    this.inFlight.set(elementId, { controller: new AbortController(), seq });
    return seq;
  }

  private isSuperseded(elementId: string, seq: number): boolean {
    return this.inFlight.get(elementId)?.seq !== seq;
  }

  private endRequest(elementId: string, seq: number): void {
    if (this.inFlight.get(elementId)?.seq === seq) {
      this.inFlight.delete(elementId);
    }
  }
}
