/** Client-side result cache keyed by query id.
 *
 * The service derives one query id per (document view, expansion minus
 * paging), so any edit that comes back to a previously seen view — undo
 * being the common case — can be redrawn from here without a network
 * round trip.  Bounded LRU: touching an entry refreshes its recency.
 */

import { Cell } from "../api/types.js";

export interface CachedResult {
  queryId: string;
  schema: Array<[string, string]>;
  rows: Cell[][];
  totalRows: number;
  /** Whether `rows` is the whole result (service `complete` flag). */
  complete: boolean;
  fetchedAt: number;
}

export class ClientResultCache {
  private readonly entries = new Map<string, CachedResult>();

  constructor(private readonly capacity = 64) {
    if (capacity < 1) throw new Error("capacity must be >= 1");
  }

  get(queryId: string): CachedResult | undefined {
    const hit = this.entries.get(queryId);
    if (hit) {
      // refresh LRU position
      this.entries.delete(queryId);
      this.entries.set(queryId, hit);
    }
    return hit;
  }

  has(queryId: string): boolean {
    return this.entries.has(queryId);
  }

  put(entry: CachedResult): void {
    this.entries.delete(entry.queryId);
    this.entries.set(entry.queryId, entry);
    while (this.entries.size > this.capacity) {
      const oldest = this.entries.keys().next().value as string;
      this.entries.delete(oldest);
    }
  }

  /** Merge a page into an existing incomplete entry (back/forward scroll). */
  mergePage(
    queryId: string,
    rows: Cell[][],
    offset: number,
    schema: Array<[string, string]>,
    totalRows: number,
  ): CachedResult {
    const existing = this.entries.get(queryId);
    const merged: CachedResult = existing ?? {
      queryId,
      schema,
      rows: [],
      totalRows,
      complete: false,
      fetchedAt: Date.now(),
    };
    for (let i = 0; i < rows.length; i++) {
      merged.rows[offset + i] = rows[i];
    }
    merged.totalRows = totalRows;
    merged.complete = this.coveredRows(merged) >= totalRows;
    this.put(merged);
    return merged;
  }

  /** Rows of an entry actually present (merged pages may leave holes). */
  coveredRows(entry: CachedResult): number {
    let n = 0;
    for (let i = 0; i < entry.rows.length; i++) {
      if (entry.rows[i] !== undefined) n++;
    }
    return n;
  }

  /** The page [offset, offset+limit) if every row of it is cached. */
  pageIfCached(queryId: string, offset: number, limit: number): Cell[][] | undefined {
    const entry = this.get(queryId);
    if (!entry) return undefined;
    const end = Math.min(offset + limit, entry.totalRows);
    const page: Cell[][] = [];
    for (let i = offset; i < end; i++) {
      const row = entry.rows[i];
      if (row === undefined) return undefined;
      page.push(row);
    }
    return page;
  }

  get size(): number {
    return this.entries.size;
  }

  clear(): void {
    this.entries.clear();
  }
}
