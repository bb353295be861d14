/** Workbook document types (the JSON shape the service accepts) and
 * pure helpers for editing them.  All edits are immutable: they return a
 * new document so the undo stack can hold plain references.
 */

export interface SourceSpec {
  kind: "warehouse-table" | "element-ref" | "adhoc";
  reference: string;
}

export interface ColumnSpec {
  name: string;
  formula: string;
  resident_level: number;
  hidden: boolean;
}

export interface LevelSpec {
  keys: string[];
  ordering: Array<[string, "asc" | "desc"]>;
  collapsed: boolean;
}

export interface FilterJson {
  kind: string;
  target: string | null;
  expression?: string | null;
  values?: unknown[] | null;
}

export interface TableElement {
  element_id: string;
  kind: "table" | "adhoc-table";
  source: SourceSpec;
  levels: LevelSpec[];
  columns: Record<string, ColumnSpec>;
  filters: FilterJson[];
  extra_inputs: string[];
}

export interface ControlElement {
  element_id: string;
  kind: "control";
  name: string;
  value_type: string;
  default_value: unknown;
}

export type DocumentElement = TableElement | ControlElement;

export interface WorkbookDocument {
  doc_id: string;
  name: string | null;
  version: number;
  pages: Array<{ page_id: string; elements: DocumentElement[] }>;
}

export function findElement(doc: WorkbookDocument, elementId: string): DocumentElement | undefined {
  for (const page of doc.pages) {
    for (const el of page.elements) {
      if (el.element_id === elementId) return el;
    }
  }
  return undefined;
}

export function findTable(doc: WorkbookDocument, elementId: string): TableElement | undefined {
  const el = findElement(doc, elementId);
  return el && el.kind !== "control" ? el : undefined;
}

function clone<T>(value: T): T {
  return JSON.parse(JSON.stringify(value)) as T;
}

/** Apply `fn` to one table element, returning a new document. */
export function updateTable(
  doc: WorkbookDocument,
  elementId: string,
  fn: (table: TableElement) => void,
): WorkbookDocument {
  const next = clone(doc);
  const table = findTable(next, elementId);
  if (!table) throw new Error(`no table element ${elementId}`);
  fn(table);
  return next;
}

export function newLevel(partial: Partial<LevelSpec> = {}): LevelSpec {
  return { keys: [], ordering: [], collapsed: false, ...partial };
}

export function newColumn(name: string, formula: string, residentLevel = 0): ColumnSpec {
  return { name, formula, resident_level: residentLevel, hidden: false };
}

/** Set (or add) a column's formula. */
export function setFormula(
  doc: WorkbookDocument,
  elementId: string,
  columnId: string,
  name: string,
  formula: string,
  residentLevel = 0,
): WorkbookDocument {
  return updateTable(doc, elementId, (t) => {
    const existing = t.columns[columnId];
    t.columns[columnId] = existing
      ? { ...existing, name, formula }
      : newColumn(name, formula, residentLevel);
  });
}

export interface RegroupRejection {
  reason: string;
  hint: string;
}

/** Validity rule for dragging a column onto a grouping level.
 *
 * Levels are finest-first: level 0 is the base, the last level is the
 * grand total.  A key for level L summarizes rows of levels below L, so
 * the dragged column must live on a strictly lower level, and a summary
 * scalar can never be dropped into the base (there is nothing below it
 * to summarize).
 */
export function regroupRejection(
  table: TableElement,
  columnId: string,
  targetLevel: number,
): RegroupRejection | null {
  const col = table.columns[columnId];
  if (!col) {
    return { reason: `unknown column ${columnId}`, hint: "drag a column header from the grid" };
  }
  if (targetLevel <= 0 || targetLevel >= table.levels.length) {
    return {
      reason: `level ${targetLevel} cannot take grouping keys`,
      hint: "drop between the base rows and the grand total",
    };
  }
  if (col.resident_level >= targetLevel) {
    return {
      reason: `${col.name} is a level-${col.resident_level} summary`,
      hint: "group keys must come from a lower level than the group they define",
    };
  }
  return null;
}

/** Drag a column onto a level, making it a grouping key there.
 * Returns the new document, or a rejection explaining why the drop is
 * invalid (the document is untouched in that case).
 */
export function regroup(
  doc: WorkbookDocument,
  elementId: string,
  columnId: string,
  targetLevel: number,
): WorkbookDocument | RegroupRejection {
  const table = findTable(doc, elementId);
  if (!table) return { reason: `no table ${elementId}`, hint: "select a table first" };
  const rejection = regroupRejection(table, columnId, targetLevel);
  if (rejection) return rejection;
  return updateTable(doc, elementId, (t) => {
    if (!t.levels[targetLevel].keys.includes(columnId)) {
      t.levels[targetLevel].keys.push(columnId);
    }
  });
}

/** Insert a fresh grouping level directly above the base keyed by a column. */
export function insertLevelAboveBase(
  doc: WorkbookDocument,
  elementId: string,
  columnId: string,
): WorkbookDocument | RegroupRejection {
  const table = findTable(doc, elementId);
  if (!table) return { reason: `no table ${elementId}`, hint: "select a table first" };
  const col = table.columns[columnId];
  if (!col) {
    return { reason: `unknown column ${columnId}`, hint: "drag a column header from the grid" };
  }
  if (col.resident_level > 0) {
    return {
      reason: `${col.name} is a level-${col.resident_level} summary`,
      hint: "only base-level columns can key a new level above the base",
    };
  }
  return updateTable(doc, elementId, (t) => {
    // a new level above the base shifts every summary column up one level
    t.levels.splice(1, 0, newLevel({ keys: [columnId] }));
    for (const c of Object.values(t.columns)) {
      if (c.resident_level > 0) c.resident_level += 1;
    }
  });
}

export function setCollapsed(
  doc: WorkbookDocument,
  elementId: string,
  level: number,
  collapsed: boolean,
): WorkbookDocument {
  return updateTable(doc, elementId, (t) => {
    t.levels[level].collapsed = collapsed;
  });
}

export function emptyDocument(docId: string): WorkbookDocument {
  return { doc_id: docId, name: null, version: 1, pages: [{ page_id: "p1", elements: [] }] };
}

function bareTable(elementId: string, source: SourceSpec): TableElement {
  return {
    element_id: elementId,
    kind: "table",
    source,
    levels: [newLevel(), newLevel()],
    columns: {},
    filters: [],
    extra_inputs: [],
  };
}

/** A bare single-table document over a warehouse table: base level plus
 * grand total, no columns yet.  The starting point for interactive
 * building in the tests and the UI.
 */
export function tableDocument(docId: string, elementId: string, tableRef: string): WorkbookDocument {
  const doc = emptyDocument(docId);
  doc.pages[0].elements.push(bareTable(elementId, { kind: "warehouse-table", reference: tableRef }));
  return doc;
}

/** Add a bare table element (immutable; returns the new document). */
export function addTable(
  doc: WorkbookDocument,
  elementId: string,
  source: SourceSpec,
): WorkbookDocument {
  const next = clone(doc);
  next.pages[0].elements.push(bareTable(elementId, source));
  return next;
}
