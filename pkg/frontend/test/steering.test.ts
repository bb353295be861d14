/** UI steering loop against the real HTTP service.
 *
 * Spawns the actual service (`gridbook serve`), uploads a small flight
 * CSV, then drives the client state machine exactly as the UI does:
 * build the sessionization workbook through formula-bar edits and
 * drag-regroup operations, check the grid against direct service
 * responses, check that undo re-serves from the client cache with zero
 * network calls, and that a burst of 5 rapid edits displays exactly the
 * final document's result.
 */

import { ChildProcess, spawn } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { ServiceClient, Transport, fetchTransport } from "../src/api/client.js";
import { Cell } from "../src/api/types.js";
import { tableDocument } from "../src/document.js";
import { PAGE_SIZE, WorkbookStore } from "../src/state/workbookStore.js";

const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;
const TOKEN = "steer-tok";

let server: ChildProcess;

// -- tiny flight dataset (12 rows, 2 tails, gaps > 30 days split sessions) --

interface Flight {
  date: string;
  tail: string;
  airTime: number;
  cancelled: boolean;
}

const FLIGHTS: Flight[] = [
  { date: "2024-01-01", tail: "N100", airTime: 120, cancelled: false },
  { date: "2024-01-02", tail: "N100", airTime: 95, cancelled: false },
  { date: "2024-01-03", tail: "N100", airTime: 110, cancelled: true },
  { date: "2024-01-10", tail: "N200", airTime: 60, cancelled: false },
  { date: "2024-01-15", tail: "N200", airTime: 75, cancelled: false },
  { date: "2024-01-20", tail: "N100", airTime: 130, cancelled: false },
  { date: "2024-03-01", tail: "N100", airTime: 80, cancelled: false }, // 41d gap: new N100 session
  { date: "2024-03-02", tail: "N100", airTime: 85, cancelled: true },
  { date: "2024-03-20", tail: "N100", airTime: 90, cancelled: false },
  { date: "2024-04-01", tail: "N200", airTime: 70, cancelled: false }, // 77d gap: new N200 session
  { date: "2024-04-02", tail: "N200", airTime: 65, cancelled: false },
  { date: "2024-05-10", tail: "N200", airTime: 55, cancelled: true }, // 38d gap: new N200 session
];

function flightsCsv(): string {
  const lines = ["flight_date,tail_number,air_time_minutes,cancelled"];
  for (const f of FLIGHTS) {
    lines.push(`${f.date},${f.tail},${f.airTime},${f.cancelled}`);
  }
  return lines.join("\n") + "\n";
}

/** Independent brute-force session labeler (calendar-day gap > 30). */
function bruteForceSessionCount(): number {
  const byTail = new Map<string, string[]>();
  for (const f of FLIGHTS) {
    if (!byTail.has(f.tail)) byTail.set(f.tail, []);
    byTail.get(f.tail)!.push(f.date);
  }
  let sessions = 0;
  for (const dates of byTail.values()) {
    let prev: string | null = null;
    for (const d of dates) {
      const gap = prev === null ? Infinity : (Date.parse(d) - Date.parse(prev)) / 86_400_000;
      if (gap > 30) sessions++;
      prev = d;
    }
  }
  return sessions;
}

// -- counted transport: every network call the store makes goes through here

let networkCalls = 0;
function countedTransport(): Transport {
  const inner = fetchTransport(BASE);
  return (req) => {
    networkCalls++;
    return inner(req);
  };
}

function newClient(): ServiceClient {
  return new ServiceClient(countedTransport(), { authToken: TOKEN, sessionId: "steering" });
}

async function waitForHealthy(): Promise<void> {
  const deadline = Date.now() + 30_000;
  for (;;) {
    try {
      const resp = await fetch(`${BASE}/healthz`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error("service did not become healthy");
    await new Promise((r) => setTimeout(r, 200));
  }
}

beforeAll(async () => {
  server = spawn(
    "gridbook",
    ["serve", "--db-path", ":memory:", "--listen", `127.0.0.1:${PORT}`, "--auth-token", TOKEN],
    { stdio: "ignore" },
  );
  await waitForHealthy();
  const upload = await newClient().uploadCsv("flights", flightsCsv());
  expect(upload.source.reference).toBe("flights");
  expect(upload.row_count).toBe(FLIGHTS.length);
});

afterAll(() => {
  server?.kill();
});

function col(grid: { schema: Array<[string, string]>; rows: Cell[][] }, name: string): Cell[] {
  const idx = grid.schema.findIndex(([n]) => n === name);
  expect(idx, `column ${name} present`).toBeGreaterThanOrEqual(0);
  return grid.rows.filter((r) => r !== undefined).map((r) => r[idx]);
}

describe("steering loop against the live service", () => {
  it("builds the sessionization workbook interactively", async () => {
    const client = newClient();
    const store = new WorkbookStore(client, tableDocument("steer", "sessions", "flights"));

    // --- formula bar: base columns of the sessions element
    expect(await store.editFormula("sessions", "c0", "FlightDate", "[flight_date]")).toBeNull();
    expect(await store.editFormula("sessions", "c1", "Tail", "[tail_number]")).toBeNull();
    expect(await store.editFormula("sessions", "c2", "AirTime", "[air_time_minutes]")).toBeNull();
    expect(await store.editFormula("sessions", "c3", "WasCancelled", "[cancelled]")).toBeNull();

    // --- drag-regroup: Tail onto a new level above the base → nest by plane
    expect(await store.regroupNewLevel("sessions", "c1")).toBeNull();

    // --- formula bar: windowed session labeling within each plane
    expect(await store.editFormula("sessions", "c4", "PrevFlight", "Lag([FlightDate])")).toBeNull();
    expect(
      await store.editFormula("sessions", "c5", "GapDays", 'DateDiff("day", [PrevFlight], [FlightDate])'),
    ).toBeNull();
    expect(
      await store.editFormula(
        "sessions",
        "c6",
        "SessionStart",
        "FillDown(If(Coalesce([GapDays], 31) > 30, [FlightDate], Null))",
      ),
    ).toBeNull();

    // --- per-plane cancellation rate at level 1
    expect(
      await store.editFormula("sessions", "c7", "CancelRate", "CountIf([WasCancelled]) / Count()", 1),
    ).toBeNull();

    const view = store.view("sessions");
    expect(view.error).toBeNull();
    const grid = view.grid!;
    expect(grid.totalRows).toBe(FLIGHTS.length);

    // --- grid ≡ direct service response for the same document/view
    const direct = await client.query({
      document: store.document,
      element_id: "sessions",
      expansion: { limit: PAGE_SIZE, offset: 0 },
      controls: {},
    });
    expect(grid.queryId).toBe(direct.query_id);
    expect(grid.schema).toEqual(direct.schema);
    expect(grid.rows.slice(0, direct.rows.length)).toEqual(direct.rows);

    // --- session labels match an independent brute-force labeler
    const tails = col(grid, "Tail");
    const starts = col(grid, "SessionStart");
    const pairs = new Set(tails.map((t, i) => `${t}|${starts[i]}`));
    expect(pairs.size).toBe(bruteForceSessionCount());
    // every base row got a session label
    expect(starts.every((s) => s !== null)).toBe(true);
  }, 120_000);

  it("summarizes sessions in a second element over the first", async () => {
    const client = newClient();
    const store = new WorkbookStore(client, tableDocument("steer2", "sessions", "flights"));
    // rebuild the sessions element (documents are per-request; no server state)
    await store.editFormula("sessions", "c0", "FlightDate", "[flight_date]");
    await store.editFormula("sessions", "c1", "Tail", "[tail_number]");
    await store.editFormula("sessions", "c2", "AirTime", "[air_time_minutes]");
    await store.editFormula("sessions", "c3", "WasCancelled", "[cancelled]");
    await store.regroupNewLevel("sessions", "c1");
    await store.editFormula("sessions", "c4", "PrevFlight", "Lag([FlightDate])");
    await store.editFormula("sessions", "c5", "GapDays", 'DateDiff("day", [PrevFlight], [FlightDate])');
    await store.editFormula(
      "sessions",
      "c6",
      "SessionStart",
      "FillDown(If(Coalesce([GapDays], 31) > 30, [FlightDate], Null))",
    );

    store.addTableElement("session_stats", { kind: "element-ref", reference: "sessions" });
    await store.editFormula("session_stats", "t1", "Plane", "[Tail]");
    await store.editFormula("session_stats", "t2", "Session", "[SessionStart]");
    // drag Plane to a new level, then Session onto that same level
    expect(await store.regroupNewLevel("session_stats", "t1")).toBeNull();
    expect(await store.regroupOntoLevel("session_stats", "t2", 1)).toBeNull();
    await store.editFormula("session_stats", "t3", "Flights", "Count()", 1);
    await store.editFormula("session_stats", "t4", "SessionAirTime", "Sum([AirTime])", 1);

    const view = store.view("session_stats");
    expect(view.error).toBeNull();
    const grid = view.grid!;

    const direct = await client.query({
      document: store.document,
      element_id: "session_stats",
      expansion: { limit: PAGE_SIZE, offset: 0 },
      controls: {},
    });
    expect(grid.queryId).toBe(direct.query_id);
    expect(grid.rows.slice(0, direct.rows.length)).toEqual(direct.rows);

    // --- collapse the base level: grid cardinality becomes the session level
    await store.toggleCollapsed("session_stats", 0);
    const collapsed = store.view("session_stats").grid!;
    const directCollapsed = await client.query({
      document: store.document,
      element_id: "session_stats",
      expansion: { ...store.view("session_stats").expansion, limit: PAGE_SIZE, offset: 0 },
      controls: {},
    });
    expect(collapsed.queryId).toBe(directCollapsed.query_id);
    expect(collapsed.totalRows).toBe(directCollapsed.total_rows);
    expect(collapsed.totalRows).toBeLessThan(FLIGHTS.length);
    const flights = col(collapsed, "Flights").filter((v) => v !== null) as number[];
    expect(flights.reduce((a, b) => a + b, 0)).toBe(FLIGHTS.length);
  }, 120_000);

  it("undo re-serves from the client cache with zero network calls", async () => {
    const client = newClient();
    const store = new WorkbookStore(client, tableDocument("steer3", "t1", "flights"));
    await store.editFormula("t1", "c1", "Tail", "[tail_number]");
    const before = store.view("t1").grid!;
    await store.editFormula("t1", "c2", "AirTime", "[air_time_minutes]");
    expect(store.view("t1").grid!.queryId).not.toBe(before.queryId);

    const callsBefore = networkCalls;
    await store.undo("t1");
    expect(networkCalls).toBe(callsBefore); // zero new requests
    const restored = store.view("t1").grid!;
    expect(restored.queryId).toBe(before.queryId);
    expect(restored.rows).toEqual(before.rows);
  }, 120_000);

  it("a burst of 5 rapid edits displays exactly the final result", async () => {
    const client = newClient();
    const store = new WorkbookStore(client, tableDocument("steer4", "t1", "flights"));
    await store.editFormula("t1", "c1", "AirTime", "[air_time_minutes]");

    const burst: Array<Promise<unknown>> = [];
    for (let i = 1; i <= 5; i++) {
      burst.push(store.editFormula("t1", "c2", "Scaled", `[AirTime] * ${i}`));
    }
    await Promise.all(burst);

    const grid = store.view("t1").grid!;
    const direct = await client.query({
      document: store.document, // the 5th edit's document
      element_id: "t1",
      expansion: { limit: PAGE_SIZE, offset: 0 },
      controls: {},
    });
    expect(grid.queryId).toBe(direct.query_id);
    expect(grid.rows.slice(0, direct.rows.length)).toEqual(direct.rows);
    expect(grid.pending).toBe(false);
    // the displayed Scaled column is AirTime * 5, not any earlier edit
    const scaled = col(grid, "Scaled");
    const air = col(grid, "AirTime");
    scaled.forEach((v, i) => expect(v).toBe((air[i] as number) * 5));
  }, 120_000);
});
