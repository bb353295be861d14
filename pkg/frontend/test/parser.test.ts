import { describe, expect, it } from "vitest";
import { checkFormula } from "../src/formula/parser.js";

function ok(src: string) {
  const r = checkFormula(src);
  expect(r, `${src} should parse`).toEqual({ ok: true });
}

function bad(src: string): { message: string; offset: number } {
  const r = checkFormula(src);
  expect(r.ok, `${src} should be rejected`).toBe(false);
  if (r.ok) throw new Error("unreachable");
  return r.error;
}

describe("formula syntax checker", () => {
  it("accepts the grammar's shapes", () => {
    ok("1 + 2 * 3");
    ok("-[Amt] / 100");
    ok('"he said ""hi""" & [Name]');
    ok("[a] > 1 and not ([b] <= 2 or [c] <> 3)");
    ok("[col with ]] bracket]");
    ok("Sum([Amt])");
    ok("Count()");
    ok("If(Coalesce([GapDays], 31) > 30, [FlightDate], Null)");
    ok("CountIf([Cancelled]) / Count()");
    ok("Lookup([dim/Total], [R], [dim/Region])");
    ok("Rollup(Min([dim/F4]), [F1], [dim/F1], [F1], [dim/BK1])");
    ok("1.5e-3 + .25 + 2e10");
    ok("true and FALSE or Null = null");
  });

  it("rejects malformed input with an offset", () => {
    const e = bad("Sum(");
    expect(e.message).toMatch(/end of formula|\)/);

    expect(bad("").message).toMatch(/empty/);
    expect(bad("1 +").message).toMatch(/end of formula/);
    expect(bad("(1 + 2").message).toMatch(/'\)'/);
    expect(bad("[unclosed").message).toMatch(/unterminated reference/);
    expect(bad('"unclosed').message).toMatch(/unterminated string/);
    expect(bad("a b").message).toMatch(/after expression|expected '\('/);
    expect(bad("1 ? 2").message).toMatch(/unexpected character/);
    expect(bad("1e+").message).toMatch(/exponent/);
  });

  it("rejects chained comparisons", () => {
    const e = bad("[a] = [b] = [c]");
    expect(e.message).toMatch(/chain/);
    expect(e.offset).toBe("[a] = [b] ".length);
  });

  it("enforces Lookup/Rollup arity shape", () => {
    expect(bad("Lookup([dim/Total])").message).toMatch(/key pairs/);
    expect(bad("Lookup([dim/Total], [R])").message).toMatch(/key pairs/);
    expect(bad("Rollup([dim/T], [a], [dim/b], [c])").message).toMatch(/key pairs/);
    ok("lookup([dim/Total], [R], [dim/Region])"); // case-insensitive
  });

  it("reports offsets into the source text", () => {
    const e = bad("1 + )");
    expect(e.offset).toBe(4);
  });
});
