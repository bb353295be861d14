/** Client-side, syntax-only formula parser.
 *
 * Mirrors the service grammar (docs/formula-grammar.ebnf) so the formula
 * bar can flag malformed input — unbalanced parens, dangling operators,
 * chained comparisons — before any request is sent.  It deliberately does
 * no name resolution or type checking; those need the document and the
 * warehouse and stay on the server.
 */

export interface ParseError {
  message: string;
  /** Character offset into the formula where the error was detected. */
  offset: number;
}

export type ParseOutcome = { ok: true } | { ok: false; error: ParseError };

interface Token {
  kind: "number" | "string" | "ident" | "ref" | "op" | "eof";
  text: string;
  offset: number;
}

const OPS = ["<=", ">=", "<>", "!=", "=", "<", ">", "&", "+", "-", "*", "/", "%", "(", ")", ","];
const KEYWORDS = new Set(["and", "or", "not", "true", "false", "null"]);

class Lexer {
  private pos = 0;
  constructor(private readonly src: string) {}

  all(): Token[] {
    const out: Token[] = [];
    for (;;) {
      const tok = this.next();
      out.push(tok);
      if (tok.kind === "eof") return out;
    }
  }

  private fail(message: string, offset: number): never {
    throw { message, offset } satisfies ParseError;
  }

  private next(): Token {
    const s = this.src;
    while (this.pos < s.length && /\s/.test(s[this.pos])) this.pos++;
    const start = this.pos;
    if (this.pos >= s.length) return { kind: "eof", text: "", offset: start };
    const ch = s[this.pos];

    if (ch === "[") {
      this.pos++;
      let text = "";
      for (;;) {
        if (this.pos >= s.length) this.fail("unterminated reference", start);
        const c = s[this.pos];
        if (c === "]") {
          if (s[this.pos + 1] === "]") {
            text += "]";
            this.pos += 2;
            continue;
          }
          this.pos++;
          if (text.length === 0) this.fail("empty reference", start);
          return { kind: "ref", text, offset: start };
        }
        text += c;
        this.pos++;
      }
    }

    if (ch === '"') {
      this.pos++;
      for (;;) {
        if (this.pos >= s.length) this.fail("unterminated string", start);
        const c = s[this.pos];
        if (c === '"') {
          if (s[this.pos + 1] === '"') {
            this.pos += 2;
            continue;
          }
          this.pos++;
          return { kind: "string", text: s.slice(start, this.pos), offset: start };
        }
        this.pos++;
      }
    }

    if (/[0-9]/.test(ch) || (ch === "." && /[0-9]/.test(s[this.pos + 1] ?? ""))) {
      let i = this.pos;
      while (i < s.length && /[0-9]/.test(s[i])) i++;
      if (s[i] === ".") {
        i++;
        while (i < s.length && /[0-9]/.test(s[i])) i++;
      }
      if (s[i] === "e" || s[i] === "E") {
        let j = i + 1;
        if (s[j] === "+" || s[j] === "-") j++;
        if (!/[0-9]/.test(s[j] ?? "")) this.fail("malformed number exponent", start);
        while (j < s.length && /[0-9]/.test(s[j])) j++;
        i = j;
      }
      this.pos = i;
      return { kind: "number", text: s.slice(start, i), offset: start };
    }

    if (/[A-Za-z_]/.test(ch)) {
      let i = this.pos;
      while (i < s.length && /[A-Za-z0-9_]/.test(s[i])) i++;
      this.pos = i;
      return { kind: "ident", text: s.slice(start, i), offset: start };
    }

    for (const op of OPS) {
      if (s.startsWith(op, this.pos)) {
        this.pos += op.length;
        return { kind: "op", text: op, offset: start };
      }
    }
    this.fail(`unexpected character ${JSON.stringify(ch)}`, start);
  }
}

class Parser {
  private idx = 0;
  constructor(private readonly tokens: Token[]) {}

  private fail(message: string, offset: number): never {
    throw { message, offset } satisfies ParseError;
  }

  private peek(): Token {
    return this.tokens[this.idx];
  }

  private take(): Token {
    return this.tokens[this.idx++];
  }

  private isKeyword(tok: Token, word: string): boolean {
    return tok.kind === "ident" && tok.text.toLowerCase() === word;
  }

  private isOp(tok: Token, text: string): boolean {
    return tok.kind === "op" && tok.text === text;
  }

  parseFormula(): void {
    this.orExpr();
    const tok = this.peek();
    if (tok.kind !== "eof") {
      this.fail(`unexpected ${tok.text ? JSON.stringify(tok.text) : "input"} after expression`, tok.offset);
    }
  }

  private orExpr(): void {
    this.andExpr();
    while (this.isKeyword(this.peek(), "or")) {
      this.take();
      this.andExpr();
    }
  }

  private andExpr(): void {
    this.cmpExpr();
    while (this.isKeyword(this.peek(), "and")) {
      this.take();
      this.cmpExpr();
    }
  }

  private cmpExpr(): void {
    this.concatExpr();
    const cmp = new Set(["=", "<>", "!=", "<", "<=", ">", ">="]);
    const tok = this.peek();
    if (tok.kind === "op" && cmp.has(tok.text)) {
      this.take();
      this.concatExpr();
      const again = this.peek();
      if (again.kind === "op" && cmp.has(again.text)) {
        this.fail("comparisons do not chain", again.offset);
      }
    }
  }

  private concatExpr(): void {
    this.addExpr();
    while (this.isOp(this.peek(), "&")) {
      this.take();
      this.addExpr();
    }
  }

  private addExpr(): void {
    this.mulExpr();
    while (this.isOp(this.peek(), "+") || this.isOp(this.peek(), "-")) {
      this.take();
      this.mulExpr();
    }
  }

  private mulExpr(): void {
    this.unary();
    while (
      this.isOp(this.peek(), "*") ||
      this.isOp(this.peek(), "/") ||
      this.isOp(this.peek(), "%")
    ) {
      this.take();
      this.unary();
    }
  }

  private unary(): void {
    const tok = this.peek();
    if (this.isKeyword(tok, "not") || this.isOp(tok, "-")) {
      this.take();
      this.unary();
      return;
    }
    this.primary();
  }

  private primary(): void {
    const tok = this.take();
    switch (tok.kind) {
      case "number":
      case "string":
      case "ref":
        return;
      case "ident": {
        const word = tok.text.toLowerCase();
        if (word === "true" || word === "false" || word === "null") return;
        if (KEYWORDS.has(word)) {
          this.fail(`keyword ${JSON.stringify(tok.text)} is not a value`, tok.offset);
        }
        this.call(tok);
        return;
      }
      case "op":
        if (tok.text === "(") {
          this.orExpr();
          const close = this.take();
          if (!this.isOp(close, ")")) {
            this.fail("expected ')'", close.offset);
          }
          return;
        }
        this.fail(`unexpected ${JSON.stringify(tok.text)}`, tok.offset);
        break;
      case "eof":
        this.fail("unexpected end of formula", tok.offset);
    }
  }

  private call(name: Token): void {
    const open = this.take();
    if (!this.isOp(open, "(")) {
      this.fail(`expected '(' after function name ${JSON.stringify(name.text)}`, open.offset);
    }
    if (this.isOp(this.peek(), ")")) {
      this.take();
      return;
    }
    let args = 1;
    this.orExpr();
    while (this.isOp(this.peek(), ",")) {
      this.take();
      this.orExpr();
      args++;
    }
    const close = this.take();
    if (!this.isOp(close, ")")) {
      this.fail(
        close.kind === "eof" ? "unterminated call: expected ')'" : "expected ')' or ','",
        close.offset,
      );
    }
    const shaped = name.text.toLowerCase();
    if ((shaped === "lookup" || shaped === "rollup") && (args < 3 || args % 2 === 0)) {
      this.fail(
        `${name.text} takes a target plus key pairs: odd argument count of at least 3`,
        name.offset,
      );
    }
  }
}

/** Check syntax only; never throws. */
export function checkFormula(source: string): ParseOutcome {
  if (source.trim() === "") {
    return { ok: false, error: { message: "empty formula", offset: 0 } };
  }
  try {
    new Parser(new Lexer(source).all()).parseFormula();
    return { ok: true };
  } catch (err) {
    const e = err as ParseError;
    if (typeof e?.message === "string" && typeof e?.offset === "number") {
      return { ok: false, error: e };
    }
    throw err;
  }
}
