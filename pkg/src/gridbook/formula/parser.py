"""Recursive-descent parser for the formula language.

Precedence, loosest first: Or, And, comparisons, ``&``, additive,
multiplicative, unary (``Not`` / ``-``).
"""

from __future__ import annotations

from . import ast
from .catalog import lookup_function
from .errors import SyntaxFormulaError
from .lexer import Token, tokenize

_COMPARISONS = ("=", "<>", "<", "<=", ">", ">=")


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            raise SyntaxFormulaError(
                f"expected {want}, found {tok.text or 'end of input'!r}",
                tok.offset,
                expected=(want,),
            )
        return self.advance()

    # -- grammar ----------------------------------------------------------

    def parse(self) -> ast.Node:
        node = self.or_expr()
        tok = self.peek()
        if tok.kind != "eof":
            raise SyntaxFormulaError(
                f"unexpected trailing input {tok.text!r}", tok.offset
            )
        return node

    def or_expr(self) -> ast.Node:
        node = self.and_expr()
        while self._keyword("or"):
            tok = self.advance()
            node = ast.Binary("or", node, self.and_expr(), offset=tok.offset)
        return node

    def and_expr(self) -> ast.Node:
        node = self.cmp_expr()
        while self._keyword("and"):
            tok = self.advance()
            node = ast.Binary("and", node, self.cmp_expr(), offset=tok.offset)
        return node

    def cmp_expr(self) -> ast.Node:
        node = self.concat_expr()
        tok = self.peek()
        if tok.kind == "op" and tok.text in _COMPARISONS:
            self.advance()
            node = ast.Binary(tok.text, node, self.concat_expr(), offset=tok.offset)
        return node

    def concat_expr(self) -> ast.Node:
        node = self.add_expr()
        while self._op("&"):
            tok = self.advance()
            node = ast.Binary("&", node, self.add_expr(), offset=tok.offset)
        return node

    def add_expr(self) -> ast.Node:
        node = self.mul_expr()
        while self._op("+", "-"):
            tok = self.advance()
            node = ast.Binary(tok.text, node, self.mul_expr(), offset=tok.offset)
        return node

    def mul_expr(self) -> ast.Node:
        node = self.unary()
        while self._op("*", "/", "%"):
            tok = self.advance()
            node = ast.Binary(tok.text, node, self.unary(), offset=tok.offset)
        return node

    def unary(self) -> ast.Node:
        tok = self.peek()
        if tok.kind == "keyword" and tok.text == "not":
            self.advance()
            return ast.Unary("not", self.unary(), offset=tok.offset)
        if tok.kind == "op" and tok.text == "-":
            self.advance()
            return ast.Unary("-", self.unary(), offset=tok.offset)
        return self.primary()

    def primary(self) -> ast.Node:
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return ast.Literal(tok.value, offset=tok.offset)
        if tok.kind == "string":
            self.advance()
            return ast.Literal(tok.value, offset=tok.offset)
        if tok.kind == "keyword" and tok.text in ("true", "false", "null"):
            self.advance()
            value = {"true": True, "false": False, "null": None}[tok.text]
            return ast.Literal(value, offset=tok.offset)
        if tok.kind == "ref":
            self.advance()
            return self._make_ref(tok)
        if tok.kind == "ident":
            return self.call()
        if tok.kind == "lparen":
            self.advance()
            node = self.or_expr()
            self.expect("rparen")
            return node
        raise SyntaxFormulaError(
            f"expected an expression, found {tok.text or 'end of input'!r}",
            tok.offset,
            expected=("expression",),
        )

    def call(self) -> ast.Node:
        name_tok = self.expect("ident")
        self.expect("lparen")
        args: list[ast.Node] = []
        if self.peek().kind != "rparen":
            args.append(self.or_expr())
            while self.peek().kind == "comma":
                self.advance()
                args.append(self.or_expr())
        self.expect("rparen")
        sig = lookup_function(name_tok.text)
        canonical = sig.name if sig else name_tok.text
        if canonical in ("Lookup", "Rollup"):
            return self._make_join(canonical, args, name_tok)
        return ast.Call(canonical, args, offset=name_tok.offset)

    def _make_join(self, name: str, args: list[ast.Node], tok: Token) -> ast.Node:
        if len(args) < 3 or len(args) % 2 == 0:
            raise SyntaxFormulaError(
                f"{name} expects a target expression followed by key pairs",
                tok.offset,
            )
        pairs: list[ast.KeyPair] = []
        for i in range(1, len(args), 2):
            remote = args[i + 1]
            if not isinstance(remote, ast.PathRef):
                raise SyntaxFormulaError(
                    f"{name} key pair target must be an [Element/Column] reference",
                    remote.offset,
                )
            pairs.append(ast.KeyPair(local=args[i], remote=remote))
        cls = ast.Lookup if name == "Lookup" else ast.Rollup
        return cls(target=args[0], pairs=pairs, offset=tok.offset)

    @staticmethod
    def _make_ref(tok: Token) -> ast.Node:
        name = str(tok.value)
        if "/" in name:
            element, _, column = name.partition("/")
            return ast.PathRef(element.strip(), column.strip(), offset=tok.offset)
        return ast.Ref(name, offset=tok.offset)

    # -- helpers ----------------------------------------------------------

    def _keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "keyword" and tok.text == word

    def _op(self, *ops: str) -> bool:
        tok = self.peek()
        return tok.kind == "op" and tok.text in ops


def parse_formula(source: str) -> ast.Node:
    """Parse formula text to an untyped expression tree.

    Raises SyntaxFormulaError with the offending offset on malformed input.
    """
    return _Parser(tokenize(source)).parse()
