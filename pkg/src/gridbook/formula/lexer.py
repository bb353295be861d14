"""Tokenizer for formula source text."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import SyntaxFormulaError

KEYWORDS = {"and", "or", "not", "true", "false", "null"}

_NUMBER = re.compile(r"\d+(\.\d*)?([eE][+-]?\d+)?|\.\d+")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_TWO_CHAR = ("<=", ">=", "<>", "!=")
_ONE_CHAR = "()+-*/%&=<>,"


@dataclass
class Token:
    kind: str  # number string ident ref op lparen rparen comma keyword eof
    text: str
    offset: int
    value: object = None


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "[":
            name, end = _scan_bracket(source, i)
            tokens.append(Token("ref", source[i:end], i, name))
            i = end
            continue
        if ch == '"':
            text, end = _scan_string(source, i)
            tokens.append(Token("string", source[i:end], i, text))
            i = end
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            m = _NUMBER.match(source, i)
            assert m is not None
            raw = m.group(0)
            value: int | float
            if "." in raw or "e" in raw or "E" in raw:
                value = float(raw)
            else:
                value = int(raw)
            tokens.append(Token("number", raw, i, value))
            i = m.end()
            continue
        m = _IDENT.match(source, i)
        if m:
            word = m.group(0)
            if word.lower() in KEYWORDS:
                tokens.append(Token("keyword", word.lower(), i))
            else:
                tokens.append(Token("ident", word, i))
            i = m.end()
            continue
        two = source[i : i + 2]
        if two in _TWO_CHAR:
            tokens.append(Token("op", "<>" if two == "!=" else two, i))
            i += 2
            continue
        if ch in _ONE_CHAR:
            kind = {"(": "lparen", ")": "rparen", ",": "comma"}.get(ch, "op")
            tokens.append(Token(kind, ch, i))
            i += 1
            continue
        raise SyntaxFormulaError(f"unexpected character {ch!r}", i)
    tokens.append(Token("eof", "", n))
    return tokens


def _scan_bracket(source: str, start: int) -> tuple[str, int]:
    """Bracket reference: any characters, ``]]`` escapes a literal ``]``."""
    out: list[str] = []
    i = start + 1
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "]":
            if i + 1 < n and source[i + 1] == "]":
                out.append("]")
                i += 2
                continue
            return "".join(out), i + 1
        out.append(ch)
        i += 1
    raise SyntaxFormulaError("unterminated column reference", start)


def _scan_string(source: str, start: int) -> tuple[str, int]:
    out: list[str] = []
    i = start + 1
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == '"':
            if i + 1 < n and source[i + 1] == '"':
                out.append('"')
                i += 2
                continue
            return "".join(out), i + 1
        out.append(ch)
        i += 1
    raise SyntaxFormulaError("unterminated string literal", start)
