"""Expression tree for the formula language."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..values import ValueType, cast_text


class Node:
    """Base class; ``vtype`` is filled in by the typechecker."""

    offset: int
    vtype: Optional[ValueType]


@dataclass
class Literal(Node):
    value: None | bool | int | float | str
    offset: int = 0
    vtype: Optional[ValueType] = None

    def __str__(self) -> str:
        v = self.value
        if v is None:
            return "Null"
        if isinstance(v, bool):
            return "True" if v else "False"
        if isinstance(v, str):
            return '"%s"' % v.replace('"', '""')
        return cast_text(v) if isinstance(v, float) else str(v)


def _bracket(name: str) -> str:
    return "[%s]" % name.replace("]", "]]")


@dataclass
class Ref(Node):
    """Unresolved bracket reference; typecheck narrows it to a column or
    control reference."""

    name: str
    offset: int = 0
    vtype: Optional[ValueType] = None
    kind: str = "unresolved"  # "column" | "control" after typecheck
    resident_level: Optional[int] = None

    def __str__(self) -> str:
        return _bracket(self.name)


@dataclass
class PathRef(Node):
    """Cross-element reference ``[Element/Column]``; only valid inside
    Lookup/Rollup arguments."""

    element: str
    name: str
    offset: int = 0
    vtype: Optional[ValueType] = None

    def __str__(self) -> str:
        return _bracket(f"{self.element}/{self.name}")


@dataclass
class Unary(Node):
    op: str  # "-" | "not"
    operand: Node
    offset: int = 0
    vtype: Optional[ValueType] = None

    def __str__(self) -> str:
        if self.op == "not":
            return f"Not {_paren(self.operand)}"
        return f"-{_paren(self.operand)}"


@dataclass
class Binary(Node):
    op: str  # + - * / % & = <> < <= > >= and or
    left: Node
    right: Node
    offset: int = 0
    vtype: Optional[ValueType] = None

    def __str__(self) -> str:
        op = {"and": "And", "or": "Or"}.get(self.op, self.op)
        return f"{_paren(self.left)} {op} {_paren(self.right)}"


@dataclass
class Call(Node):
    name: str  # canonical catalog casing after parse
    args: list[Node] = field(default_factory=list)
    offset: int = 0
    vtype: Optional[ValueType] = None
    category: Optional[str] = None  # set by typecheck

    def __str__(self) -> str:
        return "%s(%s)" % (self.name, ", ".join(str(a) for a in self.args))


@dataclass
class KeyPair:
    local: Node
    remote: PathRef


@dataclass
class Lookup(Node):
    target: Node  # expression over PathRefs
    pairs: list[KeyPair]
    offset: int = 0
    vtype: Optional[ValueType] = None

    def __str__(self) -> str:
        parts = [str(self.target)]
        for p in self.pairs:
            parts.append(str(p.local))
            parts.append(str(p.remote))
        return "Lookup(%s)" % ", ".join(parts)


@dataclass
class Rollup(Node):
    target: Node  # aggregate expression over PathRefs
    pairs: list[KeyPair]
    offset: int = 0
    vtype: Optional[ValueType] = None

    def __str__(self) -> str:
        parts = [str(self.target)]
        for p in self.pairs:
            parts.append(str(p.local))
            parts.append(str(p.remote))
        return "Rollup(%s)" % ", ".join(parts)


def _paren(node: Node) -> str:
    if isinstance(node, (Binary, Unary)):
        return f"({node})"
    return str(node)


def walk(node: Node):
    """Yield every node in the tree, preorder."""
    yield node
    if isinstance(node, Unary):
        yield from walk(node.operand)
    elif isinstance(node, Binary):
        yield from walk(node.left)
        yield from walk(node.right)
    elif isinstance(node, Call):
        for a in node.args:
            yield from walk(a)
    elif isinstance(node, (Lookup, Rollup)):
        yield from walk(node.target)
        for p in node.pairs:
            yield from walk(p.local)
            yield from walk(p.remote)
