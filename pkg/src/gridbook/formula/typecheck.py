"""Type checking, classification, and reference extraction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

from ..values import ValueType
from . import ast
from .catalog import (
    AGGREGATE,
    JOIN,
    SINGLE_ROW,
    WINDOW,
    check_arity,
    lookup_function,
)
from .errors import (
    MisplacedReferenceError,
    TypeMismatchError,
    UnknownFunctionError,
    UnknownReferenceError,
)

# Local schema: column display name -> (type, resident level index).
Schema = Mapping[str, tuple[ValueType, int]]
# Remote schemas: element name -> column name -> type.
RemoteSchemas = Mapping[str, Mapping[str, ValueType]]

_ORDERABLE = (
    ValueType.NUMBER,
    ValueType.TEXT,
    ValueType.DATE,
    ValueType.LOGICAL,
)


def _unify(a: Optional[ValueType], b: Optional[ValueType], node: ast.Node,
           context: str) -> Optional[ValueType]:
    """Null literals are polymorphic: their type is adopted from context."""
    if a is None:
        return b
    if b is None:
        return a
    if a != b:
        raise TypeMismatchError(f"{context}: {a} vs {b}", node.offset)
    return a


def _adopt(node: ast.Node, vtype: Optional[ValueType]) -> None:
    if node.vtype is None and vtype is not None:
        node.vtype = vtype
        if isinstance(node, ast.Call) and node.name == "Coalesce":
            for arg in node.args:
                _adopt(arg, vtype)
        if isinstance(node, ast.Call) and node.name == "If":
            for arg in node.args[1:]:
                _adopt(arg, vtype)


class _Checker:
    def __init__(self, schema: Schema, controls: Mapping[str, ValueType],
                 remote_schemas: Optional[RemoteSchemas]):
        self.schema = schema
        self.controls = controls
        self.remote_schemas = remote_schemas or {}

    def check(self, node: ast.Node, remote_element: str | None = None
              ) -> Optional[ValueType]:
        t = self._check(node, remote_element)
        node.vtype = t
        return t

    def _check(self, node: ast.Node, remote: str | None) -> Optional[ValueType]:
        if isinstance(node, ast.Literal):
            return self._literal_type(node)
        if isinstance(node, ast.Ref):
            if remote is not None:
                raise MisplacedReferenceError(
                    f"[{node.name}] is a local reference; only "
                    f"[{remote}/...] references are allowed here",
                    node.offset,
                )
            return self._resolve_ref(node)
        if isinstance(node, ast.PathRef):
            return self._resolve_path(node, remote)
        if isinstance(node, ast.Unary):
            return self._check_unary(node, remote)
        if isinstance(node, ast.Binary):
            return self._check_binary(node, remote)
        if isinstance(node, (ast.Lookup, ast.Rollup)):
            return self._check_join(node, remote)
        if isinstance(node, ast.Call):
            return self._check_call(node, remote)
        raise TypeError(f"unexpected node {node!r}")

    @staticmethod
    def _literal_type(node: ast.Literal) -> Optional[ValueType]:
        v = node.value
        if v is None:
            return None
        if isinstance(v, bool):
            return ValueType.LOGICAL
        if isinstance(v, (int, float)):
            return ValueType.NUMBER
        return ValueType.TEXT

    def _resolve_ref(self, node: ast.Ref) -> ValueType:
        if node.name in self.schema:
            vtype, level = self.schema[node.name]
            node.kind = "column"
            node.resident_level = level
            return vtype
        if node.name in self.controls:
            node.kind = "control"
            return self.controls[node.name]
        raise UnknownReferenceError(
            f"unknown column or control [{node.name}]", node.offset
        )

    def _resolve_path(self, node: ast.PathRef, remote: str | None) -> ValueType:
        if remote is None:
            raise MisplacedReferenceError(
                f"[{node.element}/{node.name}] is only valid inside "
                "Lookup or Rollup",
                node.offset,
            )
        if node.element != remote:
            raise MisplacedReferenceError(
                f"reference to [{node.element}/...] inside a join targeting "
                f"[{remote}/...]",
                node.offset,
            )
        columns = self.remote_schemas.get(node.element)
        if columns is None:
            raise UnknownReferenceError(
                f"unknown element [{node.element}]", node.offset
            )
        if node.name not in columns:
            raise UnknownReferenceError(
                f"element [{node.element}] has no column [{node.name}]",
                node.offset,
            )
        return columns[node.name]

    def _check_unary(self, node: ast.Unary, remote: str | None
                     ) -> Optional[ValueType]:
        t = self.check(node.operand, remote)
        if node.op == "-":
            if t is not None and t is not ValueType.NUMBER:
                raise TypeMismatchError(f"unary - expects Number, got {t}",
                                        node.offset)
            _adopt(node.operand, ValueType.NUMBER)
            return ValueType.NUMBER
        if t is not None and t is not ValueType.LOGICAL:
            raise TypeMismatchError(f"Not expects Logical, got {t}", node.offset)
        _adopt(node.operand, ValueType.LOGICAL)
        return ValueType.LOGICAL

    def _check_binary(self, node: ast.Binary, remote: str | None
                      ) -> Optional[ValueType]:
        lt = self.check(node.left, remote)
        rt = self.check(node.right, remote)
        op = node.op
        if op in ("+", "-", "*", "/", "%"):
            for side, t in ((node.left, lt), (node.right, rt)):
                if t is not None and t is not ValueType.NUMBER:
                    raise TypeMismatchError(
                        f"operator {op} expects Number, got {t}", side.offset
                    )
                _adopt(side, ValueType.NUMBER)
            return ValueType.NUMBER
        if op == "&":
            for side, t in ((node.left, lt), (node.right, rt)):
                if t is not None and t is not ValueType.TEXT:
                    raise TypeMismatchError(
                        f"operator & expects Text, got {t}", side.offset
                    )
                _adopt(side, ValueType.TEXT)
            return ValueType.TEXT
        if op in ("and", "or"):
            for side, t in ((node.left, lt), (node.right, rt)):
                if t is not None and t is not ValueType.LOGICAL:
                    raise TypeMismatchError(
                        f"{op.capitalize()} expects Logical, got {t}", side.offset
                    )
                _adopt(side, ValueType.LOGICAL)
            return ValueType.LOGICAL
        # comparisons
        common = _unify(lt, rt, node, f"operator {op}")
        if op not in ("=", "<>") and common is ValueType.JSON:
            raise TypeMismatchError("Json supports only = and <>", node.offset)
        _adopt(node.left, common)
        _adopt(node.right, common)
        return ValueType.LOGICAL

    def _check_call(self, node: ast.Call, remote: str | None
                    ) -> Optional[ValueType]:
        sig = lookup_function(node.name)
        if sig is None:
            raise UnknownFunctionError(f"unknown function {node.name}",
                                       node.offset)
        check_arity(sig, node)
        node.category = sig.category
        types: list[ValueType] = []
        for arg in node.args:
            t = self.check(arg, remote)
            types.append(t)  # type: ignore[arg-type]
        # Null-literal arguments adopt a concrete type where the signature
        # forces one: If/Coalesce branches unify against their typed
        # siblings; remaining polymorphic positions fall back to Number.
        if node.name in ("If", "Coalesce"):
            branch = slice(1, None) if node.name == "If" else slice(None)
            common: Optional[ValueType] = None
            for t in types[branch]:
                common = _unify(common, t, node, f"{node.name} branch")
            if common is not None:
                for i, arg in list(enumerate(node.args))[branch]:
                    if types[i] is None:
                        _adopt(arg, common)
                        types[i] = common
        for arg, t in zip(node.args, types):
            if t is None:
                _adopt(arg, ValueType.NUMBER)
        concrete = [t if t is not None else ValueType.NUMBER for t in types]
        return sig.typer(node, concrete)

    def _check_join(self, node: ast.Lookup | ast.Rollup, remote: str | None
                    ) -> ValueType:
        if remote is not None:
            raise MisplacedReferenceError(
                "Lookup/Rollup cannot be nested inside a join target",
                node.offset,
            )
        element = _join_target_element(node)
        target_type = self.check(node.target, remote_element=element)
        if isinstance(node, ast.Rollup):
            _require_aggregated_target(node)
        for pair in node.pairs:
            lt = self.check(pair.local, None)
            rt = self.check(pair.remote, remote_element=element)
            common = _unify(lt, rt, pair.local, "join key pair")
            _adopt(pair.local, common)
        if target_type is None:
            target_type = ValueType.NUMBER
            _adopt(node.target, target_type)
        return target_type


def _join_target_element(node: ast.Lookup | ast.Rollup) -> str:
    elements = {
        n.element
        for n in ast.walk(node.target)
        if isinstance(n, ast.PathRef)
    } | {p.remote.element for p in node.pairs}
    if not elements:
        raise MisplacedReferenceError(
            "Lookup/Rollup must reference a target element", node.offset
        )
    if len(elements) > 1:
        raise MisplacedReferenceError(
            "Lookup/Rollup must reference a single target element, got "
            + ", ".join(sorted(elements)),
            node.offset,
        )
    return elements.pop()


def _require_aggregated_target(node: ast.Rollup) -> None:
    """Every remote reference in a Rollup target must sit inside an
    aggregate call."""

    def scan(n: ast.Node, inside_aggregate: bool) -> None:
        if isinstance(n, ast.PathRef) and not inside_aggregate:
            raise TypeMismatchError(
                "Rollup target must aggregate its remote references",
                n.offset,
            )
        if isinstance(n, ast.Call):
            inner = inside_aggregate or n.category == AGGREGATE
            for a in n.args:
                scan(a, inner)
        elif isinstance(n, ast.Unary):
            scan(n.operand, inside_aggregate)
        elif isinstance(n, ast.Binary):
            scan(n.left, inside_aggregate)
            scan(n.right, inside_aggregate)

    scan(node.target, False)


def typecheck(node: ast.Node, schema: Schema,
              controls: Mapping[str, ValueType] | None = None,
              remote_schemas: Optional[RemoteSchemas] = None) -> ast.Node:
    """Annotate every node with its value type; raises FormulaError subtypes
    on unknown references, arity, or type mismatches."""
    checker = _Checker(schema, controls or {}, remote_schemas)
    t = checker.check(node)
    if t is None:
        _adopt(node, ValueType.NUMBER)
    return node


@dataclass
class Classification:
    uses_aggregate: bool = False
    uses_window: bool = False
    uses_join: bool = False
    aggregate_nesting: int = 0  # deepest aggregate-inside-aggregate chain


def classify(node: ast.Node) -> Classification:
    """Category summary of a typechecked tree.  Join targets are evaluated
    against the remote element and do not count toward local categories."""
    out = Classification()

    def scan(n: ast.Node, depth: int) -> None:
        if isinstance(n, (ast.Lookup, ast.Rollup)):
            out.uses_join = True
            for p in n.pairs:
                scan(p.local, depth)
            return
        if isinstance(n, ast.Call):
            d = depth
            if n.category == AGGREGATE:
                out.uses_aggregate = True
                d = depth + 1
                out.aggregate_nesting = max(out.aggregate_nesting, d)
            elif n.category == WINDOW:
                out.uses_window = True
            for a in n.args:
                scan(a, d)
            return
        if isinstance(n, ast.Unary):
            scan(n.operand, depth)
        elif isinstance(n, ast.Binary):
            scan(n.left, depth)
            scan(n.right, depth)

    scan(node, 0)
    return out


@dataclass
class References:
    columns: set[str] = field(default_factory=set)
    controls: set[str] = field(default_factory=set)
    elements: set[str] = field(default_factory=set)
    remote_columns: set[tuple[str, str]] = field(default_factory=set)


def extract_references(node: ast.Node) -> References:
    """Complete reference sets for dependency graphs and cache derivability.

    On an untyped tree every plain reference is reported as a column;
    after typecheck control references are split out.
    """
    out = References()
    for n in ast.walk(node):
        if isinstance(n, ast.Ref):
            if n.kind == "control":
                out.controls.add(n.name)
            else:
                out.columns.add(n.name)
        elif isinstance(n, ast.PathRef):
            out.elements.add(n.element)
            out.remote_columns.add((n.element, n.name))
    return out
