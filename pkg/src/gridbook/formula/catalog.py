"""Function catalog: canonical names, categories, and signatures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from ..values import DATE_UNITS, ValueType
from . import ast
from .errors import ArityError, TypeMismatchError

SINGLE_ROW = "single-row"
AGGREGATE = "aggregate"
WINDOW = "window"
JOIN = "join"

_ORDERABLE = (
    ValueType.NUMBER,
    ValueType.TEXT,
    ValueType.DATE,
    ValueType.LOGICAL,
)


@dataclass
class FunctionSig:
    name: str
    category: str
    min_args: int
    max_args: Optional[int]  # None = variadic
    typer: Callable[[ast.Call, list[ValueType]], ValueType]


def _require(cond: bool, node: ast.Node, msg: str) -> None:
    if not cond:
        raise TypeMismatchError(msg, node.offset)


def _arg(node: ast.Call, i: int) -> ast.Node:
    return node.args[i]


def _same(node: ast.Call, types: list[ValueType], what: str) -> ValueType:
    first = types[0]
    for t in types[1:]:
        _require(t == first, node, f"{what} arguments must share one type")
    return first


def _number_only(node: ast.Call, types: list[ValueType]) -> ValueType:
    for i, t in enumerate(types):
        _require(
            t is ValueType.NUMBER,
            node.args[i],
            f"{node.name} expects Number arguments, got {t}",
        )
    return ValueType.NUMBER


def _type_if(node: ast.Call, types: list[ValueType]) -> ValueType:
    _require(
        types[0] is ValueType.LOGICAL,
        node.args[0],
        "If condition must be Logical",
    )
    return _same(node, types[1:], "If branch")


def _type_coalesce(node: ast.Call, types: list[ValueType]) -> ValueType:
    return _same(node, types, "Coalesce")


def _type_round(node: ast.Call, types: list[ValueType]) -> ValueType:
    return _number_only(node, types)


def _type_concat(node: ast.Call, types: list[ValueType]) -> ValueType:
    for i, t in enumerate(types):
        _require(
            t is ValueType.TEXT,
            node.args[i],
            f"Concat expects Text arguments, got {t}",
        )
    return ValueType.TEXT


def _type_text1(node: ast.Call, types: list[ValueType]) -> ValueType:
    _require(types[0] is ValueType.TEXT, node.args[0], f"{node.name} expects Text")
    return ValueType.TEXT


def _unit_literal(node: ast.Call) -> str:
    unit = node.args[0]
    _require(
        isinstance(unit, ast.Literal) and isinstance(unit.value, str),
        unit,
        f"{node.name} unit must be a text literal",
    )
    u = unit.value.lower()  # type: ignore[union-attr]
    _require(u in DATE_UNITS, unit, f"unknown date unit {unit.value!r}")
    return u


def _type_date_trunc(node: ast.Call, types: list[ValueType]) -> ValueType:
    _unit_literal(node)
    _require(types[1] is ValueType.DATE, node.args[1], "DateTrunc expects a Date")
    return ValueType.DATE


def _type_date_diff(node: ast.Call, types: list[ValueType]) -> ValueType:
    _unit_literal(node)
    for i in (1, 2):
        _require(types[i] is ValueType.DATE, node.args[i], "DateDiff expects Dates")
    return ValueType.NUMBER


def _type_date_part(node: ast.Call, types: list[ValueType]) -> ValueType:
    _require(types[0] is ValueType.DATE, node.args[0], f"{node.name} expects a Date")
    return ValueType.NUMBER


def _type_orderable(node: ast.Call, types: list[ValueType]) -> ValueType:
    _require(
        types[0] in _ORDERABLE,
        node.args[0],
        f"{node.name} argument must be orderable, got {types[0]}",
    )
    return types[0]


def _type_count(node: ast.Call, types: list[ValueType]) -> ValueType:
    return ValueType.NUMBER


def _type_count_if(node: ast.Call, types: list[ValueType]) -> ValueType:
    _require(
        types[0] is ValueType.LOGICAL, node.args[0], "CountIf expects a Logical"
    )
    return ValueType.NUMBER


def _type_identity(node: ast.Call, types: list[ValueType]) -> ValueType:
    return types[0]


def _positive_int_literal(node: ast.Call, i: int, what: str) -> int:
    arg = node.args[i]
    _require(
        isinstance(arg, ast.Literal)
        and isinstance(arg.value, int)
        and not isinstance(arg.value, bool)
        and arg.value > 0,
        arg,
        f"{what} must be a positive integer literal",
    )
    return arg.value  # type: ignore[return-value]


def _type_offset_window(node: ast.Call, types: list[ValueType]) -> ValueType:
    if len(node.args) == 2:
        _positive_int_literal(node, 1, f"{node.name} offset")
    return types[0]


def _type_moving_average(node: ast.Call, types: list[ValueType]) -> ValueType:
    _require(
        types[0] is ValueType.NUMBER, node.args[0], "MovingAverage expects Number"
    )
    _positive_int_literal(node, 1, "MovingAverage window size")
    return ValueType.NUMBER


def _type_cumulative_sum(node: ast.Call, types: list[ValueType]) -> ValueType:
    _require(
        types[0] is ValueType.NUMBER, node.args[0], "CumulativeSum expects Number"
    )
    return ValueType.NUMBER


def _type_rank(node: ast.Call, types: list[ValueType]) -> ValueType:
    return ValueType.NUMBER


_SIGS = [
    FunctionSig("If", SINGLE_ROW, 3, 3, _type_if),
    FunctionSig("Coalesce", SINGLE_ROW, 1, None, _type_coalesce),
    FunctionSig("Abs", SINGLE_ROW, 1, 1, _number_only),
    FunctionSig("Round", SINGLE_ROW, 1, 2, _type_round),
    FunctionSig("Concat", SINGLE_ROW, 1, None, _type_concat),
    FunctionSig("Lower", SINGLE_ROW, 1, 1, _type_text1),
    FunctionSig("Upper", SINGLE_ROW, 1, 1, _type_text1),
    FunctionSig("DateTrunc", SINGLE_ROW, 2, 2, _type_date_trunc),
    FunctionSig("DateDiff", SINGLE_ROW, 3, 3, _type_date_diff),
    FunctionSig("Year", SINGLE_ROW, 1, 1, _type_date_part),
    FunctionSig("Month", SINGLE_ROW, 1, 1, _type_date_part),
    FunctionSig("Sum", AGGREGATE, 1, 1, _number_only),
    FunctionSig("Avg", AGGREGATE, 1, 1, _number_only),
    FunctionSig("Min", AGGREGATE, 1, 1, _type_orderable),
    FunctionSig("Max", AGGREGATE, 1, 1, _type_orderable),
    FunctionSig("Count", AGGREGATE, 0, 1, _type_count),
    FunctionSig("CountIf", AGGREGATE, 1, 1, _type_count_if),
    FunctionSig("CountDistinct", AGGREGATE, 1, 1, _type_count),
    FunctionSig("Attr", AGGREGATE, 1, 1, _type_identity),
    FunctionSig("Lag", WINDOW, 1, 2, _type_offset_window),
    FunctionSig("Lead", WINDOW, 1, 2, _type_offset_window),
    FunctionSig("Rank", WINDOW, 0, 0, _type_rank),
    FunctionSig("FillDown", WINDOW, 1, 1, _type_identity),
    FunctionSig("MovingAverage", WINDOW, 2, 2, _type_moving_average),
    FunctionSig("CumulativeSum", WINDOW, 1, 1, _type_cumulative_sum),
    FunctionSig("Lookup", JOIN, 3, None, _type_identity),
    FunctionSig("Rollup", JOIN, 3, None, _type_identity),
]

CATALOG: dict[str, FunctionSig] = {sig.name.lower(): sig for sig in _SIGS}


def lookup_function(name: str) -> Optional[FunctionSig]:
    return CATALOG.get(name.lower())


def check_arity(sig: FunctionSig, node: ast.Call) -> None:
    n = len(node.args)
    if n < sig.min_args or (sig.max_args is not None and n > sig.max_args):
        if sig.max_args is None:
            want = f"at least {sig.min_args}"
        elif sig.min_args == sig.max_args:
            want = str(sig.min_args)
        else:
            want = f"{sig.min_args}..{sig.max_args}"
        raise ArityError(
            f"{sig.name} expects {want} argument(s), got {n}", node.offset
        )
