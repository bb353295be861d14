"""In-memory columnar tables and CSV interchange."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..values import Storage, ValueType, csv_to_storage, storage_to_csv


@dataclass
class ColumnarTable:
    names: list[str] = field(default_factory=list)
    types: dict[str, ValueType] = field(default_factory=dict)
    columns: dict[str, list[Storage]] = field(default_factory=dict)

    @property
    def nrows(self) -> int:
        if not self.names:
            return 0
        return len(self.columns[self.names[0]])

    @classmethod
    def from_rows(cls, schema: list[tuple[str, ValueType]],
                  rows: Iterable[Iterable[Storage]]) -> "ColumnarTable":
        t = cls(names=[n for n, _ in schema], types=dict(schema),
                columns={n: [] for n, _ in schema})
        for row in rows:
            for name, value in zip(t.names, row):
                t.columns[name].append(value)
        return t

    def add_column(self, name: str, vtype: ValueType,
                   values: list[Storage]) -> None:
        self.names.append(name)
        self.types[name] = vtype
        self.columns[name] = values

    def row(self, i: int) -> tuple[Storage, ...]:
        return tuple(self.columns[n][i] for n in self.names)

    def rows(self) -> list[tuple[Storage, ...]]:
        return [self.row(i) for i in range(self.nrows)]

    def select(self, indices: list[int]) -> "ColumnarTable":
        return ColumnarTable(
            names=list(self.names),
            types=dict(self.types),
            columns={
                n: [col[i] for i in indices]
                for n, col in self.columns.items()
            },
        )

    def schema(self) -> list[tuple[str, ValueType]]:
        return [(n, self.types[n]) for n in self.names]


def write_csv(table: ColumnarTable, exclude: tuple[str, ...] = ()) -> str:
    """RFC-4180 text with a header row; empty cell encodes Null."""
    buf = io.StringIO()
    names = [n for n in table.names if n not in exclude]
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(names)
    for i in range(table.nrows):
        w.writerow(
            storage_to_csv(table.columns[n][i], table.types[n]) for n in names
        )
    return buf.getvalue()


def read_csv(text: str, schema: Optional[list[tuple[str, ValueType]]] = None
             ) -> ColumnarTable:
    """Parse CSV with a header row.  Without a schema, column types are
    inferred in Logical -> Number -> Date -> Text order."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return ColumnarTable()
    header = rows[0]
    body = [r + [""] * (len(header) - len(r)) for r in rows[1:]]
    if schema is None:
        schema = [
            (name, _infer_type([r[i] for r in body]))
            for i, name in enumerate(header)
        ]
    types = dict(schema)
    table = ColumnarTable(
        names=list(header),
        types={n: types.get(n, ValueType.TEXT) for n in header},
        columns={n: [] for n in header},
    )
    for r in body:
        for i, name in enumerate(header):
            table.columns[name].append(
                csv_to_storage(r[i], table.types[name])
            )
    return table


_LOGICAL_WORDS = {"true", "false", "t", "f", "yes", "no", "0", "1", ""}


def _infer_type(cells: list[str]) -> ValueType:
    nonempty = [c for c in cells if c != ""]
    if not nonempty:
        return ValueType.TEXT
    if all(c.strip().lower() in _LOGICAL_WORDS for c in cells):
        return ValueType.LOGICAL
    if all(_is_number(c) for c in nonempty):
        return ValueType.NUMBER
    from ..values import parse_date_text

    if all(parse_date_text(c) is not None for c in nonempty):
        return ValueType.DATE
    return ValueType.TEXT


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False
