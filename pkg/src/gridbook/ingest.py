"""CSV ingestion with column type inference.

Shared by the HTTP upload endpoint and the CLI.  Types are inferred per
column over the non-empty cells, trying Logical, then Number, then Date,
and falling back to Text; empty columns default to Text.
"""

from __future__ import annotations

import csv
import io

from .values import ValueType, csv_to_storage, parse_date_text


class CsvFormatError(ValueError):
    pass


def parse_csv(text: str) -> tuple[list[tuple[str, ValueType]], list[tuple]]:
    """Parse CSV text (header row required) into a typed schema and
    storage-encoded rows."""
    if not text.strip():
        raise CsvFormatError("empty CSV")
    try:
        records = list(csv.reader(io.StringIO(text)))
    except csv.Error as exc:
        raise CsvFormatError(f"malformed CSV: {exc}")
    header, *rows = records
    if not header or any(not h.strip() for h in header):
        raise CsvFormatError("CSV header row is missing or blank")
    width = len(header)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise CsvFormatError(
                f"row {i + 2} has {len(row)} fields, expected {width}"
            )
    types = [
        infer_column_type([row[j] for row in rows]) for j in range(width)
    ]
    schema = list(zip([h.strip() for h in header], types))
    try:
        stored = [
            tuple(csv_to_storage(row[j], types[j]) for j in range(width))
            for row in rows
        ]
    except ValueError as exc:
        raise CsvFormatError(f"CSV value error: {exc}")
    return schema, stored


def infer_column_type(values: list[str]) -> ValueType:
    present = [v for v in values if v != ""]
    if not present:
        return ValueType.TEXT
    if all(v.strip().lower() in ("true", "false") for v in present):
        return ValueType.LOGICAL
    if all(_is_number(v) for v in present):
        return ValueType.NUMBER
    if all(parse_date_text(v) is not None for v in present):
        return ValueType.DATE
    return ValueType.TEXT


def _is_number(text: str) -> bool:
    try:
        float(text.strip())
    except ValueError:
        return False
    return text.strip().lower() not in ("nan", "inf", "-inf", "+inf",
                                        "infinity", "-infinity")


def safe_table_name(name: str) -> str:
    cleaned = "".join(
        ch if ch.isalnum() or ch == "_" else "_" for ch in name.strip()
    )
    return cleaned.strip("_")[:60]
