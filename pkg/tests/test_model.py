"""Document model: JSON round trips and validation."""

from __future__ import annotations

import json

import pytest

from conftest import document, grouped_sales_element, table_element
from gridbook import fuzz as fz
from gridbook.model import (
    ColumnSpec,
    DocumentDecodeError,
    FilterSpec,
    LevelSpec,
    decode_document,
    document_from_json,
    document_to_json,
    encode_document,
    validate_document,
)


def errors(doc):
    return [i for i in validate_document(doc) if i.severity == "error"]


def test_round_trip_simple():
    doc = document(grouped_sales_element())
    again = document_from_json(document_to_json(doc))
    assert document_to_json(again) == document_to_json(doc)


def test_encode_decode_bytes():
    doc = document(grouped_sales_element())
    blob = encode_document(doc)
    assert isinstance(blob, bytes)
    again = decode_document(blob)
    assert document_to_json(again) == document_to_json(doc)


@pytest.mark.parametrize("seed", range(40))
def test_round_trip_fuzzed_documents(seed):
    """Round-tripping any generated document is the identity on its JSON."""
    fw = fz.build_workbook(seed)
    try:
        encoded = document_to_json(fw.doc)
        again = document_from_json(json.loads(json.dumps(encoded)))
        assert document_to_json(again) == encoded
    finally:
        fw.warehouse.close()


def test_decode_rejects_unknown_kinds():
    with pytest.raises(DocumentDecodeError):
        document_from_json({"doc_id": "d", "pages": [{
            "page_id": "p", "elements": [{
                "element_id": "e", "kind": "chart",
            }],
        }]})
    with pytest.raises(DocumentDecodeError):
        document_from_json({"doc_id": "d", "pages": [{
            "page_id": "p", "elements": [{
                "element_id": "e", "kind": "table",
                "source": {"kind": "spreadsheet", "reference": "x"},
            }],
        }]})


def test_validate_duplicate_column_names_casefold():
    el = table_element(columns=[
        ColumnSpec("c1", "Total", "1"),
        ColumnSpec("c2", "TOTAL", "2"),
    ])
    issues = errors(document(el))
    assert issues and any("total" in i.message.lower() or
                          "TOTAL" in i.message for i in issues)


def test_validate_unknown_key_column():
    el = table_element(
        levels=[LevelSpec(), LevelSpec(keys=["missing"]), LevelSpec()],
        columns=[ColumnSpec("c1", "Region", "[region]")],
    )
    assert errors(document(el))


def test_validate_resident_level_out_of_range():
    el = table_element(columns=[
        ColumnSpec("c1", "X", "1", resident_level=5),
    ])
    assert errors(document(el))


def test_validate_bad_formula_syntax():
    el = table_element(columns=[ColumnSpec("c1", "X", "Sum(")])
    assert errors(document(el))


def test_validate_duplicate_element_ids():
    doc = document(grouped_sales_element("t1"), grouped_sales_element("t1"))
    assert errors(doc)


def test_validate_cyclic_element_refs():
    a = table_element("a", source="b", source_kind="element-ref",
                      columns=[ColumnSpec("c1", "X", "1")])
    b = table_element("b", source="a", source_kind="element-ref",
                      columns=[ColumnSpec("c1", "X", "1")])
    assert errors(document(a, b))


def test_validate_filter_target():
    el = table_element(
        columns=[ColumnSpec("c1", "Region", "[region]")],
        filters=[FilterSpec(target="nope", kind="include-list",
                            values=["east"])],
    )
    assert errors(document(el))


def test_valid_document_has_no_errors():
    assert errors(document(grouped_sales_element())) == []
