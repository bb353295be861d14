"""Service pipeline and HTTP layer."""

from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from gridbook.model import (
    ColumnSpec,
    ControlSpec,
    Element,
    LevelSpec,
    Page,
    SourceSpec,
    TableElementSpec,
    WorkbookDocument,
    document_to_json,
)
from gridbook.service import GridbookService, ServiceConfig, ServiceError
from gridbook.service.app import create_app
from gridbook.values import ValueType

SALES_SCHEMA = [("region", ValueType.TEXT), ("amount", ValueType.NUMBER)]
SALES_ROWS = [("east", 10), ("west", 5), ("east", 7), (None, 3)]


def sales_document(doc_id="d1"):
    return document_to_json(WorkbookDocument(doc_id, pages=[Page("p1", [
        Element("t1", "table", TableElementSpec(
            source=SourceSpec("warehouse-table", "sales"),
            levels=[LevelSpec(), LevelSpec(keys=["c1"]), LevelSpec()],
            columns={
                "c1": ColumnSpec("c1", "Region", "[region]"),
                "c2": ColumnSpec("c2", "Amount", "[amount]"),
                "c3": ColumnSpec("c3", "Total", "Sum([Amount])",
                                 resident_level=1),
                "c4": ColumnSpec("c4", "Grand", "Sum([Amount])",
                                 resident_level=2),
            },
        )),
    ])]))


@pytest.fixture()
def service():
    svc = GridbookService(ServiceConfig())
    svc.driver.create_table("sales", SALES_SCHEMA, SALES_ROWS)
    yield svc
    svc.close()


# -- pipeline ----------------------------------------------------------------


def test_query_roundtrip(service):
    result = service.handle_query(sales_document(), "t1")
    assert not result.from_cache
    assert result.total_rows == 4
    names = [n for n, _t in result.schema]
    east = [r for r in result.rows if r[names.index("Region")] == "east"]
    assert all(r[names.index("Total")] == 17 for r in east)
    assert all(r[names.index("Grand")] == 25 for r in result.rows)


def test_repeat_query_served_from_cache(service):
    first = service.handle_query(sales_document(), "t1")
    executions = service.driver.executions
    second = service.handle_query(sales_document(), "t1")
    assert second.from_cache
    assert second.rows == first.rows
    # page serving reads the result table but never re-runs the query:
    # no new result table was created
    assert f"r_{first.query_id[:16]}" in service.driver.list_tables()
    assert service.driver.executions >= executions  # page reads only


def test_pages_share_one_query_id(service):
    full = service.handle_query(sales_document(), "t1")
    page = service.handle_query(sales_document(), "t1",
                                expansion={"limit": 2, "offset": 1})
    assert page.query_id == full.query_id
    assert page.from_cache
    assert page.rows == full.rows[1:3]
    assert page.total_rows == 4
    assert not page.complete


def test_collapse_to_summary(service):
    result = service.handle_query(
        sales_document(), "t1",
        expansion={"collapsed": [True, True, False]},
    )
    assert [n for n, _t in result.schema] == ["Grand"]
    assert result.rows == [[25]]


def test_fetch_results_endpoint(service):
    run = service.handle_query(sales_document(), "t1")
    fetched = service.fetch_results(run.query_id, limit=1, offset=2)
    assert fetched.rows == [run.rows[2]]
    with pytest.raises(ServiceError) as err:
        service.fetch_results("unknown-query-id")
    assert err.value.status == 404


def test_determinism_across_cache_paths(service):
    a = service.handle_query(sales_document(), "t1")
    b = service.handle_query(sales_document(), "t1")
    service.directory._entries.clear()  # force a fresh execution
    c = service.handle_query(sales_document(), "t1")
    assert a.rows == b.rows == c.rows


def test_invalid_document_rejected(service):
    with pytest.raises(ServiceError) as err:
        service.handle_query({"doc_id": "x", "pages": "nope"}, "t1")
    assert err.value.status == 400


def test_unknown_element_rejected(service):
    with pytest.raises(ServiceError) as err:
        service.handle_query(sales_document(), "nope")
    assert err.value.status == 400


def test_compile_only(service):
    out = service.compile_only(sales_document(), "t1")
    assert out["sql"].startswith("WITH ")
    assert len(out["query_id"]) == 64
    assert "scan" in out["plan"]


# -- controls ----------------------------------------------------------------


def test_control_value_applies(service):
    doc = WorkbookDocument("dc", pages=[Page("p1", [
        Element("k", "control", ControlSpec(
            "k", "Cutoff", ValueType.NUMBER, default_value=0,
        )),
        Element("t1", "table", TableElementSpec(
            source=SourceSpec("warehouse-table", "sales"),
            levels=[LevelSpec(), LevelSpec()],
            columns={
                "c1": ColumnSpec("c1", "Amount", "[amount]"),
                "c2": ColumnSpec("c2", "Big", "[Amount] > [Cutoff]"),
            },
        )),
    ])])
    doc_json = document_to_json(doc)
    low = service.handle_query(doc_json, "t1", controls={"Cutoff": 6})
    names = [n for n, _t in low.schema]
    flags = [r[names.index("Big")] for r in low.rows]
    assert flags.count(1) == 2  # 10 and 7
    high = service.handle_query(doc_json, "t1", controls={"Cutoff": 100})
    assert all(r[names.index("Big")] == 0 for r in high.rows)
    assert low.query_id != high.query_id  # distinct cache entries
    with pytest.raises(ServiceError):
        service.handle_query(doc_json, "t1", controls={"Missing": 1})


# -- CSV ingestion -----------------------------------------------------------


def test_ingest_inference(service):
    out = service.ingest_csv(
        b"code,city,elevation\nOSL,Oslo,681\nBGO,Bergen,170\nTRD,Vaernes,56\n",
        "airports",
    )
    assert out["schema"] == [("code", "Text"), ("city", "Text"),
                             ("elevation", "Number")]
    assert out["row_count"] == 3


def test_ingest_falls_back_to_text(service):
    out = service.ingest_csv(b"v\n1\n2\nx\n", "vals")
    assert out["schema"] == [("v", "Text")]


def test_ingest_header_only(service):
    out = service.ingest_csv(b"a,b\n", "empty")
    assert out["row_count"] == 0
    assert out["schema"] == [("a", "Text"), ("b", "Text")]


def test_ingest_bad_width_reports_row(service):
    with pytest.raises(ServiceError) as err:
        service.ingest_csv(b"a,b\n1,2\n3\n", "bad")
    assert err.value.status == 400
    assert "row 3" in err.value.message


def test_ingest_empty_rejected(service):
    with pytest.raises(ServiceError) as err:
        service.ingest_csv(b"", "nothing")
    assert err.value.status == 400


def test_ingested_table_queryable(service):
    service.ingest_csv(b"region,amount\neast,1\nwest,2\n", "mini")
    doc = document_to_json(WorkbookDocument("dm", pages=[Page("p", [
        Element("t", "table", TableElementSpec(
            source=SourceSpec("warehouse-table", "mini"),
            levels=[LevelSpec(), LevelSpec()],
            columns={"c1": ColumnSpec("c1", "A", "[amount] * 10")},
        )),
    ])]))
    result = service.handle_query(doc, "t")
    names = [n for n, _t in result.schema]
    assert sorted(r[names.index("A")] for r in result.rows) == [10, 20]


# -- ad-hoc edits ------------------------------------------------------------


def test_adhoc_edit_bumps_version_and_invalidates(service):
    before = service.handle_query(sales_document(), "t1")
    out = service.apply_adhoc_edits(
        "sales", [{"row": 2, "column": "amount", "value": 100}],
    )
    assert out["version"] == "v2"
    after = service.handle_query(sales_document(), "t1")
    assert not after.from_cache  # new fingerprint: fresh execution
    assert after.rows != before.rows


def test_adhoc_empty_edit_list_is_identity(service):
    v1 = service.apply_adhoc_edits("sales", [])
    assert v1["version"] == "v1"


def test_adhoc_edit_validation(service):
    with pytest.raises(ServiceError) as err:
        service.apply_adhoc_edits("sales", [
            {"row": 99, "column": "amount", "value": 1},
        ])
    assert err.value.status == 400
    with pytest.raises(ServiceError):
        # booleans are not Numbers (numeric text coerces via affinity,
        # but True/False must not silently become 1/0)
        service.apply_adhoc_edits("sales", [
            {"row": 1, "column": "amount", "value": True},
        ])
    with pytest.raises(ServiceError) as err:
        service.apply_adhoc_edits("missing", [])
    assert err.value.status == 404


# -- materialization ---------------------------------------------------------


def test_materialization_lifecycle(service):
    doc_id = service.save_document(sales_document())
    status = service.schedule_materialization("t1", doc_id, 60.0)
    assert status["target_table"] == "mat_t1"
    assert "mat_t1" in service.driver.list_tables()
    # substitution engages for dependent plans only; t1's own compile
    # keyed by fingerprint still matches results exactly
    before = service.handle_query(sales_document(), "t1")

    service.apply_adhoc_edits("sales",
                              [{"row": 1, "column": "amount", "value": 11}])
    # stale now: the registered fingerprint no longer matches
    refreshed = service.refresh_due_materializations(now=1e18)
    assert refreshed == 1
    after = service.handle_query(sales_document(), "t1")
    assert before.rows != after.rows


# -- HTTP layer --------------------------------------------------------------


@pytest.fixture()
def client():
    app = create_app(ServiceConfig(auth_token="tok"))
    app.state.service.driver.create_table("sales", SALES_SCHEMA, SALES_ROWS)
    with TestClient(app) as c:
        yield c


AUTH = {"Authorization": "Bearer tok"}


def test_http_query(client):
    r = client.post("/v1/query",
                    json={"document": sales_document(),
                          "element_id": "t1"},
                    headers=AUTH)
    assert r.status_code == 200
    body = r.json()
    assert body["total_rows"] == 4
    assert body["complete"]


def test_http_auth_required(client):
    assert client.post("/v1/query", json={
        "document": sales_document(), "element_id": "t1",
    }).status_code == 401
    assert client.get("/healthz").status_code == 200  # health is open


def test_http_results_paging(client):
    qid = client.post("/v1/query", json={
        "document": sales_document(), "element_id": "t1",
    }, headers=AUTH).json()["query_id"]
    page = client.get(f"/v1/results/{qid}?limit=2&offset=2", headers=AUTH)
    assert page.status_code == 200
    assert len(page.json()["rows"]) == 2
    assert client.get("/v1/results/bogus", headers=AUTH).status_code == 404


def test_http_documents_round_trip(client):
    doc = sales_document("saved")
    r = client.post("/v1/documents", json=doc, headers=AUTH)
    assert r.json() == {"doc_id": "saved"}
    loaded = client.get("/v1/documents/saved", headers=AUTH).json()
    assert loaded["doc_id"] == "saved"


def test_http_csv_and_adhoc(client):
    up = client.post("/v1/uploads/csv?name=dim",
                     content=b"k,v\na,1\nb,2\n", headers=AUTH)
    assert up.status_code == 200
    patch = client.patch("/v1/adhoc/dim", json={
        "edits": [{"row": 1, "column": "v", "value": 9}],
    }, headers=AUTH)
    assert patch.status_code == 200
    assert patch.json()["version"] == "v2"


def test_http_error_shape(client):
    r = client.post("/v1/query", json={
        "document": sales_document(), "element_id": "ghost",
    }, headers=AUTH)
    assert r.status_code == 400
    assert "error" in r.json()


def test_http_admin_cache(client):
    client.post("/v1/query", json={
        "document": sales_document(), "element_id": "t1",
    }, headers=AUTH)
    listing = client.get("/admin/cache", headers=AUTH).json()
    assert listing["capacity"] == 256
    assert listing["executions"] >= 1
    assert len(listing["entries"]) == 1
