"""CLI commands and exit codes."""

from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from gridbook.cli import main

DOC = {
    "doc_id": "d1",
    "pages": [{"page_id": "p1", "elements": [{
        "element_id": "t1", "kind": "table",
        "source": {"kind": "warehouse-table", "reference": "sales"},
        "levels": [{}, {"keys": ["c1"]}, {}],
        "columns": {
            "c1": {"column_id": "c1", "name": "Region",
                   "formula": "[region]"},
            "c2": {"column_id": "c2", "name": "Amt",
                   "formula": "[amount]"},
            "c3": {"column_id": "c3", "name": "Total",
                   "formula": "Sum([Amt])", "resident_level": 1},
        },
    }]}],
}

CSV = "region,amount\neast,10\nwest,5\neast,7\n"


@pytest.fixture()
def workdir(tmp_path):
    (tmp_path / "doc.json").write_text(json.dumps(DOC))
    (tmp_path / "sales.csv").write_text(CSV)
    return tmp_path


def invoke(*args):
    return CliRunner().invoke(main, list(args))


def test_compile_prints_sql(workdir):
    r = invoke("compile", str(workdir / "doc.json"), "t1",
               "--source", f"sales={workdir / 'sales.csv'}")
    assert r.exit_code == 0
    assert r.output.startswith("WITH ")
    assert "query_id:" in r.output


def test_compile_plan_flag(workdir):
    r = invoke("compile", str(workdir / "doc.json"), "t1",
               "--source", f"sales={workdir / 'sales.csv'}", "--plan")
    assert r.exit_code == 0
    assert r.output.startswith("scan ")


def test_compile_invalid_document_exits_1(workdir):
    bad = dict(DOC)
    bad["pages"] = [{"page_id": "p1", "elements": [{
        "element_id": "t1", "kind": "table",
        "source": {"kind": "warehouse-table", "reference": "sales"},
        "levels": [{}, {}],
        "columns": {"c1": {"column_id": "c1", "name": "X",
                           "formula": "Sum("}},
    }]}]
    path = workdir / "bad.json"
    path.write_text(json.dumps(bad))
    r = invoke("compile", str(path), "t1",
               "--source", f"sales={workdir / 'sales.csv'}")
    assert r.exit_code == 1


def test_run_both_prints_csv(workdir):
    r = invoke("run", str(workdir / "doc.json"), "t1",
               "--source", f"sales={workdir / 'sales.csv'}")
    assert r.exit_code == 0
    lines = r.output.strip().splitlines()
    assert lines[0].endswith("Region,Amt,Total")
    assert len(lines) == 4  # header + 3 rows


def test_run_oracle_and_sql_agree(workdir):
    args = ("run", str(workdir / "doc.json"), "t1",
            "--source", f"sales={workdir / 'sales.csv'}")
    oracle = invoke(*args, "--mode", "oracle")
    sql = invoke(*args, "--mode", "sql")
    assert oracle.exit_code == sql.exit_code == 0
    assert oracle.output == sql.output


def test_run_missing_source_exits_1(workdir):
    r = invoke("run", str(workdir / "doc.json"), "t1",
               "--source", "sales=/does/not/exist.csv")
    assert r.exit_code == 1


def test_fuzz_clean(tmp_path):
    r = invoke("fuzz", "--count", "15", "--out", str(tmp_path / "regr"))
    assert r.exit_code == 0
    assert "0 failures" in r.output


def test_fuzz_detects_injected_bug(tmp_path):
    """Harness sanity: a corrupted oracle kernel must produce failures."""
    r = invoke("fuzz", "--count", "30", "--inject-bug",
               "--out", str(tmp_path / "regr"))
    assert r.exit_code == 2
    assert list((tmp_path / "regr").glob("seed_*.txt"))


def test_fuzz_seed_replay_is_deterministic(tmp_path):
    a = invoke("fuzz", "--count", "10", "--base-seed", "123",
               "--out", str(tmp_path / "r1"))
    b = invoke("fuzz", "--count", "10", "--base-seed", "123",
               "--out", str(tmp_path / "r2"))
    assert a.output == b.output


@pytest.mark.parametrize("name", ["cohort", "sessionize", "augment"])
def test_scenarios_small(name):
    r = invoke("scenario", name, "--rows", "3000", "--seed", "11")
    assert r.exit_code == 0, r.output


def test_scenario_unknown_name():
    assert invoke("scenario", "warp").exit_code != 0
