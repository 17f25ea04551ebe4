import json
import subprocess
import sys

import pytest

from cntmf.cli import main
from cntmf.catalog import ThreatCategory
from cntmf.feedback import load_priors


@pytest.fixture
def run(capsys):
    def _run(*argv):
        code = main([str(a) for a in argv])
        out, err = capsys.readouterr()
        return code, out, err
    return _run


def test_validate_ok(run, fixtures_dir):
    for name in ("defi_integration", "exchange_hack", "onramp"):
        assert run("validate", fixtures_dir / f"{name}.cntmf")[0] == 0


def test_validate_violations(run, fixtures_dir):
    code, out, _ = run("validate", fixtures_dir / "invalid_dangling.cntmf")
    assert code == 1 and "V002" in out


def test_validate_parse_error(run, fixtures_dir):
    code, _, err = run("validate", fixtures_dir / "malformed" / "bad_layer.cntmf")
    assert code == 2 and ":2:" in err


def test_validate_missing_file(run, tmp_path):
    assert run("validate", tmp_path / "nope.cntmf")[0] == 3


def test_usage_errors(run, fixtures_dir):
    assert run("validate", fixtures_dir / "onramp.cntmf", "--bogus")[0] == 4
    assert run("frobnicate")[0] == 4
    assert run()[0] == 4


def test_threats(run, fixtures_dir):
    code, out, _ = run("threats", fixtures_dir / "onramp.cntmf")
    assert code == 0
    assert "ledger:T:1" not in out and "api_gw:S:1\tSpoofing" in out
    code, out, _ = run("threats", fixtures_dir / "onramp.cntmf", "--json")
    assert json.loads(out)["schema_version"] == 1


def test_report(run, fixtures_dir, tmp_path):
    out_dir = tmp_path / "r"
    code, out, _ = run("report", fixtures_dir / "defi_integration.cntmf", "--out", out_dir,
                       "--overrides", fixtures_dir / "defi_integration.overrides.json", "--top", 2)
    assert code == 0
    assert sorted(p.name for p in out_dir.iterdir()) == ["assessment.json", "heatmap.csv", "model.dot", "report.md"]
    lines = out.splitlines()
    assert "16.8 High" in lines[1] and "bridge_xfer:T:1" in lines[1]
    assert "12.9 High" in lines[2] and "price_oracle:CQ-R:1" in lines[2]


def test_report_missing_overrides(run, fixtures_dir, tmp_path):
    code, _, err = run("report", fixtures_dir / "onramp.cntmf", "--out", tmp_path,
                       "--overrides", tmp_path / "missing.json")
    assert code == 3 and "missing.json" in err


def test_report_unknown_override(run, fixtures_dir, tmp_path):
    bad = tmp_path / "o.json"
    bad.write_text(json.dumps({"nowhere:S:1": {"ts": 1}}))
    code, _, err = run("report", fixtures_dir / "onramp.cntmf", "--out", tmp_path / "r", "--overrides", bad)
    assert code == 3 and "nowhere:S:1" in err


def test_report_unknown_control(run, fixtures_dir, tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps(["zero_trust", "moat"]))
    code, _, err = run("report", fixtures_dir / "onramp.cntmf", "--out", tmp_path / "r", "--controls", bad)
    assert code == 3 and "moat" in err


def test_report_ledger_needs_quarter(run, fixtures_dir, tmp_path):
    code = run("report", fixtures_dir / "onramp.cntmf", "--out", tmp_path,
               "--ledger", fixtures_dir / "incidents_2025q1.jsonl")[0]
    assert code == 4


def test_dfd(run, fixtures_dir, tmp_path):
    code, out, _ = run("dfd", fixtures_dir / "onramp.cntmf")
    assert code == 0 and out.startswith("digraph")
    assert run("dfd", fixtures_dir / "onramp.cntmf", "-o", tmp_path / "m.dot")[0] == 0
    assert (tmp_path / "m.dot").read_text() == out


def test_heatmap(run, fixtures_dir):
    code, out, _ = run("heatmap", fixtures_dir / "exchange_hack.cntmf",
                       "--overrides", fixtures_dir / "exchange_hack.overrides.json", "--format", "csv")
    assert code == 0
    assert out.splitlines()[1].endswith(":H")
    assert run("heatmap", fixtures_dir / "onramp.cntmf", "--format", "svg")[0] == 4


def test_incidents_flow(run, fixtures_dir, tmp_path):
    ledger = tmp_path / "ledger.jsonl"
    code, out, _ = run("incidents", "ingest", ledger, fixtures_dir / "incidents_2025q1.jsonl")
    assert code == 0 and "3 record" in out
    # second ingest of the same ids is rejected and leaves the file untouched
    before = ledger.read_bytes()
    assert run("incidents", "ingest", ledger, fixtures_dir / "incidents_2025q1.jsonl")[0] == 3
    assert ledger.read_bytes() == before

    code, out, _ = run("incidents", "metrics", ledger, "--quarter", "2025Q1")
    assert code == 0 and "incidents: 3 (open: 1)" in out and "7,180,000" in out
    code, out, _ = run("incidents", "metrics", ledger, "--quarter", "2025Q1", "--json")
    assert json.loads(out)["incident_count"] == 3
    assert run("incidents", "metrics", ledger, "--quarter", "2025Q9")[0] == 4
    assert run("incidents", "metrics", tmp_path / "none.jsonl", "--quarter", "2025Q1")[0] == 3


def test_ingest_atomic(run, tmp_path):
    src = tmp_path / "in.jsonl"
    good = {"id": "a", "occurred_at": "2025-01-01T00:00:00Z", "detected_at": "2025-01-01T01:00:00Z",
            "remediated_at": None, "category": "Spoofing", "loss_usd": 0, "source": "PenTest"}
    src.write_text("\n".join(json.dumps(d) for d in (good, good)) + "\n")
    ledger = tmp_path / "ledger.jsonl"
    assert run("incidents", "ingest", ledger, src)[0] == 3
    assert not ledger.exists()


def test_recalibrate_worked(run, tmp_path):
    src = tmp_path / "in.jsonl"
    src.write_text("".join(
        json.dumps({"id": f"i{k}", "occurred_at": "2025-01-02T00:00:00Z", "detected_at": "2025-01-02T01:00:00Z",
                    "remediated_at": "2025-01-02T02:00:00Z", "category": "ReentrancyOracleManipulation",
                    "loss_usd": 1, "source": "MonitoringAlert"}) + "\n"
        for k in range(4)))
    ledger = tmp_path / "ledger.jsonl"
    assert run("incidents", "ingest", ledger, src)[0] == 0
    priors = tmp_path / "priors.json"
    code, out, _ = run("incidents", "recalibrate", ledger, "--out", priors, "--alpha", 0.5, "--quarter", "2025Q1")
    assert code == 0
    assert any(line.split() == ["ReentrancyOracleManipulation", "0.6", "->", "0.8"] for line in out.splitlines())
    assert load_priors(priors)[ThreatCategory.REENTRANCY_ORACLE_MANIPULATION] == 0.8

    code, out, _ = run("incidents", "recalibrate", ledger, "--out", tmp_path / "p2.json", "--quarter", "2024Q1")
    assert code == 0 and out.strip() == "no change"
    assert run("incidents", "recalibrate", ledger, "--out", tmp_path / "p3.json", "--alpha", 2)[0] == 4


def test_report_with_priors(run, fixtures_dir, tmp_path):
    priors = tmp_path / "p.json"
    priors.write_text(json.dumps({"priors": {"Tampering": 0.9}}))
    code, out, _ = run("report", fixtures_dir / "defi_integration.cntmf", "--out", tmp_path / "r",
                       "--priors", priors, "--top", 1)
    assert code == 0
    doc = json.loads((tmp_path / "r" / "assessment.json").read_text())
    bridge = next(s for s in doc["scored"] if s["threat_id"] == "bridge_xfer:T:1")
    # 0.7 default shifted by 0.9 - 0.5, clamped
    assert bridge["inputs"]["exploit_probability"] == 1.0


def test_catalog_dump(run):
    code, out, _ = run("catalog", "dump")
    doc = json.loads(out)
    assert code == 0
    assert [len(doc["categories"][k]) for k in ("stride", "cryptoq", "linddun")] == [6, 7, 7]
    assert len(doc["api_risks"]) == 10
    code, out, _ = run("catalog", "dump", "--controls")
    assert code == 0 and len(json.loads(out)["controls"]) == 14


def test_module_entry(fixtures_dir):
    r = subprocess.run([sys.executable, "-m", "cntmf", "validate", str(fixtures_dir / "onramp.cntmf")],
                       capture_output=True, text=True)
    assert r.returncode == 0
