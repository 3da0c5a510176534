import csv
import json
from pathlib import Path

import pytest

from catbranch.cli import main

MODELS = Path(__file__).resolve().parent.parent / "demos" / "models"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_classify(capsys):
    code, out, _ = run(capsys, "classify", "--model", MODELS / "m_rec.json")
    assert code == 0
    doc = json.loads(out)
    assert doc["schema_version"] and doc["model_hash"] and doc["version"]
    res = doc["result"]
    assert res["rho0"] == pytest.approx(1.25, abs=1e-10)
    assert res["class"] == "supercritical"
    assert res["nu"] == pytest.approx(0.1753905296791, abs=1e-8)


def test_extinction(capsys):
    code, out, _ = run(capsys, "extinction", "--model", MODELS / "m_rec.json")
    res = json.loads(out)["result"]
    assert code == 0
    assert res["q_w"][0] == pytest.approx(1 / 3, abs=1e-9)
    assert res["Q_w"][0] == pytest.approx(1 / 3, abs=1e-9)
    assert res["phase"] == "strong_local_survival"


def test_verify_subcritical_refused(capsys):
    code, _, err = run(capsys, "verify", "--theorem", "weak", "--seed", 1,
                       "--model", MODELS / "m_sub.json")
    assert code == 1
    assert "model not supercritical" in err and "rho(D(0)) > 1" in err


def test_malthus_subcritical(capsys):
    code, _, err = run(capsys, "malthus", "--model", MODELS / "m_sub.json")
    assert code == 1 and "subcritical" in err


def test_malformed_model(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"space":\n  [,]}')
    code, _, err = run(capsys, "classify", "--model", bad)
    assert code == 1 and "line 2 column" in err


def test_invalid_model_lists_each_error(tmp_path, capsys):
    doc = json.loads((MODELS / "m_rec.json").read_text())
    doc["catalysts"][0]["alpha"] = 1.5
    doc["start"] = 7
    p = tmp_path / "m.json"
    p.write_text(json.dumps(doc))
    code, _, err = run(capsys, "classify", "--model", p)
    assert code == 1
    assert err.count("error:") >= 2 and "alpha" in err and "start" in err


def test_verify_needs_seed(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--theorem", "q", "--model", str(MODELS / "m_rec.json")])
    assert exc.value.code == 1


def test_verify_reports_are_reproducible(tmp_path, capsys):
    texts = []
    for _ in range(2):
        out = tmp_path / "v.json"
        code, _, err = run(capsys, "verify", "--theorem", "q", "--seed", 3, "--reps", 400,
                           "--model", MODELS / "m_rec.json", "--out", out)
        assert code == 0 and "q:" in err
        doc = json.loads(out.read_text())
        assert doc["seed"] == 3 and doc["result"]["verdict"] in ("PASS", "FAIL", "INCONCLUSIVE")
        doc.pop("timestamp")
        texts.append((json.dumps(doc, sort_keys=True), (tmp_path / "v.csv").read_text()))
    assert texts[0] == texts[1]


def test_taboo_csv(tmp_path, capsys):
    out = tmp_path / "t.json"
    code, _, _ = run(capsys, "taboo", "--model", MODELS / "m_tra.json", "--target", 0,
                     "--query-states", "1,-1", "--lambdas", "0,0.5", "--out", out)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert len(rows) == 4
    assert float(rows[0]["value"]) == pytest.approx(0.5, abs=1e-8)


def test_phi_outputs(tmp_path, capsys):
    out = tmp_path / "p.json"
    code, _, _ = run(capsys, "phi", "--model", MODELS / "m_rec.json", "--query-states", 1,
                     "--out", out)
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["result"]["residual"] < 1e-11
    chk = doc["result"]["checks"]["1"]
    assert chk["slope_at_0"] == pytest.approx(chk["inverse_c"], abs=1e-3)
    header = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert header == "lambda,phi_w[0],phi[1]"


def test_simulate_outputs(tmp_path, capsys):
    out = tmp_path / "s.json"
    code, _, _ = run(capsys, "simulate", "--model", MODELS / "m_rec.json", "--t-end", 5,
                     "--seed", 2, "--out", out)
    assert code == 0
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t,total,local[0],local[1]" and len(lines) == 102
    code, _, _ = run(capsys, "simulate", "--model", MODELS / "m_rec.json", "--t-end", 5,
                     "--seed", 2, "--events", "--out", out)
    assert code == 0
    header = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert header.startswith("time,kind,site")


def test_bad_flags(capsys):
    code, _, err = run(capsys, "simulate", "--model", MODELS / "m_rec.json")
    assert code == 1 and "--t-end" in err
    code, _, err = run(capsys, "extinction", "--model", MODELS / "m_rec.json", "--tol", "-1")
    assert code == 1
    code, _, err = run(capsys, "classify", "--model", MODELS / "m_rec.json", "--query-states", "9")
    assert code == 1 and "unknown state" in err
