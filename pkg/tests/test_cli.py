import csv
import json

import numpy as np
import pytest

from deepforget import bounds as B
from deepforget import data as D
from deepforget import model as M
from deepforget.cli import main
from deepforget.pipeline import OUTPUT_ROOT_ENV, RunConfig, report, run_pipeline

TINY = {
    "data": {"num_classes": 4, "input_dim": 6, "samples_per_class": 60},
    "scenarios": [{"kind": "class", "classes": [0]}],
    "hidden": [12, 8],
    "pretrain": {"epochs": 5, "batch_size": 64},
    "methods": [{"method": "OPC", "train": {"epochs": 2}}, "FT", {"method": "RL", "name": "RL-slow", "train": {"epochs": 1}}],
    "seeds": [0],
}


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return p


def test_bound_json(capsys):
    assert main(["bound", "--r", "1", "--C", "10"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["exact_Hstar"] == pytest.approx(B.exact_min_entropy(1.0, 10), rel=1e-15)
    assert abs(out["oracle_min"] - out["exact_Hstar"]) < 1e-6


def test_bound_grid_csv(capsys):
    assert main(["bound-grid", "--r", "0.5,2", "--C", "3", "--no-oracle"]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0] == ["r", "C", "exact", "bound", "oracle", "gap"]
    assert len(rows) == 3 and rows[1][4] == ""
    assert float(rows[1][5]) == pytest.approx(float(rows[1][2]) - float(rows[1][3]))


def test_single_stage_commands(tmp_path, capsys):
    d = tmp_path
    assert main(["gen-data", "--out", str(d / "b.ufdb"), "--samples-per-class", "40", "--seed", "2"]) == 0
    bundle = D.load_bundle(d / "b.ufdb")
    assert bundle.scenario == D.Scenario.class_forget((0, 1, 2))
    assert main(["pretrain", "--data", str(d / "b.ufdb"), "--out", str(d / "p.ufck"), "--epochs", "3", "--metrics", str(d / "m.csv")]) == 0
    assert main(["retrain", "--data", str(d / "b.ufdb"), "--out", str(d / "r.ufck"), "--epochs", "3"]) == 0
    assert main(["unlearn", "--data", str(d / "b.ufdb"), "--ckpt", str(d / "p.ufck"), "--method", "OPC", "--out", str(d / "u.ufck"), "--epochs", "2"]) == 0
    assert M.load(d / "u.ufck").num_classes == 10
    assert main(["eval", "--data", str(d / "b.ufdb"), "--ckpt", str(d / "u.ufck"), "--ref", str(d / "p.ufck"), "--out", str(d / "e.json"), "--hist", str(d / "h.csv")]) == 0
    ev = json.loads((d / "e.json").read_text())
    assert ev["ua"] == 100 - ev["accuracies"]["train_forget"] and len(ev["cka"]) == 4
    for kind in ("fm", "hr"):
        args = ["attack", "--kind", kind, "--data", str(d / "b.ufdb"), "--un", str(d / "u.ufck"), "--pre", str(d / "p.ufck"), "--out", str(d / f"{kind}.json")]
        assert main(args + (["--normalize"] if kind == "hr" else [])) == 0
    assert json.loads((d / "hr.json").read_text())["kind"] == "HR"
    args = ["attack", "--kind", "inv", "--data", str(d / "b.ufdb"), "--un", str(d / "u.ufck"), "--probes", "2", "--iterations", "5", "--out", str(d / "inv.json"), "--csv", str(d / "inv.csv")]
    assert main(args) == 0
    assert len((d / "inv.csv").read_text().splitlines()) == 3


def test_corrupt_checkpoint_is_reported(tmp_path, capsys):
    (tmp_path / "bad.ufck").write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNK")
    main(["gen-data", "--out", str(tmp_path / "b.ufdb"), "--samples-per-class", "20"])
    assert main(["eval", "--data", str(tmp_path / "b.ufdb"), "--ckpt", str(tmp_path / "bad.ufck")]) == 2
    assert "bad magic" in capsys.readouterr().err


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    assert main(["gen-data", "--out", "sub/b.ufdb", "--samples-per-class", "20"]) == 0
    assert (tmp_path / "root" / "sub" / "b.ufdb").exists()


def test_run_is_byte_identical_and_complete(tiny_cfg, tmp_path):
    assert main(["run", "--config", str(tiny_cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(tiny_cfg), "--out", str(tmp_path / "b")]) == 0
    ma = (tmp_path / "a" / "manifest.json").read_bytes()
    assert ma == (tmp_path / "b" / "manifest.json").read_bytes()
    m = json.loads(ma)
    assert m["status"] == "complete"
    listed = {a["path"] for a in m["artifacts"]}
    on_disk = {p.relative_to(tmp_path / "a").as_posix() for p in (tmp_path / "a").rglob("*") if p.is_file()} - {"manifest.json"}
    assert listed == on_disk
    assert [c["method"] for c in m["cells"]] == ["pretrained", "retrained", "OPC", "FT", "RL-slow"]


def test_report_tables(tiny_cfg, tmp_path):
    code, _ = run_pipeline(RunConfig.load(tiny_cfg), tmp_path / "run")
    assert code == 0
    res = report(tmp_path / "run")
    assert not res.warnings
    rows = list(csv.reader((tmp_path / "run" / "summary" / "table_class.csv").open()))
    assert rows[0] == ["method", "seeds", "train_forget", "train_retain", "test_forget", "test_retain", "UA", "mia_e"]
    assert [r[0] for r in rows[1:]] == ["pretrained", "retrained", "OPC", "FT", "RL-slow"]
    rec = list(csv.reader((tmp_path / "run" / "summary" / "recovered_ua_class.csv").open()))
    assert rec[0] == ["method", "unlearned_UA", "FM_UA", "HR_UA"] and len(rec) == 5
    assert (tmp_path / "run" / "summary" / "cka_class.dat").read_text().startswith("# method split")


def test_report_lists_missing_artifacts(tiny_cfg, tmp_path):
    run_pipeline(RunConfig.load(tiny_cfg), tmp_path / "run")
    (tmp_path / "run" / "reports" / "class" / "seed0" / "FT.eval.json").unlink()
    res = report(tmp_path / "run")
    assert any("FT.eval.json" in w for w in res.warnings)
    rows = list(csv.reader((tmp_path / "run" / "summary" / "table_class.csv").open()))
    assert "FT" not in [r[0] for r in rows]


def test_report_empty_dir(tmp_path):
    res = report(tmp_path)
    assert res.files == [] and res.warnings


def test_minimal_pretrain_only(tmp_path):
    cfg = RunConfig.from_dict({**TINY, "methods": [], "retrain": False})
    code, mp = run_pipeline(cfg, tmp_path / "min")
    m = json.loads(mp.read_text())
    assert code == 0 and len(m["cells"]) == 1
    paths = [a["path"] for a in m["artifacts"]]
    assert sum(p.endswith(".ufck") for p in paths) == 1 and sum(p.endswith(".eval.json") for p in paths) == 1


def test_failure_marks_manifest_incomplete(tmp_path):
    bad = {**TINY, "methods": [{"method": "EUk", "k": 9}]}
    code, mp = run_pipeline(RunConfig.from_dict(bad), tmp_path / "fail")
    m = json.loads(mp.read_text())
    assert code == 1 and m["status"] == "incomplete" and "k=9" in m["error"]
    assert any(a["path"].endswith("pretrained.ufck") for a in m["artifacts"])


@pytest.mark.parametrize(
    "patch",
    [
        {"methods": ["OPC", "OPC"]},
        {"methods": ["Nope"]},
        {"methods": [{"method": "FT", "name": "pretrained"}]},
        {"scenarios": [{"kind": "none"}]},
        {"seeds": []},
        {"bogus": 1},
    ],
)
def test_config_validation(patch):
    with pytest.raises(ValueError):
        RunConfig.from_dict({**TINY, **patch})


def test_config_round_trip():
    cfg = RunConfig.from_dict(TINY)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
