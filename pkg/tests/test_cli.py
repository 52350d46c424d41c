import json
import shutil
import subprocess
import sys

import pytest

from conftest import DATA, load_jsonl
from spatialrel.cli import main
from spatialrel.qagen import BENCHMARK_TYPES

FIXTURE = str(DATA / "scenes50.jsonl")


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def bench_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("bench")
    out = d / "bench.jsonl"
    assert main(["gen-benchmark", FIXTURE, "-o", str(out), "--seed", "7", "--workers", "1"]) == 0
    return out, d / "bench.jsonl.manifest.json"


# -- validate ------------------------------------------------------------------


def test_validate_fixture(capsys):
    code, out, _ = run(["validate", FIXTURE], capsys)
    assert code == 0 and out.count("ok ") == 50


def test_validate_one_bad_scene(tmp_path, capsys):
    lines = (DATA / "scenes50.jsonl").read_text().splitlines()[:3]
    bad = (DATA / "malformed" / "duplicate_id.jsonl").read_text().strip()
    p = tmp_path / "mixed.jsonl"
    p.write_text("\n".join(lines + [bad]) + "\n")
    code, out, _ = run(["validate", str(p), "-q"], capsys)
    assert code == 1
    assert out.count("FAIL") == 1 and "DuplicateId: objects[1].id" in out
    code, out, _ = run(["validate", str(p), "--json"], capsys)
    reports = [json.loads(line) for line in out.splitlines()]
    assert [r["ok"] for r in reports] == [True, True, True, False]
    assert reports[-1]["line"] == 4


def test_validate_schema_error_reports_line(capsys):
    code, out, _ = run(["validate", str(DATA / "malformed" / "missing_fx.jsonl")], capsys)
    assert code == 1 and "camera.fx" in out


def test_validate_missing_file(capsys):
    code, _, err = run(["validate", "/nonexistent/scenes.jsonl"], capsys)
    assert code == 2 and "/nonexistent/scenes.jsonl" in err


# -- stats ----------------------------------------------------------------------


def test_stats_matches_manifest(capsys, fixture_manifest):
    code, out, _ = run(["stats", FIXTURE, "--json"], capsys)
    d = json.loads(out)
    assert code == 0
    assert d["object_count"] == fixture_manifest["object_count"]
    assert d["scene_count"] == fixture_manifest["scene_count"]
    assert d["category_histogram"] == fixture_manifest["category_histogram"]
    code, out, _ = run(["stats", FIXTURE], capsys)
    assert "objects  387" in out


def test_stats_empty_file(tmp_path, capsys):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    code, out, _ = run(["stats", str(p), "--json"], capsys)
    assert code == 0 and json.loads(out)["object_count"] == 0 and json.loads(out)["scene_count"] == 0


def test_stats_malformed_line(tmp_path, capsys):
    lines = (DATA / "scenes50.jsonl").read_text().splitlines()[:2]
    p = tmp_path / "bad.jsonl"
    p.write_text("\n".join(lines + ["{not json"]) + "\n")
    code, _, err = run(["stats", str(p)], capsys)
    assert code == 1 and ":3:" in err


# -- generation -------------------------------------------------------------------


def test_gen_benchmark_outputs(bench_files):
    out, manifest_path = bench_files
    rows = load_jsonl(out)
    assert {r["question_type"] for r in rows} == set(BENCHMARK_TYPES)
    assert [r["qa_id"] for r in rows] == sorted(r["qa_id"] for r in rows)
    manifest = json.loads(manifest_path.read_text())
    for key in ("config", "seed", "template_version", "tool_version", "counts", "warnings"):
        assert key in manifest
    assert manifest["seed"] == 7


def test_gen_benchmark_rerun_identical(bench_files, tmp_path):
    out, manifest_path = bench_files
    again = tmp_path / "again.jsonl"
    assert main(["generate", "--mode", "benchmark", FIXTURE, "-o", str(again), "--seed", "7", "--workers", "2"]) == 0
    assert again.read_bytes() == out.read_bytes()
    assert (tmp_path / "again.jsonl.manifest.json").read_bytes() == manifest_path.read_bytes()


def test_gen_flags_override_config(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("generation:\n  seed: 3\n  default_target: 50\n")
    out = tmp_path / "o.jsonl"
    assert main(["--config", str(cfg), "gen-benchmark", FIXTURE, "-o", str(out), "--target", "20", "--workers", "1"]) == 0
    m = json.loads((tmp_path / "o.jsonl.manifest.json").read_text())
    assert m["seed"] == 3 and set(m["config"]["targets"].values()) == {20}
    assert len(load_jsonl(out)) == 140


def test_gen_probing_and_conversations(tmp_path):
    p = tmp_path / "p.jsonl"
    assert main(["gen-probing", FIXTURE, "-o", str(p), "--target", "50", "--source-tag", "OI", "--workers", "1"]) == 0
    assert {r["question_type"] for r in load_jsonl(p)} == {"depth", "distance", "azimuth", "elevation"}
    assert json.loads((tmp_path / "p.jsonl.manifest.json").read_text())["product"] == "3DI-Pb-OI200"
    c = tmp_path / "c.jsonl"
    assert main(["gen-conversations", FIXTURE, "-o", str(c), "--turns", "2", "4", "--workers", "1"]) == 0
    assert all(2 <= len(r["turns"]) <= 4 for r in load_jsonl(c))


def test_gen_skips_invalid_scenes(tmp_path):
    lines = (DATA / "scenes50.jsonl").read_text().splitlines()[:10]
    lines.append((DATA / "malformed" / "behind_camera.jsonl").read_text().strip())
    src = tmp_path / "s.jsonl"
    src.write_text("\n".join(lines) + "\n")
    assert main(["gen-benchmark", str(src), "-o", str(tmp_path / "o.jsonl"), "--target", "5", "--workers", "1"]) == 0
    m = json.loads((tmp_path / "o.jsonl.manifest.json").read_text())
    assert m["rejected_scenes"] == ["g0"]
    assert any(w.startswith("InvalidScene") for w in m["warnings"])


def test_unknown_mode_is_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        main(["generate", "--mode", "bogus", FIXTURE, "-o", "-"])
    assert e.value.code == 2


def test_bad_config_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("margins:\n  nonsense: 1\n")
    code, _, err = run(["--config", str(cfg), "gen-benchmark", FIXTURE, "-o", str(tmp_path / "x")], capsys)
    assert code == 2 and "nonsense" in err


def test_generation_on_malformed_input_is_data_error(tmp_path, capsys):
    code, _, err = run(["gen-benchmark", str(DATA / "malformed" / "zero_quat.jsonl"), "-o", str(tmp_path / "x")], capsys)
    assert code == 1 and ":1:" in err


# -- score -----------------------------------------------------------------------


def _preds(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return str(path)


def test_score_perfect(bench_files, tmp_path, capsys):
    out, _ = bench_files
    keys = load_jsonl(out)
    preds = _preds(tmp_path / "p.jsonl", [{"qa_id": k["qa_id"], "response": k["answer"]} for k in keys])
    code, text, _ = run(["score", str(out), preds, "--label", "oracle"], capsys)
    assert code == 0
    assert text.splitlines()[1].split() == ["oracle", "100.0", "100.0", "100.0", "100.0"]
    record = json.loads((tmp_path / "p.jsonl.score.json").read_text())
    assert record["average"] == 100.0 and record["total"] == len(keys)


def test_score_empty_predictions(bench_files, tmp_path, capsys):
    out, _ = bench_files
    preds = _preds(tmp_path / "p.jsonl", [])
    code, text, _ = run(["score", str(out), preds, "--out", str(tmp_path / "r.json")], capsys)
    assert code == 0 and text.splitlines()[1].split()[1] == "0.0"
    assert json.loads((tmp_path / "r.json").read_text())["unparsed"] == 1680


def test_score_duplicate_and_unknown(bench_files, tmp_path, capsys):
    out, _ = bench_files
    qid = load_jsonl(out)[0]["qa_id"]
    dup = _preds(tmp_path / "d.jsonl", [{"qa_id": qid, "response": "x"}] * 2)
    code, _, err = run(["score", str(out), dup], capsys)
    assert code == 1 and qid in err
    unk = _preds(tmp_path / "u.jsonl", [{"qa_id": "T9:zz:q", "response": "x"}])
    assert run(["score", str(out), unk], capsys)[0] == 1


def test_score_missing_key_file(tmp_path, capsys):
    preds = _preds(tmp_path / "p.jsonl", [])
    code, _, err = run(["score", str(tmp_path / "nokeys.jsonl"), preds], capsys)
    assert code == 2 and "nokeys.jsonl" in err


def test_score_fixture_21(capsys, tmp_path):
    code, text, _ = run(["score", str(DATA / "score21" / "keys.jsonl"), str(DATA / "score21" / "predictions.jsonl"),
                         "--out", str(tmp_path / "r.json")], capsys)
    assert code == 0 and text.splitlines()[1].split()[1:] == ["57.1", "50.0", "50.0", "66.7"]


# -- synth and streams -------------------------------------------------------------


def test_synth_reproduces_fixture(tmp_path):
    out = tmp_path / "s.jsonl"
    assert main(["synth", "-n", "50", "--seed", "7", "-o", str(out)]) == 0
    assert out.read_bytes() == (DATA / "scenes50.jsonl").read_bytes()


@pytest.mark.skipif(shutil.which("spatialrel") is None, reason="console script not installed")
def test_console_script_streams():
    src = (DATA / "scenes50.jsonl").read_text()
    r = subprocess.run(
        ["spatialrel", "gen-benchmark", "-", "-o", "-", "--target", "5", "--workers", "1"],
        input=src, capture_output=True, text=True, check=False,
    )
    assert r.returncode == 0
    assert len(r.stdout.splitlines()) == 35
    r = subprocess.run([sys.executable, "-m", "spatialrel.cli", "stats", "-"], input="", capture_output=True, text=True)
    assert r.returncode == 0 and "scenes   0" in r.stdout
