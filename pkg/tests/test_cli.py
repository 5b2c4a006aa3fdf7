import json

import pytest

from drivevla import cli


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "corpus"
    assert cli.main(["synth", "--scenes", "7", "--seed", "2", "--out", str(root)]) == cli.EXIT_OK
    return root


@pytest.fixture(scope="module")
def built(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "out"
    code = cli.main(["pipeline", "--input", str(corpus), "--out", str(out), "--rules-only"])
    assert code == cli.EXIT_OK
    return out


def _last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_no_command_is_a_usage_error(capsys):
    assert cli.main([]) == cli.EXIT_USAGE


def test_bad_flag_is_a_usage_error(capsys):
    assert cli.main(["sample", "--n-scenes", "many"]) == cli.EXIT_USAGE
    assert "usage:" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    code = cli.main(["ingest", "--config", str(tmp_path / "nope.yaml"), "--input", str(tmp_path)])
    assert code == cli.EXIT_USAGE
    assert "not found" in capsys.readouterr().err


def test_eval_requires_a_predictor():
    assert cli.main(["eval", "--input", "x"]) == cli.EXIT_USAGE


def test_bad_mix(tmp_path):
    assert cli.main(["synth", "--scenes", "1", "--seed", "0", "--out", str(tmp_path),
                     "--mix", "hover=1"]) == cli.EXIT_USAGE


def test_missing_input_directory_is_a_config_error(tmp_path, capsys):
    assert cli.main(["ingest", "--input", str(tmp_path / "void"), "--out", str(tmp_path)]) == cli.EXIT_USAGE
    assert "not found" in capsys.readouterr().err


def test_corrupt_recording_is_a_data_error(tmp_path, capsys):
    rec = tmp_path / "corpus" / "rec0"
    rec.mkdir(parents=True)
    (rec / "can.jsonl").write_text("{broken\n")
    assert cli.main(["ingest", "--input", str(tmp_path / "corpus"), "--out", str(tmp_path / "o")]) == cli.EXIT_DATA
    assert "data error" in capsys.readouterr().err


def test_stage_out_of_order_is_a_data_error(corpus, tmp_path):
    assert cli.main(["sample", "--input", str(corpus), "--out", str(tmp_path / "fresh")]) == cli.EXIT_DATA


def test_unreachable_vlm(corpus, tmp_path, capsys):
    out = tmp_path / "vlm"
    code = cli.main(["pipeline", "--input", str(corpus), "--out", str(out),
                     "--vlm-endpoint", "http://127.0.0.1:9"])
    assert code == cli.EXIT_VLM
    assert "vlm error" in capsys.readouterr().err


def test_pipeline_outputs(built):
    for rel in ("stats.json", "eval/report.json", "overlays/overview.png", "reports/distribution.csv"):
        assert (built / rel).exists(), rel
    assert list((built / "overlays").glob("*.csv"))
    # seven fault-free scenes of 600 frames each
    records = sorted((built / "records").glob("*.jsonl"))
    assert len(records) == 7
    assert sum(len(p.read_text().splitlines()) for p in records) == 7 * 600
    report = json.loads((built / "eval" / "report.json").read_text())
    assert report["split_scenes"] == {"train": 5, "val": 1, "test": 1}
    assert report["count"] == 55 and report["ade"] > 0


def test_eval_baseline_rerun_matches(built, corpus, capsys):
    first = json.loads((built / "eval" / "report.json").read_text())
    assert cli.main(["eval", "--input", str(corpus), "--out", str(built), "--baseline"]) == cli.EXIT_OK
    got = _last_json(capsys)
    assert got["ade"] == first["ade"] and got["fde"] == first["fde"] and got["count"] == first["count"]


def test_eval_with_prediction_file(built, corpus, capsys):
    preds = built / "eval" / "predictions.jsonl"
    copy = built.parent / "preds.jsonl"
    copy.write_text(preds.read_text())
    base = json.loads((built / "eval" / "report.json").read_text())
    assert cli.main(["eval", "--input", str(corpus), "--out", str(built),
                     "--predictions", str(copy)]) == cli.EXIT_OK
    assert _last_json(capsys)["ade"] == pytest.approx(base["ade"])


def test_stats_subcommand(built, corpus, capsys):
    assert cli.main(["stats", "--input", str(corpus), "--out", str(built)]) == cli.EXIT_OK
    stats = _last_json(capsys)
    assert stats["frame_count"] > 0 and stats["hours"] == pytest.approx(stats["frame_count"] / 72000)
