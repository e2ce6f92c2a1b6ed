import json

import pytest

from collarlab.cli import main


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fx")
    rc = main(["synth", "--seed", "7", "--out", str(out), "--dogs", "6", "--days", "2"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def run_dir(fixture_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["process", "--data", str(fixture_dir), "--out", str(out)]) == 0
    assert main(["score", "--data", str(fixture_dir), "--out", str(out)]) == 0
    assert main(["features", "--data", str(fixture_dir), "--out", str(out),
                 "--periods", "m,all"]) == 0
    return out


class TestExitCodes:
    def test_missing_input_dir_is_3(self, tmp_path, capsys):
        rc = main(["ingest", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)])
        assert rc == 3
        assert "nope" in capsys.readouterr().err

    def test_usage_error_is_2(self):
        with pytest.raises(SystemExit) as e:
            main(["synth"])  # missing required --out
        assert e.value.code == 2

    def test_unknown_flag_is_error(self):
        with pytest.raises(SystemExit) as e:
            main(["synth", "--out", "x", "--bogus"])
        assert e.value.code == 2

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 2

    def test_help_available_for_all_subcommands(self, capsys):
        from collarlab.cli import build_parser

        parser = build_parser()
        subparsers = next(
            a for a in parser._actions if isinstance(a, type(parser._actions[-1]))
            and hasattr(a, "choices") and a.choices
        )
        for name, sp in subparsers.choices.items():
            text = sp.format_help()
            assert "--help" in text or "-h" in text
            assert name in sp.prog

    def test_bad_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 1, "frobs": 2}))
        rc = main(["ingest", "--config", str(cfg), "--data", str(tmp_path), "--out", str(tmp_path)])
        assert rc == 3
        assert "frobs" in capsys.readouterr().err


class TestPipelineCommands:
    def test_synth_writes_fixture(self, fixture_dir):
        assert (fixture_dir / "logs").is_dir()
        assert (fixture_dir / "ground_truth.json").exists()
        assert len(list((fixture_dir / "logs").glob("*.pklg"))) == 12

    def test_synth_deterministic(self, fixture_dir, tmp_path):
        out2 = tmp_path / "fx2"
        assert main(["synth", "--seed", "7", "--out", str(out2), "--dogs", "6", "--days", "2"]) == 0
        a = sorted((fixture_dir / "logs").glob("*.pklg"))[0]
        b = sorted((out2 / "logs").glob("*.pklg"))[0]
        assert a.read_bytes() == b.read_bytes()

    def test_ingest_qc(self, fixture_dir, tmp_path):
        out = tmp_path / "qc"
        assert main(["ingest", "--data", str(fixture_dir), "--out", str(out)]) == 0
        lines = (out / "qc_report.csv").read_text().strip().split("\n")
        assert len(lines) == 13
        assert lines[0].startswith("dog_id,date,coverage_fraction")

    def test_process_full_day_has_1080_windows(self, run_dir):
        timeline = sorted((run_dir / "timelines").glob("*.csv"))[0]
        rows = timeline.read_text().strip().split("\n")
        assert len(rows) == 1 + 1080

    def test_calibrate_outputs_json(self, fixture_dir, tmp_path):
        out = tmp_path / "cal"
        assert main(["calibrate", "--data", str(fixture_dir), "--out", str(out)]) == 0
        files = sorted(out.glob("calibration_*.json"))
        assert len(files) == 6
        params = json.loads(files[0].read_text())
        assert set(params) == {"gain", "offset", "residual_rms", "n_static_windows"}

    def test_classify_single_log(self, fixture_dir, tmp_path):
        log = sorted((fixture_dir / "logs").glob("*.pklg"))[0]
        out = tmp_path / "cls"
        assert main(["classify", "--log", str(log), "--out", str(out)]) == 0
        assert len(list(out.glob("timeline_*.csv"))) == 1

    def test_score_outputs(self, run_dir):
        scores = (run_dir / "trait_scores.csv").read_text()
        assert scores.startswith("dog_id,questionnaire,trait,score")
        labels = (run_dir / "trait_labels.csv").read_text().strip().split("\n")
        assert len(labels) == 7  # header + 6 dogs

    def test_features_matrices(self, run_dir):
        from collarlab.features.matrix import FeatureMatrix

        m = FeatureMatrix.from_csv((run_dir / "features_M.csv").read_text())
        assert m.X.shape[0] == 12  # 6 dogs x 2 days
        assert len(m.label_names) == 10

    def test_infer_and_report(self, run_dir, fixture_dir):
        assert main(["infer", "--features", str(run_dir), "--out", str(run_dir),
                     "--periods", "m,all", "--groups", "B1,G1,G5",
                     "--models", "baseline,rf", "--seed", "7",
                     "--traits", "dpq_excitability"]) == 0
        table2 = (run_dir / "table2.csv").read_text()
        assert "0.50 (0.00)" in table2
        assert main(["report", "--run", str(run_dir), "--out",
                     str(run_dir / "report.md")]) == 0
        report = (run_dir / "report.md").read_text()
        assert "Activity profiles" in report
        assert "| dog_01 |" in report

    def test_infer_deterministic(self, run_dir, tmp_path):
        out1, out2 = tmp_path / "i1", tmp_path / "i2"
        args = ["--features", str(run_dir), "--periods", "m", "--groups", "G1",
                "--models", "rf", "--seed", "9", "--traits", "dpq_excitability"]
        assert main(["infer", *args, "--out", str(out1)]) == 0
        assert main(["infer", *args, "--out", str(out2)]) == 0
        assert (out1 / "experiments.csv").read_bytes() == (out2 / "experiments.csv").read_bytes()

    def test_analyze(self, run_dir):
        assert main(["analyze", "--matrix", str(run_dir / "features_ALL.csv"),
                     "--out", str(run_dir), "--traits", "dpq_excitability"]) == 0
        text = (run_dir / "effects.csv").read_text()
        assert text.startswith("trait,ranking,rank,feature")

    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("COLLARLAB_SEED", "7")
        out = tmp_path / "fx_env"
        assert main(["synth", "--out", str(out), "--dogs", "2", "--days", "1"]) == 0
        manifest = json.loads((out / "ground_truth.json").read_text())
        assert manifest["config"]["seed"] == 7
