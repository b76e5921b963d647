"""Command-line driver: end-to-end smoke over synth/train/eval and the
interpretability commands, option precedence, exit codes, and the run
manifest audit trail."""

import json
import os

import numpy as np
import pytest

from nutricast import __version__
from nutricast.cli import main


def run_cli(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(out), "--n", "24", "--seed", "17"]) == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, synth_dir):
    out = tmp_path_factory.mktemp("run")
    code = main(
        [
            "train",
            "--out", str(out),
            "--manifest", str(synth_dir / "manifest.jsonl"),
            "--variant", "VLF",
            "--nutrient", "fat",
            "--epochs", "2",
            "--batch-size", "8",
            "--quiet",
        ]
    )
    assert code == 0
    return out


class TestSynth:
    def test_layout_and_determinism(self, synth_dir, tmp_path, capsys):
        assert (synth_dir / "manifest.jsonl").is_file()
        assert (synth_dir / "synth-truth.json").is_file()
        assert len(list((synth_dir / "images").glob("*.png"))) == 24
        assert (synth_dir / "run-manifest.json").is_file()
        again = tmp_path / "again"
        code, out, _ = run_cli(
            ["synth", "--out", str(again), "--n", "24", "--seed", "17"], capsys
        )
        assert code == 0
        assert "wrote 24 items" in out
        assert (again / "manifest.jsonl").read_bytes() == (
            synth_dir / "manifest.jsonl"
        ).read_bytes()

    def test_ingest_summary(self, synth_dir, tmp_path, capsys):
        out = tmp_path / "ingest"
        code, text, _ = run_cli(
            [
                "ingest",
                "--out", str(out),
                "--manifest", str(synth_dir / "manifest.jsonl"),
            ],
            capsys,
        )
        assert code == 0
        assert "24 valid items" in text
        summary = json.loads((out / "reports" / "ingest-summary.json").read_text())
        assert summary["n_items"] == 24
        assert set(summary["nutrients"]) == {
            "calories", "carbohydrate", "fat", "protein", "sodium",
        }

    def test_bin_artifact(self, synth_dir, tmp_path, capsys):
        out = tmp_path / "bin"
        code, text, _ = run_cli(
            [
                "bin",
                "--out", str(out),
                "--manifest", str(synth_dir / "manifest.jsonl"),
                "--nutrient", "fat",
            ],
            capsys,
        )
        assert code == 0
        payload = json.loads((out / "reports" / "binning-fat.json").read_text())
        assert payload["n_items"] == 24
        assert payload["spec"]["nutrient"] == "fat"


class TestTrainEval:
    def test_train_artifacts(self, trained_dir):
        assert (trained_dir / "checkpoint" / "model.ckpt").is_file()
        loss_csv = (trained_dir / "checkpoint" / "loss.csv").read_text()
        assert loss_csv.splitlines()[0] == "epoch,step,loss"
        assert (trained_dir / "reports" / "split.json").is_file()
        assert (trained_dir / "reports" / "loss.png").stat().st_size > 0

    def test_run_manifest_records_the_run(self, trained_dir, synth_dir):
        manifest = json.loads((trained_dir / "run-manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["seed"] == 0
        assert manifest["version"] == __version__
        assert manifest["resolved_config"]["variant"] == "VLF"
        assert manifest["resolved_config"]["epochs"] == 2
        assert str(synth_dir / "manifest.jsonl") in manifest["input_hashes"]
        digest = manifest["input_hashes"][str(synth_dir / "manifest.jsonl")]
        assert len(digest) == 64
        outputs = [os.path.basename(p) for p in manifest["outputs"]]
        assert "model.ckpt" in outputs
        assert manifest["outputs"] == sorted(manifest["outputs"])

    def test_eval_artifacts(self, trained_dir, synth_dir, tmp_path, capsys):
        out = tmp_path / "eval"
        code, text, _ = run_cli(
            [
                "eval",
                "--out", str(out),
                "--checkpoint", str(trained_dir / "checkpoint" / "model.ckpt"),
                "--manifest", str(synth_dir / "manifest.jsonl"),
                "--split", "test",
            ],
            capsys,
        )
        assert code == 0
        assert "macro AUC" in text
        report = json.loads((out / "reports" / "eval-test.json").read_text())
        assert report["split"] == "test"
        assert "fat" in report["channels"]
        assert (out / "reports" / "errors-test-fat.csv").is_file()
        assert (out / "reports" / "auc-test.png").stat().st_size > 0
        assert (out / "reports" / "error-buckets-test.png").stat().st_size > 0

    def test_report_aggregates(self, trained_dir, capsys):
        code, text, _ = run_cli(["report", "--out", str(trained_dir)], capsys)
        assert code == 0
        summary = json.loads((trained_dir / "reports" / "summary.json").read_text())
        assert "split.json" in summary["generated"]

    def test_report_empty_dir_fails(self, tmp_path, capsys):
        code, _, err = run_cli(["report", "--out", str(tmp_path / "empty")], capsys)
        assert code == 1
        assert "error: DomainError" in err


class TestInterpretCommands:
    def test_gradcam_writes_overlay(self, trained_dir, synth_dir, tmp_path, capsys):
        out = tmp_path / "cam"
        code, text, _ = run_cli(
            [
                "gradcam",
                "--out", str(out),
                "--checkpoint", str(trained_dir / "checkpoint" / "model.ckpt"),
                "--manifest", str(synth_dir / "manifest.jsonl"),
                "--id", "synth-00000",
                "--nutrient", "fat",
            ],
            capsys,
        )
        assert code == 0
        assert "peak patch" in text
        assert (out / "overlays" / "gradcam-synth-00000-fat.png").stat().st_size > 0
        grid = json.loads(
            (out / "overlays" / "gradcam-synth-00000-fat.json").read_text()
        )["grid"]
        assert np.array(grid).shape == (2, 2)

    def test_saliency_writes_json_and_html(self, trained_dir, synth_dir, tmp_path, capsys):
        out = tmp_path / "sal"
        code, text, _ = run_cli(
            [
                "saliency",
                "--out", str(out),
                "--checkpoint", str(trained_dir / "checkpoint" / "model.ckpt"),
                "--manifest", str(synth_dir / "manifest.jsonl"),
                "--id", "synth-00000",
                "--nutrient", "fat",
                "--class", "0",
            ],
            capsys,
        )
        assert code == 0
        assert "top token" in text
        assert (out / "overlays" / "saliency-synth-00000-fat.json").is_file()
        html = (out / "overlays" / "saliency-synth-00000-fat.html").read_text()
        assert "<span" in html

    def test_unknown_item_id(self, trained_dir, synth_dir, tmp_path, capsys):
        code, _, err = run_cli(
            [
                "gradcam",
                "--out", str(tmp_path / "cam"),
                "--checkpoint", str(trained_dir / "checkpoint" / "model.ckpt"),
                "--manifest", str(synth_dir / "manifest.jsonl"),
                "--id", "nope",
                "--nutrient", "fat",
            ],
            capsys,
        )
        assert code == 1
        assert "not found" in err


class TestValidate:
    def test_three_source_artifacts(self, trained_dir, synth_dir, tmp_path, capsys):
        chem = tmp_path / "chem.csv"
        chem.write_text(
            "id,nutrient,chem_mean,chem_sd,method\n"
            "synth-00000,fat,5.0,0.2,soxhlet\n"
            "synth-00001,fat,2.0,0.1,soxhlet\n"
        )
        out = tmp_path / "val"
        code, text, _ = run_cli(
            [
                "validate",
                "--out", str(out),
                "--checkpoint", str(trained_dir / "checkpoint" / "model.ckpt"),
                "--manifest", str(synth_dir / "manifest.jsonl"),
                "--chem", str(chem),
                "--include-fat",
            ],
            capsys,
        )
        assert code == 0
        assert "under-10% fraction" in text
        payload = json.loads((out / "reports" / "three-source.json").read_text())
        assert payload["summary"]["n_rows"] == 2
        assert (out / "reports" / "three-source.csv").is_file()
        assert (out / "reports" / "three-source.png").stat().st_size > 0


class TestOptionResolution:
    def test_flag_beats_env_beats_config_beats_default(self, tmp_path, capsys, monkeypatch):
        config = tmp_path / "config.json"
        config.write_text('{"n": 3}')

        out = tmp_path / "d_default"
        assert main(["synth", "--out", str(out)]) == 0
        assert json.loads((out / "run-manifest.json").read_text())["resolved_config"]["n"] == 100

        out = tmp_path / "d_config"
        assert main(["synth", "--out", str(out), "--config", str(config)]) == 0
        assert json.loads((out / "run-manifest.json").read_text())["resolved_config"]["n"] == 3

        monkeypatch.setenv("NUTRICAST_N", "5")
        out = tmp_path / "d_env"
        assert main(["synth", "--out", str(out), "--config", str(config)]) == 0
        assert json.loads((out / "run-manifest.json").read_text())["resolved_config"]["n"] == 5

        out = tmp_path / "d_flag"
        assert main(["synth", "--out", str(out), "--config", str(config), "--n", "7"]) == 0
        assert json.loads((out / "run-manifest.json").read_text())["resolved_config"]["n"] == 7
        capsys.readouterr()

    def test_config_file_must_be_json_object(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text("[1, 2]")
        code, _, err = run_cli(
            ["synth", "--out", str(tmp_path / "x"), "--config", str(config)], capsys
        )
        assert code == 1
        assert "JSON object" in err

    def test_missing_config_file(self, tmp_path, capsys):
        code, _, err = run_cli(
            ["synth", "--out", str(tmp_path / "x"), "--config", str(tmp_path / "no.json")],
            capsys,
        )
        assert code == 1
        assert "config file not found" in err


class TestExitCodes:
    def test_domain_failure_exits_one(self, tmp_path, capsys):
        code, _, err = run_cli(
            ["ingest", "--out", str(tmp_path / "x"), "--manifest", str(tmp_path / "no.jsonl")],
            capsys,
        )
        assert code == 1
        assert err.startswith("error: ")

    def test_usage_error_exits_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["no-such-command"])
        assert exc.value.code == 2
        capsys.readouterr()

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_thread_cap_validated(self, synth_dir, tmp_path, capsys):
        code, _, err = run_cli(
            [
                "ingest",
                "--out", str(tmp_path / "x"),
                "--manifest", str(synth_dir / "manifest.jsonl"),
                "--threads", "0",
            ],
            capsys,
        )
        assert code == 1
        assert "threads" in err

    def test_thread_cap_smoke(self, synth_dir, tmp_path, capsys):
        code, _, _ = run_cli(
            [
                "ingest",
                "--out", str(tmp_path / "x"),
                "--manifest", str(synth_dir / "manifest.jsonl"),
                "--threads", "2",
            ],
            capsys,
        )
        assert code == 0
