from __future__ import annotations

import json

import pytest

from voxlink.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from voxlink.io import Manifest
from voxlink.records import pair_scores_from_csv


def files(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """simulate -> harmonize -> score on a tiny cohort, shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--out", str(root / "sim"), "--subjects", "3", "--variants", "1",
                 "--dims", "32", "--seed", "4"]) == EXIT_OK
    assert main(["harmonize", "--out", str(root / "harm"), "--manifest", str(root / "sim" / "manifest.csv"),
                 "--dims", "32", "--skip-register"]) == EXIT_OK
    assert main(["score", "--out", str(root / "score"), "--manifest", str(root / "harm" / "manifest.csv"),
                 "--measures", "SSIM,PCC"]) == EXIT_OK
    return root


class TestSimulate:
    def test_same_seed_is_byte_identical(self, tmp_path):
        args = ["simulate", "--subjects", "2", "--variants", "1", "--dims", "32", "--seed", "9"]
        assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
        assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
        assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
        a, b = files(tmp_path / "a"), files(tmp_path / "b")
        assert a == b and len(a) == 13  # 4 volumes with data, header and mask files, plus the manifest

    def test_usage_errors(self, tmp_path, capsys):
        assert main(["simulate", "--out", str(tmp_path), "--subjects", "0"]) == EXIT_USAGE
        assert main(["simulate", "--out", str(tmp_path), "--dims", "x"]) == EXIT_USAGE
        assert main(["simulate", "--out", str(tmp_path), "--dims", "8"]) == EXIT_USAGE
        assert main(["simulate"]) == EXIT_USAGE
        assert main(["frobnicate"]) == EXIT_USAGE
        assert main([]) == EXIT_USAGE
        assert "usage" in capsys.readouterr().err

    def test_worker_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("VOXLINK_WORKERS", "zero")
        assert main(["simulate", "--out", str(tmp_path), "--subjects", "1", "--dims", "32"]) == EXIT_USAGE
        monkeypatch.setenv("VOXLINK_WORKERS", "2")
        assert main(["simulate", "--out", str(tmp_path), "--subjects", "2", "--variants", "0", "--dims", "32"]) == EXIT_OK
        assert len(Manifest.read(tmp_path / "manifest.csv")) == 2


class TestConfig:
    def run(self, tmp_path, text, *extra, suffix=".toml"):
        cfg = tmp_path / f"cfg{suffix}"
        cfg.write_text(text)
        out = tmp_path / "out"
        code = main(["--config", str(cfg), "simulate", "--out", str(out), "--dims", "32", *extra])
        n = len(Manifest.read(out / "manifest.csv")) if code == EXIT_OK else None
        return code, n

    def test_precedence(self, tmp_path):
        # default 4 variants; top-level value; subcommand table; then the flag
        assert self.run(tmp_path, "subjects = 2\nvariants = 0\n") == (EXIT_OK, 2)
        assert self.run(tmp_path, "subjects = 2\nvariants = 0\n[simulate]\nsubjects = 3\n") == (EXIT_OK, 3)
        assert self.run(tmp_path, "variants = 0\n[simulate]\nsubjects = 3\n", "--subjects", "1") == (EXIT_OK, 1)
        assert self.run(tmp_path, '{"subjects": 1, "variants": 1}', suffix=".json") == (EXIT_OK, 2)

    def test_top_level_keys_of_other_commands_are_ignored(self, tmp_path):
        assert self.run(tmp_path, 'subjects = 1\nvariants = 0\nmethod = "otsu"\n') == (EXIT_OK, 1)

    @pytest.mark.parametrize("text", [
        "subjects = 0\n",
        'subjects = "many"\n',
        "[simulate]\ncolour = 1\n",
        "[plotting]\nx = 1\n",
        "subjects = \n",
    ])
    def test_bad_config_is_a_usage_error(self, tmp_path, text):
        assert self.run(tmp_path, text)[0] == EXIT_USAGE

    def test_missing_config_is_a_failure(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.toml"), "simulate", "--out", str(tmp_path)]) == EXIT_FAILURE


class TestHarmonize:
    def test_outputs_and_provenance(self, pipeline):
        harm = pipeline / "harm"
        manifest = Manifest.read(harm / "manifest.csv")
        assert len(manifest) == 6
        manifest.check_paths()
        summary = json.loads((harm / "harmonize.json").read_text())
        assert summary["stages"] == {"register": False, "intensity": True, "skullstrip": True}
        assert summary["n_volumes"] == 6 and summary["n_failed"] == 0
        prov = sorted((harm / "provenance").glob("*.json"))
        assert len(prov) == 6
        assert "seconds" in json.loads(prov[0].read_text())

    def test_usage_and_runtime_errors(self, pipeline, tmp_path):
        man = str(pipeline / "sim" / "manifest.csv")
        skip_all = ["--skip-register", "--skip-intensity", "--skip-skullstrip"]
        assert main(["harmonize", "--out", str(tmp_path), "--manifest", man, *skip_all]) == EXIT_USAGE
        assert main(["harmonize", "--out", str(tmp_path), "--manifest", str(tmp_path / "none.csv")]) == EXIT_FAILURE
        assert main(["harmonize", "--out", str(tmp_path), "--manifest", man,
                     "--template", str(tmp_path / "none.vol")]) == EXIT_FAILURE


class TestScoreThresholdEvaluateReport:
    def test_scores(self, pipeline):
        rows = pair_scores_from_csv((pipeline / "score" / "scores.csv").read_text())
        assert len(rows) == 2 * 15 and {r.measure for r in rows} == {"SSIM", "PCC"}

    def test_bad_measure(self, pipeline, tmp_path):
        man = str(pipeline / "harm" / "manifest.csv")
        assert main(["score", "--out", str(tmp_path), "--manifest", man, "--measures", "SSIM,XCORR"]) == EXIT_USAGE

    def test_threshold_evaluate_report(self, pipeline, tmp_path, capsys):
        scores = str(pipeline / "score" / "scores.csv")
        man = str(pipeline / "harm" / "manifest.csv")
        assert main(["threshold", "--out", str(tmp_path), "--scores", scores, "--method", "otsu"]) == EXIT_OK
        models = json.loads((tmp_path / "thresholds.json").read_text())
        assert {m["measure"] for m in models} == {"SSIM", "PCC"}
        assert main(["evaluate", "--out", str(tmp_path), "--manifest", man, "--scores", scores,
                     "--thresholds", str(tmp_path / "thresholds.json"), "--dataset-id", "tiny"]) == EXIT_OK
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["dataset_id"] == "tiny" and report["n_intra"] == 3
        for m in models:
            assert report["measures"][m["measure"]]["tau"] == m["tau"]
        capsys.readouterr()
        assert main(["report", "--out", str(tmp_path / "plots"), "--report", str(tmp_path / "report.json")]) == EXIT_OK
        assert capsys.readouterr().out.startswith("Dataset: tiny")
        assert (tmp_path / "plots" / "SSIM.svg").exists() and (tmp_path / "plots" / "table.txt").exists()

    def test_evaluate_is_idempotent(self, pipeline, tmp_path):
        args = ["evaluate", "--manifest", str(pipeline / "harm" / "manifest.csv"),
                "--scores", str(pipeline / "score" / "scores.csv"), "--method", "otsu"]
        assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
        assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
        assert files(tmp_path / "a") == files(tmp_path / "b")

    def test_fixed_tau_and_thresholds_conflict(self, pipeline, tmp_path):
        args = ["evaluate", "--out", str(tmp_path), "--manifest", str(pipeline / "harm" / "manifest.csv"),
                "--scores", str(pipeline / "score" / "scores.csv")]
        assert main(args + ["--fixed-tau", "0.5", "--thresholds", "t.json"]) == EXIT_USAGE
        assert main(args + ["--scores", str(tmp_path / "none.csv")]) == EXIT_FAILURE

    def test_report_refuses_one_class(self, pipeline, tmp_path):
        assert main(["evaluate", "--out", str(tmp_path), "--manifest", str(pipeline / "harm" / "manifest.csv"),
                     "--scores", str(pipeline / "score" / "scores.csv"), "--fixed-tau", "0.5"]) == EXIT_OK
        report = json.loads((tmp_path / "report.json").read_text())
        report["n_intra"] = 0
        (tmp_path / "one.json").write_text(json.dumps(report))
        assert main(["report", "--out", str(tmp_path / "plots"), "--report", str(tmp_path / "one.json")]) == EXIT_FAILURE
        assert main(["report", "--out", str(tmp_path), "--report", str(tmp_path / "none.json")]) == EXIT_FAILURE
