"""Command-line pipeline: contracts, exit codes, determinism."""

import json
import os

import numpy as np
import pytest

from sedfuse.cli import main
from sedfuse.core import parse_events, parse_framegrids
from sedfuse.core import ClassVocabulary

TINY = {
    "seed": 7,
    "n_clips": 6,
    "n_classes": 4,
    "frames_per_clip": 128,
    "events_per_clip": [1, 3],
    "n_sources": 4,
}


def write_tiny_scenario(tmp_path, **overrides):
    data = dict(TINY)
    data.update(overrides)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(data))
    return path


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def dataset(tmp_path):
    cfg = write_tiny_scenario(tmp_path)
    out = tmp_path / "data"
    assert run("simulate", "--config", cfg, "--out", out) == 0
    return out


class TestSimulate:
    def test_emits_dataset_files(self, dataset):
        for name in (
            "events.tsv", "weak.tsv", "tags.jsonl", "sep_manifest.jsonl",
            "grids_model_1.jsonl", "grids_model_2.jsonl", "grids_model_3.jsonl",
            "source_events.tsv", "run_manifest.json",
        ):
            assert (dataset / name).exists(), name

    def test_same_seed_identical_files(self, tmp_path):
        cfg = write_tiny_scenario(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run("simulate", "--config", cfg, "--out", out1) == 0
        assert run("simulate", "--config", cfg, "--out", out2) == 0
        for name in ("events.tsv", "weak.tsv", "grids_model_1.jsonl", "tags.jsonl"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_missing_config_exits_2(self, tmp_path, capsys):
        rc = run("simulate", "--config", tmp_path / "nope.json", "--out", tmp_path / "o")
        assert rc == 2
        assert "nope.json" in capsys.readouterr().err

    def test_worker_cap_does_not_change_output(self, tmp_path, monkeypatch):
        cfg = write_tiny_scenario(tmp_path)
        out1, out2 = tmp_path / "serial", tmp_path / "parallel"
        assert run("simulate", "--config", cfg, "--out", out1) == 0
        monkeypatch.setenv("SEDFUSE_THREADS", "3")
        assert run("simulate", "--config", cfg, "--out", out2) == 0
        assert (out1 / "grids_model_1.jsonl").read_bytes() == (
            out2 / "grids_model_1.jsonl"
        ).read_bytes()


class TestSPL:
    def test_selection_written(self, dataset, tmp_path, capsys):
        out = tmp_path / "spl"
        rc = run(
            "spl", "--tags", dataset / "tags.jsonl", "--weak", dataset / "weak.tsv",
            "--manifest", dataset / "sep_manifest.jsonl", "--out", out,
        )
        assert rc == 0
        lines = (out / "selection.jsonl").read_text().splitlines()
        assert len(lines) == TINY["n_clips"]
        summary = json.loads(capsys.readouterr().out)
        assert summary["total_sources"] == TINY["n_clips"] * TINY["n_sources"]

    def test_higher_tau_selects_no_more(self, dataset, tmp_path):
        counts = {}
        for tau in ("0.5", "0.9"):
            out = tmp_path / f"spl{tau}"
            run(
                "spl", "--tags", dataset / "tags.jsonl", "--weak", dataset / "weak.tsv",
                "--manifest", dataset / "sep_manifest.jsonl", "--tau", tau, "--out", out,
            )
            records = [
                json.loads(line)
                for line in (out / "selection.jsonl").read_text().splitlines()
            ]
            counts[tau] = sum(len(r["selected"]) for r in records)
        assert counts["0.9"] <= counts["0.5"]

    def test_empty_manifest_ok(self, dataset, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        out = tmp_path / "spl_empty"
        rc = run(
            "spl", "--tags", dataset / "tags.jsonl", "--weak", dataset / "weak.tsv",
            "--manifest", empty, "--out", out,
        )
        assert rc == 0
        assert (out / "selection.jsonl").read_text() == ""

    def test_clip_id_mismatch_exits_2(self, dataset, tmp_path):
        bad = tmp_path / "bad_manifest.jsonl"
        bad.write_text('{"mixture_id":"ghost","sources":["ghost_src00"]}\n')
        rc = run(
            "spl", "--tags", dataset / "tags.jsonl", "--weak", dataset / "weak.tsv",
            "--manifest", bad, "--out", tmp_path / "o",
        )
        assert rc == 2


class TestFuse:
    def test_classwise_beta_zero_equals_average(self, dataset, tmp_path):
        table = tmp_path / "f1_table.json"
        classes = [f"event_{i:02d}" for i in range(4)]
        table.write_text(json.dumps({
            "models": ["model_1", "model_2", "model_3"],
            "classes": classes,
            "f1": [[0.9, 0.2, 0.5, 0.7], [0.1, 0.8, 0.5, 0.2], [0.4, 0.4, 0.9, 0.1]],
        }))
        grids_args = []
        for m in (1, 2, 3):
            grids_args += ["--grids", str(dataset / f"grids_model_{m}.jsonl")]
        out_avg, out_cw = tmp_path / "avg", tmp_path / "cw"
        assert run("fuse", "--mode", "average", *grids_args, "--out", out_avg) == 0
        assert run(
            "fuse", "--mode", "classwise", *grids_args, "--f1-table", table,
            "--beta", "0", "--out", out_cw,
        ) == 0
        vocab = ClassVocabulary(tuple(classes))
        a = parse_framegrids(out_avg / "fused.jsonl", vocab)
        b = parse_framegrids(out_cw / "fused.jsonl", vocab)
        for ga, gb in zip(a, b):
            np.testing.assert_allclose(ga.values, gb.values, atol=1e-12)

    def test_pair_alpha_one_is_first_input(self, dataset, tmp_path):
        out = tmp_path / "pair"
        assert run(
            "fuse", "--mode", "pair",
            "--grids", dataset / "grids_model_1.jsonl",
            "--grids", dataset / "grids_model_2.jsonl",
            "--alpha", "1.0", "--out", out,
        ) == 0
        vocab = ClassVocabulary(tuple(f"event_{i:02d}" for i in range(4)))
        fused = parse_framegrids(out / "fused.jsonl", vocab)
        first = parse_framegrids(dataset / "grids_model_1.jsonl", vocab)
        for ga, gb in zip(fused, first):
            np.testing.assert_array_equal(ga.values, gb.values)

    def test_pair_alpha_fit_writes_curve(self, dataset, tmp_path):
        out = tmp_path / "pairfit"
        rc = run(
            "fuse", "--mode", "pair",
            "--grids", dataset / "grids_model_1.jsonl",
            "--grids", dataset / "grids_model_2.jsonl",
            "--alpha", "fit", "--truth", dataset / "events.tsv", "--out", out,
        )
        assert rc == 0
        curve = json.loads((out / "curves.json").read_text())
        assert curve["parameter"] == "alpha"
        assert len(curve["curve"]) == 101
        assert 0.0 <= curve["best"] <= 1.0

    def test_pair_bad_alpha_exits_2(self, dataset, tmp_path):
        rc = run(
            "fuse", "--mode", "pair",
            "--grids", dataset / "grids_model_1.jsonl",
            "--grids", dataset / "grids_model_2.jsonl",
            "--alpha", "banana", "--out", tmp_path / "o",
        )
        assert rc == 2

    def test_pair_needs_two_inputs(self, dataset, tmp_path):
        rc = run(
            "fuse", "--mode", "pair", "--grids", dataset / "grids_model_1.jsonl",
            "--alpha", "0.5", "--out", tmp_path / "o",
        )
        assert rc == 2

    def test_classwise_without_table_exits_2(self, dataset, tmp_path):
        rc = run(
            "fuse", "--mode", "classwise", "--grids", dataset / "grids_model_1.jsonl",
            "--beta", "1", "--out", tmp_path / "o",
        )
        assert rc == 2

    def test_beta_sweep_writes_curve(self, dataset, tmp_path):
        table = tmp_path / "f1_table.json"
        classes = [f"event_{i:02d}" for i in range(4)]
        table.write_text(json.dumps({
            "models": ["model_1", "model_2"],
            "classes": classes,
            "f1": [[0.9, 0.2, 0.5, 0.7], [0.1, 0.8, 0.5, 0.2]],
        }))
        out = tmp_path / "sweep"
        rc = run(
            "fuse", "--mode", "classwise",
            "--grids", dataset / "grids_model_1.jsonl",
            "--grids", dataset / "grids_model_2.jsonl",
            "--f1-table", table, "--beta", "0,2,8",
            "--truth", dataset / "events.tsv", "--out", out,
        )
        assert rc == 0
        curve = json.loads((out / "curves.json").read_text())
        assert curve["parameter"] == "beta"
        assert len(curve["curve"]) == 3
        assert curve["best"] in [b for b, _ in curve["curve"]]


class TestDecodeScore:
    def test_oracle_grids_roundtrip_to_truth(self, tmp_path):
        cfg = write_tiny_scenario(
            tmp_path,
            models=[{"name": "oracle",
                     "default": {"miss_rate": 0.0, "false_alarm_rate": 0.0,
                                 "jitter_frames": 0, "sharpness": "inf"}}],
        )
        data = tmp_path / "data"
        run("simulate", "--config", cfg, "--out", data)
        out = tmp_path / "decoded"
        rc = run(
            "decode", "--grids", data / "grids_oracle.jsonl",
            "--median-windows", "1", "--out", out,
        )
        assert rc == 0
        truth = parse_events(data / "events.tsv")
        decoded = parse_events(out / "events.tsv")
        key = lambda e: (e.clip_id, round(e.onset, 9), round(e.offset, 9), e.event_label)
        assert sorted(map(key, decoded)) == sorted(map(key, truth))

    def test_score_est_equals_ref_gives_100(self, dataset, tmp_path, capsys):
        out = tmp_path / "score"
        rc = run(
            "score", "--ref", dataset / "events.tsv", "--est", dataset / "events.tsv",
            "--metric", "f1", "--out", out,
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["overall"]["system"]["collar_f1"] == 1.0
        assert "100.0" in (out / "report.txt").read_text()

    def test_score_oracle_psds_is_one(self, tmp_path):
        cfg = write_tiny_scenario(
            tmp_path,
            models=[{"name": "oracle",
                     "default": {"miss_rate": 0.0, "false_alarm_rate": 0.0,
                                 "jitter_frames": 0, "sharpness": "inf"}}],
        )
        data = tmp_path / "data"
        run("simulate", "--config", cfg, "--out", data)
        out = tmp_path / "score"
        rc = run(
            "score", "--ref", data / "events.tsv", "--grids", data / "grids_oracle.jsonl",
            "--metric", "all", "--median-windows", "1", "--out", out,
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["overall"]["system"]["psds1"] == pytest.approx(1.0, abs=1e-9)
        assert report["overall"]["system"]["psds2"] == pytest.approx(1.0, abs=1e-9)

    def test_report_json_reparses_equal(self, dataset, tmp_path):
        out = tmp_path / "score"
        run(
            "score", "--ref", dataset / "events.tsv", "--est", dataset / "events.tsv",
            "--metric", "f1", "--out", out,
        )
        raw = (out / "report.json").read_text()
        assert json.loads(raw) == json.loads(json.dumps(json.loads(raw)))

    def test_psds_without_grids_exits_2(self, dataset, tmp_path):
        rc = run(
            "score", "--ref", dataset / "events.tsv", "--est", dataset / "events.tsv",
            "--metric", "psds1", "--out", tmp_path / "o",
        )
        assert rc == 2

    def test_empty_reference_exits_2(self, dataset, tmp_path):
        empty = tmp_path / "empty.tsv"
        empty.write_text("filename\tonset\toffset\tevent_label\n")
        rc = run(
            "score", "--ref", empty, "--est", dataset / "events.tsv",
            "--metric", "f1", "--out", tmp_path / "o",
        )
        assert rc == 2


class TestExperiment:
    def test_structural_contract_and_determinism(self, tmp_path):
        cfg = write_tiny_scenario(tmp_path, n_clips=8)
        out1, out2 = tmp_path / "e1", tmp_path / "e2"
        assert run("experiment", "--config", cfg, "--seed", "7", "--out", out1) == 0
        assert run("experiment", "--config", cfg, "--seed", "7", "--out", out2) == 0
        report = json.loads((out1 / "report.json").read_text())
        assert report["systems"] == [
            "model_1", "model_2", "model_3", "average", "logistic", "classwise",
        ]
        for system in report["systems"]:
            row = report["overall"][system]
            for metric in ("collar_f1", "psds1", "psds2"):
                assert 0.0 <= row[metric] <= 1.0
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()

    def test_seed_changes_report(self, tmp_path):
        cfg = write_tiny_scenario(tmp_path, n_clips=8)
        out1, out2 = tmp_path / "e1", tmp_path / "e2"
        run("experiment", "--config", cfg, "--seed", "7", "--out", out1)
        run("experiment", "--config", cfg, "--seed", "8", "--out", out2)
        assert (out1 / "report.json").read_bytes() != (out2 / "report.json").read_bytes()


class TestManifestFile:
    def test_run_manifest_written(self, dataset):
        manifest = json.loads((dataset / "run_manifest.json").read_text())
        assert manifest["subcommand"] == "simulate"
        assert manifest["tool_version"]
        assert any(p.endswith("events.tsv") for p in manifest["outputs"])
        assert manifest["wall_clock_seconds"] >= 0
