"""End-to-end command-line tests over a tiny synthetic run."""

import json
import os

import numpy as np
import pytest

from depthfeat.cli import main
from depthfeat.config import RunConfig, load_config, save_config
from depthfeat.featnet import load_keypoints


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small trained run shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = RunConfig(seed=2)
    cfg.dataset.n_frames = 16
    cfg.training.steps = 4
    cfg.training.checkpoint_every = 0
    cfg.model.scales = (1.0,)
    cfg.eval.ransac_iterations = 60
    config_path = root / "config.json"
    save_config(config_path, cfg)
    out = root / "train"
    code = main(["train", "--config", str(config_path), "--out", str(out)])
    assert code == 0
    return {"root": root, "config": config_path,
            "checkpoint": out / "checkpoint.npz", "train_out": out}


def run_ok(args):
    assert main([str(a) for a in args]) == 0


class TestTrainCommand:
    def test_outputs_exist(self, workspace):
        assert workspace["checkpoint"].exists()
        assert (workspace["train_out"] / "train_log.txt").exists()
        assert (workspace["train_out"] / "config.json").exists()

    def test_saved_config_reflects_overrides(self, workspace, tmp_path):
        cfg = load_config(workspace["config"])
        cfg.dataset.n_frames = 40
        cfg.training.steps = 0
        wide_cfg = tmp_path / "wide.json"
        save_config(wide_cfg, cfg)
        out = tmp_path / "t"
        run_ok(["train", "--config", wide_cfg, "--out", out,
                "--seed", 9, "--alpha", 2.0, "--offset", 30, "--no-vsm"])
        saved = load_config(out / "config.json")
        assert saved.seed == 9
        assert saved.loss.alpha == 2.0
        assert saved.training.offset == 30
        assert saved.training.use_vsm is False

    def test_rejects_unsupported_offsets(self, workspace, tmp_path):
        with pytest.raises(SystemExit):
            main(["train", "--config", str(workspace["config"]),
                  "--out", str(tmp_path), "--offset", "15"])

    def test_fixed_seed_reproduces_the_loss_log(self, workspace, tmp_path):
        logs = []
        for name in ("a", "b"):
            out = tmp_path / name
            run_ok(["train", "--config", workspace["config"], "--out", out])
            logs.append((out / "train_log.txt").read_bytes())
        assert logs[0] == logs[1]

    def test_disabled_synthesis_branch_shows_in_the_log(self, workspace,
                                                        tmp_path):
        out = tmp_path / "novsm"
        run_ok(["train", "--config", workspace["config"], "--out", out,
                "--no-vsm"])
        lines = (out / "train_log.txt").read_text().splitlines()
        assert lines
        assert all("l_v=nan" in line for line in lines
                   if not line.split()[1].startswith("skipped"))

    def test_zero_alpha_keeps_the_synthesis_log_but_not_the_total(
            self, workspace, tmp_path):
        out = tmp_path / "alpha0"
        run_ok(["train", "--config", workspace["config"], "--out", out,
                "--alpha", 0])
        for line in (out / "train_log.txt").read_text().splitlines():
            fields = dict(part.split("=", 1) for part in line.split())
            if "skipped" in fields:
                continue
            assert fields["l_v"] != "nan"
            assert fields["total"] == fields["l_cm"]


class TestExtractCommand:
    def test_writes_a_manifest_and_per_image_files(self, workspace, tmp_path):
        out = tmp_path / "kp"
        run_ok(["extract", "--config", workspace["config"],
                "--checkpoint", workspace["checkpoint"], "--out", out])
        lines = (out / "manifest.txt").read_text().splitlines()
        assert lines[0].startswith("# depthfeat-manifest")
        assert len(lines) == 1 + 16
        cfg = load_config(workspace["config"])
        for entry in lines[1:]:
            image_id, name = entry.split()
            kps = load_keypoints(out / name)
            assert 0 < len(kps) <= cfg.model.top_k
            assert all(kp.image_id == image_id for kp in kps)

    def test_reruns_are_byte_identical(self, workspace, tmp_path):
        outs = [tmp_path / "kp1", tmp_path / "kp2"]
        for out in outs:
            run_ok(["extract", "--config", workspace["config"],
                    "--checkpoint", workspace["checkpoint"], "--out", out])
        for name in sorted(os.listdir(outs[0])):
            assert ((outs[0] / name).read_bytes()
                    == (outs[1] / name).read_bytes()), name

    def test_empty_image_set_gives_an_empty_manifest(self, workspace,
                                                     tmp_path):
        cfg = load_config(workspace["config"])
        cfg.dataset.n_frames = 0
        empty_cfg = tmp_path / "empty.json"
        save_config(empty_cfg, cfg)
        out = tmp_path / "kp"
        run_ok(["extract", "--config", empty_cfg,
                "--checkpoint", workspace["checkpoint"], "--out", out])
        lines = (out / "manifest.txt").read_text().splitlines()
        assert len(lines) == 1

    def test_checkpoint_flag_is_required(self, workspace, tmp_path):
        with pytest.raises(SystemExit):
            main(["extract", "--config", str(workspace["config"]),
                  "--out", str(tmp_path)])


@pytest.fixture(scope="module")
def report(workspace, tmp_path_factory):
    out = tmp_path_factory.mktemp("eval")
    run_ok(["evaluate", "--config", workspace["config"],
            "--checkpoint", workspace["checkpoint"], "--out", out])
    doc = json.loads((out / "evaluation.json").read_text())
    return {"out": out, "doc": doc}


class TestEvaluateCommand:
    def test_report_has_all_metric_keys(self, report):
        doc = report["doc"]
        assert set(doc["mma"]) == {"0.10", "0.25", "0.50"}
        assert set(doc["mma_random_baseline"]) == {"0.10", "0.25", "0.50"}
        assert set(doc["localization"]) == {"0.5m_2.0deg", "1.0m_5.0deg",
                                            "5.0m_10.0deg"}
        assert doc["counts"]["reference_images"] == 8
        assert doc["counts"]["test_images"] == 8
        assert doc["counts"]["repository_size"] > 0

    def test_per_image_entries_cover_the_test_split(self, report):
        assert len(report["doc"]["per_image"]) == 8

    def test_reruns_are_byte_identical(self, workspace, report, tmp_path):
        out = tmp_path / "again"
        run_ok(["evaluate", "--config", workspace["config"],
                "--checkpoint", workspace["checkpoint"], "--out", out])
        assert ((out / "evaluation.json").read_bytes()
                == (report["out"] / "evaluation.json").read_bytes())

    def test_self_match_sanity_is_near_perfect(self, workspace, tmp_path):
        cfg = load_config(workspace["config"])
        cfg.eval.self_match = True
        self_cfg = tmp_path / "self.json"
        save_config(self_cfg, cfg)
        out = tmp_path / "self"
        run_ok(["evaluate", "--config", self_cfg,
                "--checkpoint", workspace["checkpoint"], "--out", out])
        doc = json.loads((out / "evaluation.json").read_text())
        assert doc["mma"]["0.10"] >= 95.0

    def test_empty_test_split_is_an_error(self, workspace, tmp_path, capsys):
        cfg = load_config(workspace["config"])
        cfg.dataset.n_frames = 1
        one_cfg = tmp_path / "one.json"
        save_config(one_cfg, cfg)
        code = main(["evaluate", "--config", str(one_cfg),
                     "--checkpoint", str(workspace["checkpoint"]),
                     "--out", str(tmp_path / "e")])
        assert code == 2
        assert "test split" in capsys.readouterr().err

    def test_mismatched_checkpoint_is_an_error(self, workspace, tmp_path,
                                               capsys):
        cfg = load_config(workspace["config"])
        cfg.model.feature_dim = 32
        other_cfg = tmp_path / "other.json"
        save_config(other_cfg, cfg)
        code = main(["evaluate", "--config", str(other_cfg),
                     "--checkpoint", str(workspace["checkpoint"]),
                     "--out", str(tmp_path / "e")])
        assert code == 2
        assert "checkpoint" in capsys.readouterr().err

    def test_human_readable_table_is_printed(self, workspace, tmp_path,
                                             capsys):
        run_ok(["evaluate", "--config", workspace["config"],
                "--checkpoint", workspace["checkpoint"],
                "--out", tmp_path / "t"])
        text = capsys.readouterr().out
        assert "mean matching accuracy (%)" in text
        assert "localization accuracy (%)" in text
        assert "0.10 m" in text


class TestLocalizeCommand:
    def test_writes_the_localization_report(self, workspace, tmp_path):
        out = tmp_path / "loc"
        run_ok(["localize", "--config", workspace["config"],
                "--checkpoint", workspace["checkpoint"], "--out", out])
        doc = json.loads((out / "localization.json").read_text())
        assert set(doc) == {"report_version", "counts", "localization",
                            "per_image"}
        assert set(doc["localization"]) == {"0.5m_2.0deg", "1.0m_5.0deg",
                                            "5.0m_10.0deg"}


class TestSynthesizeCommand:
    def test_writes_four_images_and_a_report(self, workspace, tmp_path):
        out = tmp_path / "syn"
        run_ok(["synthesize", "--config", workspace["config"],
                "--checkpoint", workspace["checkpoint"], "--out", out,
                "--index", 2])
        for name in ("source_depth.png", "target_depth.png",
                     "synthesized_depth.png", "error_map.png"):
            assert (out / name).exists(), name
        doc = json.loads((out / "synthesis.json").read_text())
        assert doc["pair"] == {"first_frame": 2, "offset": 10}
        assert 0.0 <= doc["masked_mae"] <= 1.0
        assert doc["constant_baseline_mae"] > 0.0
        assert doc["supervised_cells"] > 0

    def test_images_decode_to_the_coarse_grid(self, workspace, tmp_path):
        from PIL import Image
        out = tmp_path / "syn"
        run_ok(["synthesize", "--config", workspace["config"],
                "--checkpoint", workspace["checkpoint"], "--out", out])
        with Image.open(out / "synthesized_depth.png") as img:
            assert img.size == (8, 8)
            assert img.mode == "L"

    def test_out_of_range_pair_is_an_error(self, workspace, tmp_path, capsys):
        code = main(["synthesize", "--config", str(workspace["config"]),
                     "--checkpoint", str(workspace["checkpoint"]),
                     "--out", str(tmp_path), "--index", "99"])
        assert code == 2
        assert "outside" in capsys.readouterr().err

    def test_reports_are_reproducible(self, workspace, tmp_path):
        outs = [tmp_path / "s1", tmp_path / "s2"]
        for out in outs:
            run_ok(["synthesize", "--config", workspace["config"],
                    "--checkpoint", workspace["checkpoint"], "--out", out])
        assert ((outs[0] / "synthesis.json").read_bytes()
                == (outs[1] / "synthesis.json").read_bytes())


class TestParser:
    def test_unknown_command_is_rejected(self):
        with pytest.raises(SystemExit):
            main(["destroy"])

    def test_missing_checkpoint_file_is_a_clean_error(self, workspace,
                                                      tmp_path, capsys):
        code = main(["evaluate", "--config", str(workspace["config"]),
                     "--checkpoint", str(tmp_path / "missing.npz"),
                     "--out", str(tmp_path)])
        assert code == 2
        assert "error:" in capsys.readouterr().err
