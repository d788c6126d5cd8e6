import os

import numpy as np
import pytest

from flowfuse.cli import main


SYNTH_ARGS = ["synth", "--width", "64", "--height", "64", "--vx", "48",
              "--duration-s", "0.3", "--seed", "9"]


def run(argv, capsys=None):
    code = main(argv)
    if capsys is not None:
        cap = capsys.readouterr()
        return code, cap.out, cap.err
    return code


def tree_bytes(root):
    """Map of relative path -> file bytes for a whole directory tree."""
    out = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            p = os.path.join(dirpath, name)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "scene"
    assert main(SYNTH_ARGS + ["--out", str(out)]) == 0
    return out


class TestSynth:
    def test_outputs_and_manifest(self, dataset):
        assert (dataset / "events.evt1").exists()
        assert (dataset / "frames" / "index.txt").exists()
        assert (dataset / "gt" / "index.txt").exists()
        manifest = (dataset / "manifest.txt").read_text()
        assert "seed=9" in manifest
        assert "width=64" in manifest

    def test_byte_identical_reruns(self, dataset, tmp_path):
        out2 = tmp_path / "scene2"
        assert main(SYNTH_ARGS + ["--out", str(out2)]) == 0
        a, b = tree_bytes(dataset), tree_bytes(out2)
        # manifests record the differing output paths; everything else is exact
        ma = a.pop("manifest.txt").decode().replace(str(dataset), "OUT")
        mb = b.pop("manifest.txt").decode().replace(str(out2), "OUT")
        assert ma == mb
        assert a == b

    def test_manifest_reproduces_run(self, dataset, tmp_path):
        out2 = tmp_path / "from_manifest"
        assert main(["synth", "--config", str(dataset / "manifest.txt"),
                     "--out", str(out2)]) == 0
        a = tree_bytes(dataset)
        b = tree_bytes(out2)
        del a["manifest.txt"], b["manifest.txt"]  # differs in `out` only
        assert a == b

    def test_bad_scene_kind_exit_2(self, tmp_path, capsys):
        code, _, err = run(["synth", "--scene", "nope",
                            "--out", str(tmp_path / "x")], capsys)
        assert code == 2
        assert "nope" in err


class TestConfigResolution:
    def test_flag_overrides_config_file(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed=1\nwidth=64\nheight=64\nduration_s=0.2\n")
        out = tmp_path / "o"
        assert main(["synth", "--config", str(cfg), "--seed", "2",
                     "--out", str(out)]) == 0
        assert "seed=2" in (out / "manifest.txt").read_text()

    def test_unknown_config_key_exit_1(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("not_a_key=5\n")
        code, _, err = run(["synth", "--config", str(cfg)], capsys)
        assert code == 1
        assert "not_a_key" in err

    def test_malformed_config_line_exit_1(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed\n")
        code, _, err = run(["synth", "--config", str(cfg)], capsys)
        assert code == 1
        assert "key=value" in err

    def test_comments_and_blanks_ok(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# comment\n\nseed=3  # trailing\nwidth=64\nheight=64\n"
                       "duration_s=0.2\n")
        out = tmp_path / "o"
        assert main(["synth", "--config", str(cfg), "--out", str(out)]) == 0
        assert "seed=3" in (out / "manifest.txt").read_text()

    def test_unknown_flag_exit_1(self, capsys):
        code, _, _ = run(["synth", "--no-such-flag", "1"], capsys)
        assert code == 1

    def test_no_command_exit_1(self, capsys):
        assert run([], capsys)[0] == 1


class TestFlowCommands:
    def test_flow_frames(self, dataset, tmp_path):
        out = tmp_path / "ff"
        assert main(["flow-frames", "--frames-index",
                     str(dataset / "frames" / "index.txt"),
                     "--out", str(out)]) == 0
        lines = (out / "index.txt").read_text().strip().split("\n")
        assert len(lines) == 3  # 4 frames over 0.3 s -> 3 pairs
        assert (out / "frame_flow_000000.flo").exists()

    def test_flow_events(self, dataset, tmp_path):
        out = tmp_path / "fe"
        assert main(["flow-events", "--events", str(dataset / "events.evt1"),
                     "--n-slices", "3", "--out", str(out)]) == 0
        lines = (out / "index.txt").read_text().strip().split("\n")
        assert len(lines) == 3

    def test_missing_events_path_exit_2(self, tmp_path, capsys):
        missing = str(tmp_path / "ghost.evt1")
        code, _, err = run(["flow-events", "--events", missing,
                            "--out", str(tmp_path / "o")], capsys)
        assert code == 2
        assert "ghost.evt1" in err

    def test_events_flag_required_exit_1(self, tmp_path, capsys):
        code, _, err = run(["flow-events", "--out", str(tmp_path / "o")], capsys)
        assert code == 1
        assert "--events" in err


class TestFuseRun:
    def test_end_to_end(self, dataset, tmp_path):
        out = tmp_path / "run"
        assert main(["fuse-run",
                     "--events", str(dataset / "events.evt1"),
                     "--frames-index", str(dataset / "frames" / "index.txt"),
                     "--gt-index", str(dataset / "gt" / "index.txt"),
                     "--rate-multiplier", "2",
                     "--out", str(out)]) == 0
        lines = (out / "metrics.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 3 * 2
        assert lines[0].startswith("t_us,n_events,op_count")
        assert (out / "fused" / "fused_000000.flo").exists()

    def test_missing_gt_exit_2(self, dataset, tmp_path, capsys):
        code, _, err = run(["fuse-run",
                            "--events", str(dataset / "events.evt1"),
                            "--frames-index", str(dataset / "frames" / "index.txt"),
                            "--gt-index", str(tmp_path / "nope.txt"),
                            "--out", str(tmp_path / "o")], capsys)
        assert code == 2
        assert "nope.txt" in err

    def test_reruns_byte_identical(self, dataset, tmp_path):
        outs = [tmp_path / "r1", tmp_path / "r2"]
        for out in outs:
            assert main(["fuse-run",
                         "--events", str(dataset / "events.evt1"),
                         "--frames-index", str(dataset / "frames" / "index.txt"),
                         "--gt-index", str(dataset / "gt" / "index.txt"),
                         "--out", str(out)]) == 0
        a, b = tree_bytes(outs[0]), tree_bytes(outs[1])
        del a["manifest.txt"], b["manifest.txt"]
        assert a == b


class TestSweeps:
    def test_sweep_thresholds(self, dataset, tmp_path):
        out = tmp_path / "sw"
        assert main(["sweep-thresholds",
                     "--events", str(dataset / "events.evt1"),
                     "--frames-index", str(dataset / "frames" / "index.txt"),
                     "--gt-index", str(dataset / "gt" / "index.txt"),
                     "--tf-grid", "1,4", "--te-grid", "4",
                     "--out", str(out)]) == 0
        lines = (out / "threshold_sweep.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 2

    def test_sweep_rate(self, dataset, tmp_path):
        out = tmp_path / "sr"
        assert main(["sweep-rate",
                     "--events", str(dataset / "events.evt1"),
                     "--frames-index", str(dataset / "frames" / "index.txt"),
                     "--gt-index", str(dataset / "gt" / "index.txt"),
                     "--n-grid", "1,2",
                     "--out", str(out)]) == 0
        lines = (out / "rate_sweep.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 2
        assert lines[1].startswith("1,")
        assert lines[2].startswith("2,")

    def test_bad_grid_exit_1(self, dataset, tmp_path, capsys):
        code, _, err = run(["sweep-rate",
                            "--events", str(dataset / "events.evt1"),
                            "--frames-index", str(dataset / "frames" / "index.txt"),
                            "--gt-index", str(dataset / "gt" / "index.txt"),
                            "--n-grid", "1,banana",
                            "--out", str(tmp_path / "o")], capsys)
        assert code == 1
        assert "banana" in err


class TestEvalAndViz:
    def test_eval_identity_zero(self, dataset, capsys):
        gt0 = str(dataset / "gt" / "gt_000000.flo")
        code, out, _ = run(["eval-aee", gt0, gt0], capsys)
        assert code == 0
        assert float(out.strip()) == 0.0

    def test_eval_known_distance(self, dataset, capsys):
        # gt at t=0 vs t=0.1s for a rigid translation: identical fields
        gt0 = str(dataset / "gt" / "gt_000000.flo")
        gt1 = str(dataset / "gt" / "gt_000001.flo")
        code, out, _ = run(["eval-aee", gt0, gt1], capsys)
        assert code == 0
        assert float(out.strip()) == pytest.approx(0.0, abs=1e-6)

    def test_eval_missing_file_exit_2(self, dataset, capsys):
        gt0 = str(dataset / "gt" / "gt_000000.flo")
        code, _, err = run(["eval-aee", gt0, "/no/such/file.flo"], capsys)
        assert code == 2
        assert "/no/such/file.flo" in err

    def test_viz_writes_ppm(self, dataset, tmp_path, capsys):
        gt0 = str(dataset / "gt" / "gt_000000.flo")
        out = str(tmp_path / "v.ppm")
        code, _, _ = run(["viz", gt0, out, "--max-mag", "6"], capsys)
        assert code == 0
        with open(out, "rb") as f:
            assert f.read(2) == b"P6"
