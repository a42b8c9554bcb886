import csv
import io
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from noisesketch.arrayio import load_array, read_sidecar
from noisesketch.cli import main

SMALL = {
    "phantom": {"rows": 16, "cols": 16},
    "mask": {"R": 4},
    "model": {"steps": 2},
    "S": 40,
    "N": 30,
}


def write_cfg(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


def leftovers(parent):
    return [p for p in parent.iterdir() if p.name.startswith(".")]


class TestRun:
    def test_artifacts(self, tmp_path):
        out = tmp_path / "res"
        assert main(["run", "--config", str(write_cfg(tmp_path, SMALL)), "--out", str(out)]) == 0
        for name in ("sketch", "naive", "mc"):
            assert (out / "maps" / f"{name}.raw").exists()
            meta = read_sidecar(out / "maps" / f"{name}.txt")
            assert meta["estimator"] == name and "wall_time_s" in meta
            assert meta["config.mask.R"] == "4"
        for diff in ("sketch-naive", "sketch-mc", "mc-naive"):
            d = load_array(out / "diff" / diff)
            est, ref = diff.split("-")
            np.testing.assert_allclose(d, load_array(out / "maps" / est) - load_array(out / "maps" / ref))
        for f in ("reports.txt", "reports.csv", "timing.txt", "timing.csv", "manifest.yaml"):
            assert (out / f).exists()
        assert "pcc" in (out / "reports.csv").read_text().splitlines()[0]
        assert not leftovers(tmp_path)

    def test_minimal_linear_config(self, tmp_path):
        cfg = {"phantom": {"rows": 16, "cols": 16}, "coils": {"count": 2},
               "mask": {"scheme": "uniform-1d", "R": 1}, "noise": {"covariance": "identity"},
               "model": {"kind": "identity"}, "estimators": ["sketch", "naive", "brute"], "S": 20}
        out = tmp_path / "min"
        assert main(["run", "--config", str(write_cfg(tmp_path, cfg)), "--out", str(out)]) == 0
        naive, brute = load_array(out / "maps" / "naive"), load_array(out / "maps" / "brute")
        assert np.linalg.norm(naive - brute) / np.linalg.norm(brute) < 1e-6
        np.testing.assert_allclose(naive, 1.0, atol=1e-12)

    def test_manifest_regenerates_maps(self, tmp_path):
        first = tmp_path / "a"
        assert main(["run", "--config", str(write_cfg(tmp_path, SMALL)), "--out", str(first),
                     "--seed", "4"]) == 0
        second = tmp_path / "b"
        assert main(["run", "--config", str(first / "manifest.yaml"), "--out", str(second)]) == 0
        for name in ("sketch", "naive", "mc"):
            np.testing.assert_array_equal(load_array(first / "maps" / name),
                                          load_array(second / "maps" / name))
        assert yaml.safe_load((second / "manifest.yaml").read_text())["seed"] == 4

    def test_threads_do_not_change_maps(self, tmp_path):
        cfg = write_cfg(tmp_path, {**SMALL, "chunk": 7})
        for t in (1, 4):
            assert main(["run", "--config", str(cfg), "--out", str(tmp_path / f"t{t}"),
                         "--threads", str(t)]) == 0
        for name in ("sketch", "naive", "mc"):
            np.testing.assert_array_equal(load_array(tmp_path / "t1" / "maps" / name),
                                          load_array(tmp_path / "t4" / "maps" / name))

    def test_replaces_previous_output(self, tmp_path):
        out = tmp_path / "res"
        out.mkdir()
        (out / "stale.txt").write_text("old")
        cfg = write_cfg(tmp_path, {**SMALL, "estimators": ["sketch"]})
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        assert not (out / "stale.txt").exists()


class TestExitCodes:
    def test_config_error(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, {"noise": {"sigma": -1}})
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
        assert "noise.sigma" in capsys.readouterr().err
        assert not (tmp_path / "x").exists()

    def test_bad_yaml_and_missing_file(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("phantom: [unclosed")
        assert main(["run", "--config", str(bad)]) == 2
        assert main(["run", "--config", str(tmp_path / "nope.yaml")]) == 2

    def test_infeasible_mask(self, tmp_path):
        cfg = write_cfg(tmp_path, {**SMALL, "mask": {"scheme": "uniform-1d", "R": 4, "calib": 12}})
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2

    def test_numerical_failure(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, {**SMALL, "noise": {"corner_fraction": 0.01}})
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 3
        assert "TooFewSamples" in capsys.readouterr().err
        assert not (tmp_path / "x").exists()

    def test_io_error(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        cfg = write_cfg(tmp_path, {**SMALL, "estimators": ["sketch"]})
        assert main(["run", "--config", str(cfg), "--out", str(blocker / "sub")]) == 4
        assert main(["render", str(tmp_path / "missing")]) == 4

    def test_failure_midway_leaves_nothing(self, tmp_path, monkeypatch):
        import noisesketch.cli as cli

        def boom(*args, **kwargs):
            raise OSError("disk full")

        monkeypatch.setattr(cli, "save_array", boom)
        cfg = write_cfg(tmp_path, SMALL)
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "res")]) == 4
        assert not (tmp_path / "res").exists()
        assert not leftovers(tmp_path)


class TestSweep:
    def test_alpha_sweep(self, tmp_path):
        cfg = write_cfg(tmp_path, {**SMALL, "sweep": {"param": "noise.alpha", "values": [1, 10, 50]}})
        out = tmp_path / "sw"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        for a in (1, 10, 50):
            assert (out / f"noise.alpha={a}" / "maps" / "mc.raw").exists()
        rows = (out / "convergence.csv").read_text().splitlines()
        assert rows[0] == "param,value,estimate,reference,nrmse,pcc"
        assert len(rows) == 1 + 3 * 2

    def test_phantom_seed_summary(self, tmp_path):
        cfg = write_cfg(tmp_path, {**SMALL, "sweep": {"param": "phantom.seed", "values": [0, 1, 2]}})
        out = tmp_path / "sw"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        conv = list(csv.DictReader(io.StringIO((out / "convergence.csv").read_text())))
        summary = list(csv.DictReader(io.StringIO((out / "summary.csv").read_text())))
        assert len(summary) == 2
        for row in summary:
            assert row["over"] == "seeded phantom instances"
            assert int(row["count"]) == 3
            vals = [float(r["nrmse"]) for r in conv if r["estimate"] == row["estimate"]]
            assert float(row["nrmse_mean"]) == pytest.approx(np.mean(vals), rel=1e-3)
            assert float(row["nrmse_std"]) == pytest.approx(np.std(vals, ddof=1), rel=1e-3, abs=1e-4)

    def test_bad_sweep(self, tmp_path):
        cfg = write_cfg(tmp_path, {**SMALL, "sweep": {"param": "noise.alpha", "values": [1, -1]}})
        assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "sw")]) == 2
        cfg = write_cfg(tmp_path, SMALL)
        assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "sw")]) == 2
        assert not (tmp_path / "sw").exists()


class TestBenchAndRender:
    def test_bench(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SMALL)
        out = tmp_path / "bench"
        assert main(["bench", "--config", str(cfg), "--out", str(out), "--repeat", "2",
                     "--steps", "1,2"]) == 0
        text = (out / "bench.txt").read_text()
        assert "median_s" in text and "sketch_median_s" in text
        rows = (out / "bench.csv").read_text().splitlines()
        mc = next(r for r in rows if r.startswith("mc,"))
        assert mc.split(",")[-1] == str(30 * 16 * 16 * 16)

    def test_render(self, tmp_path):
        out = tmp_path / "res"
        cfg = write_cfg(tmp_path, {**SMALL, "estimators": ["sketch", "naive"]})
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["render", str(out)]) == 0
        assert (out / "maps" / "sketch.png").exists()
        assert (out / "diff" / "sketch-naive.png").exists()
        # Stored differences stay unamplified.
        d = load_array(out / "diff" / "sketch-naive")
        np.testing.assert_allclose(d, load_array(out / "maps" / "sketch") - load_array(out / "maps" / "naive"))


def test_console_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, {**SMALL, "estimators": ["sketch"]})
    proc = subprocess.run([sys.executable, "-m", "noisesketch.cli", "run", "--config", str(cfg),
                           "--out", str(tmp_path / "r")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "wrote" in proc.stdout
