"""End-to-end command line checks: every subcommand, the exit-code map,
manifest layout, and bitwise determinism of the data outputs."""

import json
import os

import pytest

from quatvio.cli import main
from quatvio.config import KEY_REGISTRY


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("sim") / "bundle")
    rc = main([
        "simulate", "--out", out, "--scenario", "circle",
        "--duration", "6", "--seed", "3",
    ])
    assert rc == 0
    return out


class TestSimulate:
    def test_outputs_and_manifest(self, bundle_dir):
        for name in ("imu.csv", "ground_truth.csv", "vo.csv", "manifest.json"):
            assert os.path.exists(os.path.join(bundle_dir, name))
        with open(os.path.join(bundle_dir, "manifest.json")) as fh:
            manifest = json.load(fh)
        assert set(manifest) == {
            "command", "config", "inputs", "outputs", "seed", "version",
        }
        assert manifest["command"] == "simulate"
        assert manifest["seed"] == 3
        assert set(manifest["config"]) == set(KEY_REGISTRY)
        assert manifest["outputs"]["imu"] == "imu.csv"

    def test_manifest_is_stable_json(self, bundle_dir):
        raw = _read(os.path.join(bundle_dir, "manifest.json"))
        manifest = json.loads(raw)
        expect = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        assert raw.decode("utf-8") == expect

    def test_seed_determinism(self, bundle_dir, tmp_path):
        twin = str(tmp_path / "twin")
        rc = main([
            "simulate", "--out", twin, "--scenario", "circle",
            "--duration", "6", "--seed", "3",
        ])
        assert rc == 0
        for name in ("imu.csv", "ground_truth.csv", "vo.csv", "manifest.json"):
            assert _read(os.path.join(twin, name)) == _read(
                os.path.join(bundle_dir, name))

        other = str(tmp_path / "other")
        assert main([
            "simulate", "--out", other, "--scenario", "circle",
            "--duration", "6", "--seed", "4",
        ]) == 0
        assert _read(os.path.join(other, "imu.csv")) != _read(
            os.path.join(bundle_dir, "imu.csv"))

    def test_corrupt_episode_args(self, tmp_path):
        out = str(tmp_path / "c")
        rc = main([
            "simulate", "--out", out, "--scenario", "static",
            "--duration", "3", "--corrupt", "1:2:noise_spike:5",
        ])
        assert rc == 0
        assert main([
            "simulate", "--out", out, "--scenario", "static",
            "--duration", "3", "--corrupt", "1:2",
        ]) == 3
        assert main([
            "simulate", "--out", out, "--scenario", "static",
            "--duration", "3", "--corrupt", "1:2:weird",
        ]) == 3


class TestRun:
    def test_outputs(self, bundle_dir, tmp_path):
        out = str(tmp_path / "run")
        rc = main([
            "run", "--out", out, "--bundle", bundle_dir,
            "--mode", "adaptive_hybrid_qf",
        ])
        assert rc == 0
        for name in ("trajectory.csv", "vo_log.csv", "summary.csv",
                     "timing.csv", "report.csv", "manifest.json"):
            assert os.path.exists(os.path.join(out, name)), name
        with open(os.path.join(out, "summary.csv")) as fh:
            header, row = [ln.strip().split(",") for ln in fh if ln.strip()]
        summary = dict(zip(header, row))
        assert summary["mode"] == "adaptive_hybrid_qf"
        assert int(summary["n_propagations"]) > 1000
        assert summary["diverged"] == "false"

    def test_deterministic_data_outputs(self, bundle_dir, tmp_path):
        outs = [str(tmp_path / f"run{i}") for i in range(2)]
        for out in outs:
            assert main(["run", "--out", out, "--bundle", bundle_dir]) == 0
        # timing.csv is wall-clock and deliberately not compared
        for name in ("trajectory.csv", "vo_log.csv", "summary.csv",
                     "report.csv", "manifest.json"):
            assert _read(os.path.join(outs[0], name)) == _read(
                os.path.join(outs[1], name)), name

    def test_loose_files_without_reference(self, bundle_dir, tmp_path):
        out = str(tmp_path / "loose")
        rc = main([
            "run", "--out", out,
            "--imu", os.path.join(bundle_dir, "imu.csv"),
            "--vo", os.path.join(bundle_dir, "vo.csv"),
        ])
        assert rc == 0
        assert not os.path.exists(os.path.join(out, "report.csv"))
        assert os.path.exists(os.path.join(out, "trajectory.csv"))

    def test_divergence_exit_code_with_partial_outputs(self, tmp_path):
        bad = str(tmp_path / "bad")
        assert main([
            "simulate", "--out", bad, "--scenario", "circle",
            "--duration", "8", "--seed", "0",
            "--corrupt", "3:6:bias_jump:1e8",
        ]) == 0
        out = str(tmp_path / "divrun")
        rc = main(["run", "--out", out, "--bundle", bad])
        assert rc == 4
        assert os.path.exists(os.path.join(out, "trajectory.csv"))
        with open(os.path.join(out, "summary.csv")) as fh:
            assert "true" in fh.read()


class TestEvaluate:
    def test_report_and_correlation(self, bundle_dir, tmp_path):
        run_out = str(tmp_path / "run")
        assert main(["run", "--out", run_out, "--bundle", bundle_dir,
                     "--mode", "adaptive_hybrid_qf"]) == 0
        out = str(tmp_path / "eval")
        rc = main([
            "evaluate", "--out", out,
            "--est", os.path.join(run_out, "trajectory.csv"),
            "--gt", os.path.join(bundle_dir, "ground_truth.csv"),
            "--vo-log", os.path.join(run_out, "vo_log.csv"),
            "--window", "0.5",
        ])
        assert rc == 0
        assert os.path.exists(os.path.join(out, "report.csv"))
        assert os.path.exists(os.path.join(out, "correlation.csv"))
        with open(os.path.join(out, "report.csv")) as fh:
            text = fh.read()
        assert "ate_rmse" in text

    def test_empty_estimate_is_a_data_error(self, bundle_dir, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("# no rows\n")
        rc = main([
            "evaluate", "--out", str(tmp_path / "e"),
            "--est", str(empty),
            "--gt", os.path.join(bundle_dir, "ground_truth.csv"),
        ])
        assert rc == 2


class TestCompare:
    def test_outputs_match_across_jobs(self, bundle_dir, tmp_path):
        outs = {}
        for jobs in ("1", "2"):
            out = str(tmp_path / f"cmp{jobs}")
            rc = main(["compare", "--out", out, "--bundle", bundle_dir,
                       "--jobs", jobs])
            assert rc == 0
            outs[jobs] = out
        for name in ("accuracy.csv", "relative.csv"):
            assert os.path.exists(os.path.join(outs["1"], name))
            assert _read(os.path.join(outs["1"], name)) == _read(
                os.path.join(outs["2"], name)), name
        with open(os.path.join(outs["1"], "accuracy.csv")) as fh:
            body = fh.read()
        for mode in ("eskf", "hybrid_qf", "adaptive_hybrid_qf", "full_sukf"):
            assert mode in body


class TestBench:
    def test_small_bench(self, tmp_path):
        out = str(tmp_path / "bench")
        rc = main(["bench", "--out", out, "--steps", "300"])
        assert rc == 0
        with open(os.path.join(out, "bench.csv")) as fh:
            lines = [ln for ln in fh if ln.strip()]
        assert len(lines) == 4  # header + three modes


class TestSweep:
    def test_grid_sweep(self, bundle_dir, tmp_path):
        out = str(tmp_path / "sweep")
        rc = main([
            "sweep", "--out", out, "--bundle", bundle_dir,
            "--param", "zeta=0.0,1.0", "--strategy", "grid",
        ])
        assert rc == 0
        with open(os.path.join(out, "sweep.csv")) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        assert len(lines) == 3
        assert "zeta" in lines[1]

    def test_bad_param_values(self, bundle_dir, tmp_path):
        rc = main([
            "sweep", "--out", str(tmp_path / "s"), "--bundle", bundle_dir,
            "--param", "zeta=a,b",
        ])
        assert rc == 3


class TestExitCodes:
    def test_config_error_is_3(self, bundle_dir, tmp_path):
        assert main([
            "run", "--out", str(tmp_path / "a"), "--bundle", bundle_dir,
            "--set", "oops",
        ]) == 3
        assert main([
            "run", "--out", str(tmp_path / "b"), "--bundle", bundle_dir,
            "--set", "no.such.key=1",
        ]) == 3

    def test_missing_bundle_is_2(self, tmp_path):
        assert main([
            "run", "--out", str(tmp_path / "a"),
            "--bundle", str(tmp_path / "nowhere"),
        ]) == 2

    def test_run_without_inputs_is_3(self, tmp_path):
        assert main(["run", "--out", str(tmp_path / "a")]) == 3
