"""End-to-end command-line pipeline: wiring, exit codes, manifest reruns.

A single two-cycle noiseless scenario is built once per module and every
stage runs on it in-process through ``main``. Reruns from each stage's
manifest must reproduce the outputs byte for byte.
"""

import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from tidewave.cli import main
from tidewave.cwt import TideBandFeature
from tidewave.fusion import FusedFeature, fuse_cells
from tidewave.regressor import write_predictions
from tidewave.series import MetricSeries

TIDE_PERIOD = 45360.0


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipe(tmp_path_factory):
    """Two tide cycles, no noise, every stage run once."""
    root = tmp_path_factory.mktemp("pipe")
    d = {k: root / k for k in ("sim", "pre", "ana", "det", "fus", "fea",
                               "fea2", "trn", "trn2", "prd", "evl", "plo")}

    sim_cfg = root / "sim_cfg.json"
    sim_cfg.write_text(json.dumps({"simulate": {
        "duration_s": 2 * TIDE_PERIOD, "dt_s": 30.0, "noise_std_db": 0.0}}))
    # narrower band than default: its cone of influence leaves the first
    # tide turn outside the detector warm-up
    ana_cfg = root / "ana_cfg.json"
    ana_cfg.write_text(json.dumps({"analyze": {"band": {
        "min_period_s": 600.0, "max_period_s": 3600.0,
        "voices_per_octave": 8}}}))

    steps = [
        ["simulate", "--config", sim_cfg, "--out-dir", d["sim"]],
        ["preprocess", d["sim"] / "raw_log.csv", "--out-dir", d["pre"]],
        ["analyze", d["pre"] / "clean_cellA.csv", "--config", ana_cfg,
         "--out-dir", d["ana"]],
        ["detect", d["ana"] / "s_cellA.csv", "--out-dir", d["det"]],
        ["fuse", d["ana"] / "s_cellA.csv", "--out-dir", d["fus"]],
        ["features", d["pre"] / "clean_cellA.csv",
         "--events", d["ana"] / "events_cellA.jsonl", "--out-dir", d["fea"]],
        ["features", d["pre"] / "clean_cellA.csv",
         "--events", d["ana"] / "events_cellA.jsonl",
         "--fused", d["fus"] / "fused.csv", "--out-dir", d["fea2"]],
        ["train", d["fea"] / "features_cellA.csv", d["sim"] / "tide.csv",
         "--max-epochs", 400, "--out-dir", d["trn"]],
        ["train", d["fea2"] / "features_cellA.csv", d["sim"] / "tide.csv",
         "--max-epochs", 400, "--out-dir", d["trn2"]],
        ["predict", d["fea"] / "features_cellA.csv", d["trn"] / "model.json",
         "--tide", d["sim"] / "tide.csv", "--out-dir", d["prd"]],
        ["evaluate", d["prd"] / "predictions.csv", "--out-dir", d["evl"]],
        ["plot", "tide", d["sim"] / "tide.csv",
         "--predictions", d["prd"] / "predictions.csv", "--out-dir", d["plo"]],
    ]
    for argv in steps:
        assert run(argv) == 0, argv[0]
    return d


def read_events(path):
    return [json.loads(line) for line in open(path, encoding="utf-8")]


class TestPipelineOutputs:
    def test_simulate_outputs_exist(self, pipe):
        for name in ("tide.csv", "metrics.csv", "raw_log.csv",
                     "simulate_manifest.json"):
            assert (pipe["sim"] / name).is_file()

    def test_two_cycle_tide_yields_four_turns(self, pipe):
        events = read_events(pipe["ana"] / "events_cellA.jsonl")
        turns = [e for e in events if e["kind"] == "high_low"]
        assert len(turns) == 4
        want = [TIDE_PERIOD / 4 + k * TIDE_PERIOD / 2 for k in range(4)]
        for got, t in zip(turns, want):
            assert abs(got["t"] - t) <= 600.0
        assert all(e["emitted_at"] == e["t"] + 300.0 for e in turns)

    def test_detect_reproduces_analyze_events(self, pipe):
        a = (pipe["ana"] / "events_cellA.jsonl").read_bytes()
        b = (pipe["det"] / "events.jsonl").read_bytes()
        assert a == b

    def test_single_cell_fuse_is_passthrough_standardization(self, pipe):
        feat = TideBandFeature.from_csv(pipe["ana"] / "s_cellA.csv")
        want = fuse_cells([feat], window=9 * 3600.0, dt_out=60.0,
                          max_lag=0.0, min_count=5, mode="centered")
        got = FusedFeature.from_csv(pipe["fus"] / "fused.csv")
        np.testing.assert_array_equal(got.times, want.times)
        np.testing.assert_array_equal(got.valid, want.valid)
        np.testing.assert_array_equal(got.values[got.valid],
                                      want.values[want.valid])

    def test_feature_matrix_shapes(self, pipe):
        head = (pipe["fea"] / "features_cellA.csv").open().readline()
        cols = head.strip().split(",")
        assert cols[:2] == ["t_unix_s", "row_valid"]
        assert len(cols) - 2 == 50
        head2 = (pipe["fea2"] / "features_cellA.csv").open().readline()
        cols2 = head2.strip().split(",")
        assert len(cols2) - 2 == 52
        assert cols2[-2:] == ["s_fused", "avail_s_cellA"]

    def test_train_report_fields(self, pipe):
        report = json.load(open(pipe["trn"] / "train_report.json"))
        assert report["mode"] == "train"
        assert report["train_rows"] > report["val_rows"] > 0
        assert report["best_epoch"] <= report["epochs_run"]

    def test_predictions_cover_valid_rows(self, pipe):
        lines = (pipe["prd"] / "predictions.csv").read_text().splitlines()
        assert lines[0] == "t_unix_s,y_true_m,y_hat_m"
        n_pred = sum(1 for l in lines[1:] if l.split(",")[2])
        report = json.load(open(pipe["evl"] / "eval_report.json"))
        assert report["n_samples"] == n_pred
        assert report["rmse_cm"] >= report["mae_cm"] > 0

    def test_plot_svg_has_provenance_comment(self, pipe):
        text = (pipe["plo"] / "plot_tide.svg").read_text()
        assert "tidewave inputs:" in text
        assert "tide.csv=" in text

    def test_manifest_contract(self, pipe):
        doc = json.load(open(pipe["ana"] / "analyze_manifest.json"))
        assert doc["command"] == "analyze"
        assert doc["seed"] == 42
        assert set(doc) >= {"package_version", "config", "inputs", "outputs"}
        entry = doc["inputs"]["clean"]
        assert len(entry["sha256"]) == 64
        assert "s_cellA.csv" in doc["outputs"]


RERUN_STAGES = [("simulate", "sim"), ("preprocess", "pre"),
                ("analyze", "ana"), ("detect", "det"), ("fuse", "fus"),
                ("features", "fea2"), ("train", "trn"), ("predict", "prd"),
                ("evaluate", "evl"), ("plot", "plo")]


class TestManifestRerun:
    @pytest.mark.parametrize("command,key", RERUN_STAGES)
    def test_rerun_is_byte_identical(self, pipe, tmp_path, command, key):
        src = pipe[key]
        manifest = src / f"{command}_manifest.json"
        assert run([command, "--config", manifest, "--out-dir", tmp_path]) == 0
        for name in json.load(open(manifest))["outputs"]:
            assert (tmp_path / name).read_bytes() == (src / name).read_bytes(), name
        assert (tmp_path / manifest.name).read_bytes() == manifest.read_bytes()

    def test_wrong_command_manifest_rejected(self, pipe, tmp_path, capsys):
        manifest = pipe["sim"] / "simulate_manifest.json"
        assert run(["preprocess", "--config", manifest,
                    "--out-dir", tmp_path]) == 1
        assert "manifest is for" in capsys.readouterr().err

    def test_seed_flag_overrides_manifest(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"simulate": {"duration_s": 3600.0,
                                                "dt_s": 60.0}}))
        assert run(["simulate", "--config", cfg, "--seed", 7,
                    "--out-dir", tmp_path / "a"]) == 0
        manifest = tmp_path / "a" / "simulate_manifest.json"
        assert json.load(open(manifest))["seed"] == 7
        assert run(["simulate", "--config", manifest,
                    "--out-dir", tmp_path / "b"]) == 0
        assert run(["simulate", "--config", manifest, "--seed", 8,
                    "--out-dir", tmp_path / "c"]) == 0
        metrics = [(tmp_path / sub / "metrics.csv").read_bytes()
                   for sub in ("a", "b", "c")]
        assert metrics[0] == metrics[1]
        assert metrics[0] != metrics[2]


class TestSimulateExamples:
    def test_zero_noise_run_twice_identical(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"simulate": {
            "duration_s": 3600.0, "dt_s": 60.0, "noise_std_db": 0.0}}))
        for sub in ("a", "b"):
            assert run(["simulate", "--config", cfg,
                        "--out-dir", tmp_path / sub]) == 0
        for name in ("tide.csv", "metrics.csv", "raw_log.csv"):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes()

    def test_flat_tide_gives_constant_rsrp(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"simulate": {
            "duration_s": 3600.0, "dt_s": 60.0, "noise_std_db": 0.0,
            "tide": {"period_s": TIDE_PERIOD, "amplitude_m": 0.0,
                     "mean_m": 0.3, "phase_rad": 0.0}}}))
        assert run(["simulate", "--config", cfg, "--out-dir", tmp_path]) == 0
        series = MetricSeries.from_csv(tmp_path / "metrics.csv")
        for a in series.antennas:
            assert np.ptp(series.values[("rsrp", a)]) == 0.0


class TestExitCodes:
    def test_unknown_config_key(self, pipe, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"simulate": {"durationn_s": 1.0}}))
        assert run(["simulate", "--config", cfg, "--out-dir", tmp_path]) == 1
        assert "unknown config key" in capsys.readouterr().err

    def test_missing_positional(self, tmp_path, capsys):
        assert run(["preprocess", "--out-dir", tmp_path]) == 1
        assert "missing" in capsys.readouterr().err

    def test_unknown_flag(self, tmp_path):
        assert run(["simulate", "--frobnicate", "--out-dir", tmp_path]) == 1

    def test_missing_input_file(self, tmp_path):
        assert run(["preprocess", tmp_path / "nope.csv",
                    "--out-dir", tmp_path]) == 2

    def test_inverted_band_rejected(self, pipe, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"analyze": {"band": {
            "min_period_s": 7200.0, "max_period_s": 600.0}}}))
        assert run(["analyze", pipe["pre"] / "clean_cellA.csv",
                    "--config", cfg, "--out-dir", tmp_path]) == 1

    def test_record_shorter_than_band_support(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"simulate": {
            "duration_s": 7200.0, "dt_s": 60.0, "noise_std_db": 0.0}}))
        assert run(["simulate", "--config", cfg,
                    "--out-dir", tmp_path / "sim"]) == 0
        assert run(["preprocess", tmp_path / "sim" / "raw_log.csv",
                    "--out-dir", tmp_path / "pre"]) == 0
        assert run(["analyze", tmp_path / "pre" / "clean_cellA.csv",
                    "--out-dir", tmp_path / "ana"]) == 1

    def test_schema_mismatched_model_refused(self, pipe, tmp_path, capsys):
        rc = run(["predict", pipe["fea"] / "features_cellA.csv",
                  pipe["trn2"] / "model.json", "--out-dir", tmp_path])
        assert rc == 1
        assert "s_fused" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numerical_failure_exit_code(self, pipe, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"train": {"learn_rate": float("inf")}}))
        rc = run(["train", pipe["fea"] / "features_cellA.csv",
                  pipe["sim"] / "tide.csv", "--config", cfg,
                  "--out-dir", tmp_path])
        assert rc == 3
        assert "numerical failure" in capsys.readouterr().err


class TestEvaluateCommand:
    def test_identical_truth_gives_zero_errors(self, tmp_path, capsys):
        times = 60.0 * np.arange(20)
        y = 0.1 * np.sin(times / 400.0)
        pred = tmp_path / "predictions.csv"
        write_predictions(pred, times, y, y_true=y)
        assert run(["evaluate", pred, "--out-dir", tmp_path]) == 0
        report = json.load(open(tmp_path / "eval_report.json"))
        assert report["rmse_cm"] == 0.0
        assert report["mae_cm"] == 0.0
        assert "RMSE 0.000 cm" in capsys.readouterr().out


class TestFineTunePath:
    def test_fine_tune_from_model(self, pipe, tmp_path):
        rc = run(["train", pipe["fea"] / "features_cellA.csv",
                  pipe["sim"] / "tide.csv",
                  "--fine-tune-from", pipe["trn"] / "model.json",
                  "--adapt-frac", 0.2, "--out-dir", tmp_path])
        assert rc == 0
        report = json.load(open(tmp_path / "train_report.json"))
        assert report["mode"] == "fine_tune"
        assert report["adapt_rows"] > 0
        assert (tmp_path / "model.json").is_file()


def test_console_script_installed():
    exe = shutil.which("tidewave")
    if exe is None:
        pytest.skip("console script not on PATH")
    out = subprocess.run([exe, "--version"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "tidewave" in out.stdout
    code = ("import sys; from tidewave.cli import main; "
            "sys.exit(main(['simulate', '--help']) or 0)")
    helped = subprocess.run([sys.executable, "-c", code],
                            capture_output=True, text=True)
    assert "--out-dir" in helped.stdout
