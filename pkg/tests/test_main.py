import json
import os

import numpy as np
import pytest

from hint.errors import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK
import hint.main as cli
from hint.main import build_parser, main
from hint.models.checkpoint import read_checkpoint
from hint.models.metrics import MetricsModel
from hint.models.sample_set import SampleSetModel

TINY = {
    "problem": {"kind": "linear-gaussian", "dim_x": 2, "dim_y": 2, "n_steps": 2},
    "architecture": {"n_layers": 1, "depth": 1, "hidden_layers": 1, "width_factor": 1},
    "training": {"epochs": 2, "batch_size": 16, "train_set_size": 64},
    "output": {"n_out": 50},
    "filter": {"n_particles": 64, "warm_fraction": 0.5},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return str(path)


class TestParser:
    def test_defaults(self):
        args = build_parser().parse_args(["convergence"])
        assert args.n_list == "500,2000,8000"
        assert args.replicates == 8

    def test_sample_needs_checkpoint(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["sample"])


class TestExitCodes:
    def test_missing_config_is_a_config_error(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_invalid_config_is_a_config_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"training": {"case": "case9"}}))
        assert main(["train", "--config", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_checkpoint_is_an_io_error(self, tmp_path):
        code = main(["sample", "--checkpoint", str(tmp_path / "none.json"), "--observation", "0,0", "--out", str(tmp_path)])
        assert code == EXIT_IO

    @pytest.mark.parametrize("observation", [["--observation", "1,2,3"], ["--observation", "1,two"], []])
    def test_bad_or_missing_observation_is_a_config_error(self, tmp_path, tiny_config, observation):
        out = str(tmp_path / "out")
        assert main(["train", "--config", tiny_config, "--out", out]) == EXIT_OK
        checkpoint = os.path.join(out, "checkpoints", "model.json")
        assert main(["sample", "--checkpoint", checkpoint, "--out", out] + observation) == EXIT_CONFIG

    def test_failed_verification_is_numeric(self, tmp_path, monkeypatch):
        class Failed:
            passed = False

            def rows(self):
                return [{"check": "invertibility", "passed": False}]

        monkeypatch.setattr(cli, "run_verification", lambda rng: Failed())
        assert main(["verify", "--out", str(tmp_path)]) == EXIT_NUMERIC


class TestCommands:
    def test_train_then_sample(self, tmp_path, tiny_config):
        out = str(tmp_path / "out")
        assert main(["train", "--config", tiny_config, "--out", out, "--seed", "3", "--name", "lg"]) == EXIT_OK
        checkpoint_path = os.path.join(out, "checkpoints", "lg.json")
        checkpoint = read_checkpoint(checkpoint_path)
        assert checkpoint.metadata["case"] == "case3"
        assert checkpoint.metadata["seed"] == 3
        assert len(MetricsModel(os.path.join(out, "metrics")).read("lg_training")) == 2

        code = main(["sample", "--checkpoint", checkpoint_path, "--observation", "0.5,-0.25", "--n", "40", "--out", out, "--name", "post"])
        assert code == EXIT_OK
        sample_set = SampleSetModel(os.path.join(out, "samples")).load("post")
        assert sample_set.samples.shape == (40, 2)
        assert np.all(np.isfinite(sample_set.samples))
        assert sample_set.provenance["checkpoint"] == checkpoint.metadata["id"]

    def test_sampling_is_seeded(self, tmp_path, tiny_config):
        out = str(tmp_path / "out")
        main(["train", "--config", tiny_config, "--out", out])
        checkpoint = os.path.join(out, "checkpoints", "model.json")
        for name in ("a", "b"):
            main(["sample", "--checkpoint", checkpoint, "--observation", "0,1", "--seed", "9", "--out", out, "--name", name])
        model = SampleSetModel(os.path.join(out, "samples"))
        np.testing.assert_array_equal(model.load("a").samples, model.load("b").samples)

    def test_filter(self, tmp_path, tiny_config):
        out = str(tmp_path / "out")
        assert main(["filter", "--config", tiny_config, "--out", out, "--name", "lgf"]) == EXIT_OK
        rows = MetricsModel(os.path.join(out, "metrics")).read("lgf_steps")
        assert [int(r["step"]) for r in rows] == [1, 2]
        assert os.path.exists(os.path.join(out, "experiments", "lgf_truth.csv"))
        assert os.path.exists(os.path.join(out, "checkpoints", "lgf_final.json"))

    def test_benchmark_linear_gaussian(self, tmp_path, tiny_config):
        out = str(tmp_path / "out")
        assert main(["benchmark", "linear-gaussian", "--config", tiny_config, "--out", out]) == EXIT_OK
        rows = MetricsModel(os.path.join(out, "metrics")).read("benchmark_linear-gaussian_cases")
        assert [r["case"] for r in rows] == ["case3", "case2"]
        with open(os.path.join(out, "benchmark_linear-gaussian.json")) as f:
            assert len(json.load(f)["oracle_mean"]) == 2

    def test_benchmark_clv_comparison(self, tmp_path):
        config = dict(TINY, problem={"kind": "clv", "dim_x": 4, "dim_y": 3, "sigma_x": 0.01, "sigma_y": 0.1, "n_steps": 1})
        config["filter"] = {"n_particles": 64, "reference_particles": 200}
        path = tmp_path / "clv.json"
        path.write_text(json.dumps(config))
        out = str(tmp_path / "out")
        assert main(["benchmark", "clv", "--config", str(path), "--out", out, "--sizes", "32,64"]) == EXIT_OK
        metrics = MetricsModel(os.path.join(out, "metrics"))
        by_n = metrics.read("benchmark_clv_mse_vs_n")
        assert [(r["case"], int(r["N"])) for r in by_n] == [("case1", 32), ("case1", 64), ("case3", 32), ("case3", 64)]
        assert len(metrics.read("benchmark_clv_mse_vs_epoch")) == 8

    def test_unparseable_sizes_are_a_config_error(self, tmp_path):
        assert main(["convergence", "--n-list", "500,lots", "--out", str(tmp_path)]) == EXIT_CONFIG
