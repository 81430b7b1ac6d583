import json

import numpy as np

from hint.config import problem_preset
from hint.models.experiment import ExperimentModel
from hint.models.metrics import MetricsModel, epoch_rows
from hint.models.sample_set import SampleSetModel
from hint.services.dynamics_service import make_clv_experiment
from hint.services.posterior_service import PosteriorSampleSet


class TestSampleSetModel:
    def test_round_trip(self, rng, tmp_path):
        model = SampleSetModel(str(tmp_path))
        original = PosteriorSampleSet(rng.standard_normal((25, 3)), {"case": "case3", "checkpoint": "abc", "observation": [0.1]})
        path = model.save(original, "post")
        with open(path) as f:
            assert f.readline().strip() == "x1,x2,x3"
        loaded = model.load("post")
        np.testing.assert_array_equal(loaded.samples, original.samples)
        assert loaded.provenance == original.provenance

    def test_single_column(self, rng, tmp_path):
        model = SampleSetModel(str(tmp_path))
        model.save(PosteriorSampleSet(rng.standard_normal((4, 1))), "one")
        assert model.load("one").samples.shape == (4, 1)


class TestMetricsModel:
    def test_write_and_read(self, tmp_path):
        model = MetricsModel(str(tmp_path))
        model.write("steps", [{"step": 1, "cov_trace": 0.5}, {"step": 2, "cov_trace": 0.25, "extra": 3}])
        rows = model.read("steps")
        assert list(rows[0]) == ["step", "cov_trace", "extra"]
        assert rows[0]["extra"] == ""
        assert float(rows[1]["cov_trace"]) == 0.25

    def test_fixed_columns(self, tmp_path):
        model = MetricsModel(str(tmp_path))
        model.write("c", [{"N": 10, "std": 0.1, "ignored": 1}], ["N", "std"])
        assert list(model.read("c")[0]) == ["N", "std"]

    def test_append(self, tmp_path):
        model = MetricsModel(str(tmp_path))
        for step in range(3):
            model.append("log", {"step": step, "loss": 1.0 / (step + 1)}, ["step", "loss"])
        assert [r["step"] for r in model.read("log")] == ["0", "1", "2"]

    def test_epoch_rows(self):
        rows = epoch_rows([3.0, 2.0], {"cov_trace": [1.0]})
        assert rows == [{"epoch": 1, "loss": 3.0, "cov_trace": 1.0}, {"epoch": 2, "loss": 2.0, "cov_trace": None}]


class TestExperimentModel:
    def test_round_trip(self, rng, tmp_path):
        bundle = make_clv_experiment(problem_preset("clv", n_steps=3), rng)
        model = ExperimentModel(str(tmp_path))
        document = model.save(bundle, "clv", seed=42)
        times, truth, observations = model.load_arrays("clv")
        np.testing.assert_array_equal(times, bundle.times)
        np.testing.assert_array_equal(truth, bundle.truth)
        np.testing.assert_array_equal(observations, bundle.observations)
        loaded = model.load_document("clv")
        assert loaded["seed"] == 42
        assert loaded["params"]["r"] == document["params"]["r"]
        assert json.loads(json.dumps(loaded))["kind"] == "clv"
