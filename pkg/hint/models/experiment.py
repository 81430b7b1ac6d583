import json
import os
from datetime import datetime
from typing import Dict, Optional

import numpy as np

from hint.config import settings
from hint.services.dynamics_service import ExperimentBundle


class ExperimentModel:
    """Experiment bundles: JSON parameters and seed, CSV truth trajectory and observations"""

    def __init__(self, directory: Optional[str] = None):
        self.directory = directory or os.path.join(settings.OUTPUT_DIR, "experiments")
        os.makedirs(self.directory, exist_ok=True)

    def save(self, bundle: ExperimentBundle, name: str, seed: Optional[int] = None) -> Dict:
        """Write {name}.json, {name}_truth.csv and {name}_observations.csv"""
        base = os.path.join(self.directory, name)
        truth = np.column_stack([bundle.times, bundle.truth])
        header = ",".join(["t"] + [f"x{i + 1}" for i in range(bundle.truth.shape[1])])
        np.savetxt(f"{base}_truth.csv", truth, delimiter=",", header=header, comments="", fmt="%.17g")
        obs = np.column_stack([bundle.times[1:], bundle.observations])
        header = ",".join(["t"] + [f"y{i + 1}" for i in range(bundle.observations.shape[1])])
        np.savetxt(f"{base}_observations.csv", obs, delimiter=",", header=header, comments="", fmt="%.17g")
        document = {
            "kind": bundle.kind,
            "seed": seed,
            "dim_x": bundle.problem.dim_x,
            "dim_y": bundle.problem.dim_y,
            "sigma_x": bundle.problem.sigma_x,
            "sigma_y": bundle.problem.sigma_y,
            "prior_mean": bundle.prior_mean.tolist(),
            "prior_cov": bundle.prior_cov.tolist(),
            "params": bundle.params,
            "created_at": datetime.now().isoformat(),
        }
        with open(f"{base}.json", "w") as f:
            json.dump(document, f, indent=2)
        return document

    def load_arrays(self, name: str):
        """(times, truth, observations) as written by save"""
        base = os.path.join(self.directory, name)
        truth = np.loadtxt(f"{base}_truth.csv", delimiter=",", skiprows=1, ndmin=2)
        obs = np.loadtxt(f"{base}_observations.csv", delimiter=",", skiprows=1, ndmin=2)
        return truth[:, 0], truth[:, 1:], obs[:, 1:]

    def load_document(self, name: str) -> Dict:
        with open(os.path.join(self.directory, f"{name}.json"), "r") as f:
            return json.load(f)
