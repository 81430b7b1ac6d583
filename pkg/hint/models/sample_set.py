import json
import os
from datetime import datetime
from typing import Optional

import numpy as np

from hint.config import settings
from hint.services.posterior_service import PosteriorSampleSet


class SampleSetModel:
    """Posterior sample sets as CSV (one sample per row) with a JSON provenance sidecar"""

    def __init__(self, directory: Optional[str] = None):
        self.directory = directory or os.path.join(settings.OUTPUT_DIR, "samples")
        os.makedirs(self.directory, exist_ok=True)

    def _paths(self, name: str):
        base = os.path.join(self.directory, name)
        return f"{base}.csv", f"{base}.json"

    def save(self, sample_set: PosteriorSampleSet, name: str) -> str:
        """Write samples and provenance; returns the CSV path"""
        csv_path, json_path = self._paths(name)
        header = ",".join(f"x{i + 1}" for i in range(sample_set.dim))
        np.savetxt(csv_path, sample_set.samples, delimiter=",", header=header, comments="", fmt="%.17g")
        sidecar = {
            "provenance": sample_set.provenance,
            "n_samples": len(sample_set),
            "dim": sample_set.dim,
            "created_at": datetime.now().isoformat(),
        }
        with open(json_path, "w") as f:
            json.dump(sidecar, f, indent=2)
        return csv_path

    def load(self, name: str) -> PosteriorSampleSet:
        csv_path, json_path = self._paths(name)
        samples = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        provenance = {}
        if os.path.exists(json_path):
            with open(json_path, "r") as f:
                provenance = json.load(f).get("provenance", {})
        return PosteriorSampleSet(samples, provenance)
