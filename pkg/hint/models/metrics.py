import csv
import os
from typing import Dict, List, Optional, Sequence

from hint.config import settings


class MetricsModel:
    """CSV metrics tables: header row, one record per epoch or step, fixed column order"""

    def __init__(self, directory: Optional[str] = None):
        self.directory = directory or os.path.join(settings.OUTPUT_DIR, "metrics")
        os.makedirs(self.directory, exist_ok=True)

    def path_for(self, name: str) -> str:
        return os.path.join(self.directory, f"{name}.csv")

    def write(self, name: str, rows: Sequence[Dict], columns: Optional[List[str]] = None) -> str:
        """Write rows; columns default to the keys of all rows in first-seen order"""
        if columns is None:
            columns = []
            for row in rows:
                columns.extend(k for k in row if k not in columns)
        path = self.path_for(name)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
        return path

    def append(self, name: str, row: Dict, columns: List[str]) -> str:
        path = self.path_for(name)
        is_new = not os.path.exists(path)
        with open(path, "a", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
            if is_new:
                writer.writeheader()
            writer.writerow(row)
        return path

    def read(self, name: str) -> List[Dict]:
        with open(self.path_for(name), "r", newline="", encoding="utf-8") as f:
            return list(csv.DictReader(f))


def epoch_rows(losses: Sequence[float], extra: Optional[Dict[str, Sequence[float]]] = None) -> List[Dict]:
    """One row per epoch: epoch, loss and any extra per-epoch series"""
    rows = []
    for k, loss in enumerate(losses):
        row = {"epoch": k + 1, "loss": loss}
        for key, series in (extra or {}).items():
            row[key] = series[k] if k < len(series) else None
        rows.append(row)
    return rows
