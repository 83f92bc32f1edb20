"""
Metrics Stream - append-only CSV of everything a fold reports, one row per value.
"""
from pathlib import Path
from typing import Any, Dict, List, Union
import csv

from mran.models.records import EpochRecord, EvaluationResult

HEADER = ("epoch", "phase", "domain", "metric", "value")
ALL_DOMAINS = "all"


class MetricsStream:
    """File-backed metrics history for one train/validate/test cycle"""

    def __init__(self, path: Union[str, Path]):
        """
        Start a fresh stream, truncating any previous file at the same path

        Args:
            path: CSV file to write
        """
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="", encoding="utf-8") as f:
            csv.writer(f, lineterminator="\n").writerow(HEADER)

    def _append(self, rows: List[tuple]):
        with open(self.path, "a", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            for epoch, phase, domain, metric, value in rows:
                writer.writerow((epoch, phase, domain, metric, repr(float(value))))
            f.flush()

    def log_evaluation(self, epoch: int, phase: str, result: EvaluationResult):
        rows = [(epoch, phase, name, "accuracy", acc) for name, acc in zip(result.domain_names, result.per_domain)]
        rows.append((epoch, phase, ALL_DOMAINS, "accuracy", result.average))
        self._append(rows)

    def log_epoch(self, epoch: int, record: EpochRecord):
        """Training means (absent for the epoch-0 evaluation) followed by validation accuracy"""
        rows = []
        if record.train is not None:
            for metric, value in record.train.model_dump(exclude={"epoch", "steps"}).items():
                rows.append((epoch, "train", ALL_DOMAINS, metric, value))
        self._append(rows)
        self.log_evaluation(epoch, "validation", record.validation)

    def history(self) -> List[Dict[str, Any]]:
        """Every row so far, with epoch as int and value as float"""
        with open(self.path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        for row in rows:
            row["epoch"] = int(row["epoch"])
            row["value"] = float(row["value"])
        return rows
