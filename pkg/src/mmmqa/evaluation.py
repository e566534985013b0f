"""Accuracy evaluation over encoded datasets."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import UsageError
from .model import EncodedDataset, MMMModel, predict


@dataclass
class ExampleRecord:
    id: str
    predicted: int
    gold: int
    logits: List[float]


@dataclass
class EvalReport:
    dataset: str
    accuracy: float
    records: List[ExampleRecord] = field(default_factory=list)

    @property
    def correct(self) -> int:
        return sum(r.predicted == r.gold for r in self.records)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "predicted", "gold", "logits"])
            for r in self.records:
                w.writerow([r.id, r.predicted, r.gold, " ".join(repr(x) for x in r.logits)])


def evaluate(model: MMMModel, data: EncodedDataset, name: str = "dev", batch_size: int = 64) -> EvalReport:
    """Eval-mode accuracy; long passages are windowed and snippet logits summed."""
    if data.n_examples == 0:
        raise UsageError(f"cannot evaluate on empty dataset {name!r}")
    labels = data.labels()
    if any(y is None for y in labels):
        raise UsageError(f"dataset {name!r} has unlabelled examples")
    logits = model.predict_logits(data, batch_size)
    records = [ExampleRecord(data.ids[i], predict(v), int(y), [float(x) for x in v])
               for i, (v, y) in enumerate(zip(logits, labels))]
    correct = sum(r.predicted == r.gold for r in records)
    return EvalReport(name, correct / len(records), records)


def accuracy_from_predictions(predicted, gold) -> float:
    predicted, gold = np.asarray(predicted), np.asarray(gold)
    if predicted.size == 0:
        raise UsageError("no predictions")
    return float(np.mean(predicted == gold))
