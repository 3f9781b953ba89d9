import csv
import os
import typing

import numpy as np
import torch
from sklearn.metrics import accuracy_score, f1_score

from jerseyid.protocol import HeadOutputs, LabelTriple, MetricsRow

METRICS_FIELDS = list(MetricsRow.model_fields)


def accuracy(y_true: typing.Sequence, y_pred: typing.Sequence) -> float:
    if len(y_true) == 0:
        raise ValueError("accuracy of an empty prediction set")
    return float(accuracy_score(y_true, y_pred))


def weighted_f1(y_true: typing.Sequence, y_pred: typing.Sequence) -> float:
    """Per-class F1 averaged with weights proportional to true support; undefined F1 counts as 0."""
    if len(y_true) == 0:
        raise ValueError("weighted F1 of an empty prediction set")
    return float(f1_score(y_true, y_pred, average="weighted", zero_division=0))


def batch_accuracy(out: HeadOutputs, labels: typing.Sequence[LabelTriple]) -> float:
    predicted = torch.argmax(out.p0, dim=-1).cpu().numpy()
    return float(np.mean(predicted == np.array([y.y0 for y in labels])))


class MetricsLog:
    """Append-only metrics CSV whose header matches MetricsRow."""

    def __init__(self, path: typing.Union[str, os.PathLike]):
        self.path = path
        self.rows: typing.List[MetricsRow] = []
        with open(self.path, "w", newline="") as f:
            csv.DictWriter(f, fieldnames=METRICS_FIELDS).writeheader()

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError(
                f"metrics iteration {row.iteration} does not follow {self.rows[-1].iteration}"
            )
        self.rows.append(row)
        with open(self.path, "a", newline="") as f:
            values = row.model_dump()
            csv.DictWriter(f, fieldnames=METRICS_FIELDS).writerow(
                {k: "" if v is None else repr(v) for k, v in values.items()}
            )


def read_metrics(path: typing.Union[str, os.PathLike]) -> typing.List[MetricsRow]:
    with open(path, "r", newline="") as f:
        return [
            MetricsRow.model_validate({k: (v if v != "" else None) for k, v in record.items()})
            for record in csv.DictReader(f)
        ]
