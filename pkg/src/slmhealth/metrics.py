"""MAE / accuracy scoring and mean ± sample-std aggregation across runs."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import ContractError, UndefinedMetricError
from .extract import ExtractionOutcome, resolve_prediction
from .ingest import TaskSpec


def _check(predictions: Sequence[int], labels: Sequence[int]) -> None:
    if len(predictions) != len(labels):
        raise ContractError(f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels")
    if not predictions:
        raise UndefinedMetricError("metric undefined on zero pairs")


def mae(predictions: Sequence[int], labels: Sequence[int]) -> float:
    _check(predictions, labels)
    return math.fsum(abs(p - y) for p, y in zip(predictions, labels)) / len(labels)


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """Exact-match hit rate in percent."""
    _check(predictions, labels)
    hits = sum(1 for p, y in zip(predictions, labels) if p == y)
    return 100.0 * hits / len(labels)


METRICS = {"mae": mae, "accuracy": accuracy}


def aggregate_runs(values: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and sample (n-1) standard deviation; std is 0 for one run."""
    if not values:
        raise ContractError("aggregate_runs needs at least one value")
    if len(values) == 1:
        return float(values[0]), 0.0
    if all(v == values[0] for v in values):
        return float(values[0]), 0.0
    return statistics.fmean(values), statistics.stdev(values)


@dataclass
class EvalReport:
    """Score for one task.

    ``value`` is MAE in label units or accuracy in percent, absent when no
    pair survived the invalid policy (``error`` then says why).  For a
    repeated run ``value``/``std`` are mean and sample std over ``runs`` and
    the counts are summed over repeats.
    """

    task: str
    metric: str
    value: Optional[float]
    n_total: int
    n_valid: int
    n_invalid: int
    std: float = 0.0
    runs: list = field(default_factory=list)
    error: Optional[str] = None

    def __post_init__(self):
        if self.n_valid + self.n_invalid != self.n_total:
            raise ContractError("n_valid + n_invalid must equal n_total")
        if self.value is not None:
            if self.metric == "accuracy" and not 0.0 <= self.value <= 100.0:
                raise ContractError(f"accuracy {self.value} outside [0, 100]")
            if self.metric == "mae" and self.value < 0:
                raise ContractError(f"negative MAE {self.value}")

    @property
    def lower_is_better(self) -> bool:
        return self.metric == "mae"

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metric": self.metric,
            "value": self.value,
            "std": self.std,
            "std_kind": "sample (n-1)",
            "runs": list(self.runs),
            "n_total": self.n_total,
            "n_valid": self.n_valid,
            "n_invalid": self.n_invalid,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        return cls(
            task=d["task"], metric=d["metric"], value=d.get("value"),
            n_total=d["n_total"], n_valid=d["n_valid"], n_invalid=d["n_invalid"],
            std=d.get("std", 0.0), runs=list(d.get("runs", [])), error=d.get("error"),
        )


def task_report(
    outcomes: Sequence[ExtractionOutcome],
    labels: Sequence[int],
    spec: TaskSpec,
    policy: str = "discard",
) -> EvalReport:
    if len(outcomes) != len(labels):
        raise ContractError("outcomes and labels must be aligned")
    n_valid = sum(1 for o in outcomes if o.is_valid)
    preds, kept = [], []
    for o, y in zip(outcomes, labels):
        p = resolve_prediction(o, spec, policy)
        if p is not None:
            preds.append(p)
            kept.append(y)
    value, error = None, None
    try:
        value = METRICS[spec.metric](preds, kept)
    except UndefinedMetricError as e:
        error = str(e)
    return EvalReport(
        task=spec.task,
        metric=spec.metric,
        value=value,
        n_total=len(outcomes),
        n_valid=n_valid,
        n_invalid=len(outcomes) - n_valid,
        runs=[value],
        error=error,
    )


def combine_runs(reports: Sequence[EvalReport]) -> EvalReport:
    """Fold per-repeat reports for one task into mean ± std."""
    if not reports:
        raise ContractError("no reports to combine")
    first = reports[0]
    values = [r.value for r in reports if r.value is not None]
    n_total = sum(r.n_total for r in reports)
    n_valid = sum(r.n_valid for r in reports)
    if values:
        mean, std = aggregate_runs(values)
        error = None
    else:
        mean, std, error = None, 0.0, "metric undefined in every run"
    return EvalReport(
        task=first.task, metric=first.metric, value=mean, std=std,
        runs=[r.value for r in reports], n_total=n_total, n_valid=n_valid,
        n_invalid=n_total - n_valid, error=error,
    )
