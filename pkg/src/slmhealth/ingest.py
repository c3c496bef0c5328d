"""Lifelog ingestion: CSV -> daily records -> prediction windows -> seeded split.

A participant log is one delimited table with a date column, four sensor
columns, an optional mood column and up to four self-report columns.  The
column names are supplied by a :class:`ColumnSchema` so any PMData-shaped
export loads without code changes.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import IO, Iterable, Mapping, Sequence

from .errors import ContractError, IntegrityError, RowError, SchemaError


class SensorKind(str, Enum):
    STEPS = "steps"
    CALORIES_BURNED = "calories_burned"
    RESTING_HEART_RATE = "resting_heart_rate"
    SLEEP_MINUTES = "sleep_minutes"


SENSOR_KINDS: tuple[SensorKind, ...] = tuple(SensorKind)

TASKS = ("stress", "readiness", "fatigue", "sleep_quality")


@dataclass(frozen=True)
class TaskSpec:
    task: str
    label_min: int
    label_max: int
    metric: str
    window_len: int = 14

    def __post_init__(self):
        if self.task not in TASKS:
            raise ContractError(f"unknown task {self.task!r}")
        if self.label_min >= self.label_max:
            raise ContractError(f"{self.task}: label_min must be < label_max")
        if self.metric not in ("mae", "accuracy"):
            raise ContractError(f"{self.task}: unknown metric {self.metric!r}")
        if self.window_len < 1:
            raise ContractError("window_len must be >= 1")

    def in_range(self, value: int) -> bool:
        return self.label_min <= value <= self.label_max

    @property
    def display_name(self) -> str:
        return self.task.replace("_", " ")


# fatigue is scored by hit rate, the rest by absolute error
DEFAULT_TASK_SPECS: dict[str, TaskSpec] = {
    "stress": TaskSpec("stress", 1, 5, "mae"),
    "readiness": TaskSpec("readiness", 0, 10, "mae"),
    "fatigue": TaskSpec("fatigue", 1, 5, "accuracy"),
    "sleep_quality": TaskSpec("sleep_quality", 1, 5, "mae"),
}


@dataclass(frozen=True)
class DailyRecord:
    date: dt.date
    sensors: Mapping[SensorKind, float | None] = field(default_factory=dict)
    mood: int | None = None
    labels: Mapping[str, int | None] = field(default_factory=dict)

    def sensor(self, kind: SensorKind) -> float | None:
        return self.sensors.get(kind)

    def label(self, task: str) -> int | None:
        return self.labels.get(task)

    def to_dict(self) -> dict:
        return {
            "date": self.date.isoformat(),
            "sensors": {k.value: self.sensors.get(k) for k in SENSOR_KINDS},
            "mood": self.mood,
            "labels": {t: self.labels.get(t) for t in TASKS},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DailyRecord":
        return cls(
            date=dt.date.fromisoformat(d["date"]),
            sensors={SensorKind(k): v for k, v in d.get("sensors", {}).items()},
            mood=d.get("mood"),
            labels=dict(d.get("labels", {})),
        )


@dataclass(frozen=True)
class ParticipantLog:
    participant_id: str
    records: tuple[DailyRecord, ...]

    def __post_init__(self):
        for a, b in zip(self.records, self.records[1:]):
            if not a.date < b.date:
                raise IntegrityError(
                    f"{self.participant_id}: record dates not strictly increasing at {b.date}"
                )

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class PredictionWindow:
    participant_id: str
    task: str
    days: tuple[DailyRecord, ...]
    context_mood: int | None
    label: int
    label_date: dt.date

    @property
    def window_id(self) -> str:
        return f"{self.participant_id}:{self.task}:{self.label_date.isoformat()}"

    def series(self, kind: SensorKind) -> list[float | None]:
        return [d.sensor(kind) for d in self.days]

    def to_dict(self) -> dict:
        return {
            "window_id": self.window_id,
            "participant_id": self.participant_id,
            "task": self.task,
            "label_date": self.label_date.isoformat(),
            "label": self.label,
            "context_mood": self.context_mood,
            "days": [d.to_dict() for d in self.days],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PredictionWindow":
        return cls(
            participant_id=d["participant_id"],
            task=d["task"],
            days=tuple(DailyRecord.from_dict(x) for x in d["days"]),
            context_mood=d.get("context_mood"),
            label=int(d["label"]),
            label_date=dt.date.fromisoformat(d["label_date"]),
        )


@dataclass(frozen=True)
class ColumnSchema:
    """Maps CSV column names onto record fields.

    ``sensors`` and ``labels`` map SensorKind values / task names to column
    names; unmapped sensors are treated as always missing, unmapped tasks
    simply carry no labels.
    """

    date: str = "date"
    sensors: Mapping[str, str] = field(
        default_factory=lambda: {k.value: k.value for k in SENSOR_KINDS}
    )
    mood: str | None = "mood"
    labels: Mapping[str, str] = field(default_factory=lambda: {t: t for t in TASKS})
    participant: str | None = None
    delimiter: str = ","

    @classmethod
    def from_dict(cls, d: Mapping) -> "ColumnSchema":
        known = {"date", "sensors", "mood", "labels", "participant", "delimiter"}
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        kw = dict(d)
        for k in kw.get("sensors", {}):
            if k not in {s.value for s in SENSOR_KINDS}:
                raise SchemaError(f"unknown sensor kind {k!r}")
        for t in kw.get("labels", {}):
            if t not in TASKS:
                raise SchemaError(f"unknown task {t!r}")
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "date": self.date,
            "sensors": dict(self.sensors),
            "mood": self.mood,
            "labels": dict(self.labels),
            "participant": self.participant,
            "delimiter": self.delimiter,
        }


def _parse_float(cell: str | None) -> float | None:
    if cell is None:
        return None
    cell = cell.strip()
    if not cell:
        return None
    try:
        v = float(cell)
    except ValueError:
        return None
    return None if math.isnan(v) or math.isinf(v) else v


def _parse_int(cell: str | None) -> int | None:
    v = _parse_float(cell)
    if v is None or v != int(v):
        return None
    return int(v)


def _read_rows(source, schema: ColumnSchema):
    if isinstance(source, (bytes, bytearray)):
        text = io.StringIO(source.decode("utf-8-sig"))
    elif isinstance(source, str):
        text = io.StringIO(source)
    else:
        raw = source.read()
        text = io.StringIO(raw.decode("utf-8-sig") if isinstance(raw, bytes) else raw)
    reader = csv.DictReader(text, delimiter=schema.delimiter)
    header = reader.fieldnames
    if not header:
        raise SchemaError("missing header row")
    header = [h.strip() for h in header]
    reader.fieldnames = header
    if len(set(header)) != len(header):
        raise SchemaError("duplicate column names in header")
    required = [schema.date, *schema.sensors.values(), *schema.labels.values()]
    if schema.mood:
        required.append(schema.mood)
    if schema.participant:
        required.append(schema.participant)
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"header lacks mapped columns: {missing}")
    return reader


def _parse_record(row: Mapping[str, str], rownum: int, schema: ColumnSchema,
                  task_specs: Mapping[str, TaskSpec]) -> DailyRecord:
    raw_date = (row.get(schema.date) or "").strip()
    try:
        date = dt.date.fromisoformat(raw_date[:10])
    except ValueError:
        raise RowError(rownum, f"unparseable date {raw_date!r}") from None
    sensors = {SensorKind(k): _parse_float(row.get(col)) for k, col in schema.sensors.items()}
    labels = {}
    for task, col in schema.labels.items():
        v = _parse_int(row.get(col))
        spec = task_specs.get(task)
        if v is not None and spec is not None and not spec.in_range(v):
            raise RowError(rownum, f"{task} value {v} outside [{spec.label_min}, {spec.label_max}]")
        labels[task] = v
    mood = _parse_int(row.get(schema.mood)) if schema.mood else None
    return DailyRecord(date=date, sensors=sensors, mood=mood, labels=labels)


def load_participant_log(
    source: bytes | str | IO,
    schema: ColumnSchema | None = None,
    participant_id: str = "p0",
    task_specs: Mapping[str, TaskSpec] | None = None,
) -> ParticipantLog:
    """Parse one participant's delimited table into a date-sorted log.

    Unparseable numeric cells become missing values.  Row indices in errors
    are 1-based data rows (the header is row 0).  Self-reports outside their
    task's label range are rejected as row errors.
    """
    schema = schema or ColumnSchema()
    task_specs = DEFAULT_TASK_SPECS if task_specs is None else task_specs
    reader = _read_rows(source, schema)
    by_date: dict[dt.date, DailyRecord] = {}
    for i, row in enumerate(reader, start=1):
        rec = _parse_record(row, i, schema, task_specs)
        if rec.date in by_date:
            raise IntegrityError(f"{participant_id}: duplicate date {rec.date} (row {i})")
        by_date[rec.date] = rec
    return ParticipantLog(participant_id, tuple(by_date[d] for d in sorted(by_date)))


def load_participant_logs(
    source: bytes | str | IO,
    schema: ColumnSchema,
    default_participant: str = "p0",
    task_specs: Mapping[str, TaskSpec] | None = None,
) -> list[ParticipantLog]:
    """Like :func:`load_participant_log`, but splits a pooled table by the
    schema's participant column when one is configured."""
    if not schema.participant:
        return [load_participant_log(source, schema, default_participant, task_specs)]
    task_specs = DEFAULT_TASK_SPECS if task_specs is None else task_specs
    reader = _read_rows(source, schema)
    groups: dict[str, dict[dt.date, DailyRecord]] = {}
    for i, row in enumerate(reader, start=1):
        pid = (row.get(schema.participant) or "").strip()
        if not pid:
            raise RowError(i, "empty participant id")
        rec = _parse_record(row, i, schema, task_specs)
        g = groups.setdefault(pid, {})
        if rec.date in g:
            raise IntegrityError(f"{pid}: duplicate date {rec.date} (row {i})")
        g[rec.date] = rec
    return [
        ParticipantLog(pid, tuple(g[d] for d in sorted(g))) for pid, g in sorted(groups.items())
    ]


def build_windows(
    log: ParticipantLog,
    spec: TaskSpec,
    stride: int = 1,
    label_offset: int = 0,
) -> list[PredictionWindow]:
    """Emit one window per usable label day.

    The label day sits ``1 + label_offset`` days after the last window day.
    A window needs every one of its ``window_len`` days present in the log
    (values may be missing) and a self-report on the label day.  With
    ``stride > 1`` consecutive emitted windows are at least ``stride`` days
    apart.
    """
    if spec.window_len < 1:
        raise ContractError("window_len must be >= 1")
    if stride < 1 or label_offset < 0:
        raise ContractError("stride must be >= 1 and label_offset >= 0")
    by_date = {r.date: r for r in log.records}
    one = dt.timedelta(days=1)
    out: list[PredictionWindow] = []
    last_kept: dt.date | None = None
    for rec in log.records:
        label = rec.label(spec.task)
        if label is None or not spec.in_range(label):
            continue
        if last_kept is not None and (rec.date - last_kept).days < stride:
            continue
        end = rec.date - one * (1 + label_offset)
        days = []
        for k in range(spec.window_len - 1, -1, -1):
            day = by_date.get(end - one * k)
            if day is None:
                break
            days.append(day)
        if len(days) != spec.window_len:
            continue
        out.append(
            PredictionWindow(
                participant_id=log.participant_id,
                task=spec.task,
                days=tuple(days),
                context_mood=rec.mood,
                label=label,
                label_date=rec.date,
            )
        )
        last_kept = rec.date
    return out


def train_size(n: int, ratio: float) -> int:
    # decimal-literal rational so 0.7 * 10 is 7, not floor(6.999...)
    return math.floor(Fraction(str(ratio)) * n)


def split_windows(windows: Sequence, ratio: float = 0.8, seed: int = 0) -> tuple[list, list]:
    """Seeded shuffle, then the first ``floor(ratio * N)`` items train, the rest eval."""
    if not 0 < ratio < 1:
        raise ContractError("ratio must lie strictly between 0 and 1")
    items = list(windows)
    random.Random(seed).shuffle(items)
    k = train_size(len(items), ratio)
    return items[:k], items[k:]


def dump_windows_jsonl(windows: Iterable[PredictionWindow], fp: IO[str]) -> int:
    n = 0
    for w in windows:
        fp.write(json.dumps(w.to_dict(), sort_keys=True) + "\n")
        n += 1
    return n


def load_windows_jsonl(fp: IO[str]) -> list[PredictionWindow]:
    return [PredictionWindow.from_dict(json.loads(line)) for line in fp if line.strip()]
