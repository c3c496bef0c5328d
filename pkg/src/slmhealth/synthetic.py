"""Seeded synthetic lifelogs in the PMData-shaped CSV layout.

Used by the test-suite and the ``synth`` CLI command to exercise the full
pipeline without the real dataset.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import random
from pathlib import Path
from typing import Mapping, Optional

from .ingest import DEFAULT_TASK_SPECS, SENSOR_KINDS, TASKS, TaskSpec

HEADER = ["date", *(k.value for k in SENSOR_KINDS), "mood", *TASKS]


def participant_rows(
    n_days: int,
    seed: int,
    start: dt.date = dt.date(2019, 11, 1),
    missing_rate: float = 0.05,
    label_rate: float = 0.9,
    task_specs: Optional[Mapping[str, TaskSpec]] = None,
    balanced: bool = False,
) -> list[dict]:
    """Daily rows with plausible sensor values.

    With ``balanced=True`` each task's labels cycle through its full range so
    every value occurs equally often, and every day carries every label.
    """
    specs = task_specs or DEFAULT_TASK_SPECS
    rng = random.Random(seed)
    rows = []
    for i in range(n_days):
        def maybe(v):
            return "" if rng.random() < missing_rate else v

        row = {
            "date": (start + dt.timedelta(days=i)).isoformat(),
            "steps": maybe(f"{rng.randint(800, 16000)}.0"),
            "calories_burned": maybe(f"{rng.uniform(1500, 3200):.1f}"),
            "resting_heart_rate": maybe(f"{rng.uniform(48, 72):.2f}"),
            "sleep_minutes": maybe(f"{rng.randint(240, 600)}.0"),
            "mood": str(rng.randint(1, 5)),
        }
        for j, task in enumerate(TASKS):
            spec = specs[task]
            if balanced:
                span = spec.label_max - spec.label_min + 1
                row[task] = str(spec.label_min + (i + j) % span)
            elif rng.random() < label_rate:
                row[task] = str(rng.randint(spec.label_min, spec.label_max))
            else:
                row[task] = ""
        rows.append(row)
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=HEADER, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def write_synthetic_dataset(
    out_dir: str | Path,
    n_participants: int = 3,
    n_days: int = 60,
    seed: int = 0,
    **kw,
) -> list[Path]:
    """Write ``p01.csv`` ... one file per participant; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for p in range(n_participants):
        path = out / f"p{p + 1:02d}.csv"
        path.write_text(rows_to_csv(participant_rows(n_days, seed * 1000 + p, **kw)), encoding="utf-8")
        paths.append(path)
    return paths
