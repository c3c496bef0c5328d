import datetime as dt
import json
import sys

import pytest

from slmhealth.ingest import DailyRecord, PredictionWindow, SensorKind
from slmhealth.synthetic import write_synthetic_dataset

START = dt.date(2020, 1, 1)

# Head/tail values of the canonical example prompt; middle values are local.
EXAMPLE_SERIES = {
    SensorKind.STEPS: [1476.0, 4809.0, 7021.0, 10233.0, 5620.0, 8840.0, 3312.0,
                       9120.0, 6654.0, 12010.0, 4480.0, 7730.0, 5105.0, None],
    SensorKind.CALORIES_BURNED: [169.0, 419.0, 388.0, 512.0, 301.0, 455.0, 274.0,
                                 498.0, 366.0, 540.0, 289.0, 410.0, 333.0, None],
    SensorKind.RESTING_HEART_RATE: [53.24, 52.24, 52.9, 53.01, 52.75, 52.3, 51.98,
                                    52.12, 51.87, 51.66, 51.72, 51.55, 51.49, 51.40],
    SensorKind.SLEEP_MINUTES: [110.0, 524.0, 470.0, 445.0, 502.0, 388.0, 461.0,
                               430.0, 495.0, 477.0, 452.0, 510.0, 466.0, 481.0],
}


def make_window(series, task="fatigue", label=3, mood=3, start=START, participant="p01"):
    n = len(next(iter(series.values())))
    days = tuple(
        DailyRecord(start + dt.timedelta(days=i), {k: v[i] for k, v in series.items()})
        for i in range(n)
    )
    return PredictionWindow(participant, task, days, mood, label, start + dt.timedelta(days=n))


@pytest.fixture
def example_window():
    return make_window(EXAMPLE_SERIES)


@pytest.fixture
def dataset_paths(tmp_path):
    """Synthetic 3-participant, 60-day dataset."""
    return [str(p) for p in write_synthetic_dataset(tmp_path / "data", 3, 60, seed=11)]


@pytest.fixture
def eval_config(tmp_path, dataset_paths):
    def make(**over):
        base = {
            "dataset": {"paths": dataset_paths},
            "backend": {"kind": "oracle"},
            "output_dir": str(tmp_path / "run"),
            "repeat": 1,
        }
        for k, v in over.items():
            base[k] = v
        return base
    return make


def engine_cmd(*args):
    return [sys.executable, "-m", "slmhealth.inference.scripted_engine", *args]


def read_jsonl(path):
    return [json.loads(l) for l in open(path, encoding="utf-8") if l.strip()]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
