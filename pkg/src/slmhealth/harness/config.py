"""Run configuration: JSON file + dotted-key CLI overrides -> validated RunConfig."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from ..errors import ConfigError, ContractError, SchemaError
from ..extract import POLICIES
from ..inference import GenerationParams
from ..ingest import DEFAULT_TASK_SPECS, TASKS, ColumnSchema, SensorKind, TaskSpec

BACKEND_KINDS = ("mock", "oracle", "http", "subprocess")

DEFAULTS: dict[str, Any] = {
    "run_name": "run",
    "output_dir": "runs/run",
    "dataset": {"paths": [], "schema": {}},
    "tasks": {t: {} for t in TASKS},
    "windows": {"window_len": 14, "stride": 1, "label_offset": 0},
    "split": {"ratio": 0.8, "seed": 0},
    "backend": {"kind": "mock", "script": [[0.0, " 3"]]},
    "generation": {"max_new_tokens": 32, "temperature": 0.0, "seed": None, "stop_sequences": ["\n"]},
    "extraction": {"policy": "discard", "match": "first"},
    "prompt": {"templates": {}, "decimals": {}},
    "repeat": 3,
    "retries": 2,
    "workers": 1,
    "profiler": {"enabled": False, "period_s": 0.1, "dump_samples": False, "max_new_tokens": None},
    "corpus": {"path": None, "format": "jsonl"},
}


def deep_merge(base: Mapping, override: Mapping) -> dict:
    out = copy.deepcopy(dict(base))
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(cfg: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def parse_overrides(args: Sequence[str]) -> list[tuple[str, Any]]:
    """``["--split.seed", "7", "--backend.kind=oracle"]`` -> [("split.seed", 7), ...]."""
    out, i = [], 0
    while i < len(args):
        a = args[i]
        if not a.startswith("--") or len(a) == 2:
            raise ConfigError(f"unexpected argument {a!r}")
        key = a[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(args):
                raise ConfigError(f"missing value for --{key}")
            raw = args[i + 1]
            i += 2
        out.append((key.replace("-", "_"), _parse_value(raw)))
    return out


@dataclass
class RunConfig:
    raw: dict
    task_specs: dict
    schema: ColumnSchema
    generation: GenerationParams

    def __getattr__(self, name):
        # plain keys (repeat, workers, output_dir, ...) read through to the raw mapping
        raw = self.__dict__.get("raw", {})
        if name in raw:
            return raw[name]
        raise AttributeError(name)

    @property
    def output_path(self) -> Path:
        return Path(self.raw["output_dir"])

    def snapshot(self) -> dict:
        return copy.deepcopy(self.raw)


def build_config(data: Mapping | None = None, overrides: Sequence[tuple[str, Any]] = (), check_paths: bool = True) -> RunConfig:
    data = dict(data or {})
    raw = deep_merge(DEFAULTS, data)
    # an explicit task selection replaces the default four rather than merging
    if "tasks" in data:
        tasks = data["tasks"]
        raw["tasks"] = {t: {} for t in tasks} if isinstance(tasks, list) else copy.deepcopy(tasks)
    for key, value in overrides:
        set_dotted(raw, key, value)
    return validate(raw, check_paths)


def load_config(path: str | Path | None, overrides: Sequence[tuple[str, Any]] = (), check_paths: bool = True) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return build_config(data, overrides, check_paths)


def validate(raw: dict, check_paths: bool = True) -> RunConfig:
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("repeat", "workers"):
        if not isinstance(raw[key], int) or raw[key] < 1:
            raise ConfigError(f"{key} must be an integer >= 1")
    if not isinstance(raw["retries"], int) or raw["retries"] < 0:
        raise ConfigError("retries must be an integer >= 0")
    ratio = raw["split"]["ratio"]
    if not isinstance(ratio, (int, float)) or not 0 < ratio < 1:
        raise ConfigError("split.ratio must lie strictly between 0 and 1")
    if not isinstance(raw["split"]["seed"], int):
        raise ConfigError("split.seed must be an integer")
    if raw["extraction"]["policy"] not in POLICIES:
        raise ConfigError(f"extraction.policy must be one of {POLICIES}")
    if raw["extraction"]["match"] not in ("first", "last"):
        raise ConfigError("extraction.match must be 'first' or 'last'")
    if raw["backend"].get("kind") not in BACKEND_KINDS:
        raise ConfigError(f"backend.kind must be one of {BACKEND_KINDS}")
    w = raw["windows"]
    if w["stride"] < 1 or w["label_offset"] < 0 or w["window_len"] < 1:
        raise ConfigError("windows: need window_len >= 1, stride >= 1, label_offset >= 0")
    if raw["profiler"]["period_s"] < 0.01:
        raise ConfigError("profiler.period_s must be >= 0.01")

    specs = {}
    for task, over in raw["tasks"].items():
        if task not in TASKS:
            raise ConfigError(f"unknown task {task!r}")
        base = DEFAULT_TASK_SPECS[task]
        fields = {
            "task": task,
            "label_min": base.label_min,
            "label_max": base.label_max,
            "metric": base.metric,
            "window_len": w["window_len"],
            **(over or {}),
        }
        try:
            specs[task] = TaskSpec(**fields)
        except (TypeError, ContractError) as e:
            raise ConfigError(f"tasks.{task}: {e}") from None
    if not specs:
        raise ConfigError("no tasks configured")

    try:
        schema = ColumnSchema.from_dict(raw["dataset"].get("schema") or {})
    except (SchemaError, TypeError) as e:
        raise ConfigError(f"dataset.schema: {e}") from None
    for k in raw["prompt"]["decimals"]:
        try:
            SensorKind(k)
        except ValueError:
            raise ConfigError(f"prompt.decimals: unknown sensor {k!r}") from None

    g = raw["generation"]
    try:
        gen = GenerationParams(
            max_new_tokens=g["max_new_tokens"],
            temperature=g["temperature"],
            seed=g.get("seed"),
            stop_sequences=tuple(g.get("stop_sequences") or ()),
        )
    except ContractError as e:
        raise ConfigError(f"generation: {e}") from None

    if check_paths:
        for p in raw["dataset"]["paths"]:
            if not Path(p).is_file():
                raise ConfigError(f"dataset file not found: {p}")
        cp = raw["corpus"].get("path")
        if cp and cp != "builtin" and not Path(cp).is_file():
            raise ConfigError(f"corpus file not found: {cp}")
    return RunConfig(raw=raw, task_specs=specs, schema=schema, generation=gen)
