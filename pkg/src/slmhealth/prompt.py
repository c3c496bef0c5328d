"""Zero-shot prompt rendering: instruction, main query, answer prompt.

Templates are plain strings with ``{{name}}`` placeholders so they can be
overridden from the run config without touching code.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence

from .errors import ConfigError, ContractError
from .ingest import SENSOR_KINDS, PredictionWindow, SensorKind, TaskSpec, TASKS

SEPARATOR = "\n"

DEFAULT_DECIMALS: dict[SensorKind, int] = {
    SensorKind.STEPS: 1,
    SensorKind.CALORIES_BURNED: 1,
    SensorKind.RESTING_HEART_RATE: 2,
    SensorKind.SLEEP_MINUTES: 1,
}

SERIES_PLACEHOLDERS = {k: f"{k.value}_series" for k in SENSOR_KINDS}

INSTRUCTION = (
    "You are a personalized healthcare agent trained to predict {{task_name}} "
    "which ranges from {{range_min}} to {{range_max}} based on physiological data "
    "and user information."
)

QUERY = (
    "The recent {{window_len}}-days sensor readings show: "
    'Steps: "{{steps_series}}" steps, '
    'Burned Calories: "{{calories_burned_series}}" calories, '
    'Resting Heart Rate: "{{resting_heart_rate_series}}" beats/min, '
    'Sleep Minutes: "{{sleep_minutes_series}}" minutes{{mood_clause}}. '
    "What would be the predicted {{task_name}} (Please give me a single integer "
    "value between {{range_min}} and {{range_max}})?"
)

MOOD_CLAUSE = ", [Mood]: {{mood}} out of 5"

ANSWER = "The predicted {{task_name}} level would be:"

_PLACEHOLDER = re.compile(r"\{\{\s*([a-z_]+)\s*\}\}")


def _placeholders(text: str) -> list[str]:
    return _PLACEHOLDER.findall(text)


def _fill(text: str, values: Mapping[str, str]) -> str:
    def sub(m: re.Match) -> str:
        key = m.group(1)
        if key not in values:
            raise ContractError(f"unknown placeholder {{{{{key}}}}}")
        return values[key]

    return _PLACEHOLDER.sub(sub, text)


@dataclass(frozen=True)
class PromptTemplate:
    task: str
    instruction_text: str = INSTRUCTION
    query_skeleton: str = QUERY
    answer_prompt: str = ANSWER
    mood_clause: str = MOOD_CLAUSE

    def __post_init__(self):
        if not self.answer_prompt or self.answer_prompt != self.answer_prompt.rstrip():
            raise ContractError("answer_prompt must be non-empty without trailing whitespace")
        names = _placeholders(self.query_skeleton)
        for kind, ph in SERIES_PLACEHOLDERS.items():
            if names.count(ph) != 1:
                raise ContractError(
                    f"query skeleton must contain exactly one {{{{{ph}}}}} placeholder"
                )


@dataclass(frozen=True)
class PromptBundle:
    instruction: str
    main_query: str
    answer_prompt: str
    full_text: str

    @property
    def sha256(self) -> str:
        return prompt_hash(self.full_text)


def prompt_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _fixed(value: float, decimals: int) -> str:
    # Decimal(str(x)) keeps the shortest repr, so 2.675 rounds as written
    q = Decimal(1).scaleb(-decimals)
    d = Decimal(repr(float(value))).quantize(q, rounding=ROUND_HALF_UP)
    if d == 0:
        d = abs(d)
    return f"{d:.{decimals}f}"


def format_series(values: Sequence[float | None], decimals: int) -> str:
    """Render ``values`` as ``"a, b, NaN"`` with fixed-point, half-away-from-zero rounding."""
    if not 0 <= decimals <= 6:
        raise ContractError("decimals must lie in [0, 6]")
    parts = []
    for v in values:
        if v is None or (isinstance(v, float) and math.isnan(v)):
            parts.append("NaN")
        else:
            parts.append(_fixed(v, decimals))
    return ", ".join(parts)


def render_prompt(
    window: PredictionWindow,
    template: PromptTemplate,
    spec: TaskSpec,
    decimals: Mapping[SensorKind, int] | None = None,
) -> PromptBundle:
    if window.task != template.task or window.task != spec.task:
        raise ContractError(
            f"task mismatch: window={window.task} template={template.task} spec={spec.task}"
        )
    decimals = {**DEFAULT_DECIMALS, **(decimals or {})}
    values = {
        "task_name": spec.display_name,
        "range_min": str(spec.label_min),
        "range_max": str(spec.label_max),
        "window_len": str(len(window.days)),
    }
    for kind, ph in SERIES_PLACEHOLDERS.items():
        values[ph] = format_series(window.series(kind), decimals[kind])
    if window.context_mood is None:
        values["mood_clause"] = ""
    else:
        values["mood_clause"] = _fill(template.mood_clause, {"mood": str(window.context_mood)})

    instruction = _fill(template.instruction_text, values).strip()
    main_query = _fill(template.query_skeleton, values).strip()
    answer = _fill(template.answer_prompt, values)
    full = SEPARATOR.join([instruction, main_query, answer])
    return PromptBundle(instruction, main_query, answer, full)


def builtin_templates(overrides: Mapping[str, Mapping[str, str]] | None = None) -> dict[str, PromptTemplate]:
    """One template per task, optionally patched field-by-field from config.

    The answer prompt placeholder ``{{task_name}}`` is resolved eagerly so the
    stored ``answer_prompt`` is the literal string the model completes.
    """
    out = {}
    for task in TASKS:
        name = task.replace("_", " ")
        out[task] = PromptTemplate(task=task, answer_prompt=_fill(ANSWER, {"task_name": name}))
    for task, fields in (overrides or {}).items():
        if task not in out:
            raise ConfigError(f"template override for unknown task {task!r}")
        allowed = {"instruction_text", "query_skeleton", "answer_prompt", "mood_clause"}
        bad = set(fields) - allowed
        if bad:
            raise ConfigError(f"unknown template fields for {task}: {sorted(bad)}")
        try:
            out[task] = replace(out[task], **fields)
        except ContractError as e:
            raise ConfigError(f"template override for {task}: {e}") from None
    return out
