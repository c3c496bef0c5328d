"""Integer label extraction from free-text completions."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .errors import ConfigError
from .ingest import TaskSpec

VALID = "valid"
OUT_OF_RANGE = "out_of_range"
NO_INTEGER = "no_integer"

POLICIES = ("discard", "clamp", "midpoint")

# A standalone integer: not preceded by a digit or a decimal point, not
# followed by more digits or a fractional part. "3.5" therefore yields nothing.
_INTEGER = re.compile(r"(?<![0-9.])[+-]?[0-9]+(?![0-9]|\.[0-9])")


@dataclass(frozen=True)
class ExtractionOutcome:
    status: str
    value: Optional[int] = None
    raw_match: Optional[str] = None

    @property
    def is_valid(self) -> bool:
        return self.status == VALID

    def to_dict(self) -> dict:
        return {"status": self.status, "value": self.value, "raw_match": self.raw_match}

    @classmethod
    def from_dict(cls, d) -> "ExtractionOutcome":
        return cls(d["status"], d.get("value"), d.get("raw_match"))


def extract_label(completion: str, spec: TaskSpec, match: str = "first") -> ExtractionOutcome:
    """Classify ``completion`` as valid / out_of_range / no_integer.

    Only the first standalone integer is considered (or the last with
    ``match="last"``); later numbers never rescue an out-of-range first one.
    """
    found = _INTEGER.findall(completion)
    if not found:
        return ExtractionOutcome(NO_INTEGER)
    if match == "first":
        raw = found[0]
    elif match == "last":
        raw = found[-1]
    else:
        raise ConfigError(f"unknown match mode {match!r}")
    value = int(raw)
    if spec.in_range(value):
        return ExtractionOutcome(VALID, value, raw)
    return ExtractionOutcome(OUT_OF_RANGE, None, raw)


def midpoint(spec: TaskSpec) -> int:
    # round half up: (0 + 5) / 2 -> 3
    return (spec.label_min + spec.label_max + 1) // 2


def resolve_prediction(outcome: ExtractionOutcome, spec: TaskSpec, policy: str = "discard") -> Optional[int]:
    if policy not in POLICIES:
        raise ConfigError(f"unknown invalid policy {policy!r}; expected one of {POLICIES}")
    if outcome.status == VALID:
        return outcome.value
    if policy == "discard":
        return None
    if policy == "midpoint":
        return midpoint(spec)
    # clamp: only an out-of-range integer has a nearest bound
    if outcome.status == OUT_OF_RANGE:
        v = int(outcome.raw_match)
        return spec.label_min if v < spec.label_min else spec.label_max
    return None
