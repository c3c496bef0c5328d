"""Generic prompt corpora (one prompt per record) for efficiency profiling."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from importlib import resources
from typing import IO, Optional

from .errors import ConfigError, IntegrityError, RowError


@dataclass(frozen=True)
class CorpusItem:
    id: str
    prompt: str
    reference_answer: Optional[str] = None


def _text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return source.decode("utf-8-sig")
    if isinstance(source, str):
        return source
    raw = source.read()
    return raw.decode("utf-8-sig") if isinstance(raw, bytes) else raw


def _records_jsonl(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise RowError(lineno, f"invalid JSON: {e.msg}") from None
        if not isinstance(obj, dict):
            raise RowError(lineno, "expected a JSON object")
        yield lineno, obj.get("id"), obj.get("prompt"), obj.get("answer")


def _records_csv(text: str):
    reader = csv.DictReader(io.StringIO(text))
    if not reader.fieldnames or "id" not in reader.fieldnames or "prompt" not in reader.fieldnames:
        raise RowError(1, "CSV header must contain id,prompt[,answer]")
    for row in reader:
        if None in row:
            raise RowError(reader.line_num, "more cells than header columns")
        answer = row.get("answer") or None
        yield reader.line_num, row["id"], row["prompt"], answer


def load_corpus(source: bytes | str | IO, format: str = "jsonl") -> list[CorpusItem]:
    """Read a corpus in record order. Errors name the offending line number."""
    if format == "jsonl":
        records = _records_jsonl(_text(source))
    elif format == "csv":
        records = _records_csv(_text(source))
    else:
        raise ConfigError(f"unknown corpus format {format!r}")
    items, seen = [], set()
    for lineno, id_, prompt, answer in records:
        if id_ is None or str(id_) == "":
            raise RowError(lineno, "missing id")
        id_ = str(id_)
        if not isinstance(prompt, str) or not prompt.strip():
            raise RowError(lineno, f"empty prompt for id {id_!r}")
        if id_ in seen:
            raise IntegrityError(f"duplicate corpus id {id_!r} (line {lineno})")
        seen.add(id_)
        items.append(CorpusItem(id_, prompt, None if answer is None else str(answer)))
    return items


def builtin_qa_corpus() -> list[CorpusItem]:
    """The bundled 20-item synthetic QA fixture."""
    data = resources.files("slmhealth.data").joinpath("qa_fixture.jsonl").read_bytes()
    return load_corpus(data, "jsonl")
