"""Streaming generation abstraction shared by every adapter.

Adapters only produce text pieces; :func:`generate` owns the clock, stamps
each piece on receipt, enforces ``max_new_tokens`` and stop sequences and
checks the result invariants before handing it to the profiler.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

from ..errors import ContractError, EmptyGenerationError, TimestampError

# Single monotonic clock for every timestamp in a run.
clock_ns = time.perf_counter_ns
CLOCK_NAME = "time.perf_counter_ns"


@dataclass(frozen=True)
class GenerationParams:
    max_new_tokens: int = 32
    temperature: float = 0.0
    seed: Optional[int] = None
    stop_sequences: tuple = ("\n",)

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ContractError("max_new_tokens must be >= 1")
        if self.temperature < 0:
            raise ContractError("temperature must be >= 0")
        object.__setattr__(self, "stop_sequences", tuple(s for s in self.stop_sequences if s))

    def to_dict(self) -> dict:
        return {
            "max_new_tokens": self.max_new_tokens,
            "temperature": self.temperature,
            "seed": self.seed,
            "stop_sequences": list(self.stop_sequences),
        }


@dataclass(frozen=True)
class TokenEvent:
    index: int
    text_piece: str
    timestamp: int  # ns, clock_ns


@dataclass
class GenerationResult:
    prompt_token_count: Optional[int]
    output_token_count: int
    events: list
    completion_text: str
    t_request: int
    t_first_token: int
    t_last_token: int
    t_done: int
    setup_ns: int = 0

    def validate(self) -> "GenerationResult":
        for i, ev in enumerate(self.events):
            if ev.index != i:
                raise ContractError(f"event index {ev.index} at position {i}")
        for a, b in zip(self.events, self.events[1:]):
            if b.timestamp < a.timestamp:
                raise TimestampError(f"token {b.index} stamped before token {a.index}")
        if not (self.t_request <= self.t_first_token <= self.t_last_token <= self.t_done):
            raise TimestampError("expected t_request <= t_first_token <= t_last_token <= t_done")
        if self.output_token_count != len(self.events):
            raise ContractError("output_token_count disagrees with event count")
        if self.completion_text != "".join(ev.text_piece for ev in self.events):
            raise ContractError("completion_text is not the concatenation of token pieces")
        if self.setup_ns < 0:
            raise ContractError("setup_ns must be non-negative")
        return self


@dataclass(frozen=True)
class ModelDescriptor:
    name: str
    parameter_count: Optional[int] = None
    quantization: Optional[str] = None
    source: Optional[str] = None
    load_s: Optional[float] = None

    def __post_init__(self):
        if not self.name:
            raise ContractError("model name must be non-empty")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "parameter_count": self.parameter_count,
            "quantization": self.quantization,
            "source": self.source,
            "load_s": self.load_s,
        }

    @classmethod
    def from_dict(cls, d) -> "ModelDescriptor":
        return cls(**{k: d.get(k) for k in ("name", "parameter_count", "quantization", "source", "load_s")})


class TokenStream:
    """One in-flight request. Iterate for text pieces, then read
    ``prompt_token_count`` (some protocols only report it at the end)."""

    prompt_token_count: Optional[int] = None

    def __iter__(self) -> Iterator[str]:
        raise NotImplementedError

    def drain(self) -> None:
        """Consume what is left after an early stop, for trailing metadata."""

    def close(self) -> None:
        pass


class Backend:
    """Adapter handle. One generation in flight at a time per handle."""

    name = "backend"

    def __init__(self):
        self._lock = threading.Lock()

    @property
    def pid(self) -> Optional[int]:
        """Process doing the inference work, for resource sampling."""
        return os.getpid()

    def open_stream(self, prompt: str, params: GenerationParams) -> TokenStream:
        raise NotImplementedError

    def probe(self) -> ModelDescriptor:
        return ModelDescriptor(self.name)

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _find_stop(text: str, stops: Sequence[str], start: int) -> Optional[int]:
    best = None
    for s in stops:
        i = text.find(s, start)
        if i != -1 and (best is None or i < best):
            best = i
    return best


def _truncate(events: list, cut: int) -> list:
    kept, pos = [], 0
    for ev in events:
        if pos >= cut:
            break
        piece = ev.text_piece[: cut - pos]
        pos += len(ev.text_piece)
        if piece:
            kept.append(TokenEvent(len(kept), piece, ev.timestamp))
    return kept


def generate(
    backend: Backend,
    prompt: str,
    params: GenerationParams,
    on_event: Optional[Callable[[TokenEvent], None]] = None,
    setup_ns: int = 0,
) -> GenerationResult:
    """Run one streamed generation and return its timestamped result.

    Stop sequences are matched only once the completion holds non-whitespace
    text, so a model that opens with a blank line still gets to answer.  The
    matched stop sequence and anything after it are dropped.
    """
    with backend._lock:
        t_request = clock_ns()
        stream = backend.open_stream(prompt, params)
        events: list[TokenEvent] = []
        text = ""
        content_start: Optional[int] = None
        longest = max((len(s) for s in params.stop_sequences), default=0)
        try:
            for piece in stream:
                ts = clock_ns()
                if not piece:
                    continue
                prev_len = len(text)
                ev = TokenEvent(len(events), piece, ts)
                events.append(ev)
                text += piece
                if content_start is None and text.strip():
                    content_start = len(text) - len(text.lstrip())
                if content_start is not None and longest:
                    cut = _find_stop(text, params.stop_sequences, max(content_start, prev_len - longest + 1))
                    if cut is not None:
                        events = _truncate(events, cut)
                        text = text[:cut]
                        break
                if on_event is not None:
                    on_event(ev)
                if len(events) >= params.max_new_tokens:
                    break
            t_done = clock_ns()
            if stream.prompt_token_count is None:
                stream.drain()
        finally:
            stream.close()
        if not events:
            raise EmptyGenerationError(f"{backend.name}: no tokens produced")
        result = GenerationResult(
            prompt_token_count=stream.prompt_token_count,
            output_token_count=len(events),
            events=events,
            completion_text=text,
            t_request=t_request,
            t_first_token=events[0].timestamp,
            t_last_token=events[-1].timestamp,
            t_done=t_done,
            setup_ns=setup_ns,
        )
        return result.validate()
