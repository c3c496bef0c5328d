"""Deterministic scripted backend: replays (delay, piece) pairs in real time."""

from __future__ import annotations

import time
from typing import Callable, Optional, Sequence

from ..errors import CapacityError, ContractError
from .base import Backend, GenerationParams, ModelDescriptor, TokenStream


def word_count(prompt: str) -> int:
    return len(prompt.split())


class _ScriptStream(TokenStream):
    def __init__(self, script: Sequence[tuple[float, str]], prompt_tokens: int):
        self._script = script
        self.prompt_token_count = prompt_tokens

    def __iter__(self):
        # Delays are cumulative from request start so sleep overshoot never accumulates.
        target = time.perf_counter()
        for delay, piece in self._script:
            target += delay
            remaining = target - time.perf_counter()
            if remaining > 0:
                time.sleep(remaining)
            yield piece


class MockBackend(Backend):
    """Replays the same script for every request, whatever the prompt.

    Each delay is measured from the previous piece (the first from the
    request).  ``prompt_token_counter`` maps the prompt to the reported
    prompt token count and defaults to a whitespace word count.
    """

    name = "mock"

    def __init__(
        self,
        script: Sequence[tuple[float, str]],
        prompt_token_counter: Optional[Callable[[str], int]] = None,
        name: str = "mock",
        context_window: Optional[int] = None,
    ):
        super().__init__()
        for delay, _ in script:
            if delay < 0:
                raise ContractError("script delays must be non-negative")
        self.script = [(float(d), str(p)) for d, p in script]
        self.count_prompt_tokens = prompt_token_counter or word_count
        self.name = name
        self.context_window = context_window

    def script_for(self, prompt: str) -> Sequence[tuple[float, str]]:
        return self.script

    def open_stream(self, prompt: str, params: GenerationParams) -> TokenStream:
        n = self.count_prompt_tokens(prompt)
        if self.context_window is not None and n > self.context_window:
            raise CapacityError(f"prompt of {n} tokens exceeds context window {self.context_window}")
        return _ScriptStream(self.script_for(prompt), n)

    def probe(self) -> ModelDescriptor:
        return ModelDescriptor(self.name, source="mock")


def mock_backend(script, prompt_token_counter=None, **kw) -> MockBackend:
    return MockBackend(script, prompt_token_counter, **kw)


def spaced_script(n_tokens: int, first_delay: float, spacing: float, piece: str = " x") -> list[tuple[float, str]]:
    """First piece after ``first_delay`` s, the rest ``spacing`` s apart."""
    return [(first_delay if i == 0 else spacing, piece) for i in range(n_tokens)]
