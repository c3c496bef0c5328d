from .base import (
    CLOCK_NAME,
    Backend,
    GenerationParams,
    GenerationResult,
    ModelDescriptor,
    TokenEvent,
    TokenStream,
    clock_ns,
    generate,
)
from .mock import MockBackend, mock_backend, spaced_script
from .openai_http import OpenAICompletionBackend, quantization_tag
from .subprocess_engine import SubprocessBackend


def probe_backend(backend: Backend) -> ModelDescriptor:
    return backend.probe()


__all__ = [
    "CLOCK_NAME", "Backend", "GenerationParams", "GenerationResult", "ModelDescriptor",
    "TokenEvent", "TokenStream", "clock_ns", "generate", "MockBackend", "mock_backend",
    "spaced_script", "OpenAICompletionBackend", "quantization_tag", "SubprocessBackend",
    "probe_backend",
]
