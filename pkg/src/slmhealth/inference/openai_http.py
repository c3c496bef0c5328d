"""OpenAI-compatible ``/v1/completions`` streaming client.

Timestamps are taken when each server-sent chunk reaches the client, so
they include transport latency.  Works against llama.cpp's ``llama-server``,
vLLM, LM Studio, Ollama's OpenAI shim and similar.
"""

from __future__ import annotations

import json
import re
from typing import Optional

import httpx

from ..errors import CapacityError, TransportError
from .base import Backend, GenerationParams, ModelDescriptor, TokenStream

_QUANT = re.compile(r"(?i)\b(I?Q\d(?:_[A-Z0-9]+)*|F16|BF16|F32)\b")


def quantization_tag(name: str) -> Optional[str]:
    """Pull a GGUF-style quantization tag such as ``Q4_K_M`` out of a file or model name."""
    m = _QUANT.search(re.sub(r"[.\-]", " ", name))
    return m.group(1).upper() if m else None


def _is_capacity_error(status: int, body: str) -> bool:
    low = body.lower()
    return status in (400, 413) and ("context" in low or "too long" in low or "exceed" in low)


class _SSEStream(TokenStream):
    def __init__(self, response: httpx.Response):
        self._resp = response
        self._gen = self._pieces()

    def __iter__(self):
        return self._gen

    def drain(self):
        # usage arrives in the last chunk, after any piece we stopped at
        try:
            for _ in self._gen:
                pass
        except TransportError:
            pass

    def _pieces(self):
        try:
            for line in self._resp.iter_lines():
                if not line.startswith("data:"):
                    continue
                payload = line[5:].strip()
                if payload == "[DONE]":
                    return
                try:
                    chunk = json.loads(payload)
                except json.JSONDecodeError as e:
                    raise TransportError(f"malformed stream chunk: {payload[:80]!r}", retryable=False) from e
                if "error" in chunk:
                    raise TransportError(f"server error mid-stream: {chunk['error']}")
                usage = chunk.get("usage") or {}
                if usage.get("prompt_tokens") is not None:
                    self.prompt_token_count = int(usage["prompt_tokens"])
                timings = chunk.get("timings") or {}
                if self.prompt_token_count is None and timings.get("prompt_n") is not None:
                    self.prompt_token_count = int(timings["prompt_n"])
                for choice in chunk.get("choices") or []:
                    piece = choice.get("text")
                    if piece is None:
                        piece = (choice.get("delta") or {}).get("content")
                    if piece:
                        yield piece
        except httpx.HTTPError as e:
            raise TransportError(f"stream interrupted: {e}") from e

    def close(self):
        self._resp.close()


class OpenAICompletionBackend(Backend):
    name = "openai-http"

    def __init__(
        self,
        base_url: str,
        model: Optional[str] = None,
        timeout: float = 120.0,
        api_key: Optional[str] = None,
        server_pid: Optional[int] = None,
        extra_body: Optional[dict] = None,
    ):
        super().__init__()
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.name = model or "openai-http"
        self.server_pid = server_pid
        self.extra_body = dict(extra_body or {})
        self._client = httpx.Client(base_url=self.base_url, timeout=timeout, headers=headers)

    @property
    def pid(self) -> Optional[int]:
        # the engine runs in another process; sample it only if we were told which
        return self.server_pid

    def _body(self, prompt: str, params: GenerationParams) -> dict:
        body = {
            "prompt": prompt,
            "max_tokens": params.max_new_tokens,
            "temperature": params.temperature,
            "stream": True,
            "stream_options": {"include_usage": True},
        }
        if self.model:
            body["model"] = self.model
        if params.seed is not None:
            body["seed"] = params.seed
        if params.stop_sequences:
            body["stop"] = list(params.stop_sequences)
        body.update(self.extra_body)
        return body

    def open_stream(self, prompt: str, params: GenerationParams) -> TokenStream:
        req = self._client.build_request("POST", "/v1/completions", json=self._body(prompt, params))
        try:
            resp = self._client.send(req, stream=True)
        except httpx.HTTPError as e:
            raise TransportError(f"{self.base_url} unreachable: {e}") from e
        if resp.status_code >= 400:
            try:
                text = resp.read().decode("utf-8", "replace")
            finally:
                resp.close()
            if _is_capacity_error(resp.status_code, text):
                raise CapacityError(text[:200])
            raise TransportError(
                f"HTTP {resp.status_code}: {text[:200]}", retryable=resp.status_code >= 500
            )
        return _SSEStream(resp)

    def probe(self) -> ModelDescriptor:
        try:
            resp = self._client.get("/v1/models")
            resp.raise_for_status()
            data = resp.json().get("data") or []
        except httpx.HTTPStatusError:
            data = []
        except httpx.HTTPError as e:
            raise TransportError(f"{self.base_url} unreachable: {e}") from e
        name = self.model or (data[0].get("id") if data else None) or self.name
        return ModelDescriptor(name, quantization=quantization_tag(name), source=self.base_url)

    def close(self):
        self._client.close()
