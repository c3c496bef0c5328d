"""Out-of-process engine adapter speaking newline-delimited JSON.

Protocol (one JSON object per line):

    child  -> {"event": "ready", "model": {...}}              once, after load
    parent -> {"prompt": ..., "max_new_tokens": ..., "temperature": ...,
               "seed": ..., "stop": [...]}                     per request
    child  -> {"event": "header", "prompt_token_count": N}
    child  -> {"event": "token", "text": "..."}               zero or more
    child  -> {"event": "done"}
           |  {"event": "error", "kind": "capacity" | "internal", "message": ...}

Keeping the engine in its own process makes its CPU and memory attributable
to the request being served and contains crashes.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import shlex
import subprocess
import threading
import time
from pathlib import Path
from typing import Optional, Sequence

from ..errors import BackendError, CapacityError, ConfigError, TransportError
from .base import Backend, GenerationParams, ModelDescriptor, TokenStream
from .openai_http import quantization_tag

log = logging.getLogger(__name__)

_EOF = object()


class _LineReader:
    """Reads child stdout on a thread so every wait can time out."""

    def __init__(self, stream):
        self._q: queue.Queue = queue.Queue()
        self._t = threading.Thread(target=self._pump, args=(stream,), daemon=True)
        self._t.start()

    def _pump(self, stream):
        try:
            for line in stream:
                self._q.put(line)
        finally:
            self._q.put(_EOF)

    def get(self, timeout: float):
        try:
            item = self._q.get(timeout=timeout)
        except queue.Empty:
            raise TransportError(f"engine silent for {timeout:.0f}s") from None
        if item is _EOF:
            self._q.put(_EOF)
            raise TransportError("engine closed its output (crashed?)")
        try:
            return json.loads(item)
        except json.JSONDecodeError:
            raise TransportError(f"engine wrote non-JSON line: {item[:80]!r}", retryable=False) from None


class _EngineStream(TokenStream):
    def __init__(self, backend: "SubprocessBackend", header: dict):
        self._b = backend
        self.prompt_token_count = header.get("prompt_token_count")
        self._finished = False

    def __iter__(self):
        while True:
            msg = self._b._read(self._b.token_timeout)
            kind = msg.get("event")
            if kind == "token":
                yield msg.get("text", "")
            elif kind == "done":
                self._finished = True
                return
            elif kind == "error":
                self._finished = True
                raise self._b._error_from(msg)
            else:
                raise TransportError(f"unexpected engine event {kind!r}", retryable=False)

    def close(self):
        # stopped early: drain the rest of this response to keep the protocol in sync
        if self._finished:
            return
        try:
            while True:
                msg = self._b._read(self._b.token_timeout)
                if msg.get("event") in ("done", "error"):
                    break
        except BackendError:
            self._b.kill()
        self._finished = True


class SubprocessBackend(Backend):
    """Launches ``command`` and talks to it over stdin/stdout.

    ``{model}`` in the command is replaced with ``model_path``; the GGUF file
    is only checked for existence, never parsed.  A crashed child is
    restarted lazily on the next request.
    """

    name = "subprocess"

    def __init__(
        self,
        command: Sequence[str] | str,
        model_path: Optional[str] = None,
        name: Optional[str] = None,
        startup_timeout: float = 300.0,
        token_timeout: float = 120.0,
        env: Optional[dict] = None,
    ):
        super().__init__()
        cmd = shlex.split(command) if isinstance(command, str) else list(command)
        if not cmd:
            raise ConfigError("subprocess backend needs a command")
        if model_path is not None:
            if not Path(model_path).is_file():
                raise ConfigError(f"model file not found: {model_path}")
            cmd = [c.replace("{model}", str(model_path)) for c in cmd]
        self.command = cmd
        self.model_path = model_path
        self.name = name or (Path(model_path).stem if model_path else Path(cmd[0]).name)
        self.startup_timeout = startup_timeout
        self.token_timeout = token_timeout
        self.env = env
        self._proc: Optional[subprocess.Popen] = None
        self._reader: Optional[_LineReader] = None
        self._ready: dict = {}
        self.load_s: Optional[float] = None

    @property
    def pid(self) -> Optional[int]:
        self._ensure_started()
        return self._proc.pid

    def _ensure_started(self):
        if self._proc is not None and self._proc.poll() is None:
            return
        if self._proc is not None:
            log.warning("engine exited with %s; restarting", self._proc.returncode)
        t0 = time.perf_counter()
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
                env={**os.environ, **self.env} if self.env else None,
            )
        except OSError as e:
            raise TransportError(f"cannot launch engine {self.command[0]!r}: {e}", retryable=False) from e
        self._reader = _LineReader(self._proc.stdout)
        msg = self._read(self.startup_timeout)
        if msg.get("event") != "ready":
            self.kill()
            raise TransportError(f"engine did not announce readiness: {msg}", retryable=False)
        self._ready = msg.get("model") or {}
        self.load_s = time.perf_counter() - t0

    def _read(self, timeout: float) -> dict:
        return self._reader.get(timeout)

    def _error_from(self, msg: dict) -> BackendError:
        text = msg.get("message", "")
        if msg.get("kind") == "capacity":
            return CapacityError(text)
        return TransportError(f"engine error: {text}")

    def open_stream(self, prompt: str, params: GenerationParams) -> TokenStream:
        self._ensure_started()
        req = {
            "prompt": prompt,
            "max_new_tokens": params.max_new_tokens,
            "temperature": params.temperature,
            "seed": params.seed,
            "stop": list(params.stop_sequences),
        }
        try:
            self._proc.stdin.write(json.dumps(req) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise TransportError(f"engine stdin closed: {e}") from e
        header = self._read(self.token_timeout)
        if header.get("event") == "error":
            raise self._error_from(header)
        if header.get("event") != "header":
            raise TransportError(f"expected header, got {header}", retryable=False)
        return _EngineStream(self, header)

    def probe(self) -> ModelDescriptor:
        self._ensure_started()
        info = self._ready
        name = info.get("name") or self.name
        quant = info.get("quantization") or quantization_tag(self.model_path or name)
        return ModelDescriptor(
            name=name,
            parameter_count=info.get("parameter_count"),
            quantization=quant,
            source=self.model_path or " ".join(self.command),
            load_s=self.load_s,
        )

    def kill(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait(timeout=5)

    def close(self):
        if self._proc is None:
            return
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self.kill()
        self._proc = None
