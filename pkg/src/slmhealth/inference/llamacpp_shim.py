"""NDJSON engine shim around ``llama-cpp-python`` for pre-quantized GGUF files.

    python -m slmhealth.inference.llamacpp_shim --model tinyllama.Q4_K_M.gguf

Requires ``pip install llama-cpp-python``; the harness itself never imports it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _emit(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--model", required=True)
    ap.add_argument("--n-ctx", type=int, default=2048)
    ap.add_argument("--threads", type=int, default=os.cpu_count())
    args = ap.parse_args(argv)
    try:
        from llama_cpp import Llama
    except ImportError:
        sys.stderr.write("llama-cpp-python is not installed\n")
        return 2

    llm = Llama(model_path=args.model, n_ctx=args.n_ctx, n_threads=args.threads, verbose=False)
    meta = getattr(llm, "metadata", {}) or {}
    _emit({"event": "ready", "model": {
        "name": meta.get("general.name") or os.path.basename(args.model),
        "n_ctx": args.n_ctx,
    }})
    for line in sys.stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        n_prompt = len(llm.tokenize(req["prompt"].encode("utf-8")))
        if n_prompt + req.get("max_new_tokens", 0) > args.n_ctx:
            _emit({"event": "error", "kind": "capacity",
                   "message": f"{n_prompt} prompt tokens do not fit n_ctx={args.n_ctx}"})
            continue
        _emit({"event": "header", "prompt_token_count": n_prompt})
        try:
            for chunk in llm.create_completion(
                req["prompt"],
                max_tokens=req.get("max_new_tokens", 32),
                temperature=req.get("temperature", 0.0),
                seed=req.get("seed"),
                stop=req.get("stop") or None,
                stream=True,
            ):
                _emit({"event": "token", "text": chunk["choices"][0]["text"]})
        except Exception as e:  # engine failure is reported, the shim keeps serving
            _emit({"event": "error", "kind": "internal", "message": str(e)})
            continue
        _emit({"event": "done"})
    return 0


if __name__ == "__main__":
    sys.exit(main())
