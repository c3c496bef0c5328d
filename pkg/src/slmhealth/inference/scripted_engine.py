"""Minimal engine speaking the subprocess NDJSON protocol with a fixed reply.

Useful as a protocol reference and for exercising the subprocess adapter
without model weights::

    python -m slmhealth.inference.scripted_engine --reply " 3" --delay 0.01
"""

from __future__ import annotations

import argparse
import json
import sys
import time


def _emit(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--reply", default=" 3")
    ap.add_argument("--piece-chars", type=int, default=1, help="characters per token event")
    ap.add_argument("--delay", type=float, default=0.0, help="seconds before each token")
    ap.add_argument("--n-ctx", type=int, default=4096)
    ap.add_argument("--name", default="scripted-engine")
    ap.add_argument("--crash-after", type=int, default=None,
                    help="exit abruptly after this many tokens of the first request")
    ap.add_argument("--load-delay", type=float, default=0.0)
    args = ap.parse_args(argv)

    time.sleep(args.load_delay)
    _emit({"event": "ready", "model": {"name": args.name, "quantization": "Q4_0", "n_ctx": args.n_ctx}})
    sent = 0
    for line in sys.stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        n_prompt = len(req["prompt"].split())
        if n_prompt > args.n_ctx:
            _emit({"event": "error", "kind": "capacity",
                   "message": f"prompt has {n_prompt} tokens, context is {args.n_ctx}"})
            continue
        _emit({"event": "header", "prompt_token_count": n_prompt})
        k = args.piece_chars
        pieces = [args.reply[i:i + k] for i in range(0, len(args.reply), k)]
        for piece in pieces[: req.get("max_new_tokens", len(pieces))]:
            time.sleep(args.delay)
            _emit({"event": "token", "text": piece})
            sent += 1
            if args.crash_after is not None and sent >= args.crash_after:
                sys.exit(1)
        _emit({"event": "done"})


if __name__ == "__main__":
    main()
