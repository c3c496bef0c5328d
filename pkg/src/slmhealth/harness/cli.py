"""Command line entry point.

    slmhealth ingest  --config run.json
    slmhealth eval    --config run.json --seed 7 --backend.kind oracle
    slmhealth profile --config run.json --corpus builtin
    slmhealth report  runs/a runs/b --out tables.md
    slmhealth synth   data/synthetic --participants 3 --days 60

Any config key can be overridden with a flag of the same dotted name.
Exit codes: 0 ok, 2 config error, 3 backend error, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..corpus import builtin_qa_corpus, load_corpus
from ..errors import BackendError, ConfigError, ContractError, DataError
from ..ingest import dump_windows_jsonl
from ..synthetic import write_synthetic_dataset
from .config import load_config, parse_overrides
from .runner import load_dataset, plan_tasks, report_runs, run_eval, run_profile

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_DATA = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slmhealth", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, help_ in [("ingest", "build windows and splits, write windows.jsonl"),
                        ("eval", "run zero-shot evaluation on the eval split"),
                        ("profile", "profile generation efficiency over a prompt corpus")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override split.seed")
        p.add_argument("--output-dir", help="override output_dir")
        if name == "profile":
            p.add_argument("--corpus", help="corpus file, or 'builtin' for the bundled QA fixture")

    p = sub.add_parser("report", help="render tables from finished run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", help="write markdown here instead of stdout")

    p = sub.add_parser("synth", help="write a seeded synthetic lifelog dataset")
    p.add_argument("out_dir")
    p.add_argument("--participants", type=int, default=3)
    p.add_argument("--days", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--balanced", action="store_true")
    return ap


def _config(args, extra):
    overrides = parse_overrides(extra)
    if args.seed is not None:
        overrides.append(("split.seed", args.seed))
    if args.output_dir:
        overrides.append(("output_dir", args.output_dir))
    if getattr(args, "corpus", None):
        overrides.append(("corpus.path", args.corpus))
    return load_config(args.config, overrides)


def _cmd_ingest(cfg) -> int:
    out = cfg.output_path
    out.mkdir(parents=True, exist_ok=True)
    plans = plan_tasks(cfg, load_dataset(cfg))
    with (out / "windows.jsonl").open("w", encoding="utf-8") as fp:
        for task, plan in plans.items():
            dump_windows_jsonl(plan.train + plan.eval, fp)
            print(f"{task:14s} windows={len(plan.train) + len(plan.eval):5d} "
                  f"train={len(plan.train):5d} eval={len(plan.eval):5d}")
    (out / "splits.json").write_text(json.dumps({
        t: {"train": [w.window_id for w in p.train], "eval": [w.window_id for w in p.eval]}
        for t, p in plans.items()
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_eval(cfg) -> int:
    run_eval(cfg)
    print((cfg.output_path / "tables.md").read_text(encoding="utf-8"))
    return EXIT_OK


def _cmd_profile(cfg) -> int:
    c = cfg.raw["corpus"]
    if not c.get("path") or c["path"] == "builtin":
        corpus = builtin_qa_corpus()
    else:
        corpus = load_corpus(Path(c["path"]).read_bytes(), c.get("format", "jsonl"))
    _, _, table = run_profile(cfg, corpus)
    print(table)
    return EXIT_OK


def main(argv=None) -> int:
    ap = _parser()
    args, extra = ap.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            if extra:
                ap.error(f"unrecognized arguments: {' '.join(extra)}")
            text = report_runs(args.runs)
            if args.out:
                Path(args.out).write_text(text, encoding="utf-8")
            else:
                print(text)
            return EXIT_OK
        if args.command == "synth":
            if extra:
                ap.error(f"unrecognized arguments: {' '.join(extra)}")
            for p in write_synthetic_dataset(args.out_dir, args.participants, args.days, args.seed,
                                             balanced=args.balanced):
                print(p)
            return EXIT_OK
        cfg = _config(args, extra)
        return {"ingest": _cmd_ingest, "eval": _cmd_eval, "profile": _cmd_profile}[args.command](cfg)
    except (ConfigError, ContractError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as e:
        print(f"backend error: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
