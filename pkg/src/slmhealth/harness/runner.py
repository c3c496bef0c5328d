"""Pipeline orchestration: ingest -> prompt -> generate -> extract -> score/profile.

Every run writes a fixed directory layout under ``output_dir``::

    config.json        resolved configuration snapshot
    splits.json        train/eval window ids per task
    manifest.jsonl     header, one record per generation, footer
    eval_report.json   per-task scores (eval runs)
    efficiency.jsonl   one efficiency report per profiled generation
    tables.md          markdown summary tables
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from .. import __version__
from ..corpus import CorpusItem
from ..errors import (
    BackendError,
    CapacityError,
    ConfigError,
    ContractError,
    DataError,
    EmptyGenerationError,
)
from ..extract import extract_label, resolve_prediction
from ..inference import (
    CLOCK_NAME,
    Backend,
    GenerationParams,
    MockBackend,
    ModelDescriptor,
    OpenAICompletionBackend,
    SubprocessBackend,
    generate,
)
from ..ingest import (
    TASKS,
    ParticipantLog,
    PredictionWindow,
    SensorKind,
    TaskSpec,
    build_windows,
    load_participant_logs,
    split_windows,
)
from ..metrics import EvalReport, combine_runs, task_report
from ..profiler import (
    CPU_NORMALIZATION,
    EfficiencyReport,
    dump_samples_csv,
    mean_report,
    profile_generation,
)
from ..prompt import PromptTemplate, builtin_templates, prompt_hash, render_prompt
from .config import RunConfig
from .tables import render_tables

log = logging.getLogger(__name__)

BackendFactory = Callable[[], Backend]


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- data prep

def load_dataset(cfg: RunConfig) -> list[ParticipantLog]:
    logs: dict[str, ParticipantLog] = {}
    for p in cfg.raw["dataset"]["paths"]:
        path = Path(p)
        for lg in load_participant_logs(path.read_bytes(), cfg.schema, path.stem, cfg.task_specs):
            if lg.participant_id in logs:
                raise DataError(f"participant {lg.participant_id!r} appears in more than one file")
            logs[lg.participant_id] = lg
    return [logs[k] for k in sorted(logs)]


def _decimals(cfg: RunConfig) -> dict:
    return {SensorKind(k): int(v) for k, v in cfg.raw["prompt"]["decimals"].items()}


def _templates(cfg: RunConfig) -> dict[str, PromptTemplate]:
    return builtin_templates(cfg.raw["prompt"]["templates"])


def task_windows(cfg: RunConfig, logs: Sequence[ParticipantLog]) -> dict[str, list[PredictionWindow]]:
    w = cfg.raw["windows"]
    out = {}
    for task in _ordered_tasks(cfg):
        spec = cfg.task_specs[task]
        out[task] = [
            win
            for lg in logs
            for win in build_windows(lg, spec, stride=w["stride"], label_offset=w["label_offset"])
        ]
    return out


def _ordered_tasks(cfg: RunConfig) -> list[str]:
    return [t for t in TASKS if t in cfg.task_specs]


@dataclass
class TaskPlan:
    spec: TaskSpec
    train: list
    eval: list
    bundles: list  # PromptBundle per eval window


def plan_tasks(cfg: RunConfig, logs: Sequence[ParticipantLog]) -> dict[str, TaskPlan]:
    templates, decimals = _templates(cfg), _decimals(cfg)
    split = cfg.raw["split"]
    plans = {}
    for task, windows in task_windows(cfg, logs).items():
        spec = cfg.task_specs[task]
        train, ev = split_windows(windows, split["ratio"], split["seed"])
        bundles = [render_prompt(w, templates[task], spec, decimals) for w in ev]
        plans[task] = TaskPlan(spec, train, ev, bundles)
    return plans


# ---------------------------------------------------------------- backends

class OracleBackend(MockBackend):
    """Answers each prompt with the label of the window that produced it."""

    def __init__(self, answers: Mapping[str, str], name: str = "oracle"):
        super().__init__([], name=name)
        self.answers = dict(answers)

    def script_for(self, prompt: str):
        h = prompt_hash(prompt)
        if h not in self.answers:
            raise ContractError("oracle backend got a prompt it was not built for")
        return [(0.0, self.answers[h])]


def oracle_answers(
    windows: Sequence[PredictionWindow],
    templates: Optional[Mapping[str, PromptTemplate]] = None,
    specs: Optional[Mapping[str, TaskSpec]] = None,
    decimals=None,
) -> dict[str, str]:
    from ..ingest import DEFAULT_TASK_SPECS

    templates = templates or builtin_templates()
    specs = specs or DEFAULT_TASK_SPECS
    answers: dict[str, str] = {}
    for w in windows:
        h = render_prompt(w, templates[w.task], specs[w.task], decimals).sha256
        if answers.get(h, str(w.label)) != str(w.label):
            raise ContractError(f"two windows render the same prompt with different labels ({w.window_id})")
        answers[h] = str(w.label)
    return answers


def oracle_backend(windows, templates=None, specs=None, decimals=None) -> OracleBackend:
    return OracleBackend(oracle_answers(windows, templates, specs, decimals))


_BACKEND_KEYS = {
    "mock": {"kind", "script", "name", "prompt_tokens", "context_window"},
    "oracle": {"kind", "name", "script"},
    "http": {"kind", "base_url", "model", "timeout", "api_key", "server_pid", "extra_body", "script"},
    "subprocess": {"kind", "command", "model_path", "name", "startup_timeout", "token_timeout", "env", "script"},
}


def backend_factory(cfg: RunConfig, plans: Optional[Mapping[str, TaskPlan]] = None) -> BackendFactory:
    """Return a zero-argument constructor for the configured adapter.

    ``script`` is tolerated on every kind because the default config carries one.
    """
    b = cfg.raw["backend"]
    kind = b["kind"]
    extra = set(b) - _BACKEND_KEYS[kind]
    if extra:
        raise ConfigError(f"backend.{kind}: unknown keys {sorted(extra)}")

    if kind == "mock":
        try:
            script = [(float(d), str(p)) for d, p in b.get("script", [])]
        except (TypeError, ValueError):
            raise ConfigError("backend.script must be a list of [delay_s, text] pairs") from None
        n = b.get("prompt_tokens")
        counter = (lambda _p, n=int(n): n) if n is not None else None
        return lambda: MockBackend(script, counter, name=b.get("name", "mock"),
                                   context_window=b.get("context_window"))
    if kind == "oracle":
        if plans is None:
            raise ConfigError("the oracle backend only makes sense for eval runs")
        windows = [w for p in plans.values() for w in p.eval]
        answers = oracle_answers(windows, _templates(cfg), cfg.task_specs, _decimals(cfg))
        return lambda: OracleBackend(answers, name=b.get("name", "oracle"))
    if kind == "http":
        if not b.get("base_url"):
            raise ConfigError("backend.base_url is required for the http backend")
        return lambda: OpenAICompletionBackend(
            b["base_url"], model=b.get("model"), timeout=b.get("timeout", 120.0),
            api_key=b.get("api_key"), server_pid=b.get("server_pid"), extra_body=b.get("extra_body"),
        )
    if not b.get("command"):
        raise ConfigError("backend.command is required for the subprocess backend")
    return lambda: SubprocessBackend(
        b["command"], model_path=b.get("model_path"), name=b.get("name"),
        startup_timeout=b.get("startup_timeout", 300.0), token_timeout=b.get("token_timeout", 120.0),
        env=b.get("env"),
    )


# ---------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    header: dict
    records: list = field(default_factory=list)
    status: str = "running"
    error: Optional[str] = None


class _ManifestWriter:
    """Single writer for manifest.jsonl; every line is flushed immediately."""

    def __init__(self, path: Path, header: dict):
        self.manifest = RunManifest(header=header)
        self._fp = path.open("w", encoding="utf-8")
        self._line({"type": "header", **header})

    def _line(self, obj):
        self._fp.write(_dumps(obj) + "\n")
        self._fp.flush()

    def record(self, rec: dict):
        self.manifest.records.append(rec)
        self._line({"type": "prediction", **rec})

    def finish(self, status: str, error: Optional[str] = None):
        self.manifest.status, self.manifest.error = status, error
        self._line({"type": "footer", "status": status, "error": error,
                    "n_records": len(self.manifest.records)})
        self._fp.close()


def read_manifest(path: str | Path) -> RunManifest:
    header, records, status, error = {}, [], "running", None
    with open(path, encoding="utf-8") as fp:
        for line in fp:
            obj = json.loads(line)
            kind = obj.pop("type")
            if kind == "header":
                header = obj
            elif kind == "prediction":
                records.append(obj)
            elif kind == "footer":
                status, error = obj["status"], obj.get("error")
    return RunManifest(header, records, status, error)


def _header(cfg: RunConfig, model: ModelDescriptor, kind: str) -> dict:
    snap = cfg.snapshot()
    return {
        "run_kind": kind,
        "run_name": cfg.raw["run_name"],
        "harness_version": __version__,
        "config_sha256": hashlib.sha256(_dumps(snap).encode()).hexdigest(),
        "config": snap,
        "model": model.to_dict(),
        "clock": {"source": CLOCK_NAME, "unit": "ns", "created_at": dt.datetime.now(dt.timezone.utc).isoformat()},
        "profiler": {"period_s": cfg.raw["profiler"]["period_s"], "cpu_normalization": CPU_NORMALIZATION},
    }


# ---------------------------------------------------------------- generation

def _attempt(backend: Backend, prompt: str, params: GenerationParams, retries: int,
             profile: bool, model: ModelDescriptor, period: float):
    for attempt in range(retries + 1):
        try:
            if profile:
                return profile_generation(backend, prompt, params, model, period)
            return generate(backend, prompt, params), [], None
        except (CapacityError, EmptyGenerationError):
            raise
        except BackendError as e:
            if not e.retryable or attempt == retries:
                raise
            log.warning("backend error (%s); retry %d/%d", e, attempt + 1, retries)
            time.sleep(min(0.1 * 2**attempt, 2.0))


@dataclass
class _Outcome:
    completion: str
    error: Optional[str]
    efficiency: Optional[EfficiencyReport]
    samples: list


def _run_one(backend, prompt, params, retries, profile, model, period) -> _Outcome:
    try:
        result, samples, eff = _attempt(backend, prompt, params, retries, profile, model, period)
    except CapacityError as e:
        log.warning("capacity: %s", e)
        return _Outcome("", "capacity", None, [])
    except EmptyGenerationError:
        return _Outcome("", "empty_generation", None, [])
    return _Outcome(result.completion_text, None, eff, samples)


# ---------------------------------------------------------------- eval

def run_eval(cfg: RunConfig, factory: Optional[BackendFactory] = None) -> tuple[dict[str, EvalReport], RunManifest]:
    """Evaluate the eval split of every configured task ``repeat`` times.

    Returns the aggregated per-task reports and the run manifest.  Backend
    failures that survive the retry budget abort the run; the manifest is
    still flushed, ending with an ``aborted`` footer.
    """
    out = cfg.output_path
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.snapshot())

    logs = load_dataset(cfg)
    plans = plan_tasks(cfg, logs)
    _write_json(out / "splits.json", {
        t: {"train": [w.window_id for w in p.train], "eval": [w.window_id for w in p.eval]}
        for t, p in plans.items()
    })

    factory = factory or backend_factory(cfg, plans)
    profile = bool(cfg.raw["profiler"]["enabled"])
    workers = 1 if profile else cfg.raw["workers"]
    period = cfg.raw["profiler"]["period_s"]
    retries = cfg.raw["retries"]
    policy, match = cfg.raw["extraction"]["policy"], cfg.raw["extraction"]["match"]
    params = cfg.generation

    main_backend = factory()
    local = threading.local()
    handles = [main_backend]
    handles_lock = threading.Lock()

    def worker_backend():
        if workers == 1:
            return main_backend
        b = getattr(local, "backend", None)
        if b is None:
            b = local.backend = factory()
            with handles_lock:
                handles.append(b)
        return b

    eff_fp = (out / "efficiency.jsonl").open("w", encoding="utf-8")
    samples_fp = (out / "samples.csv").open("w", encoding="utf-8") if profile and cfg.raw["profiler"]["dump_samples"] else None
    writer = None
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        model = main_backend.probe()
        writer = _ManifestWriter(out / "manifest.jsonl", _header(cfg, model, "eval"))
        per_run: dict[str, list[EvalReport]] = {t: [] for t in plans}
        eff_reports: list[EfficiencyReport] = []
        for r in range(cfg.raw["repeat"]):
            for task, plan in plans.items():
                def job(i, plan=plan):
                    return _run_one(worker_backend(), plan.bundles[i].full_text, params,
                                    retries, profile, model, period)

                idx = range(len(plan.eval))
                results = list(pool.map(job, idx)) if pool else [job(i) for i in idx]

                outcomes = []
                for w, bundle, res in zip(plan.eval, plan.bundles, results):
                    outcome = extract_label(res.completion, plan.spec, match)
                    outcomes.append(outcome)
                    ref = None
                    if res.efficiency is not None:
                        ref = len(eff_reports)
                        res.efficiency.item_id = f"{r}:{w.window_id}"
                        eff_reports.append(res.efficiency)
                        eff_fp.write(_dumps({"ref": ref, **res.efficiency.to_dict()}) + "\n")
                        if samples_fp is not None:
                            dump_samples_csv(res.samples, samples_fp, res.efficiency.item_id)
                    writer.record({
                        "repeat": r,
                        "task": task,
                        "window_id": w.window_id,
                        "prompt_sha256": bundle.sha256,
                        "completion": res.completion,
                        "outcome": outcome.to_dict(),
                        "prediction": resolve_prediction(outcome, plan.spec, policy),
                        "label": w.label,
                        "error": res.error,
                        "efficiency_ref": ref,
                    })
                per_run[task].append(task_report(outcomes, [w.label for w in plan.eval], plan.spec, policy))
                log.info("repeat %d task %s: %s", r, task, per_run[task][-1].value)
        reports = {t: combine_runs(rs) for t, rs in per_run.items()}
        _write_json(out / "eval_report.json", {
            "model": model.name,
            "tasks": {t: rep.to_dict() for t, rep in reports.items()},
        })
        eff_rows = {model.name: mean_report(eff_reports, model)} if eff_reports else None
        (out / "tables.md").write_text(render_tables({model.name: reports}, eff_rows), encoding="utf-8")
        writer.finish("complete")
        return reports, writer.manifest
    except BackendError as e:
        if writer is not None:
            writer.finish("aborted", f"{type(e).__name__}: {e}")
        raise
    finally:
        if pool is not None:
            pool.shutdown()
        eff_fp.close()
        if samples_fp is not None:
            samples_fp.close()
        for h in handles:
            h.close()


# ---------------------------------------------------------------- profile

def run_profile(cfg: RunConfig, corpus: Sequence[CorpusItem],
                factory: Optional[BackendFactory] = None) -> tuple[list[EfficiencyReport], EfficiencyReport, str]:
    """Profile every corpus item, strictly one at a time.

    Returns per-item reports, their mean row, and the rendered table.
    """
    if not corpus:
        raise DataError("profiling corpus is empty")
    out = cfg.output_path
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.snapshot())
    prof = cfg.raw["profiler"]
    params = cfg.generation
    if prof.get("max_new_tokens"):
        params = GenerationParams(prof["max_new_tokens"], params.temperature, params.seed, params.stop_sequences)

    backend = (factory or backend_factory(cfg))()
    writer = None
    reports: list[EfficiencyReport] = []
    samples_fp = (out / "samples.csv").open("w", encoding="utf-8") if prof["dump_samples"] else None
    try:
        model = backend.probe()
        writer = _ManifestWriter(out / "manifest.jsonl", _header(cfg, model, "profile"))
        with (out / "efficiency.jsonl").open("w", encoding="utf-8") as eff_fp:
            for item in corpus:
                res = _run_one(backend, item.prompt, params, cfg.raw["retries"], True, model, prof["period_s"])
                rep = res.efficiency or EfficiencyReport(None, None, None, None, None, model=model,
                                                         flags=[res.error or "failed"])
                rep.item_id = item.id
                ref = len(reports)
                reports.append(rep)
                eff_fp.write(_dumps({"ref": ref, **rep.to_dict()}) + "\n")
                if samples_fp is not None:
                    dump_samples_csv(res.samples, samples_fp, item.id)
                writer.record({
                    "item_id": item.id,
                    "prompt_sha256": prompt_hash(item.prompt),
                    "completion": res.completion,
                    "error": res.error,
                    "efficiency_ref": ref,
                })
        mean = mean_report(reports, model)
        table = render_tables(efficiency={model.name: mean})
        (out / "tables.md").write_text(table, encoding="utf-8")
        writer.finish("complete")
        return reports, mean, table
    except BackendError as e:
        if writer is not None:
            writer.finish("aborted", f"{type(e).__name__}: {e}")
        raise
    finally:
        if samples_fp is not None:
            samples_fp.close()
        backend.close()


# ---------------------------------------------------------------- reporting

def load_run(run_dir: str | Path) -> tuple[str, Optional[dict[str, EvalReport]], Optional[EfficiencyReport]]:
    """Read a finished run directory back: (model name, eval reports, mean efficiency)."""
    d = Path(run_dir)
    name, evals, eff = None, None, None
    if (d / "eval_report.json").is_file():
        data = json.loads((d / "eval_report.json").read_text(encoding="utf-8"))
        name = data["model"]
        evals = {t: EvalReport.from_dict(r) for t, r in data["tasks"].items()}
    if (d / "efficiency.jsonl").is_file():
        rows = [EfficiencyReport.from_dict(json.loads(l)) for l in
                (d / "efficiency.jsonl").read_text(encoding="utf-8").splitlines() if l.strip()]
        if rows:
            eff = mean_report(rows)
            name = name or (eff.model.name if eff.model else None)
    if evals is None and eff is None:
        raise DataError(f"{d}: no eval_report.json or efficiency.jsonl")
    return name or d.name, evals, eff


def report_runs(run_dirs: Sequence[str | Path]) -> str:
    evals, effs = {}, {}
    for d in run_dirs:
        name, ev, eff = load_run(d)
        key, k = name, 2
        while key in evals or key in effs:
            key = f"{name} ({k})"
            k += 1
        if ev:
            evals[key] = ev
        if eff:
            effs[key] = eff
    return render_tables(evals or None, effs or None)
