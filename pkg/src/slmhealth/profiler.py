"""Per-generation efficiency metrics: TTFT, ITPS, OTPS, OET, total time, CPU%, peak RAM.

Latency figures come from the token-event timestamps of a
:class:`~slmhealth.inference.GenerationResult`; CPU and memory come from a
sampler thread polling the engine process while it generates.
"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field, fields
from typing import IO, Iterator, Mapping, Optional, Sequence

import psutil

from .errors import ContractError, IntegrityError
from .inference.base import (
    Backend,
    GenerationParams,
    GenerationResult,
    ModelDescriptor,
    clock_ns,
    generate,
)

GB = 1024**3
DEFAULT_PERIOD_S = 0.1
CPU_NORMALIZATION = "percent of one logical core (multi-core use exceeds 100)"
NCPU = psutil.cpu_count() or 1


@dataclass(frozen=True)
class ResourceSample:
    timestamp: int  # ns, same clock as token events
    cpu_pct: float
    rss_bytes: int
    interval_ns: int  # wall time the cpu_pct averages over, ending at timestamp

    def __post_init__(self):
        if self.cpu_pct < 0 or self.rss_bytes < 0 or self.interval_ns <= 0:
            raise ContractError(f"invalid resource sample {self}")
        limit = 100.0 * NCPU
        if self.cpu_pct > limit:
            raise ContractError(f"cpu_pct {self.cpu_pct:.1f} exceeds {limit:.0f}")


@dataclass(frozen=True)
class ProcessExited:
    """Termination marker: the sampled process is gone."""

    timestamp: int
    pid: int


def sample_resources(
    pid: int,
    period: float = DEFAULT_PERIOD_S,
    stop: Optional[threading.Event] = None,
) -> Iterator[ResourceSample | ProcessExited]:
    """Yield a sample roughly every ``period`` seconds until ``stop`` is set.

    CPU% is the process CPU-time delta over the wall-time delta since the
    previous tick.  A final partial-interval sample is emitted when stopped.
    Ends with :class:`ProcessExited` if the target dies.
    """
    if period < 0.01:
        raise ContractError("sampling period must be >= 10 ms")
    stop = stop or threading.Event()
    try:
        proc = psutil.Process(pid)
        last_wall = clock_ns()
        ct = proc.cpu_times()
    except psutil.Error:
        yield ProcessExited(clock_ns(), pid)
        return
    last_cpu = ct.user + ct.system
    while True:
        stopped = stop.wait(period)
        try:
            if proc.status() == psutil.STATUS_ZOMBIE:
                raise psutil.NoSuchProcess(pid)
            with proc.oneshot():
                now = clock_ns()
                ct = proc.cpu_times()
                rss = proc.memory_info().rss
        except psutil.Error:
            yield ProcessExited(clock_ns(), pid)
            return
        cpu = ct.user + ct.system
        dt_ns = now - last_wall
        if dt_ns >= 1_000_000:
            pct = 100.0 * (cpu - last_cpu) / (dt_ns / 1e9)
            # tick-granular cpu_times can overshoot a short interval
            pct = min(max(pct, 0.0), 100.0 * NCPU)
            yield ResourceSample(now, pct, rss, dt_ns)
            last_wall, last_cpu = now, cpu
        if stopped:
            return


class ResourceSampler:
    """Background thread collecting :func:`sample_resources` output."""

    def __init__(self, pid: Optional[int], period: float = DEFAULT_PERIOD_S):
        self.pid = pid
        self.period = period
        self.samples: list[ResourceSample] = []
        self.exited = False
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def _run(self):
        for s in sample_resources(self.pid, self.period, self._stop):
            if isinstance(s, ProcessExited):
                self.exited = True
                return
            self.samples.append(s)

    def start(self) -> "ResourceSampler":
        if self.pid is not None:
            self._thread = threading.Thread(target=self._run, name="resource-sampler", daemon=True)
            self._thread.start()
        return self

    def stop(self) -> list[ResourceSample]:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        return list(self.samples)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


@dataclass
class EfficiencyReport:
    ttft_s: Optional[float]
    itps_tok_per_s: Optional[float]
    otps_tok_per_s: Optional[float]
    oet_s: Optional[float]
    total_s: Optional[float]
    cpu_pct_mean: Optional[float] = None
    ram_gb_peak: Optional[float] = None
    prompt_tokens: Optional[int] = None
    output_tokens: Optional[int] = None
    model: Optional[ModelDescriptor] = None
    load_s: Optional[float] = None
    flags: list = field(default_factory=list)
    item_id: Optional[str] = None

    def check_ordering(self):
        for name in ("ttft_s", "oet_s", "total_s"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise IntegrityError(f"{name} is negative ({v})")
        if None not in (self.ttft_s, self.oet_s, self.total_s):
            if self.total_s + 1e-9 * max(1.0, self.total_s) < self.ttft_s + self.oet_s:
                raise IntegrityError(
                    f"total_s {self.total_s} < ttft_s + oet_s {self.ttft_s + self.oet_s}"
                )

    def check_rates(self):
        def close(a, b):
            return math.isclose(a, b, rel_tol=1e-9)

        if self.ttft_s and self.prompt_tokens is not None and self.itps_tok_per_s is not None:
            if not close(self.itps_tok_per_s, self.prompt_tokens / self.ttft_s):
                raise IntegrityError("itps inconsistent with prompt_tokens / ttft_s")
        if self.oet_s and self.output_tokens and self.otps_tok_per_s is not None:
            if not close(self.otps_tok_per_s, self.output_tokens / self.oet_s):
                raise IntegrityError("otps inconsistent with output_tokens / oet_s")

    def validate(self) -> "EfficiencyReport":
        self.check_ordering()
        self.check_rates()
        return self

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["model"] = self.model.to_dict() if self.model else None
        d["flags"] = list(self.flags)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "EfficiencyReport":
        kw = {f.name: d.get(f.name) for f in fields(cls)}
        kw["model"] = ModelDescriptor.from_dict(d["model"]) if d.get("model") else None
        kw["flags"] = list(d.get("flags") or [])
        return cls(**kw)


def _overlap(a0: int, a1: int, b0: int, b1: int) -> int:
    return max(0, min(a1, b1) - max(a0, b0))


def compute_efficiency(
    result: GenerationResult,
    samples: Sequence[ResourceSample],
    model: Optional[ModelDescriptor] = None,
    load_s: Optional[float] = None,
) -> EfficiencyReport:
    result.validate()
    flags = []
    ttft_s = (result.t_first_token - result.t_request) / 1e9
    # decode span; stream teardown after the last token lands in total_s only
    oet_s = (result.t_last_token - result.t_first_token) / 1e9
    total_s = (result.t_done - result.t_request + result.setup_ns) / 1e9
    n_in, n_out = result.prompt_token_count, result.output_token_count

    itps = otps = None
    if n_out == 0:
        flags.append("degenerate_generation")
    else:
        if oet_s > 0:
            otps = n_out / oet_s
        else:
            flags.append("zero_oet")
    if n_in is None:
        flags.append("prompt_tokens_unknown")
    elif ttft_s > 0:
        itps = n_in / ttft_s
    else:
        flags.append("zero_ttft")

    cpu_mean = ram_peak = None
    t0, t1 = result.t_request, result.t_done
    window = [s for s in samples if _overlap(s.timestamp - s.interval_ns, s.timestamp, t0, t1) > 0]
    if window:
        weights = [_overlap(s.timestamp - s.interval_ns, s.timestamp, t0, t1) for s in window]
        total_w = sum(weights)
        cpu_mean = math.fsum(w * s.cpu_pct for w, s in zip(weights, window)) / total_w
        ram_peak = max(s.rss_bytes for s in window) / GB
    else:
        flags.append("no_resource_samples")

    return EfficiencyReport(
        ttft_s=ttft_s,
        itps_tok_per_s=itps,
        otps_tok_per_s=otps,
        oet_s=oet_s,
        total_s=total_s,
        cpu_pct_mean=cpu_mean,
        ram_gb_peak=ram_peak,
        prompt_tokens=n_in,
        output_tokens=n_out,
        model=model,
        load_s=load_s,
        flags=flags,
    ).validate()


def weighted_mean_rss(samples: Sequence[ResourceSample], t0: int, t1: int) -> Optional[float]:
    pairs = [(_overlap(s.timestamp - s.interval_ns, s.timestamp, t0, t1), s.rss_bytes) for s in samples]
    total = sum(w for w, _ in pairs)
    if total == 0:
        return None
    return math.fsum(w * r for w, r in pairs) / total


def profile_generation(
    backend: Backend,
    prompt: str,
    params: GenerationParams,
    model: Optional[ModelDescriptor] = None,
    period: float = DEFAULT_PERIOD_S,
) -> tuple[GenerationResult, list[ResourceSample], EfficiencyReport]:
    """Generate once with the sampler attached to the backend's engine process."""
    sampler = ResourceSampler(backend.pid, period).start()
    try:
        result = generate(backend, prompt, params)
    finally:
        samples = sampler.stop()
    load_s = model.load_s if model is not None else None
    return result, samples, compute_efficiency(result, samples, model, load_s)


_FIXTURE_KEYS = {
    "ttft_s": ("ttft_s", "ttft", "TTFT(s)"),
    "itps_tok_per_s": ("itps_tok_per_s", "itps", "ITPS(/s)"),
    "oet_s": ("oet_s", "oet", "OET(s)"),
    "otps_tok_per_s": ("otps_tok_per_s", "otps", "OTPS(/s)"),
    "total_s": ("total_s", "total", "Total Time(s)"),
    "cpu_pct_mean": ("cpu_pct_mean", "cpu_pct", "cpu", "CPU(%)"),
    "ram_gb_peak": ("ram_gb_peak", "ram_gb", "ram", "RAM(GB)"),
}


def fixture_report(row: Mapping) -> EfficiencyReport:
    """Build a report from seven externally reported metric values.

    Token counts are unknown so rate consistency is not checked; the
    ``total >= ttft + oet`` ordering is.
    """
    values = {}
    for key, aliases in _FIXTURE_KEYS.items():
        for a in aliases:
            if a in row and row[a] is not None:
                values[key] = float(row[a])
                break
        else:
            raise ContractError(f"fixture row lacks {key}")
    name = row.get("model") or row.get("name")
    report = EfficiencyReport(
        **values,
        model=ModelDescriptor(name) if name else None,
        flags=["fixture"],
    )
    report.check_ordering()
    return report


# Reference on-device measurements of 4-bit GGUF models on a phone-class device.
REFERENCE_EFFICIENCY_ROWS = [
    {"model": "Phi-3-mini-4k", "ttft_s": 2.01, "itps": 102.46, "oet_s": 8.52, "otps": 13.70,
     "total_s": 10.62, "cpu_pct": 66.48, "ram_gb": 6.32},
    {"model": "TinyLlama-1.1B", "ttft_s": 0.48, "itps": 552.58, "oet_s": 1.16, "otps": 45.22,
     "total_s": 2.14, "cpu_pct": 74.55, "ram_gb": 4.31},
    {"model": "Llama-2-7b", "ttft_s": 4.75, "itps": 56.17, "oet_s": 18.04, "otps": 7.04,
     "total_s": 26.51, "cpu_pct": 262.84, "ram_gb": 6.82},
]


def mean_report(reports: Sequence[EfficiencyReport], model: Optional[ModelDescriptor] = None) -> EfficiencyReport:
    """Per-metric mean over reports, ignoring absent values."""
    if not reports:
        raise ContractError("no reports to average")

    def avg(name):
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        return math.fsum(vals) / len(vals) if vals else None

    out = EfficiencyReport(
        ttft_s=avg("ttft_s"),
        itps_tok_per_s=avg("itps_tok_per_s"),
        otps_tok_per_s=avg("otps_tok_per_s"),
        oet_s=avg("oet_s"),
        total_s=avg("total_s"),
        cpu_pct_mean=avg("cpu_pct_mean"),
        ram_gb_peak=avg("ram_gb_peak"),
        model=model or reports[0].model,
        load_s=avg("load_s"),
        flags=["mean", f"n={len(reports)}"],
        item_id="mean",
    )
    if all(None not in (r.ttft_s, r.oet_s, r.total_s) for r in reports):
        out.check_ordering()
    return out


def dump_samples_csv(samples: Sequence[ResourceSample], fp: IO[str], item_id: str = "") -> None:
    w = csv.writer(fp)
    for s in samples:
        w.writerow([item_id, s.timestamp, f"{s.cpu_pct:.3f}", s.rss_bytes, s.interval_ns])
