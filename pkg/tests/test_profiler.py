import io
import os
import subprocess
import sys
import time

import pytest

from slmhealth.errors import ContractError, IntegrityError
from slmhealth.inference import GenerationParams, GenerationResult, MockBackend, ModelDescriptor, TokenEvent, spaced_script
from slmhealth.profiler import (
    GB,
    REFERENCE_EFFICIENCY_ROWS,
    EfficiencyReport,
    ResourceSample,
    ResourceSampler,
    compute_efficiency,
    dump_samples_csv,
    fixture_report,
    mean_report,
    profile_generation,
    weighted_mean_rss,
)

MS = 1_000_000


def result(prompt_tokens, stamps, t_request=0, t_done=None, setup_ns=0):
    events = [TokenEvent(i, "x", t) for i, t in enumerate(stamps)]
    return GenerationResult(prompt_tokens, len(events), events, "x" * len(events), t_request,
                            stamps[0], stamps[-1], t_done if t_done is not None else stamps[-1], setup_ns)


def test_arithmetic_from_timestamps():
    r = result(200, [100 * MS + i * 50 * MS for i in range(20)], t_done=1100 * MS, setup_ns=5 * MS)
    e = compute_efficiency(r, [])
    assert e.ttft_s == pytest.approx(0.1)
    assert e.oet_s == pytest.approx(0.95)
    assert e.total_s == pytest.approx(1.105)
    assert e.itps_tok_per_s == pytest.approx(2000.0)
    assert e.otps_tok_per_s == pytest.approx(20 / 0.95)
    assert e.total_s >= e.ttft_s + e.oet_s
    assert "no_resource_samples" in e.flags and e.cpu_pct_mean is None


def test_single_token_is_degenerate():
    e = compute_efficiency(result(10, [40 * MS], t_done=41 * MS), [])
    assert e.oet_s == 0 and e.otps_tok_per_s is None and "zero_oet" in e.flags
    assert e.itps_tok_per_s == pytest.approx(250.0)


def test_unknown_prompt_tokens_and_zero_ttft():
    e = compute_efficiency(result(None, [10, 20]), [])
    assert e.itps_tok_per_s is None and "prompt_tokens_unknown" in e.flags
    e = compute_efficiency(result(5, [0, 20]), [])
    assert e.itps_tok_per_s is None and "zero_ttft" in e.flags


def test_cpu_is_time_weighted_within_request():
    r = result(1, [10 * MS, 20 * MS], t_request=0, t_done=100 * MS)
    samples = [
        ResourceSample(-10 * MS, 100.0, 9 * GB, 50 * MS),  # entirely before the request
        ResourceSample(25 * MS, 80.0, 1 * GB, 50 * MS),    # overlaps 25 ms
        ResourceSample(100 * MS, 20.0, 2 * GB, 75 * MS),   # overlaps 75 ms
    ]
    e = compute_efficiency(r, samples)
    assert e.cpu_pct_mean == pytest.approx((80 * 25 + 20 * 75) / 100)
    assert e.ram_gb_peak == pytest.approx(2.0)
    assert weighted_mean_rss(samples, 0, 100 * MS) == pytest.approx((1 * 25 + 2 * 75) / 100 * GB)


def test_sample_validation():
    with pytest.raises(ContractError):
        ResourceSample(0, -1.0, 0, 1)
    with pytest.raises(ContractError):
        ResourceSample(0, 1.0, 0, 0)
    with pytest.raises(ContractError):
        ResourceSample(0, 100.0 * (os.cpu_count() or 1) * 10, 0, 1)


def test_report_rejects_inconsistent_rates():
    with pytest.raises(IntegrityError):
        EfficiencyReport(1.0, 50.0, None, 0.5, 2.0, prompt_tokens=10).validate()


def test_report_round_trip():
    r = compute_efficiency(result(3, [MS, 3 * MS], t_done=4 * MS), [], ModelDescriptor("m", 1, "Q4_0"), 0.5)
    assert EfficiencyReport.from_dict(r.to_dict()) == r


@pytest.mark.parametrize("row", REFERENCE_EFFICIENCY_ROWS, ids=lambda r: r["model"])
def test_reference_rows_accepted(row):
    rep = fixture_report(row)
    assert rep.total_s >= rep.ttft_s + rep.oet_s
    assert rep.model.name == row["model"] and "fixture" in rep.flags


def test_reference_rows_match_values():
    by = {r["model"]: r for r in REFERENCE_EFFICIENCY_ROWS}
    assert (by["TinyLlama-1.1B"]["ttft_s"], by["TinyLlama-1.1B"]["ram_gb"]) == (0.48, 4.31)
    assert round(by["Llama-2-7b"]["ttft_s"] + by["Llama-2-7b"]["oet_s"], 2) == 22.79


def test_fixture_rejects_mutation_and_gaps():
    row = dict(REFERENCE_EFFICIENCY_ROWS[0], total_s=1.0)
    with pytest.raises(IntegrityError):
        fixture_report(row)
    row = dict(REFERENCE_EFFICIENCY_ROWS[0])
    del row["otps"]
    with pytest.raises(ContractError):
        fixture_report(row)
    assert fixture_report({"TTFT(s)": 1, "ITPS(/s)": 2, "OET(s)": 3, "OTPS(/s)": 4,
                           "Total Time(s)": 5, "CPU(%)": 6, "RAM(GB)": 7}).total_s == 5.0


def test_mean_report():
    reps = [fixture_report(r) for r in REFERENCE_EFFICIENCY_ROWS[:2]]
    m = mean_report(reps)
    assert m.ttft_s == pytest.approx((2.01 + 0.48) / 2)
    assert m.total_s >= m.ttft_s + m.oet_s
    with pytest.raises(ContractError):
        mean_report([])


def test_ttft_monotone_in_simulated_prefill():
    # prefill time grows with prompt length; ttft must follow
    ttfts = []
    for n in (1, 4, 8):
        b = MockBackend(spaced_script(2, 0.01 * n, 0.0))
        _, _, rep = profile_generation(b, "w " * n, GenerationParams(stop_sequences=()), period=0.02)
        ttfts.append(rep.ttft_s)
    assert ttfts == sorted(ttfts)


def test_profile_generation_samples_own_process():
    b = MockBackend(spaced_script(3, 0.05, 0.05))
    res, samples, rep = profile_generation(b, "a b", GenerationParams(stop_sequences=()), period=0.02)
    assert samples and rep.ram_gb_peak > 0 and rep.cpu_pct_mean is not None
    assert all(s.timestamp <= res.t_done + 50 * MS for s in samples)
    buf = io.StringIO()
    dump_samples_csv(samples, buf, "q1")
    assert buf.getvalue().count("\n") == len(samples)


def test_sampler_no_pid_and_exit():
    with ResourceSampler(None) as s:
        pass
    assert s.samples == []
    child = subprocess.Popen([sys.executable, "-c", "import time; time.sleep(0.15)"])
    s = ResourceSampler(child.pid, 0.02).start()
    child.wait()
    time.sleep(0.1)
    s.stop()
    assert s.exited
