import re
from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from conftest import EXAMPLE_SERIES, make_window
from slmhealth.errors import ConfigError, ContractError
from slmhealth.ingest import DEFAULT_TASK_SPECS, TASKS, SensorKind
from slmhealth.prompt import (
    DEFAULT_DECIMALS,
    PromptTemplate,
    builtin_templates,
    format_series,
    render_prompt,
)

FATIGUE = DEFAULT_TASK_SPECS["fatigue"]


def reference_fixed(value: float, decimals: int) -> str:
    """Independent fixed-point formatter: exact rational of the shortest repr,
    integer rounding half away from zero."""
    q = Fraction(repr(value)) * 10**decimals
    sign = -1 if q < 0 else 1
    n = abs(q)
    whole = n.numerator // n.denominator
    if (n - whole) * 2 >= 1:
        whole += 1
    digits = str(whole).rjust(decimals + 1, "0")
    body = digits if decimals == 0 else digits[:-decimals] + "." + digits[-decimals:]
    return ("-" if sign < 0 and whole else "") + body


def test_format_series_example_head():
    assert format_series([1476.0, 4809.0, None], 1) == "1476.0, 4809.0, NaN"


def test_format_series_empty():
    assert format_series([], 3) == ""


def test_format_series_rounding_matches_reference():
    assert reference_fixed(53.237, 2) == "53.24"
    assert format_series([53.237], 2) == "53.24"
    for v, d in [(2.675, 2), (0.5, 0), (1.5, 0), (-2.5, 0), (51.4, 2), (0.125, 2), (-0.004, 2)]:
        assert format_series([v], d) == reference_fixed(v, d), (v, d)


def test_format_series_nan_float():
    assert format_series([float("nan"), 1.0], 0) == "NaN, 1"


def test_format_series_rejects_big_decimals():
    with pytest.raises(ContractError):
        format_series([1.0], 7)


@settings(max_examples=200)
@given(st.lists(st.one_of(st.none(), st.floats(-1e6, 1e6, allow_nan=False)), max_size=20),
       st.integers(0, 6))
def test_format_series_round_trip(values, decimals):
    out = format_series(values, decimals)
    parts = out.split(", ") if values else []
    assert len(parts) == len(values)
    for v, p in zip(values, parts):
        if v is None:
            assert p == "NaN"
        else:
            assert p == reference_fixed(v, decimals)
            assert abs(Fraction(p) - Fraction(repr(v))) <= Fraction(1, 2) * Fraction(1, 10**decimals)


def test_golden_render(example_window):
    tpl = builtin_templates()["fatigue"]
    b = render_prompt(example_window, tpl, FATIGUE)
    assert b.instruction == (
        "You are a personalized healthcare agent trained to predict fatigue which ranges "
        "from 1 to 5 based on physiological data and user information."
    )
    q = b.main_query
    assert q.startswith("The recent 14-days sensor readings show: ")
    assert 'Steps: "1476.0, 4809.0, ' in q and ', NaN" steps' in q
    assert 'Burned Calories: "169.0, 419.0, ' in q and ', NaN" calories' in q
    assert 'Resting Heart Rate: "53.24, 52.24, ' in q and ', 51.40" beats/min' in q
    assert 'Sleep Minutes: "110.0, 524.0, ' in q and ', 481.0" minutes' in q
    assert "[Mood]: 3 out of 5" in q
    assert q.endswith("What would be the predicted fatigue (Please give me a single integer value between 1 and 5)?")
    assert b.answer_prompt == "The predicted fatigue level would be:"
    for series in re.findall(r'"([^"]*)"', q):
        assert len(series.split(", ")) == 14


def test_mood_absent_omits_clause(example_window):
    w = replace(example_window, context_mood=None)
    b = render_prompt(w, builtin_templates()["fatigue"], FATIGUE)
    assert "[Mood]" not in b.main_query
    assert '481.0" minutes. What would' in b.main_query


def test_full_text_layout(example_window):
    b = render_prompt(example_window, builtin_templates()["fatigue"], FATIGUE)
    assert b.full_text == "\n".join([b.instruction, b.main_query, b.answer_prompt])
    assert b.full_text.endswith("The predicted fatigue level would be:")
    assert "\n\n\n" not in b.full_text


def test_render_is_pure(example_window):
    tpl = builtin_templates()["fatigue"]
    assert render_prompt(example_window, tpl, FATIGUE) == render_prompt(example_window, tpl, FATIGUE)


def test_task_mismatch():
    w = make_window(EXAMPLE_SERIES, task="stress")
    with pytest.raises(ContractError):
        render_prompt(w, builtin_templates()["fatigue"], FATIGUE)


def test_builtin_templates():
    t = builtin_templates()
    assert set(t) == set(TASKS)
    assert t["fatigue"].answer_prompt == "The predicted fatigue level would be:"
    assert t["stress"].answer_prompt == "The predicted stress level would be:"
    assert t["sleep_quality"].answer_prompt == "The predicted sleep quality level would be:"
    for tpl in t.values():
        PromptTemplate(**tpl.__dict__)  # re-validates invariants


def test_readiness_range_in_prompt():
    w = make_window(EXAMPLE_SERIES, task="readiness", label=7)
    b = render_prompt(w, builtin_templates()["readiness"], DEFAULT_TASK_SPECS["readiness"])
    assert "ranges from 0 to 10" in b.instruction
    assert "between 0 and 10" in b.main_query


def test_template_invariants():
    with pytest.raises(ContractError):
        PromptTemplate("fatigue", answer_prompt="")
    with pytest.raises(ContractError):
        PromptTemplate("fatigue", answer_prompt="The level would be: ")
    with pytest.raises(ContractError):
        PromptTemplate("fatigue", query_skeleton="{{steps_series}} {{steps_series}}")


def test_template_override_from_config(example_window):
    t = builtin_templates({"fatigue": {"answer_prompt": "Fatigue (1-5):"}})
    b = render_prompt(example_window, t["fatigue"], FATIGUE)
    assert b.full_text.endswith("Fatigue (1-5):")
    with pytest.raises(ConfigError):
        builtin_templates({"fatigue": {"bogus": "x"}})
    with pytest.raises(ConfigError):
        builtin_templates({"fatigue": {"query_skeleton": "no placeholders"}})


def test_custom_decimals(example_window):
    b = render_prompt(example_window, builtin_templates()["fatigue"], FATIGUE,
                      {SensorKind.STEPS: 0})
    assert 'Steps: "1476, 4809, ' in b.main_query
    assert DEFAULT_DECIMALS[SensorKind.RESTING_HEART_RATE] == 2
