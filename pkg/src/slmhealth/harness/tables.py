"""Markdown tables shaped like the accuracy and efficiency comparison tables."""

from __future__ import annotations

from typing import Mapping, Optional

from ..ingest import TASKS
from ..metrics import EvalReport
from ..profiler import EfficiencyReport

# (attribute, header, lower_is_better)
EFFICIENCY_COLUMNS = [
    ("ttft_s", "TTFT(s)", True),
    ("itps_tok_per_s", "ITPS(/s)", False),
    ("oet_s", "OET(s)", True),
    ("otps_tok_per_s", "OTPS(/s)", False),
    ("total_s", "Total Time(s)", True),
    ("cpu_pct_mean", "CPU(%)", True),
    ("ram_gb_peak", "RAM(GB)", True),
]


def fmt(v: Optional[float]) -> str:
    return "-" if v is None else f"{v:.6g}"


def _arrow(lower_is_better: bool) -> str:
    return "↓" if lower_is_better else "↑"


def _best(values: list[Optional[float]], lower_is_better: bool) -> Optional[float]:
    present = [v for v in values if v is not None]
    if len(present) < 2:
        return None
    return min(present) if lower_is_better else max(present)


def _row(cells: list[str]) -> str:
    return "| " + " | ".join(cells) + " |"


def render_eval_table(models: Mapping[str, Mapping[str, EvalReport]]) -> str:
    """One row per model, one column per task; ± is the sample std over repeats."""
    tasks = [t for t in TASKS if any(t in reps for reps in models.values())]
    header = ["Model"]
    lower = {}
    for t in tasks:
        rep = next(reps[t] for reps in models.values() if t in reps)
        lower[t] = rep.lower_is_better
        header.append(f"{t.replace('_', ' ').upper()} ({_arrow(lower[t])})")
    lines = [_row(header), _row(["---"] * len(header))]
    best = {t: _best([reps[t].value if t in reps else None for reps in models.values()], lower[t]) for t in tasks}
    for name, reps in models.items():
        cells = [name]
        for t in tasks:
            r = reps.get(t)
            if r is None:
                cells.append("-")
                continue
            if r.value is None:
                text = "undefined"
            else:
                text = fmt(r.value) + (f" ± {r.std:.3g}" if len(r.runs) > 1 else "")
                if best[t] is not None and r.value == best[t]:
                    text = f"**{text}**"
            cells.append(f"{text} (invalid {r.n_invalid}/{r.n_total})")
        lines.append(_row(cells))
    return "\n".join(lines) + "\n"


def render_efficiency_table(rows: Mapping[str, EfficiencyReport]) -> str:
    header = ["Model"] + [f"{h} ({_arrow(low)})" for _, h, low in EFFICIENCY_COLUMNS]
    lines = [_row(header), _row(["---"] * len(header))]
    best = {
        attr: _best([getattr(r, attr) for r in rows.values()], low) for attr, _, low in EFFICIENCY_COLUMNS
    }
    for name, rep in rows.items():
        cells = [name]
        for attr, _, _ in EFFICIENCY_COLUMNS:
            v = getattr(rep, attr)
            text = fmt(v)
            if v is not None and best[attr] is not None and v == best[attr]:
                text = f"**{text}**"
            cells.append(text)
        lines.append(_row(cells))
    return "\n".join(lines) + "\n"


def render_tables(
    eval_reports: Optional[Mapping[str, Mapping[str, EvalReport]]] = None,
    efficiency: Optional[Mapping[str, EfficiencyReport]] = None,
) -> str:
    """Both tables as one markdown document; best value per column in bold
    when two or more models are present."""
    parts = []
    if eval_reports:
        parts.append("## Health event prediction\n\n" + render_eval_table(eval_reports))
    if efficiency:
        parts.append("## Efficiency and utilization\n\n" + render_efficiency_table(efficiency))
    if not parts:
        raise ValueError("render_tables needs at least one report")
    return "\n".join(parts)
