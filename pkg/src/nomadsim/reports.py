"""Report emission: one table schema per experiment, three output formats.

The threshold sweep reproduces the seven-column layout (threshold, switch
count, direct/tree/other/total seconds, relative energy error) plus a
status column for rows whose run failed. The particle-count sweep carries
the full six-category breakdown and the overhead share. All emitters
produce deterministic bytes for identical inputs.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .runtime import RunReport

__all__ = ["ra_sweep_rows", "n_sweep_rows", "render", "emit_report", "FORMATS"]

FORMATS = ("aligned-text", "delimited-values", "structured-records")

RA_COLUMNS = ("r_a", "switches", "direct_s", "tree_s", "other_s", "total_s", "dE_over_E")
N_COLUMNS = (
    "n",
    "switches",
    "direct_s",
    "tree_s",
    "local_io_s",
    "transfer_s",
    "submission_s",
    "init_s",
    "total_s",
    "overhead_share",
    "dE_over_E",
)


def _fmt(value) -> str:
    if isinstance(value, float):
        if value != value:  # nan
            return "nan"
        if value in (float("inf"), float("-inf")):
            return "inf" if value > 0 else "-inf"
        if value == int(value) and abs(value) < 1e15:
            return str(int(value))
        return f"{value:.6g}"
    return str(value)


def ra_sweep_rows(reports: list[RunReport]) -> list[dict]:
    rows = []
    for rep in reports:
        rows.append(
            {
                "r_a": rep.r_a,
                "switches": rep.switch_count,
                "direct_s": rep.direct_s,
                "tree_s": rep.tree_s,
                "other_s": rep.other_s,
                "total_s": rep.total_s,
                "dE_over_E": rep.dE_over_E,
                "status": "ok" if rep.ok else f"failed({rep.failure_reason})",
            }
        )
    return rows


def n_sweep_rows(reports: list[RunReport]) -> list[dict]:
    rows = []
    for rep in reports:
        rows.append(
            {
                "n": rep.n_particles,
                "switches": rep.switch_count,
                "direct_s": rep.direct_s,
                "tree_s": rep.tree_s,
                "local_io_s": rep.local_io_s,
                "transfer_s": rep.transfer_s,
                "submission_s": rep.submission_s,
                "init_s": rep.init_s,
                "total_s": rep.total_s,
                "overhead_share": rep.overhead_share,
                "dE_over_E": rep.dE_over_E,
                "status": "ok" if rep.ok else f"failed({rep.failure_reason})",
            }
        )
    return rows


def _columns_for(mode: str) -> tuple:
    return RA_COLUMNS if mode in ("ra-sweep", "single") else N_COLUMNS


def rows_for(reports: list[RunReport], mode: str) -> list[dict]:
    return ra_sweep_rows(reports) if mode in ("ra-sweep", "single") else n_sweep_rows(reports)


def _render_aligned(rows: list[dict], columns: tuple) -> str:
    header = list(columns) + ["status"]
    table = [[_fmt(row[c]) for c in header] for row in rows]
    widths = [
        max(len(name), *(len(line[i]) for line in table)) if table else len(name)
        for i, name in enumerate(header)
    ]
    out = ["  ".join(name.ljust(widths[i]) for i, name in enumerate(header))]
    for line in table:
        out.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)))
    return "\n".join(out) + "\n"


def _render_delimited(rows: list[dict], columns: tuple) -> str:
    buf = io.StringIO()
    header = list(columns) + ["status"]
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in header])
    return buf.getvalue()


def _render_structured(rows, columns, reports, event_files) -> str:
    payload = {
        "columns": list(columns) + ["status"],
        "rows": rows,
        "runs": [
            {
                "label": rep.label,
                "phase": rep.phase,
                "failure_reason": rep.failure_reason,
                "n": rep.n_particles,
                "r_a": rep.r_a,
                "seed": rep.seed,
                "timing": rep.timing,
                "t_end": rep.t_end,
                "final_time": rep.final_time,
                "event_log": event_files.get(rep.label),
                "n_events": len(rep.events),
            }
            for rep in reports
        ],
    }
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n"


def render(
    reports: list[RunReport],
    fmt: str,
    mode: str = "ra-sweep",
    event_files: dict | None = None,
) -> str:
    """Render a report table to text in the requested format."""
    if not reports:
        raise ValueError("cannot emit an empty result set")
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; pick one of {FORMATS}")
    rows = rows_for(reports, mode)
    columns = _columns_for(mode)
    if fmt == "aligned-text":
        return _render_aligned(rows, columns)
    if fmt == "delimited-values":
        return _render_delimited(rows, columns)
    return _render_structured(rows, columns, reports, event_files or {})


_SUFFIX = {
    "aligned-text": ".txt",
    "delimited-values": ".csv",
    "structured-records": ".json",
}


def emit_report(
    reports: list[RunReport],
    fmt: str,
    out_dir,
    mode: str = "ra-sweep",
    stem: str = "report",
    event_files: dict | None = None,
) -> Path:
    """Write the rendered report to disk; returns the file path."""
    text = render(reports, fmt, mode=mode, event_files=event_files)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem}{_SUFFIX[fmt]}"
    path.write_text(text, encoding="utf-8")
    return path
