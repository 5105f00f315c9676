from __future__ import annotations

from io import BytesIO
from typing import List, Optional

import matplotlib.pyplot as plt
import pandas as pd

from bench import BenchRecord, records_frame
from renderer import ChartStyle, render_guard_sweep, render_microbench, render_strategy_chart, render_timeline


def _figure_bytes(fig: plt.Figure, fmt: str, dpi: Optional[int] = None) -> bytes:
    bio = BytesIO()
    fig.savefig(bio, format=fmt, dpi=dpi, facecolor="white")
    # Important: close to avoid memory growth in Streamlit
    plt.close(fig)
    return bio.getvalue()


def records_csv_bytes(records: List[BenchRecord]) -> bytes:
    """One BenchRecord per line."""
    return records_frame(records).to_csv(index=False, lineterminator="\n").encode("utf-8")


def summary_csv_bytes(summary: pd.DataFrame) -> bytes:
    return summary.to_csv(index=False, lineterminator="\n", float_format="%.9g").encode("utf-8")


def strategy_chart_png_bytes(summary: pd.DataFrame, *, scenario: str, rows: int, guard: int, dpi: int = 300) -> bytes:
    fig, _ = render_strategy_chart(summary, scenario=scenario, rows=rows, guard=guard)
    return _figure_bytes(fig, "png", dpi)


def strategy_chart_pdf_bytes(summary: pd.DataFrame, *, scenario: str, rows: int, guard: int) -> bytes:
    fig, _ = render_strategy_chart(summary, scenario=scenario, rows=rows, guard=guard)
    return _figure_bytes(fig, "pdf")


def guard_sweep_png_bytes(summary: pd.DataFrame, *, scenario: str, strategy: str, rows: int, dpi: int = 150) -> bytes:
    fig, _ = render_guard_sweep(summary, scenario=scenario, strategy=strategy, rows=rows)
    return _figure_bytes(fig, "png", dpi)


def timeline_png_bytes(timeline: pd.DataFrame, *, title: str = "Application throughput", dpi: int = 150) -> bytes:
    fig = render_timeline(timeline, style=ChartStyle(title=title, dpi=dpi, log_scale=False))
    return _figure_bytes(fig, "png", dpi)


def microbench_png_bytes(df: pd.DataFrame, *, dpi: int = 150) -> bytes:
    return _figure_bytes(render_microbench(df), "png", dpi)
