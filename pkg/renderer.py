from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import matplotlib
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from bench import MICROBENCH_TRANSFORMS, STRATEGIES


DEFAULT_PALETTE = [
    "#1F77B4",  # blue
    "#FF7F0E",  # orange
    "#2CA02C",  # green
    "#D62728",  # red
    "#9467BD",  # purple
    "#8C564B",  # brown
    "#7F7F7F",  # gray
    "#17BECF",  # cyan
]

FS_COLORS = {"loopback": "#7F7F7F", "dlpfs": "#1F77B4"}


@dataclass(frozen=True)
class ChartStyle:
    title: str = ""
    subtitle: str = ""
    font_family: str = "DejaVu Sans"
    page_size: str = "A4"
    dpi: int = 150
    log_scale: bool = True


def _font_family_available(family: str) -> bool:
    family = (family or "").strip()
    if not family:
        return False
    fam_lower = family.lower()
    from matplotlib import font_manager as fm
    for f in fm.fontManager.ttflist:
        if f.name.lower() == fam_lower:
            return True
    return False


def resolve_font_family(preferred: str) -> str:
    """
    Returns a font family name that matplotlib can actually render.
    Priority:
      1) preferred, if available
      2) DejaVu Sans (matplotlib default)
    """
    preferred = (preferred or "").strip()
    if preferred and _font_family_available(preferred):
        return preferred
    return "DejaVu Sans"


def _figure(style: ChartStyle) -> Tuple[plt.Figure, plt.Axes]:
    matplotlib.rcParams["font.family"] = resolve_font_family(style.font_family)
    fig_w, fig_h = (11.69, 8.27) if style.page_size == "A4" else (16.54, 11.69)
    fig = plt.figure(figsize=(fig_w, fig_h), dpi=style.dpi)
    gs = fig.add_gridspec(nrows=2, ncols=1, height_ratios=[0.1, 0.9], hspace=0.08)
    ax_header = fig.add_subplot(gs[0, 0])
    ax = fig.add_subplot(gs[1, 0])

    ax_header.axis("off")
    if style.title:
        ax_header.text(0.0, 0.7, style.title, fontsize=16, fontweight="bold", ha="left", va="center", transform=ax_header.transAxes)
    if style.subtitle:
        ax_header.text(0.0, 0.2, style.subtitle, fontsize=10, ha="left", va="center", color="#333333", transform=ax_header.transAxes)
    ax_header.hlines(0.0, 0.0, 1.0, transform=ax_header.transAxes, colors="#E6E6E6", linewidth=1.0)

    ax.spines[["top", "right"]].set_visible(False)
    ax.grid(axis="y", color="#EEEEEE", linewidth=0.8)
    ax.set_axisbelow(True)
    return fig, ax


def _select(summary: pd.DataFrame, **eq) -> pd.DataFrame:
    mask = np.ones(len(summary), dtype=bool)
    for col, val in eq.items():
        if val is not None:
            mask &= (summary[col] == val).to_numpy()
    return summary[mask]


def _fs_color(fs_type: str, i: int) -> str:
    return FS_COLORS.get(fs_type, DEFAULT_PALETTE[i % len(DEFAULT_PALETTE)])


def render_strategy_chart(
    summary: pd.DataFrame,
    *,
    scenario: str,
    rows: int,
    guard: int,
    style: Optional[ChartStyle] = None,
) -> Tuple[plt.Figure, List[str]]:
    """
    Mean elapsed per strategy, one bar per fs type, whiskers from p10 to p90.
    Returns (fig, warnings).
    """
    style = style or ChartStyle(title=f"Elapsed time by strategy: {scenario}", subtitle=f"{rows} rows, guard {guard} B")
    data = _select(summary, scenario=scenario, rows=rows, guard=guard)
    warnings: List[str] = []
    fig, ax = _figure(style)
    if data.empty:
        warnings.append(f"No records for scenario={scenario}, rows={rows}, guard={guard}.")
        ax.text(0.5, 0.5, "No data", ha="center", va="center", transform=ax.transAxes, color="#999999")
        return fig, warnings

    strategies = [s for s in STRATEGIES if s in set(data["strategy"])]
    fs_types = sorted(set(data["fs_type"]))
    x = np.arange(len(strategies))
    width = 0.8 / max(1, len(fs_types))

    for i, fs in enumerate(fs_types):
        sub = data[data["fs_type"] == fs].set_index("strategy").reindex(strategies)
        means = sub["mean"].to_numpy(dtype=float)
        lo = np.clip(means - sub["p10"].to_numpy(dtype=float), 0, None)
        hi = np.clip(sub["p90"].to_numpy(dtype=float) - means, 0, None)
        ax.bar(
            x + (i - (len(fs_types) - 1) / 2) * width,
            means,
            width,
            yerr=np.vstack([lo, hi]),
            capsize=3,
            color=_fs_color(fs, i),
            label=fs,
            error_kw={"elinewidth": 1.0, "ecolor": "#333333"},
        )
        missing = [s for s, m in zip(strategies, means) if np.isnan(m)]
        if missing:
            warnings.append(f"{fs}: no records for {', '.join(missing)}.")

    ax.set_xticks(x)
    ax.set_xticklabels(strategies, rotation=30, ha="right")
    ax.set_ylabel("elapsed (s)")
    if style.log_scale:
        ax.set_yscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    return fig, warnings


def render_guard_sweep(
    summary: pd.DataFrame,
    *,
    scenario: str,
    strategy: str,
    rows: int,
    style: Optional[ChartStyle] = None,
) -> Tuple[plt.Figure, List[str]]:
    """Mean elapsed against guard size per fs type, shaded p10..p90."""
    style = style or ChartStyle(title=f"Guard sweep: {strategy}", subtitle=f"{scenario}, {rows} rows", log_scale=False)
    data = _select(summary, scenario=scenario, strategy=strategy, rows=rows)
    warnings: List[str] = []
    fig, ax = _figure(style)
    if data.empty:
        warnings.append(f"No records for scenario={scenario}, strategy={strategy}, rows={rows}.")
        return fig, warnings

    for i, fs in enumerate(sorted(set(data["fs_type"]))):
        sub = data[data["fs_type"] == fs].sort_values("guard")
        color = _fs_color(fs, i)
        ax.plot(sub["guard"], sub["mean"], marker="o", color=color, label=fs)
        ax.fill_between(sub["guard"], sub["p10"], sub["p90"], color=color, alpha=0.2, linewidth=0)
    ax.set_xlabel("guard (bytes)")
    ax.set_ylabel("elapsed (s)")
    if style.log_scale:
        ax.set_yscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    return fig, warnings


def render_timeline(timeline: pd.DataFrame, *, style: Optional[ChartStyle] = None) -> plt.Figure:
    """Throughput per tick; the protected tick is marked."""
    style = style or ChartStyle(title="Application throughput", log_scale=False)
    fig, ax = _figure(style)
    ax.plot(timeline["tick"], timeline["throughput"] / (1024 * 1024), color=DEFAULT_PALETTE[0], linewidth=1.2)
    for t in timeline.loc[timeline["protected"], "tick"]:
        ax.axvline(int(t), color=DEFAULT_PALETTE[3], linestyle=(0, (4, 2)), linewidth=1.0)
        ax.text(int(t), ax.get_ylim()[1], " protected access", color=DEFAULT_PALETTE[3], fontsize=9, va="top")
    ax.set_xlabel("tick")
    ax.set_ylabel("throughput (MiB/s)")
    fig.tight_layout()
    return fig


def render_microbench(df: pd.DataFrame, *, style: Optional[ChartStyle] = None) -> plt.Figure:
    style = style or ChartStyle(title="Transformation cost", subtitle=f"{int(df['values'].iloc[0]) if len(df) else 0} values per run")
    fig, ax = _figure(style)
    names = [t for t in MICROBENCH_TRANSFORMS if t in set(df["transform"])]
    stats: Dict[str, Tuple[float, float, float]] = {}
    for name in names:
        ms = df.loc[df["transform"] == name, "elapsed"].to_numpy(dtype=float) * 1000.0
        stats[name] = (float(ms.mean()), float(np.percentile(ms, 10)), float(np.percentile(ms, 90)))
    means = np.array([stats[n][0] for n in names])
    lo = np.clip(means - np.array([stats[n][1] for n in names]), 0, None)
    hi = np.clip(np.array([stats[n][2] for n in names]) - means, 0, None)
    ax.bar(names, means, yerr=np.vstack([lo, hi]) if names else None, capsize=3, color=DEFAULT_PALETTE[: len(names)])
    ax.set_ylabel("total time (ms)")
    if style.log_scale and names:
        ax.set_yscale("log")
    fig.tight_layout()
    return fig
