from __future__ import annotations

from dataclasses import dataclass
from io import BytesIO
from typing import Any, Dict, List, Optional

import pandas as pd
from openpyxl import Workbook, load_workbook
from openpyxl.styles import Alignment, Font, PatternFill
from openpyxl.worksheet.worksheet import Worksheet

from bench import RECORD_COLUMNS

SUMMARY_COLUMNS = ["scenario", "strategy", "rows", "guard", "fs_type", "n", "mean", "p10", "p90"]
TIMELINE_COLUMNS = ["tick", "bytes", "elapsed", "throughput", "protected"]
REQUIRED_SHEETS = ("Records", "Summary", "Metadata")


@dataclass(frozen=True)
class ResultsPayload:
    records_df: pd.DataFrame
    summary_df: pd.DataFrame
    metadata: Dict[str, str]
    timeline_df: Optional[pd.DataFrame] = None


def _styled_sheet(wb: Workbook, title: str, columns: List[str], widths: Optional[Dict[str, int]] = None) -> Worksheet:
    ws = wb.create_sheet(title)
    ws.append(columns)
    header_fill = PatternFill(start_color="F0F0F0", end_color="F0F0F0", fill_type="solid")
    for c in ws[1]:
        c.font = Font(bold=True)
        c.fill = header_fill
        c.alignment = Alignment(horizontal="left")
    ws.freeze_panes = "A2"
    for col, w in (widths or {}).items():
        ws.column_dimensions[col].width = w
    return ws


def _cell(value: Any) -> Any:
    if value is None:
        return None
    try:
        if pd.isna(value):
            return None
    except (TypeError, ValueError):
        pass
    # numpy scalars -> python
    if hasattr(value, "item"):
        return value.item()
    return value


def _append_frame(ws: Worksheet, df: pd.DataFrame, columns: List[str]) -> None:
    df = df.copy()
    for c in columns:
        if c not in df.columns:
            df[c] = pd.NA
    for row in df[columns].itertuples(index=False):
        ws.append([_cell(v) for v in row])


def write_results_workbook_bytes(
    records_df: pd.DataFrame,
    summary_df: pd.DataFrame,
    metadata: Dict[str, str],
    timeline_df: Optional[pd.DataFrame] = None,
) -> bytes:
    """Records / Summary / Metadata sheets (plus Timeline when given) as .xlsx bytes."""
    wb = Workbook()
    wb.remove(wb.active)

    ws_r = _styled_sheet(wb, "Records", RECORD_COLUMNS, {"A": 16, "B": 22, "E": 10, "F": 14})
    _append_frame(ws_r, records_df, RECORD_COLUMNS)

    ws_s = _styled_sheet(wb, "Summary", SUMMARY_COLUMNS, {"A": 16, "B": 22, "E": 10})
    _append_frame(ws_s, summary_df, SUMMARY_COLUMNS)
    for col in ("G", "H", "I"):
        for row in range(2, ws_s.max_row + 1):
            ws_s[f"{col}{row}"].number_format = "0.000000"

    ws_m = _styled_sheet(wb, "Metadata", ["key", "value"], {"A": 20, "B": 60})
    for k, v in metadata.items():
        ws_m.append([str(k), "" if v is None else str(v)])

    if timeline_df is not None:
        ws_t = _styled_sheet(wb, "Timeline", TIMELINE_COLUMNS, {"D": 16})
        _append_frame(ws_t, timeline_df, TIMELINE_COLUMNS)

    bio = BytesIO()
    wb.save(bio)
    return bio.getvalue()


def read_results_workbook(excel_bytes: bytes) -> ResultsPayload:
    """
    Reads a workbook written by write_results_workbook_bytes.

    Missing optional columns are added empty; missing required sheets are an error.
    """
    try:
        wb = load_workbook(BytesIO(excel_bytes), data_only=True)
    except Exception as e:
        raise ValueError(f"Unable to read .xlsx file. Make sure it's an Excel workbook (.xlsx). Details: {e}") from e

    missing = set(REQUIRED_SHEETS) - set(wb.sheetnames)
    if missing:
        raise ValueError(f"Missing required sheet(s): {', '.join(sorted(missing))}. Expected: {', '.join(REQUIRED_SHEETS)}.")

    metadata: Dict[str, str] = {}
    for row in wb["Metadata"].iter_rows(min_row=2, values_only=True):
        if not row or row[0] is None:
            continue
        key = str(row[0]).strip()
        if key:
            metadata[key] = "" if len(row) < 2 or row[1] is None else str(row[1])

    buf = BytesIO(excel_bytes)
    try:
        records_df = pd.read_excel(buf, sheet_name="Records", engine="openpyxl")
        buf.seek(0)
        summary_df = pd.read_excel(buf, sheet_name="Summary", engine="openpyxl")
        timeline_df = None
        if "Timeline" in wb.sheetnames:
            buf.seek(0)
            timeline_df = pd.read_excel(buf, sheet_name="Timeline", engine="openpyxl")
    except Exception as e:
        raise ValueError(f"Unable to parse Records/Summary sheets. Details: {e}") from e

    for col in RECORD_COLUMNS:
        if col not in records_df.columns:
            records_df[col] = pd.NA
    records_df = records_df[RECORD_COLUMNS]
    for col in SUMMARY_COLUMNS:
        if col not in summary_df.columns:
            summary_df[col] = pd.NA
    summary_df = summary_df[SUMMARY_COLUMNS]
    if timeline_df is not None:
        timeline_df = timeline_df.reindex(columns=TIMELINE_COLUMNS)
        timeline_df["protected"] = timeline_df["protected"].fillna(False).astype(bool)

    return ResultsPayload(records_df=records_df, summary_df=summary_df, metadata=metadata, timeline_df=timeline_df)
