from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import matplotlib.pyplot as plt
import pandas as pd
import streamlit as st
from pydantic import ValidationError

from bench import baseline_ratios, records_from_frame, report, summarize
from datagen import DatasetSpec, generate
from engine import scrub_bytes
from export import (
    guard_sweep_png_bytes,
    records_csv_bytes,
    strategy_chart_pdf_bytes,
    strategy_chart_png_bytes,
    summary_csv_bytes,
    timeline_png_bytes,
)
from matcher import scan
from policy_io import PolicyError, parse_policy, serialize_policy
from policy_models import PolicySpec
from renderer import render_strategy_chart
from spans import count_by_rule
from transform import TransformContext
from workbook_io import read_results_workbook, write_results_workbook_bytes


APP_TITLE = "DLPFS Policy Workbench"
APP_SUBTITLE = "Policy JSON → check it against sample data → download the scrubbed file · load benchmark results → export charts"

SAMPLE_POLICY = {
    "do_read": True,
    "do_write": True,
    "rules": [
        {
            "patterns": [{"type": "re", "spec": r"[\w.+-]+@[\w-]+(?:\.[\w-]+)*\.\w{2,4}"}],
            "transformation": {"type": "redact"},
        },
        {
            "patterns": [{"type": "re", "spec": r"Account\s+total:\s+(-?\d+\.\d{2})"}],
            "transformation": {"type": "diff_priv", "e": 0.1},
        },
    ],
}


# ----------------------------
# Caching helpers
# ----------------------------


@st.cache_data(show_spinner=False)
def _cached_policy(policy_bytes: bytes) -> Tuple[Optional[bytes], Optional[str]]:
    """(canonical policy JSON, error message)."""
    try:
        policy = parse_policy(policy_bytes)
    except PolicyError as e:
        return None, str(e)
    return serialize_policy(policy), None


@st.cache_data(show_spinner=False)
def _cached_sample(rows: int, seed: int) -> bytes:
    return generate(DatasetSpec(rows=rows, seed=seed))


@st.cache_data(show_spinner=False)
def _cached_scrub(policy_json: bytes, data: bytes, seed: int) -> Tuple[bytes, List[int]]:
    policy = parse_policy(policy_json)
    spans = scan(data, policy)
    out = scrub_bytes(data, policy, TransformContext.for_policy(policy, rng_seed=seed))
    return out, count_by_rule(spans, len(policy.rules))


@st.cache_data(show_spinner=False)
def _cached_results(excel_bytes: bytes):
    return read_results_workbook(excel_bytes)


def _policy_from_state() -> Optional[PolicySpec]:
    raw = st.session_state.get("policy_json")
    return parse_policy(raw) if raw else None


def _hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:12]


def _diff_lines(before: bytes, after: bytes, limit: int = 200) -> pd.DataFrame:
    rows: List[Dict[str, object]] = []
    for i, (a, b) in enumerate(zip(before.splitlines(), after.splitlines())):
        if a != b:
            rows.append({"line": i + 1, "before": a.decode("utf-8", "replace"), "after": b.decode("utf-8", "replace")})
            if len(rows) >= limit:
                break
    return pd.DataFrame(rows, columns=["line", "before", "after"])


def _policy_tab() -> None:
    st.subheader("Policy")
    uploaded = st.file_uploader("Upload a policy (.json)", type=["json"], key="policy_upload")
    default_text = json.dumps(SAMPLE_POLICY, indent=2)
    if uploaded is not None:
        default_text = uploaded.getvalue().decode("utf-8", "replace")
    text = st.text_area("Policy JSON", value=default_text, height=320)

    canonical, err = _cached_policy(text.encode("utf-8"))
    if err:
        st.error(err)
        st.session_state.pop("policy_json", None)
        return

    st.session_state["policy_json"] = canonical
    policy = parse_policy(canonical)
    st.success(f"Valid policy: {len(policy.rules)} rule(s), read={'on' if policy.do_read else 'off'}, write={'on' if policy.do_write else 'off'}.")
    st.caption(f"Longest possible match: {policy.compiled.extent} bytes (default guard is max(64, that)).")
    st.download_button(
        "Download canonical policy",
        data=canonical,
        file_name="policy.json",
        mime="application/json",
    )


def _preview_tab() -> None:
    policy = _policy_from_state()
    if policy is None:
        st.info("Load a valid policy in the Policy tab first.")
        return

    c1, c2, c3 = st.columns([1.2, 1.0, 1.0])
    with c1:
        source = st.radio("Data", ["Generated sample", "Upload a file"], horizontal=True)
    with c2:
        rows = st.number_input("Rows", min_value=1, max_value=20_000, value=200, step=100)
    with c3:
        seed = st.number_input("Seed", min_value=0, value=0, step=1)

    data: Optional[bytes] = None
    name = "sample.csv"
    if source == "Upload a file":
        up = st.file_uploader("File to scrub", key="data_upload")
        if up is not None:
            data, name = up.getvalue(), up.name
    else:
        data = _cached_sample(int(rows), int(seed))

    if not data:
        st.info("Upload a file to preview.")
        return

    out, counts = _cached_scrub(st.session_state["policy_json"], data, int(seed))
    st.write(f"{len(data):,} bytes · input {_hash(data)} · output {_hash(out)}")
    st.dataframe(pd.DataFrame({"rule": list(range(len(counts))), "hits": counts}), hide_index=True)

    changed = _diff_lines(data, out)
    st.markdown(f"Changed lines (first {len(changed)}):")
    st.dataframe(changed, hide_index=True, use_container_width=True)

    st.download_button(
        "Download scrubbed file",
        data=out,
        file_name=f"scrubbed_{Path(name).name}",
        mime="application/octet-stream",
    )


def _results_tab() -> None:
    st.subheader("Benchmark results")
    up = st.file_uploader("Records CSV or results workbook", type=["csv", "xlsx"], key="results_upload")
    if up is None:
        st.info("Upload the records CSV written by `cli.py bench` or a results workbook.")
        return

    timeline = None
    metadata: Dict[str, str] = {}
    try:
        if up.name.lower().endswith(".xlsx"):
            payload = _cached_results(up.getvalue())
            records_df, metadata, timeline = payload.records_df, payload.metadata, payload.timeline_df
        else:
            records_df = pd.read_csv(up)
        records = records_from_frame(records_df.dropna(subset=["elapsed"]))
    except (ValueError, ValidationError) as e:
        st.error(str(e))
        return
    if not records:
        st.warning("No records in the upload.")
        return

    rep = report(records, timeline=timeline)
    summary = rep.summary
    st.dataframe(summary, hide_index=True, use_container_width=True)
    ratios = baseline_ratios(summary)
    if not ratios.empty:
        st.markdown("dlpfs / loopback (mean elapsed)")
        st.dataframe(ratios, hide_index=True, use_container_width=True)
    if metadata:
        with st.expander("Metadata"):
            st.json(metadata)

    c1, c2, c3 = st.columns(3)
    with c1:
        scenario = st.selectbox("Scenario", sorted(summary["scenario"].unique()))
    with c2:
        rows = st.selectbox("Rows", sorted(summary["rows"].unique()))
    with c3:
        guard = st.selectbox("Guard", sorted(summary["guard"].unique()))

    fig, warnings = render_strategy_chart(summary, scenario=scenario, rows=int(rows), guard=int(guard))
    plt.close(fig)
    png = strategy_chart_png_bytes(summary, scenario=scenario, rows=int(rows), guard=int(guard))
    st.image(png, caption=f"{scenario}, {rows} rows, guard {guard} B", use_container_width=True)
    for w in warnings:
        st.warning(w)

    d1, d2, d3, d4 = st.columns(4)
    with d1:
        st.download_button("PNG", png, "bench.png", "image/png")
    with d2:
        st.download_button("PDF", strategy_chart_pdf_bytes(summary, scenario=scenario, rows=int(rows), guard=int(guard)), "bench.pdf", "application/pdf")
    with d3:
        st.download_button("Summary CSV", summary_csv_bytes(summarize(records_df)), "bench_summary.csv", "text/csv")
    with d4:
        st.download_button(
            "Workbook",
            write_results_workbook_bytes(records_df, summary, metadata, timeline),
            "bench_results.xlsx",
            "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet",
        )
    st.download_button("Records CSV", records_csv_bytes(records), "bench_records.csv", "text/csv")

    guards = sorted(summary.loc[(summary["scenario"] == scenario) & (summary["rows"] == rows), "guard"].unique())
    if len(guards) > 1:
        st.subheader("Guard sweep")
        strategy = st.selectbox("Strategy", sorted(summary["strategy"].unique()))
        sweep_png = guard_sweep_png_bytes(summary, scenario=scenario, strategy=strategy, rows=int(rows))
        st.image(sweep_png, use_container_width=True)
        st.download_button("Guard sweep PNG", sweep_png, "guard_sweep.png", "image/png")

    if timeline is not None and not timeline.empty:
        st.subheader("Throughput timeline")
        timeline_png = timeline_png_bytes(timeline)
        st.image(timeline_png, use_container_width=True)
        st.download_button("Timeline PNG", timeline_png, "timeline.png", "image/png")


def main() -> None:
    st.set_page_config(page_title=APP_TITLE, page_icon="🛡️", layout="wide")
    st.title(APP_TITLE)
    st.caption(APP_SUBTITLE)

    tabs = st.tabs(["0 Instructions", "1 Policy", "2 Preview", "3 Results"])
    with tabs[0]:
        st.markdown(Path(__file__).with_name("Instructions.md").read_text(encoding="utf-8"))
    with tabs[1]:
        _policy_tab()
    with tabs[2]:
        _preview_tab()
    with tabs[3]:
        _results_tab()


if __name__ == "__main__":
    main()
