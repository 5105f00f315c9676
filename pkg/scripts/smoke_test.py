from __future__ import annotations

import os
import random
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import List

# Allow running this file directly via: python scripts/smoke_test.py
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from bench import BenchPlan, records_frame, report, run_plan, scenario_policy
from datagen import DatasetSpec, build_frame, frame_to_csv
from engine import scrub_bytes
from export import strategy_chart_png_bytes
from transform import TransformContext
from vfs import MountConfig, Vfs
from workbook_io import read_results_workbook, write_results_workbook_bytes


@dataclass
class SmokeResult:
    iteration: int
    scenario: str
    guard: int
    file_bytes: int
    reads: int
    writes: int
    records: int
    png_bytes: int


def run_case(iteration: int, workdir: Path) -> SmokeResult:
    random.seed(1000 + iteration)
    scenario = random.choice(["few", "many", "not-optimised", "dictionary"])
    guard = random.choice([0, 16, 64, 256])
    spec = DatasetSpec(rows=random.randint(50, 400), seed=iteration, p_kw1=0.2, p_kw2=0.3, p_email=0.2)
    content = frame_to_csv(build_frame(spec))

    root = workdir / "root"
    mnt = workdir / "mnt"
    root.mkdir()
    mnt.mkdir()
    (root / "data.csv").write_bytes(content)
    policy = scenario_policy(scenario)
    oracle = scrub_bytes(content, policy, TransformContext.for_policy(policy))
    vfs = Vfs(MountConfig(fs_type="dlpfs", root=root, mountpoint=mnt, guard=guard), policy=policy)

    # Random-size sequential reads must reassemble the oracle.
    fh = vfs.fs_open("/data.csv", os.O_RDONLY)
    out = bytearray()
    reads = 0
    while len(out) < len(content):
        out += vfs.fs_read(fh, len(out), random.randint(1, 4096))
        reads += 1
    vfs.fs_release(fh)
    assert bytes(out) == oracle, f"read mismatch in iteration {iteration}"

    # Random-size sequential writes must store the oracle.
    fh = vfs.fs_create("/copy.csv")
    pos = 0
    writes = 0
    while pos < len(content):
        n = random.randint(1, 512)
        pos += vfs.fs_write(fh, pos, content[pos:pos + n])
        writes += 1
    vfs.fs_release(fh)
    assert (root / "copy.csv").read_bytes() == oracle, f"write mismatch in iteration {iteration}"

    # Tiny plan, then the workbook round trip the app performs.
    plan = BenchPlan(
        strategies=["whole-file-copy", "pread-100", "write-row"],
        file_sizes=[20],
        guard_sizes=[guard],
        scenarios=[scenario],
        repetitions=2,
        seed=iteration,
        drop_caches=False,
    )
    metadata: dict = {}
    records = run_plan(plan, workdir=workdir / "bench", metadata=metadata)
    rep = report(records)
    payload = read_results_workbook(write_results_workbook_bytes(records_frame(records), rep.summary, metadata))
    assert len(payload.records_df) == len(records)
    png = strategy_chart_png_bytes(payload.summary_df, scenario=scenario, rows=20, guard=guard, dpi=100)
    assert png[:8] == b"\x89PNG\r\n\x1a\n"

    return SmokeResult(
        iteration=iteration,
        scenario=scenario,
        guard=guard,
        file_bytes=len(content),
        reads=reads,
        writes=writes,
        records=len(records),
        png_bytes=len(png),
    )


def main() -> None:
    results: List[SmokeResult] = []
    for i in range(1, 6):
        with tempfile.TemporaryDirectory(prefix="dlpfs-smoke-") as tmp:
            results.append(run_case(i, Path(tmp)))

    print("Smoke test results")
    for r in results:
        print(
            f"- Iter {r.iteration}: scenario={r.scenario}, guard={r.guard}, file={r.file_bytes:,} B, "
            f"reads={r.reads}, writes={r.writes}, records={r.records}, png={r.png_bytes:,} B"
        )

    print("OK: all iterations matched the one-shot scrub on read and write, and round-tripped their results.")


if __name__ == "__main__":
    main()
