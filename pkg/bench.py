from __future__ import annotations

import csv
import io
import logging
import os
import platform
import random
import re
import shutil
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Any, Callable, Dict, List, Literal, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator

from datagen import DatasetSpec, build_frame, frame_to_csv
from domains import FREQUENT_KEYWORD, ICD10_CODES, RARE_KEYWORD, SENTENCE_WORDS
from policy_io import empty_policy, validate_policy
from policy_models import DiffPrivTransform, PolicySpec
from transform import TransformContext, dp_noise, mask, redact
from vfs import FsType, MountConfig, Vfs
from window_utils import KIB, MIB

logger = logging.getLogger(__name__)

Scenario = Literal["none", "few", "many", "empty-policy", "not-optimised", "dictionary"]
Strategy = Literal[
    "whole-file-dataframe",
    "whole-file-copy",
    "line-by-line",
    "pread-10",
    "pread-100",
    "pread-1000",
    "pread-10000",
    "write-dataframe",
    "write-whole",
    "write-row",
    "write-field",
]

SCENARIOS: Tuple[str, ...] = ("none", "few", "many", "empty-policy", "not-optimised", "dictionary")
READ_STRATEGIES: Tuple[str, ...] = (
    "whole-file-dataframe",
    "whole-file-copy",
    "line-by-line",
    "pread-10",
    "pread-100",
    "pread-1000",
    "pread-10000",
)
WRITE_STRATEGIES: Tuple[str, ...] = ("write-dataframe", "write-whole", "write-row", "write-field")
STRATEGIES: Tuple[str, ...] = READ_STRATEGIES + WRITE_STRATEGIES
FS_TYPES: Tuple[str, ...] = ("loopback", "dlpfs")

CELL_COLUMNS = ["scenario", "strategy", "rows", "guard", "fs_type"]
RECORD_COLUMNS = CELL_COLUMNS + ["elapsed", "run_index"]

# Nested unbounded groups and overlapping alternations; same hits as "many".
NOT_OPTIMISED_REGEX = r"(?:(?:F|Fr)(?:[a-z]|e|q)*)+(?:Key|Ke)(?:word|ord|rd)+"
NO_MATCH_REGEX = r"NoSuchToken\d{6}"
ACCOUNT_REGEX = r"Account\s+total:\s+(-?\d+\.\d{2})"

_COPY_CHUNK = MIB
_FIELD_RE = re.compile(rb"[^,\n]*[,\n]|[^,\n]+")
_CLOCK_FLOOR = time.get_clock_info("perf_counter").resolution


class MountDown(RuntimeError):
    """A mount disappeared mid-plan. `records` holds what was measured before."""

    def __init__(self, message: str, records: Optional[List["BenchRecord"]] = None):
        super().__init__(message)
        self.records: List[BenchRecord] = list(records or [])
        self.partial = True


class BenchPlan(BaseModel):
    strategies: List[Strategy] = Field(default_factory=lambda: list(STRATEGIES))
    file_sizes: List[int] = Field(default_factory=lambda: [1, 10, 100, 1_000, 10_000, 20_000])
    guard_sizes: List[int] = Field(default_factory=lambda: [0, 64, 128, 256])
    scenarios: List[Scenario] = Field(default_factory=lambda: list(SCENARIOS))
    fs_types: List[FsType] = Field(default_factory=lambda: list(FS_TYPES))
    repetitions: int = Field(default=30, ge=1)
    seed: int = 0
    drop_caches: bool = True
    warm_up: bool = True

    @field_validator("file_sizes")
    @classmethod
    def _sizes_valid(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("file_sizes must list at least one row count.")
        if any(n < 0 or n > 20_000_000 for n in v):
            raise ValueError("file_sizes must be row counts >= 0.")
        return sorted(set(v))

    @field_validator("guard_sizes")
    @classmethod
    def _guards_valid(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("guard_sizes must list at least one guard.")
        if any(g < 0 or g > MIB for g in v):
            raise ValueError(f"guard sizes must be between 0 and {MIB} bytes.")
        return sorted(set(v))

    @field_validator("strategies", "scenarios", "fs_types")
    @classmethod
    def _not_empty(cls, v: List[str]) -> List[str]:
        if not v:
            raise ValueError("must select at least one entry.")
        # Keep the caller's order but drop duplicates.
        return list(dict.fromkeys(v))

    def cells(self) -> List[Tuple[str, str, int, int, str]]:
        return [
            (sc, st, rows, g, fs)
            for sc in self.scenarios
            for st in self.strategies
            for rows in self.file_sizes
            for g in self.guard_sizes
            for fs in self.fs_types
        ]


@dataclass(frozen=True)
class BenchRecord:
    scenario: str
    strategy: str
    rows: int
    guard: int
    fs_type: str
    elapsed: float
    run_index: int

    def __post_init__(self) -> None:
        if not self.elapsed > 0:
            raise ValueError(f"elapsed must be positive, got {self.elapsed}")


# ---------------------------------------------------------------------------
# Scenario policies
# ---------------------------------------------------------------------------


def _redact_rule(pattern: Dict[str, Any]) -> Dict[str, Any]:
    return {"patterns": [pattern], "transformation": {"type": "redact"}}


def scenario_policy(scenario: str, *, max_match_bytes: int = 1024) -> PolicySpec:
    """
    Policy used for a match-rate scenario over the generated dataset.

    - none: a regex that never occurs in the corpus.
    - few / many: the rare (p=0.01) / frequent (p=0.1) keyword.
    - not-optimised: the frequent keyword through a pathological regex.
    - dictionary: both keywords and every bundled ICD-10 code.
    - empty-policy: no rules at all.
    """
    if scenario == "empty-policy":
        return empty_policy()
    if scenario == "none":
        rules = [_redact_rule({"type": "re", "spec": NO_MATCH_REGEX})]
    elif scenario == "few":
        rules = [_redact_rule({"type": "re", "spec": RARE_KEYWORD})]
    elif scenario == "many":
        rules = [_redact_rule({"type": "re", "spec": FREQUENT_KEYWORD})]
    elif scenario == "not-optimised":
        rules = [_redact_rule({"type": "re", "spec": NOT_OPTIMISED_REGEX})]
    elif scenario == "dictionary":
        terms = [RARE_KEYWORD, FREQUENT_KEYWORD, *ICD10_CODES]
        rules = [_redact_rule({"type": "dict", "spec": terms, "case_sensitive": True})]
    else:
        raise ValueError(f"Unknown scenario '{scenario}'. Expected one of: {', '.join(SCENARIOS)}.")
    return validate_policy({"do_read": True, "do_write": True, "rules": rules}, max_match_bytes=max_match_bytes)


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------


def _write_all(f: IO[bytes], data: bytes) -> None:
    view = memoryview(data)
    while view:
        n = f.write(view)
        if n is None:
            raise BlockingIOError("non-blocking write accepted no data")
        view = view[n:]


def _read_dataframe(f: IO[bytes]) -> pd.DataFrame:
    return pd.read_csv(f, dtype=str, keep_default_na=False)


def _read_copy(f: IO[bytes]) -> bytes:
    out = io.BytesIO()
    shutil.copyfileobj(f, out, _COPY_CHUNK)
    return out.getvalue()


def _read_lines(f: IO[bytes]) -> bytes:
    return b"".join(f)


def _read_chunked(n: int) -> Callable[[IO[bytes]], bytes]:
    def read(f: IO[bytes]) -> bytes:
        parts = []
        while True:
            chunk = f.read(n)
            if not chunk:
                break
            parts.append(chunk)
        return b"".join(parts)

    return read


def _write_dataframe(f: IO[bytes], content: bytes, frame: pd.DataFrame) -> None:
    text = io.TextIOWrapper(f, encoding="utf-8", newline="")
    frame.to_csv(text, index=False, quoting=csv.QUOTE_NONNUMERIC, lineterminator="\n")
    text.flush()
    text.detach()


def _write_whole(f: IO[bytes], content: bytes, frame: pd.DataFrame) -> None:
    _write_all(f, content)


def _write_rows(f: IO[bytes], content: bytes, frame: pd.DataFrame) -> None:
    for line in content.splitlines(keepends=True):
        _write_all(f, line)


def _write_fields(f: IO[bytes], content: bytes, frame: pd.DataFrame) -> None:
    for piece in field_pieces(content):
        _write_all(f, piece)


def field_pieces(content: bytes) -> List[bytes]:
    """Split into fields, each carrying its trailing comma or newline."""
    return _FIELD_RE.findall(content)


# name -> (buffering, function)
READERS: Dict[str, Tuple[int, Callable[[IO[bytes]], Any]]] = {
    "whole-file-dataframe": (-1, _read_dataframe),
    "whole-file-copy": (0, _read_copy),
    "line-by-line": (-1, _read_lines),
    "pread-10": (0, _read_chunked(10)),
    "pread-100": (0, _read_chunked(100)),
    "pread-1000": (0, _read_chunked(1_000)),
    "pread-10000": (0, _read_chunked(10_000)),
}

WRITERS: Dict[str, Tuple[int, Callable[[IO[bytes], bytes, pd.DataFrame], None]]] = {
    "write-dataframe": (-1, _write_dataframe),
    "write-whole": (0, _write_whole),
    "write-row": (0, _write_rows),
    "write-field": (0, _write_fields),
}


# ---------------------------------------------------------------------------
# Targets
# ---------------------------------------------------------------------------


class BenchTarget:
    """Where a strategy opens its files: an in-process vfs or a live mount."""

    fs_type: str

    def open(self, name: str, mode: str, buffering: int = -1) -> IO[bytes]:
        raise NotImplementedError

    def check(self) -> None:
        pass


class InProcessTarget(BenchTarget):
    def __init__(self, vfs: Vfs):
        self.vfs = vfs
        self.fs_type = vfs.cfg.fs_type

    def open(self, name: str, mode: str, buffering: int = -1) -> IO[bytes]:
        return self.vfs.open_file("/" + name, mode, buffering)


class MountedTarget(BenchTarget):
    def __init__(self, fs_type: str, mountpoint: Union[str, Path]):
        self.fs_type = fs_type
        self.mountpoint = Path(mountpoint)

    def open(self, name: str, mode: str, buffering: int = -1) -> IO[bytes]:
        return open(self.mountpoint / name, mode, buffering=buffering)

    def check(self) -> None:
        if not os.path.ismount(self.mountpoint):
            raise MountDown(f"{self.fs_type} mount at {self.mountpoint} is gone")


def read_with_strategy(target: BenchTarget, name: str, strategy: str) -> Any:
    """Run one read strategy; bytes for the byte strategies, a DataFrame for the dataframe one."""
    buffering, fn = READERS[strategy]
    with target.open(name, "rb", buffering) as f:
        return fn(f)


def write_with_strategy(target: BenchTarget, name: str, strategy: str, content: bytes, frame: pd.DataFrame) -> None:
    buffering, fn = WRITERS[strategy]
    with target.open(name, "wb", buffering) as f:
        fn(f, content, frame)


def _dataset_name(rows: int) -> str:
    return f"bench_{rows}.csv"


def _output_name(rows: int) -> str:
    return f"bench_{rows}.out.csv"


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def drop_page_cache() -> Tuple[bool, str]:
    """Ask the kernel to drop clean caches. (ok, msg) for metadata."""
    try:
        os.sync()
        with open("/proc/sys/vm/drop_caches", "w") as fh:
            fh.write("3\n")
    except OSError as e:
        return False, f"unavailable ({e.strerror or e})"
    return True, "dropped before every run"


def _timed(fn: Callable[[], Any]) -> float:
    t0 = time.perf_counter()
    fn()
    return max(time.perf_counter() - t0, _CLOCK_FLOOR)


@dataclass
class _Datasets:
    content: Dict[int, bytes] = field(default_factory=dict)
    frames: Dict[int, pd.DataFrame] = field(default_factory=dict)


def _prepare_datasets(plan: BenchPlan, writer: BenchTarget) -> _Datasets:
    ds = _Datasets()
    for rows in plan.file_sizes:
        frame = build_frame(DatasetSpec(rows=rows, seed=plan.seed))
        content = frame_to_csv(frame)
        with writer.open(_dataset_name(rows), "wb", 0) as f:
            _write_all(f, content)
        ds.content[rows] = content
        ds.frames[rows] = frame
        logger.info("bench dataset: %d rows, %d bytes", rows, len(content))
    return ds


class _InProcessMounts:
    """Builds one in-process vfs per (fs type, scenario, guard) over a shared backing root."""

    def __init__(self, workdir: Path, max_match_bytes: int):
        self.root = workdir / "backing"
        self.mountpoint = workdir / "mnt"
        self.root.mkdir(parents=True, exist_ok=True)
        self.mountpoint.mkdir(parents=True, exist_ok=True)
        self.max_match_bytes = max_match_bytes
        self._cache: Dict[Tuple[str, str, int], InProcessTarget] = {}

    def target(self, fs_type: str, scenario: str, guard: int) -> InProcessTarget:
        # Loopback ignores the policy and the guard.
        key = (fs_type, scenario, guard) if fs_type == "dlpfs" else (fs_type, "", 0)
        if key not in self._cache:
            cfg = MountConfig(
                fs_type=fs_type,
                root=self.root,
                mountpoint=self.mountpoint,
                guard=guard,
                max_match_bytes=self.max_match_bytes,
            )
            policy = scenario_policy(scenario, max_match_bytes=self.max_match_bytes) if fs_type == "dlpfs" else empty_policy()
            self._cache[key] = InProcessTarget(Vfs(cfg, policy=policy))
        return self._cache[key]


def _run_cell(target: BenchTarget, strategy: str, rows: int, ds: _Datasets) -> float:
    if strategy in READERS:
        return _timed(lambda: read_with_strategy(target, _dataset_name(rows), strategy))
    return _timed(
        lambda: write_with_strategy(target, _output_name(rows), strategy, ds.content[rows], ds.frames[rows])
    )


def run_plan(
    plan: BenchPlan,
    mounts: Optional[Mapping[str, Union[str, Path]]] = None,
    *,
    workdir: Optional[Union[str, Path]] = None,
    metadata: Optional[Dict[str, str]] = None,
    max_match_bytes: int = 1024,
) -> List[BenchRecord]:
    """
    Execute every (scenario x strategy x rows x guard x fs type) cell
    `plan.repetitions` times, one at a time, in a seeded random order.

    Rules:
    - `mounts` maps "loopback"/"dlpfs" to live mountpoints over the same root;
      their policy and guard were fixed at mount time, so the plan must name a
      single scenario and a single guard (they only label the records).
    - Without `mounts`, in-process vfs instances over `workdir` are used and
      every scenario/guard gets its own dlpfs instance.
    - Each cell runs once unmeasured first (unless `plan.warm_up` is off).
    - Timing covers open, the strategy, and close.
    - A vanished live mount raises MountDown with the records so far.
    """
    meta = metadata if metadata is not None else {}
    meta.update(
        {
            "timer": "time.perf_counter",
            "timed_region": "open + strategy + close",
            "order": f"random (seed {plan.seed})",
            "repetitions": str(plan.repetitions),
            "warm_up": "one discarded run per cell" if plan.warm_up else "none",
            "python": platform.python_version(),
            "platform": platform.platform(),
        }
    )

    tmp: Optional[tempfile.TemporaryDirectory] = None
    if mounts is not None:
        if len(plan.scenarios) != 1 or len(plan.guard_sizes) != 1:
            raise ValueError("Live mounts carry one policy and one guard; plan exactly one scenario and one guard size.")
        missing = set(plan.fs_types) - set(mounts)
        if missing:
            raise ValueError(f"No mountpoint given for: {', '.join(sorted(missing))}.")
        live = {fs: MountedTarget(fs, mounts[fs]) for fs in plan.fs_types}
        for t in live.values():
            t.check()
        writer: BenchTarget = live.get("loopback") or next(iter(live.values()))

        def target_for(fs: str, scenario: str, guard: int) -> BenchTarget:
            return live[fs]

        meta["mounts"] = ", ".join(f"{fs}={p}" for fs, p in sorted(mounts.items()))
    else:
        if workdir is None:
            tmp = tempfile.TemporaryDirectory(prefix="dlpfs-bench-")
            workdir = tmp.name
        in_process = _InProcessMounts(Path(workdir), max_match_bytes)
        writer = in_process.target("loopback", "", 0)
        target_for = in_process.target
        meta["mounts"] = "in-process vfs"

    do_drop = False
    if plan.drop_caches:
        do_drop, note = drop_page_cache()
        meta["cache_drop"] = note
        if not do_drop:
            logger.warning("page cache cannot be dropped between runs: %s", note)
    else:
        meta["cache_drop"] = "disabled"

    records: List[BenchRecord] = []
    try:
        ds = _prepare_datasets(plan, writer)
        rng = random.Random(plan.seed)
        cells = plan.cells()
        if plan.warm_up:
            warm = list(cells)
            rng.shuffle(warm)
            for sc, st, rows, g, fs in warm:
                _run_cell(target_for(fs, sc, g), st, rows, ds)

        runs = [(cell, i) for cell in cells for i in range(plan.repetitions)]
        rng.shuffle(runs)
        for (sc, st, rows, g, fs), i in runs:
            target = target_for(fs, sc, g)
            if do_drop:
                drop_page_cache()
            try:
                elapsed = _run_cell(target, st, rows, ds)
            except OSError:
                target.check()
                raise
            records.append(BenchRecord(sc, st, rows, g, fs, elapsed, i))
            target.check()
    except MountDown as e:
        meta["status"] = f"aborted after {len(records)} records: {e}"
        logger.error("bench aborted: %s", e)
        raise MountDown(str(e), records) from e
    finally:
        if tmp is not None:
            tmp.cleanup()

    meta["status"] = f"complete, {len(records)} records"
    return records


# ---------------------------------------------------------------------------
# Transformation microbenchmark
# ---------------------------------------------------------------------------

MICROBENCH_TRANSFORMS = ("none", "redact", "mask", "dp")


def _identity(v: bytes) -> bytes:
    return v


def transform_microbench(values: int = 20_000, repetitions: int = 30, seed: int = 0, epsilon: float = 0.1) -> pd.DataFrame:
    """
    Push `values` numeric strings through each transformation; one row per
    (transform, run) with the total elapsed seconds.
    """
    rng = random.Random(seed)
    data = [f"{rng.uniform(1, 1000):.2f}".encode("ascii") for _ in range(values)]
    table = tuple(f"{rng.uniform(1, 1000):.2f}" for _ in range(200))
    ctx = TransformContext(rng_seed=seed, domain_tables={"amount": table})
    spec = DiffPrivTransform(type="diff_priv", e=epsilon)

    def run_none() -> None:
        for v in data:
            _identity(v)

    def run_redact() -> None:
        for v in data:
            redact(v)

    def run_mask() -> None:
        for v in data:
            mask(v, "amount", ctx)

    def run_dp() -> None:
        for i, v in enumerate(data):
            dp_noise(v, spec, ctx, i)

    fns: Dict[str, Callable[[], None]] = {"none": run_none, "redact": run_redact, "mask": run_mask, "dp": run_dp}
    for fn in fns.values():
        fn()

    order = [(name, i) for name in MICROBENCH_TRANSFORMS for i in range(repetitions)]
    rng.shuffle(order)
    rows = [{"transform": name, "run_index": i, "values": values, "elapsed": _timed(fns[name])} for name, i in order]
    return pd.DataFrame(rows, columns=["transform", "run_index", "values", "elapsed"])


def microbench_summary(df: pd.DataFrame) -> pd.DataFrame:
    """Mean total milliseconds per transform, in none/redact/mask/dp order."""
    means = df.groupby("transform")["elapsed"].mean() * 1000.0
    out = means.reindex([t for t in MICROBENCH_TRANSFORMS if t in means.index])
    return out.rename("mean_ms").reset_index()


# ---------------------------------------------------------------------------
# Throughput timeline
# ---------------------------------------------------------------------------


def timeline_policy() -> PolicySpec:
    return validate_policy(
        {
            "do_read": True,
            "do_write": True,
            "rules": [
                {"patterns": [{"type": "re", "spec": ACCOUNT_REGEX}], "transformation": {"type": "diff_priv", "e": 0.1}},
            ],
        }
    )


def _filler_block(rng: random.Random, size: int) -> bytes:
    out = bytearray()
    while len(out) < size:
        out += (" ".join(rng.choice(SENTENCE_WORDS) for _ in range(rng.randint(4, 12))) + ".\n").encode("ascii")
    return bytes(out[:size])


def _protected_block(rng: random.Random, size: int) -> bytes:
    out = bytearray()
    while len(out) < size:
        out += f"Account total: {rng.uniform(1, 10_000):.2f} (ref {rng.choice(SENTENCE_WORDS)})\n".encode("ascii")
    return bytes(out[:size])


def timeline_content(ticks: int, protected_tick: int, tick_bytes: int, seed: int = 0) -> bytes:
    """`ticks` blocks of `tick_bytes`; only block `protected_tick` carries sensitive values."""
    rng = random.Random(seed)
    blocks = [
        _protected_block(rng, tick_bytes) if t == protected_tick else _filler_block(rng, tick_bytes)
        for t in range(ticks)
    ]
    return b"".join(blocks)


def throughput_timeline(
    workdir: Union[str, Path],
    *,
    mode: Literal["read", "write"] = "read",
    ticks: int = 200,
    protected_tick: int = 100,
    tick_bytes: int = 64 * KIB,
    seed: int = 0,
) -> pd.DataFrame:
    """
    Scripted run through an in-process dlpfs: one tick-sized read (or write)
    per tick, over non-sensitive data except at `protected_tick`.
    Columns: tick, bytes, elapsed, throughput (bytes/s), protected.
    """
    if not 0 <= protected_tick < ticks:
        raise ValueError("protected_tick must fall inside the run.")
    workdir = Path(workdir)
    root = workdir / "timeline_backing"
    mnt = workdir / "timeline_mnt"
    root.mkdir(parents=True, exist_ok=True)
    mnt.mkdir(parents=True, exist_ok=True)

    content = timeline_content(ticks, protected_tick, tick_bytes, seed)
    name = "/timeline.dat"
    if mode == "read":
        (root / name.lstrip("/")).write_bytes(content)
    vfs = Vfs(MountConfig(fs_type="dlpfs", root=root, mountpoint=mnt), policy=timeline_policy())

    if mode == "read":
        fh = vfs.fs_open(name, os.O_RDONLY)
    else:
        fh = vfs.fs_create(name, 0o644, os.O_WRONLY | os.O_CREAT | os.O_TRUNC)

    rows = []
    try:
        for t in range(ticks):
            off = t * tick_bytes
            block = content[off:off + tick_bytes]
            if mode == "read":
                elapsed = _timed(lambda: vfs.fs_read(fh, off, tick_bytes))
            else:
                elapsed = _timed(lambda: vfs.fs_write(fh, off, block))
            rows.append(
                {
                    "tick": t,
                    "bytes": len(block),
                    "elapsed": elapsed,
                    "throughput": len(block) / elapsed,
                    "protected": t == protected_tick,
                }
            )
    finally:
        vfs.fs_release(fh)
    return pd.DataFrame(rows, columns=["tick", "bytes", "elapsed", "throughput", "protected"])


def timeline_dip(df: pd.DataFrame) -> Tuple[bool, str]:
    """(ok, msg): the protected tick is the slow one and throughput recovers afterwards."""
    if df.empty or not df["protected"].any():
        return False, "timeline has no protected tick"
    t = int(df.loc[df["protected"], "tick"].iloc[0])
    baseline = float(df.loc[~df["protected"], "throughput"].median())
    at = float(df.loc[df["tick"] == t, "throughput"].iloc[0])
    after = df.loc[df["tick"] > t + 1, "throughput"]
    if at >= 0.5 * baseline:
        return False, f"no dip at tick {t}: {at:.0f} B/s vs median {baseline:.0f} B/s"
    if not after.empty and float(after.median()) < 2 * at:
        return False, f"no recovery after tick {t}"
    return True, "ok"


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchReport:
    summary: pd.DataFrame
    ratios: pd.DataFrame
    timeline: Optional[pd.DataFrame] = None


def records_frame(records: List[BenchRecord]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in records], columns=RECORD_COLUMNS)


def records_from_frame(df: pd.DataFrame) -> List[BenchRecord]:
    missing = [c for c in RECORD_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"Missing required column(s): {', '.join(missing)}.")
    return [
        BenchRecord(
            scenario=str(r.scenario),
            strategy=str(r.strategy),
            rows=int(r.rows),
            guard=int(r.guard),
            fs_type=str(r.fs_type),
            elapsed=float(r.elapsed),
            run_index=int(r.run_index),
        )
        for r in df.itertuples(index=False)
    ]


def summarize(df: pd.DataFrame) -> pd.DataFrame:
    """Per-cell n, mean, p10, p90 of elapsed seconds."""
    grouped = df.groupby(CELL_COLUMNS, sort=True)["elapsed"]
    out = grouped.agg(
        n="count",
        mean="mean",
        p10=lambda x: float(np.percentile(x, 10)),
        p90=lambda x: float(np.percentile(x, 90)),
    )
    return out.reset_index()


def baseline_ratios(summary: pd.DataFrame) -> pd.DataFrame:
    """Mean dlpfs / mean loopback for cells measured on both."""
    keys = ["scenario", "strategy", "rows", "guard"]
    wide = summary.pivot_table(index=keys, columns="fs_type", values="mean", aggfunc="first")
    if "loopback" not in wide.columns or "dlpfs" not in wide.columns:
        return pd.DataFrame(columns=keys + ["loopback", "dlpfs", "ratio"])
    wide = wide[["loopback", "dlpfs"]].dropna()
    wide["ratio"] = wide["dlpfs"] / wide["loopback"]
    return wide.reset_index().rename_axis(None, axis=1)


def report(records: List[BenchRecord], *, timeline: Optional[pd.DataFrame] = None) -> BenchReport:
    if not records:
        raise ValueError("No benchmark records to report.")
    summary = summarize(records_frame(records))
    return BenchReport(summary=summary, ratios=baseline_ratios(summary), timeline=timeline)


def format_report(rep: BenchReport) -> str:
    lines = ["Per-cell elapsed seconds (mean, p10, p90):", rep.summary.to_string(index=False)]
    if not rep.ratios.empty:
        lines += ["", "dlpfs / loopback (mean):", rep.ratios.to_string(index=False)]
    if rep.timeline is not None and not rep.timeline.empty:
        ok, msg = timeline_dip(rep.timeline)
        lines += ["", f"Throughput timeline: {len(rep.timeline)} ticks, dip check: {msg}"]
    return "\n".join(lines)
