from __future__ import annotations

import logging
import os
import sys
import tempfile
from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from bench import (
    BenchPlan,
    MountDown,
    format_report,
    records_frame,
    report,
    run_plan,
    throughput_timeline,
    transform_microbench,
    microbench_summary,
)
from datagen import DatasetSpec, calibration_policy, generate, measure_match_rate
from engine import scrub_bytes
from export import records_csv_bytes, summary_csv_bytes
from policy_io import PolicyError, load_policy
from transform import TransformContext
from vfs import MountConfig
from workbook_io import write_results_workbook_bytes

logger = logging.getLogger("dlpfs")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def init_logging(verbose: bool = False) -> None:
    """Root logger from -v or the DLPFS_LOG level name (default WARNING)."""
    level_name = "DEBUG" if verbose else os.environ.get("DLPFS_LOG", "WARNING").strip().upper()
    level = logging.getLevelName(level_name)
    bad_level = not isinstance(level, int)
    if bad_level:
        level = logging.WARNING
    formatter = logging.Formatter(
        "%(asctime)s.%(msecs)03d %(threadName)s: [%(name)s] %(levelname)s %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    handler = logging.StreamHandler()
    handler.setFormatter(formatter)
    root_logger = logging.getLogger()
    for h in list(root_logger.handlers):
        if getattr(h, "_dlpfs", False):
            root_logger.removeHandler(h)
    handler._dlpfs = True  # type: ignore[attr-defined]
    root_logger.addHandler(handler)
    root_logger.setLevel(level)
    if bad_level:
        logger.warning("DLPFS_LOG=%r is not a log level; using WARNING", level_name)


def _csv_list(value: str) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _int_list(value: str) -> List[int]:
    return [int(v) for v in _csv_list(value)]


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="dlpfs", description="Policy-driven data loss prevention filesystem.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging (overrides DLPFS_LOG)")
    sub = parser.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mount", help="mount a loopback or dlpfs filesystem and serve until interrupted")
    m.add_argument("-t", dest="fs_type", required=True, choices=["dlpfs", "loopback"], help="file system type")
    m.add_argument("-r", dest="root", required=True, help="root directory to mirror")
    m.add_argument("-m", dest="mountpoint", required=True, help="mounting point (empty directory)")
    m.add_argument("-s", dest="policy", default=None, help="policy file (dlpfs only; default: empty policy)")
    m.add_argument("--guard", type=int, default=None, help="guard bytes on each side of a window")
    m.add_argument("--format", dest="format_mode", choices=["Raw", "LineAligned"], default=None)
    m.add_argument("--max-match-bytes", type=int, default=1024)
    m.add_argument("--max-widen", type=int, default=None, help="bytes a window may grow by to resolve an edge")
    m.add_argument("--allow-other", action="store_true")
    m.add_argument("--single-threaded", action="store_true")

    g = sub.add_parser("gen", help="generate the synthetic CSV dataset")
    g.add_argument("out", help="output CSV path")
    g.add_argument("--rows", type=int, default=20_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--p-icd", type=float, default=0.05)
    g.add_argument("--p-kw1", type=float, default=0.01)
    g.add_argument("--p-kw2", type=float, default=0.1)
    g.add_argument("--p-email", type=float, default=0.05)
    g.add_argument("--kw1", default=None)
    g.add_argument("--kw2", default=None)
    g.add_argument("--no-header", action="store_true")
    g.add_argument("--report", action="store_true", help="print per-pattern hit counts of the generated file")

    b = sub.add_parser("bench", help="run the benchmark plan")
    b.add_argument("--out", default="bench_records.csv", help="records CSV (one record per line)")
    b.add_argument("--summary", default=None, help="summary CSV path")
    b.add_argument("--xlsx", default=None, help="results workbook path")
    b.add_argument("--workdir", default=None, help="backing directory for in-process runs")
    b.add_argument("--loopback-mount", default=None, help="live loopback mountpoint")
    b.add_argument("--dlpfs-mount", default=None, help="live dlpfs mountpoint")
    b.add_argument("--strategies", type=_csv_list, default=None)
    b.add_argument("--sizes", type=_int_list, default=None, help="row counts, comma-separated")
    b.add_argument("--guards", type=_int_list, default=None)
    b.add_argument("--scenarios", type=_csv_list, default=None)
    b.add_argument("--fs-types", type=_csv_list, default=None)
    b.add_argument("--reps", type=int, default=30)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--no-drop-caches", action="store_true")
    b.add_argument("--timeline", action="store_true", help="also run the throughput timeline")
    b.add_argument("--microbench", action="store_true", help="also run the transformation microbenchmark")

    s = sub.add_parser("scrub", help="apply a policy to a whole file (one-shot)")
    s.add_argument("--policy", required=True)
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--seed", type=int, default=0, help="seed for mask and noise draws")
    s.add_argument("--max-match-bytes", type=int, default=1024)
    return parser


def _cmd_mount(args: Namespace) -> int:
    if args.fs_type == "loopback" and args.policy:
        logger.warning("-s is ignored for loopback mounts")
    cfg_kwargs: Dict[str, object] = {
        "fs_type": args.fs_type,
        "root": Path(args.root),
        "mountpoint": Path(args.mountpoint),
        "policy_path": Path(args.policy) if args.policy and args.fs_type == "dlpfs" else None,
        "guard": args.guard,
        "format_mode": args.format_mode,
        "max_match_bytes": args.max_match_bytes,
    }
    if args.max_widen is not None:
        cfg_kwargs["max_widen"] = args.max_widen
    cfg = MountConfig(**cfg_kwargs)
    policy = load_policy(cfg.policy_path, max_match_bytes=cfg.max_match_bytes) if cfg.policy_path else None

    try:
        import fs_adapter
    except (ImportError, OSError) as e:
        raise RuntimeError(f"FUSE support is not available: {e}") from e

    opts = fs_adapter.AdapterOptions(allow_other=args.allow_other, single_threaded=args.single_threaded)
    try:
        fs_adapter.serve(cfg, opts, policy=policy)
    except KeyboardInterrupt:
        logger.info("interrupted; unmounting")
    except (fs_adapter.MountUnavailable, fs_adapter.MountBusy) as e:
        raise RuntimeError(str(e)) from e
    return EXIT_OK


def _cmd_gen(args: Namespace) -> int:
    spec_kwargs: Dict[str, object] = {
        "rows": args.rows,
        "seed": args.seed,
        "p_icd": args.p_icd,
        "p_kw1": args.p_kw1,
        "p_kw2": args.p_kw2,
        "p_email": args.p_email,
        "header": not args.no_header,
    }
    if args.kw1:
        spec_kwargs["kw1"] = args.kw1
    if args.kw2:
        spec_kwargs["kw2"] = args.kw2
    spec = DatasetSpec(**spec_kwargs)
    data = generate(spec)
    Path(args.out).write_bytes(data)
    print(f"wrote {spec.rows} rows ({len(data)} bytes) to {args.out}")
    if args.report:
        counts = measure_match_rate(data, calibration_policy(spec))
        for label, n in zip(("icd", "kw1", "kw2", "email"), counts):
            print(f"  {label}: {n} hits ({n / max(1, spec.rows):.4f} per row)")
    return EXIT_OK


def _bench_plan(args: Namespace) -> BenchPlan:
    kwargs: Dict[str, object] = {
        "repetitions": args.reps,
        "seed": args.seed,
        "drop_caches": not args.no_drop_caches,
    }
    for field, value in (
        ("strategies", args.strategies),
        ("file_sizes", args.sizes),
        ("guard_sizes", args.guards),
        ("scenarios", args.scenarios),
        ("fs_types", args.fs_types),
    ):
        if value:
            kwargs[field] = value
    return BenchPlan(**kwargs)


def _write_bench_outputs(args: Namespace, records, metadata, timeline=None) -> None:
    Path(args.out).write_bytes(records_csv_bytes(records))
    if not records:
        return
    rep = report(records, timeline=timeline)
    if args.summary:
        Path(args.summary).write_bytes(summary_csv_bytes(rep.summary))
    if args.xlsx:
        Path(args.xlsx).write_bytes(write_results_workbook_bytes(records_frame(records), rep.summary, metadata, timeline))
    print(format_report(rep))


def _cmd_bench(args: Namespace) -> int:
    plan = _bench_plan(args)
    mounts: Optional[Dict[str, str]] = None
    if args.loopback_mount or args.dlpfs_mount:
        mounts = {}
        if args.loopback_mount:
            mounts["loopback"] = args.loopback_mount
        if args.dlpfs_mount:
            mounts["dlpfs"] = args.dlpfs_mount

    metadata: Dict[str, str] = {}
    try:
        records = run_plan(plan, mounts, workdir=args.workdir, metadata=metadata)
    except MountDown as e:
        _write_bench_outputs(args, e.records, metadata)
        raise RuntimeError(f"{e} (partial results: {len(e.records)} records in {args.out})") from e

    timeline = None
    if args.timeline:
        with tempfile.TemporaryDirectory(prefix="dlpfs-timeline-") as tmp:
            timeline = throughput_timeline(tmp)
    _write_bench_outputs(args, records, metadata, timeline)
    if args.microbench:
        print()
        print("Transformation cost (mean total ms):")
        print(microbench_summary(transform_microbench(repetitions=plan.repetitions, seed=plan.seed)).to_string(index=False))
    return EXIT_OK


def _cmd_scrub(args: Namespace) -> int:
    policy = load_policy(args.policy, max_match_bytes=args.max_match_bytes)
    data = Path(args.input).read_bytes()
    out = scrub_bytes(data, policy, TransformContext.for_policy(policy, rng_seed=args.seed))
    Path(args.output).write_bytes(out)
    logger.info("scrubbed %s -> %s (%d bytes)", args.input, args.output, len(out))
    return EXIT_OK


COMMANDS = {"mount": _cmd_mount, "gen": _cmd_gen, "bench": _cmd_bench, "scrub": _cmd_scrub}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    init_logging(args.verbose)

    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        msgs = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        logger.error("%s", msgs)
        print(f"error: {msgs}", file=sys.stderr)
        return EXIT_RUNTIME
    except (PolicyError, RuntimeError, OSError, ValueError) as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
