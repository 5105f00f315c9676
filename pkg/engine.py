from __future__ import annotations

import hashlib
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field

from matcher import compiled_for, scan, scan_truncated
from policy_io import max_pattern_extent
from policy_models import PolicySpec
from transform import TransformContext, apply
from window_utils import MIB, covers, guarded_bounds, last_line_end, resolved_range, sync_cut

logger = logging.getLogger(__name__)

FormatMode = Literal["Raw", "LineAligned"]

LINE_ALIGNED_SUFFIXES = (".csv", ".tsv", ".log", ".jsonl")
GUARD_CAP = MIB
_LINE_BLOCK = 4096


class GuardConfig(BaseModel):
    left_guard: int = Field(default=64, ge=0, le=GUARD_CAP)
    right_guard: int = Field(default=64, ge=0, le=GUARD_CAP)
    format_mode: FormatMode = "Raw"
    # Extra bytes a read window may grow by to resolve a match cut by its edge.
    # 0 keeps the window at exactly the guard size (straddling matches can leak).
    max_widen: int = Field(default=MIB, ge=0)
    pipeline_bytes: int = Field(default=4 * MIB, ge=1)
    write_buffer_limit: int = Field(default=MIB, ge=1)

    @classmethod
    def for_file(
        cls,
        path: Union[str, Path],
        policy: PolicySpec,
        *,
        guard: Optional[int] = None,
        format_mode: Optional[FormatMode] = None,
        max_widen: int = MIB,
    ) -> "GuardConfig":
        g = default_guard(policy) if guard is None else guard
        mode = format_mode or detect_format_mode(path)
        return cls(left_guard=g, right_guard=g, format_mode=mode, max_widen=max_widen)


def default_guard(policy: PolicySpec) -> int:
    return min(GUARD_CAP, max(64, max_pattern_extent(policy)))


def detect_format_mode(path: Union[str, Path]) -> FormatMode:
    return "LineAligned" if str(path).lower().endswith(LINE_ALIGNED_SUFFIXES) else "Raw"


def handle_seed(secret: bytes, st_dev: int, st_ino: int, open_counter: int) -> int:
    """64-bit seed from (mount secret, file identity, per-mount open counter)."""
    h = hashlib.blake2b(secret, digest_size=8)
    h.update(f"{st_dev}:{st_ino}:{open_counter}".encode("ascii"))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class GuardedChunk:
    file_offset: int
    data: bytes
    requested_range: Tuple[int, int]

    @property
    def end_offset(self) -> int:
        return self.file_offset + len(self.data)


@dataclass(eq=False)
class HandleState:
    fd: int
    file_id: Tuple[int, int]
    rng_seed: int
    ctx: TransformContext
    guard: GuardConfig = field(default_factory=GuardConfig)
    read_cache: Optional[Tuple[int, bytes]] = None
    write_base: int = 0
    write_buffer: bytearray = field(default_factory=bytearray)
    # Raw byte just before write_base (context for word boundaries).
    left_context: bytes = b""
    dirty: bool = False
    pending_error: Optional[OSError] = None
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    def invalidate_cache(self) -> None:
        self.read_cache = None


# ---------------------------------------------------------------------------
# Backing I/O
# ---------------------------------------------------------------------------


def pread_exact(fd: int, size: int, offset: int) -> bytes:
    chunks = []
    while size > 0:
        b = os.pread(fd, size, offset)
        if not b:
            break
        chunks.append(b)
        size -= len(b)
        offset += len(b)
    return b"".join(chunks)


def pwrite_all(fd: int, data: bytes, offset: int) -> None:
    view = memoryview(data)
    while view:
        n = os.pwrite(fd, view, offset)
        offset += n
        view = view[n:]


def _line_start(fd: int, lo: int, floor: int) -> int:
    pos = lo
    while pos > floor:
        n = min(_LINE_BLOCK, pos - floor)
        block = os.pread(fd, n, pos - n)
        idx = block.rfind(b"\n")
        if idx >= 0:
            return pos - n + idx + 1
        pos -= n
    return floor


def _line_end(fd: int, hi: int, ceil: int) -> int:
    if hi == 0 or hi >= ceil:
        return hi
    pos = hi - 1
    while pos < ceil:
        block = os.pread(fd, min(_LINE_BLOCK, ceil - pos), pos)
        if not block:
            return pos
        idx = block.find(b"\n")
        if idx >= 0:
            return pos + idx + 1
        pos += len(block)
    return ceil


def read_guarded_chunk(
    fd: int,
    start: int,
    end: int,
    left: int,
    right: int,
    file_size: int,
    format_mode: FormatMode = "Raw",
) -> GuardedChunk:
    lo, hi = guarded_bounds(start, end, left, right, file_size)
    if format_mode == "LineAligned":
        lo = _line_start(fd, lo, max(0, lo - GUARD_CAP))
        hi = _line_end(fd, hi, min(file_size, hi + GUARD_CAP))
    data = pread_exact(fd, hi - lo, lo)
    req_lo = start - lo
    req_hi = max(req_lo, min(end - lo, len(data)))
    return GuardedChunk(lo, data, (req_lo, req_hi))


# ---------------------------------------------------------------------------
# Read path
# ---------------------------------------------------------------------------


def _protect_range(h: HandleState, start: int, end: int, file_size: int, policy: PolicySpec, g: GuardConfig) -> bytes:
    step = max(1, max_pattern_extent(policy))
    left, right = g.left_guard, g.right_guard
    widened = 0
    grow = step
    while True:
        chunk = read_guarded_chunk(h.fd, start, end, left, right, file_size, g.format_mode)
        spans, pre, suf = scan_truncated(
            chunk.data,
            policy,
            left_open=chunk.file_offset > 0,
            right_open=chunk.end_offset < file_size,
        )
        lo, hi = resolved_range(len(chunk.data), pre, suf)
        req_lo, req_hi = chunk.requested_range
        need_left = lo > req_lo
        need_right = hi < req_hi
        if not (need_left or need_right):
            break
        if widened >= g.max_widen:
            level = logging.DEBUG if g.max_widen == 0 else logging.WARNING
            logger.log(level, "window [%d, %d) unresolved after widening by %d bytes; scanning it as-is", start, end, widened)
            spans = scan(chunk.data, policy)
            # Later reads inside this window get the same best-effort answer.
            lo, hi = 0, len(chunk.data)
            break
        # Doubling keeps a long alphabet run to a logarithmic number of rescans.
        grow = min(grow, g.max_widen - widened)
        if need_left:
            left = min(left + grow, start)
        if need_right:
            right += grow
        widened += grow
        grow *= 2

    data = apply(chunk.data, spans, policy, h.ctx, base_offset=chunk.file_offset)
    h.read_cache = (chunk.file_offset + lo, data[lo:hi])
    return data[req_lo:req_hi]


def protected_read(h: HandleState, offset: int, size: int, policy: PolicySpec, g: Optional[GuardConfig] = None) -> bytes:
    """
    Read [offset, offset+size) through the policy.

    Rules:
    - Pending writes on this handle are settled first.
    - do_read off (or no rules): raw bytes.
    - A read inside the cached window is served from the cache.
    - Otherwise each sub-window (at most `pipeline_bytes`) is read with guards,
      widened while a possible match touches the requested range from an
      unseen edge, transformed, and its resolved part cached.
    """
    if size <= 0:
        return b""
    if h.dirty:
        with h.lock:
            _drain(h, policy)
    if not policy.do_read or policy.is_empty:
        return pread_exact(h.fd, size, offset)
    g = g or h.guard

    with h.lock:
        file_size = os.fstat(h.fd).st_size
        end = min(offset + size, file_size)
        if offset >= end:
            return b""

        if h.read_cache is not None:
            c_off, c_data = h.read_cache
            if covers(c_off, c_off + len(c_data), offset, end):
                return c_data[offset - c_off:end - c_off]

        parts = []
        pos = offset
        while pos < end:
            sub_end = min(end, pos + g.pipeline_bytes)
            parts.append(_protect_range(h, pos, sub_end, file_size, policy, g))
            pos = sub_end
        return b"".join(parts)


# ---------------------------------------------------------------------------
# Write path
# ---------------------------------------------------------------------------


def _flush_prefix(h: HandleState, policy: PolicySpec, cut: int) -> None:
    ctx_len = len(h.left_context)
    chunk = h.left_context + bytes(h.write_buffer[:cut])
    # A match reaching back into bytes already stored is trimmed to the new part.
    spans = [s.trimmed(ctx_len) for s in scan(chunk, policy) if s.end > ctx_len]
    out = apply(chunk, spans, policy, h.ctx, base_offset=h.write_base - ctx_len)
    base = h.write_base
    h.left_context = bytes(h.write_buffer[cut - 1:cut])
    h.write_base += cut
    del h.write_buffer[:cut]
    pwrite_all(h.fd, out[ctx_len:], base)


def _flush_settled(h: HandleState, policy: PolicySpec, g: GuardConfig) -> None:
    buf = h.write_buffer
    extent = max_pattern_extent(policy)
    if g.format_mode == "LineAligned":
        limit = last_line_end(buf)
    else:
        limit = len(buf) - max(0, extent - 1)
    cut = sync_cut(buf, limit, compiled_for(policy).alphabet)
    if cut == 0 and len(buf) > g.write_buffer_limit:
        cut = max(1, len(buf) - max(0, extent - 1))
        logger.warning("write buffer at offset %d exceeded %d bytes without a safe cut; flushing %d bytes", h.write_base, g.write_buffer_limit, cut)
    if cut > 0:
        _flush_prefix(h, policy, cut)


def _stash(h: HandleState, err: OSError) -> None:
    logger.warning("deferred write error at offset %d: %s", h.write_base, err)
    if h.pending_error is None:
        h.pending_error = err


def _drain(h: HandleState, policy: PolicySpec) -> None:
    try:
        if h.write_buffer:
            _flush_prefix(h, policy, len(h.write_buffer))
    except OSError as e:
        _stash(h, e)
    h.dirty = False


def protected_write(h: HandleState, offset: int, data: bytes, policy: PolicySpec, g: Optional[GuardConfig] = None) -> int:
    """
    Accept a write. With do_write on, bytes are buffered and only the settled
    prefix (complete lines in LineAligned mode; everything but the last
    extent-1 bytes in Raw mode, cut where no match can straddle) is scanned,
    transformed and written. Backing-store errors surface on flush/close.
    """
    if not data:
        return 0
    if not policy.do_write or policy.is_empty:
        pwrite_all(h.fd, bytes(data), offset)
        h.invalidate_cache()
        return len(data)
    g = g or h.guard

    with h.lock:
        if h.write_buffer and offset != h.write_base + len(h.write_buffer):
            _drain(h, policy)
        if not h.write_buffer and offset != h.write_base:
            h.left_context = pread_exact(h.fd, 1, offset - 1) if offset > 0 else b""
            h.write_base = offset
        h.write_buffer += data
        h.dirty = True
        h.invalidate_cache()
        try:
            _flush_settled(h, policy, g)
        except OSError as e:
            _stash(h, e)
    return len(data)


def settle(h: HandleState, policy: PolicySpec) -> None:
    """Scan and write out everything still buffered; raise any deferred write error."""
    with h.lock:
        try:
            if h.write_buffer:
                _flush_prefix(h, policy, len(h.write_buffer))
        finally:
            h.dirty = False
        if h.pending_error is not None:
            err, h.pending_error = h.pending_error, None
            raise err


# ---------------------------------------------------------------------------
# One-shot transformer
# ---------------------------------------------------------------------------


def scrub_bytes(data: bytes, policy: PolicySpec, ctx: TransformContext) -> bytes:
    """Whole-buffer scan + transform, ignoring the do_read/do_write toggles."""
    return apply(data, scan(data, policy), policy, ctx, base_offset=0)
