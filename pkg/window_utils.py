from __future__ import annotations

from typing import Optional, Tuple

KIB = 1024
MIB = 1024 * KIB


def guarded_bounds(start: int, end: int, left: int, right: int, file_size: int) -> Tuple[int, int]:
    """
    File range [lo, hi) of a guarded window around the request [start, end).
    Clamped to [0, file_size].
    """
    lo = max(0, start - left)
    hi = min(file_size, end + right)
    return lo, max(lo, hi)


def covers(cached_lo: int, cached_hi: int, lo: int, hi: int) -> bool:
    return cached_lo <= lo and hi <= cached_hi


def resolved_range(length: int, unresolved_prefix: int, unresolved_suffix: int) -> Tuple[int, int]:
    """Buffer-relative [lo, hi) whose scan result is final; empty when the runs meet."""
    lo = unresolved_prefix
    hi = length - unresolved_suffix
    return lo, max(lo, hi)


def sync_cut(data: bytes, limit: int, alphabet: bytes) -> int:
    """
    Largest cut c <= limit such that data[c-1] is outside `alphabet`
    (0 when there is none). A prefix ending on such a byte can be scanned
    on its own without changing any match.
    """
    limit = max(0, min(limit, len(data)))
    if not alphabet:
        return limit
    head = data[:limit]
    return len(head.rstrip(alphabet))


def last_line_end(data: bytes, limit: Optional[int] = None) -> int:
    """Index just past the last newline in data[:limit], or 0."""
    idx = data.rfind(b"\n", 0, len(data) if limit is None else limit)
    return idx + 1
