from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple


@dataclass(frozen=True)
class MatchSpan:
    start: int
    end: int  # exclusive
    rule_index: int
    pattern_index: int
    # Sub-span of the first capture group, in the same coordinates as start/end.
    capture: Optional[Tuple[int, int]] = None

    @property
    def length(self) -> int:
        return self.end - self.start

    def shifted(self, delta: int) -> "MatchSpan":
        capture = None
        if self.capture is not None:
            capture = (self.capture[0] + delta, self.capture[1] + delta)
        return replace(self, start=self.start + delta, end=self.end + delta, capture=capture)

    def clipped(self, cap: int) -> "MatchSpan":
        """Clip to at most `cap` bytes; a capture that no longer fits is dropped."""
        if self.length <= cap:
            return self
        end = self.start + cap
        capture = self.capture
        if capture is not None:
            lo, hi = capture
            capture = (lo, min(hi, end)) if lo < end else None
        return replace(self, end=end, capture=capture)

    def trimmed(self, lo: int) -> "MatchSpan":
        """Drop the part before `lo`; a capture starting before `lo` is dropped too."""
        if self.start >= lo:
            return self
        capture = self.capture if self.capture is not None and self.capture[0] >= lo else None
        return replace(self, start=lo, capture=capture)


def priority_key(span: MatchSpan) -> Tuple[int, int, int, int]:
    # Leftmost, then longest, then lowest rule, then lowest pattern.
    return (span.start, -span.length, span.rule_index, span.pattern_index)


def resolve_overlaps(candidates: Iterable[MatchSpan]) -> List[MatchSpan]:
    """
    Deterministic leftmost-first selection over an explicit candidate list.

    Rules:
    - Candidates are ordered by (start, -length, rule_index, pattern_index).
    - A candidate is kept when it starts at or after the end of the last kept span.
    - Zero-length candidates are ignored.

    The matcher reaches the same result lazily (one pending match per pattern);
    this eager form is the reference used when every hit is already known.
    """
    out: List[MatchSpan] = []
    last_end = 0
    for span in sorted(candidates, key=priority_key):
        if span.length <= 0:
            continue
        if span.start >= last_end:
            out.append(span)
            last_end = span.end
    return out


def count_by_rule(spans: Iterable[MatchSpan], rule_count: int) -> List[int]:
    counts = [0] * rule_count
    for s in spans:
        counts[s.rule_index] += 1
    return counts


def validate_disjoint(spans: Iterable[MatchSpan], length: int, *, cap: Optional[int] = None) -> Tuple[bool, str]:
    """
    Utility for tests/debug: confirms spans are sorted, disjoint, in bounds, and
    that every capture lies inside its span.

    Returns (ok, message).
    """
    prev: Optional[MatchSpan] = None
    for s in spans:
        if not 0 <= s.start < s.end <= length:
            return False, f"Span out of bounds: [{s.start}, {s.end}) for length {length}"
        if cap is not None and s.length > cap:
            return False, f"Span [{s.start}, {s.end}) longer than cap {cap}"
        if s.capture is not None and not s.start <= s.capture[0] <= s.capture[1] <= s.end:
            return False, f"Capture {s.capture} outside span [{s.start}, {s.end})"
        if prev is not None and prev.end > s.start:
            return False, f"Overlap detected: [{prev.start}, {prev.end}) vs [{s.start}, {s.end})"
        prev = s
    return True, "ok"
