from __future__ import annotations

import bisect
import logging
import warnings
from dataclasses import dataclass
from typing import FrozenSet, List, Optional, Tuple, Union

import ahocorasick
import re2

from policy_models import DictPattern, PolicySpec, RegexPattern
from spans import MatchSpan, priority_key

try:
    from re import _constants as sre_constants
    from re import _parser as sre_parse
except ImportError:  # Python < 3.11
    import sre_constants  # type: ignore[no-redef]
    import sre_parse  # type: ignore[no-redef]

logger = logging.getLogger(__name__)

ALL_BYTES: FrozenSet[int] = frozenset(range(256))
_DIGITS = frozenset(b"0123456789")
_WORD = frozenset(b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")
_SPACE = frozenset(b" \t\n\r\f\v")

# Raw (start, end, capture) hit, before clipping.
_Hit = Tuple[int, int, Optional[Tuple[int, int]]]


class PatternCompileError(ValueError):
    def __init__(self, rule_index: int, pattern_index: int, message: str):
        super().__init__(message)
        self.rule_index = rule_index
        self.pattern_index = pattern_index


def _re2_options(case_sensitive: bool = True) -> "re2.Options":
    opts = re2.Options()
    # Bytes patterns require Latin-1 mode; every byte is one character.
    opts.encoding = re2.Options.Encoding.LATIN1
    opts.longest_match = True
    opts.log_errors = False
    opts.case_sensitive = case_sensitive
    return opts


# ---------------------------------------------------------------------------
# Static analysis of regex patterns (width bound + byte alphabet)
# ---------------------------------------------------------------------------


def _category_bytes(code) -> Optional[FrozenSet[int]]:
    table = {
        sre_constants.CATEGORY_DIGIT: _DIGITS,
        sre_constants.CATEGORY_NOT_DIGIT: ALL_BYTES - _DIGITS,
        sre_constants.CATEGORY_WORD: _WORD,
        sre_constants.CATEGORY_NOT_WORD: ALL_BYTES - _WORD,
        sre_constants.CATEGORY_SPACE: _SPACE,
        sre_constants.CATEGORY_NOT_SPACE: ALL_BYTES - _SPACE,
    }
    return table.get(code)


def _class_bytes(items) -> Optional[FrozenSet[int]]:
    acc: set = set()
    negate = False
    for op, av in items:
        if op == sre_constants.NEGATE:
            negate = True
        elif op == sre_constants.LITERAL:
            acc.add(av)
        elif op == sre_constants.RANGE:
            acc.update(range(av[0], av[1] + 1))
        elif op == sre_constants.CATEGORY:
            cat = _category_bytes(av)
            if cat is None:
                return None
            acc |= cat
        else:
            return None
    acc = {b for b in acc if b < 256}
    return frozenset(ALL_BYTES - acc) if negate else frozenset(acc)


class _AlphabetWalk:
    def __init__(self, dotall: bool, ignorecase: bool):
        self.acc: set = set()
        self.dotall = dotall
        self.ignorecase = ignorecase
        self.unknown = False

    def walk(self, items) -> None:
        for op, av in items:
            if self.unknown:
                return
            if op == sre_constants.LITERAL:
                self.acc.add(av)
            elif op == sre_constants.NOT_LITERAL:
                self.acc |= ALL_BYTES - {av}
            elif op == sre_constants.ANY:
                self.acc |= ALL_BYTES if self.dotall else ALL_BYTES - {10}
            elif op == sre_constants.IN:
                cls = _class_bytes(av)
                if cls is None:
                    self.unknown = True
                    return
                self.acc |= cls
            elif op == sre_constants.AT:
                continue
            elif op == sre_constants.SUBPATTERN:
                add_flags = av[1]
                if add_flags & sre_constants.SRE_FLAG_IGNORECASE:
                    self.ignorecase = True
                if add_flags & sre_constants.SRE_FLAG_DOTALL:
                    self.dotall = True
                self.walk(av[-1])
            elif op == sre_constants.BRANCH:
                for branch in av[1]:
                    self.walk(branch)
            elif op in (sre_constants.MAX_REPEAT, sre_constants.MIN_REPEAT) or op.name == "POSSESSIVE_REPEAT":
                self.walk(av[2])
            elif op.name == "ATOMIC_GROUP":
                self.walk(av)
            else:
                self.unknown = True


def _parse(pattern: str):
    # The pattern is compiled as UTF-8 bytes in Latin-1 mode, so analyse the
    # same byte sequence: one parser character per byte.
    text = pattern.encode("utf-8").decode("latin-1")
    if "[:" in text or "\\p" in text or "\\P" in text:
        # POSIX classes / Unicode properties are RE2 syntax the stdlib parser misreads.
        return None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return sre_parse.parse(text, 0)
    except Exception:  # noqa: BLE001 - anything unparseable is "unbounded, any byte"
        return None


def regex_extent(pattern: str, cap: int) -> int:
    """Upper bound on the byte length of any match, clamped to `cap`."""
    parsed = _parse(pattern)
    if parsed is None:
        return cap
    _, hi = parsed.getwidth()
    if hi >= sre_constants.MAXREPEAT:
        return cap
    return max(1, min(int(hi), cap))


def _fold_case(acc: FrozenSet[int]) -> FrozenSet[int]:
    out = set(acc)
    for b in acc:
        ch = chr(b)
        for variant in (ch.lower(), ch.upper()):
            if len(variant) == 1 and ord(variant) < 256:
                out.add(ord(variant))
    return frozenset(out)


def regex_alphabet(pattern: str) -> FrozenSet[int]:
    """
    Superset of the bytes any match of `pattern` can contain.

    Zero-width assertions contribute nothing. Constructs the analysis does not
    understand widen the result to every byte.
    """
    parsed = _parse(pattern)
    if parsed is None:
        return ALL_BYTES
    flags = parsed.state.flags
    walk = _AlphabetWalk(
        dotall=bool(flags & sre_constants.SRE_FLAG_DOTALL),
        ignorecase=bool(flags & sre_constants.SRE_FLAG_IGNORECASE),
    )
    walk.walk(parsed)
    if walk.unknown:
        return ALL_BYTES
    acc = frozenset(walk.acc)
    return _fold_case(acc) if walk.ignorecase else acc


def _is_word_byte(b: int) -> bool:
    return b in _WORD


# ---------------------------------------------------------------------------
# Compiled matchers
# ---------------------------------------------------------------------------


class _RegexCursor:
    def __init__(self, regex, buffer: bytes, has_capture: bool):
        self._regex = regex
        self._buffer = buffer
        self._has_capture = has_capture

    def next_at_or_after(self, pos: int) -> Optional[_Hit]:
        n = len(self._buffer)
        while pos <= n:
            m = self._regex.search(self._buffer, pos, n)
            if m is None:
                return None
            start, end = m.span()
            if end == start:
                # Empty matches are never reported; retry past them.
                pos = start + 1
                continue
            capture = None
            if self._has_capture:
                c0, c1 = m.span(1)
                if c0 >= 0 and c1 > c0:
                    capture = (c0, c1)
            return start, end, capture
        return None


class RegexMatcher:
    def __init__(self, pattern: str, cap: int):
        try:
            self.regex = re2.compile(pattern.encode("utf-8"), _re2_options())
        except re2.error as e:
            raise ValueError(f"not accepted by the linear-time engine: {e}") from e
        self.pattern = pattern
        self.extent = regex_extent(pattern, cap)
        self.alphabet = regex_alphabet(pattern)
        self._has_capture = self.regex.groups >= 1

    def cursor(self, buffer: bytes) -> _RegexCursor:
        return _RegexCursor(self.regex, buffer, self._has_capture)


class _DictionaryCursor:
    def __init__(self, hits: List[_Hit]):
        self._hits = hits
        self._starts = [h[0] for h in hits]

    def next_at_or_after(self, pos: int) -> Optional[_Hit]:
        i = bisect.bisect_left(self._starts, pos)
        if i >= len(self._hits):
            return None
        return self._hits[i]


class DictionaryMatcher:
    """
    All terms of one lookup table in a single Aho-Corasick automaton.

    The automaton runs over the Latin-1 view of the raw bytes so that indices
    are byte offsets. Case-insensitive tables fold ASCII on both sides.
    """

    def __init__(self, terms: List[str], *, case_sensitive: bool, word_boundary: bool, cap: int):
        self.case_sensitive = case_sensitive
        self.word_boundary = word_boundary
        self.automaton = ahocorasick.Automaton()
        encoded = []
        for term in terms:
            raw = term.encode("utf-8")
            if not case_sensitive:
                raw = raw.lower()
            encoded.append(raw)
            key = raw.decode("latin-1")
            self.automaton.add_word(key, (len(raw), raw[0], raw[-1]))
        self.automaton.make_automaton()
        self.extent = min(max(len(t) for t in encoded), cap)
        alphabet = frozenset(b for t in encoded for b in t)
        self.alphabet = alphabet if case_sensitive else frozenset(alphabet | {b for b in bytes(alphabet).upper()})

    def _boundary_ok(self, buffer: bytes, start: int, end: int, first: int, last: int) -> bool:
        if _is_word_byte(first) and start > 0 and _is_word_byte(buffer[start - 1]):
            return False
        if _is_word_byte(last) and end < len(buffer) and _is_word_byte(buffer[end]):
            return False
        return True

    def cursor(self, buffer: bytes) -> _DictionaryCursor:
        haystack = buffer if self.case_sensitive else buffer.lower()
        best: dict = {}
        for end_index, (length, first, last) in self.automaton.iter(haystack.decode("latin-1")):
            end = end_index + 1
            start = end - length
            if self.word_boundary and not self._boundary_ok(buffer, start, end, first, last):
                continue
            if end > best.get(start, -1):
                best[start] = end
        hits: List[_Hit] = [(s, best[s], None) for s in sorted(best)]
        return _DictionaryCursor(hits)


Matcher = Union[RegexMatcher, DictionaryMatcher]


@dataclass(frozen=True)
class CompiledPattern:
    rule_index: int
    pattern_index: int
    matcher: Matcher


@dataclass(frozen=True)
class CompiledPolicy:
    patterns: Tuple[CompiledPattern, ...]
    extent: int
    alphabet: bytes
    cap: int


def compile_policy(policy: PolicySpec, max_match_bytes: int) -> CompiledPolicy:
    """
    Compile every pattern of every rule.

    Raises PatternCompileError carrying the (rule, pattern) position of the first
    pattern the linear-time engine rejects.
    """
    compiled: List[CompiledPattern] = []
    for i, rule in enumerate(policy.rules):
        for j, pattern in enumerate(rule.patterns):
            if isinstance(pattern, RegexPattern):
                try:
                    matcher: Matcher = RegexMatcher(pattern.spec, max_match_bytes)
                except ValueError as e:
                    raise PatternCompileError(i, j, str(e)) from e
            elif isinstance(pattern, DictPattern):
                matcher = DictionaryMatcher(
                    pattern.spec,
                    case_sensitive=pattern.case_sensitive,
                    word_boundary=pattern.word_boundary,
                    cap=max_match_bytes,
                )
            else:  # pragma: no cover - the discriminated union forbids this
                raise PatternCompileError(i, j, f"unsupported pattern type {type(pattern).__name__}")
            compiled.append(CompiledPattern(i, j, matcher))

    extent = max((c.matcher.extent for c in compiled), default=0)
    alphabet: set = set()
    for c in compiled:
        alphabet |= c.matcher.alphabet
    return CompiledPolicy(tuple(compiled), extent, bytes(sorted(alphabet)), max_match_bytes)


def compiled_for(policy: PolicySpec) -> CompiledPolicy:
    if policy.compiled is None:
        policy._compiled = compile_policy(policy, policy.max_match_bytes)
    return policy.compiled


# ---------------------------------------------------------------------------
# Scanning
# ---------------------------------------------------------------------------


def scan(buffer: bytes, policy: PolicySpec) -> List[MatchSpan]:
    """
    All matches of the policy in `buffer`, leftmost-first, then longest, then
    lowest rule index. Returned spans are sorted and pairwise disjoint.
    """
    compiled = compiled_for(policy)
    if not buffer or not compiled.patterns:
        return []

    cursors = [c.matcher.cursor(buffer) for c in compiled.patterns]
    heads: List[Optional[MatchSpan]] = []
    for c, cur in zip(compiled.patterns, cursors):
        heads.append(_to_span(cur.next_at_or_after(0), c, compiled.cap))

    out: List[MatchSpan] = []
    pos = 0
    while True:
        best: Optional[MatchSpan] = None
        for k, head in enumerate(heads):
            if head is None:
                continue
            if head.start < pos:
                head = _to_span(cursors[k].next_at_or_after(pos), compiled.patterns[k], compiled.cap)
                heads[k] = head
                if head is None:
                    continue
            if best is None or priority_key(head) < priority_key(best):
                best = head
        if best is None:
            return out
        out.append(best)
        pos = best.end


def _to_span(hit: Optional[_Hit], c: CompiledPattern, cap: int) -> Optional[MatchSpan]:
    if hit is None:
        return None
    start, end, capture = hit
    return MatchSpan(start, end, c.rule_index, c.pattern_index, capture).clipped(cap)


def edge_runs(buffer: bytes, policy: PolicySpec, left_open: bool, right_open: bool) -> Tuple[int, int]:
    """
    Lengths of the runs of match-alphabet bytes touching each open edge.

    No match can contain a byte outside the alphabet, so the first such byte
    seen from an edge is a point where leftmost-first selection restarts
    identically no matter what lies beyond the edge.
    """
    alphabet = compiled_for(policy).alphabet
    if not alphabet or not buffer:
        return 0, 0
    pre = len(buffer) - len(buffer.lstrip(alphabet)) if left_open else 0
    suf = len(buffer) - len(buffer.rstrip(alphabet)) if right_open else 0
    return pre, suf


def scan_truncated(
    buffer: bytes,
    policy: PolicySpec,
    left_open: bool,
    right_open: bool,
) -> Tuple[List[MatchSpan], int, int]:
    """
    Scan a window of a larger stream.

    Returns (spans, unresolved_prefix_len, unresolved_suffix_len). Only spans
    lying entirely inside [prefix, len - suffix) are returned; those agree
    exactly with a scan of the whole stream. When the unresolved runs meet
    (the whole window is alphabet bytes) nothing is resolved.
    """
    pre, suf = edge_runs(buffer, policy, left_open, right_open)
    if pre == 0 and suf == 0:
        return scan(buffer, policy), 0, 0
    limit = len(buffer) - suf
    if pre >= limit:
        return [], pre, suf
    spans = [s for s in scan(buffer, policy) if s.start >= pre and s.end <= limit]
    return spans, pre, suf


def guarded_split_scan(
    buffer: bytes,
    policy: PolicySpec,
    split: int,
    guard: int,
    *,
    widen: bool = True,
) -> List[MatchSpan]:
    """
    Scan `buffer` as two overlapping windows [0, split+g) and [split-g, len)
    and merge the results.

    widen=False is the fixed-guard scheme: spans starting before `split` come
    from the first window, the rest from the second. A match longer than the
    guard that straddles `split` can be missed.

    widen=True grows both guards by the policy's extent until the first window's
    resolved end reaches the second window's resolved start; the merge is then
    exact for any split.
    """
    n = len(buffer)
    split = max(0, min(split, n))
    if not widen:
        w1_end = min(n, split + guard)
        first = [s for s in scan(buffer[:w1_end], policy) if s.start < split]
        w2_start = max(0, split - guard)
        last_end = first[-1].end if first else 0
        second = [
            s.shifted(w2_start)
            for s in scan(buffer[w2_start:], policy)
            if s.start + w2_start >= max(split, last_end)
        ]
        return first + second

    step = max(1, compiled_for(policy).extent)
    g = guard
    while True:
        w1_end = min(n, split + g)
        w2_start = max(0, split - g)
        spans1, _, suf1 = scan_truncated(buffer[:w1_end], policy, False, w1_end < n)
        spans2, pre2, _ = scan_truncated(buffer[w2_start:], policy, w2_start > 0, False)
        resolved_end = w1_end - suf1
        resolved_start = w2_start + pre2
        if resolved_end >= resolved_start:
            merged = [s for s in spans1 if s.end <= resolved_start]
            merged.extend(s.shifted(w2_start) for s in spans2)
            return merged
        g += step
