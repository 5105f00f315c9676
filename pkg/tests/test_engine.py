from __future__ import annotations

import os
import random
from pathlib import Path
from typing import List

import pytest

import engine
from datagen import EMAIL_REGEX, ICD_REGEX, DatasetSpec, generate
from engine import (
    GuardConfig,
    HandleState,
    default_guard,
    detect_format_mode,
    handle_seed,
    protected_read,
    protected_write,
    read_guarded_chunk,
    scrub_bytes,
    settle,
)
from policy_io import empty_policy, validate_policy
from transform import TransformContext

RULES = [
    {"patterns": [{"type": "re", "spec": ICD_REGEX}], "transformation": {"type": "mask", "domain": "icd10"}},
    {"patterns": [{"type": "dict", "spec": ["RareKeyword", "FrequentKeyword"]}], "transformation": {"type": "redact", "char": "#"}},
    {"patterns": [{"type": "re", "spec": EMAIL_REGEX}], "transformation": {"type": "redact"}},
    {"patterns": [{"type": "re", "spec": r"\$(\d+\.\d{2})"}], "transformation": {"type": "diff_priv", "e": 0.5}},
]


def _policy(*, do_read: bool = True, do_write: bool = True, rules=None):
    return validate_policy({"do_read": do_read, "do_write": do_write, "rules": RULES if rules is None else rules})


def _dataset(rows: int = 120, seed: int = 4) -> bytes:
    return generate(DatasetSpec(rows=rows, seed=seed, p_icd=0.3, p_kw1=0.2, p_kw2=0.3, p_email=0.4))


def _handle(fd: int, policy, *, seed: int = 9, guard: int = 64, mode: str = "Raw", max_widen: int = 1024 * 1024) -> HandleState:
    g = GuardConfig(left_guard=guard, right_guard=guard, format_mode=mode, max_widen=max_widen)
    return HandleState(fd=fd, file_id=(0, 0), rng_seed=seed, ctx=TransformContext.for_policy(policy, rng_seed=seed), guard=g)


def _file(tmp_path: Path, data: bytes, name: str = "data.csv") -> Path:
    path = tmp_path / name
    path.write_bytes(data)
    return path


def test_defaults_follow_the_policy(tmp_path: Path) -> None:
    p = _policy()
    assert default_guard(p) == 1024
    assert default_guard(_policy(rules=[RULES[0]])) == 64
    assert detect_format_mode("a/b/data.CSV") == "LineAligned"
    assert detect_format_mode("notes.txt") == "Raw"
    cfg = GuardConfig.for_file(tmp_path / "x.log", p, guard=16)
    assert (cfg.left_guard, cfg.right_guard, cfg.format_mode) == (16, 16, "LineAligned")


def test_handle_seed_depends_on_every_input() -> None:
    base = handle_seed(b"secret", 1, 2, 3)
    assert base == handle_seed(b"secret", 1, 2, 3)
    assert len({base, handle_seed(b"other", 1, 2, 3), handle_seed(b"secret", 9, 2, 3), handle_seed(b"secret", 1, 9, 3), handle_seed(b"secret", 1, 2, 9)}) == 5


def test_guarded_chunk_clamps_and_aligns(tmp_path: Path) -> None:
    path = _file(tmp_path, b"aaaa\nbbbb\ncccc\n")
    fd = os.open(path, os.O_RDONLY)
    try:
        raw = read_guarded_chunk(fd, 6, 8, 2, 2, 15)
        assert (raw.file_offset, raw.data, raw.requested_range) == (4, b"\nbbbb\n", (2, 4))
        lined = read_guarded_chunk(fd, 6, 8, 0, 0, 15, "LineAligned")
        assert (lined.file_offset, lined.data, lined.requested_range) == (5, b"bbbb\n", (1, 3))
        edge = read_guarded_chunk(fd, 0, 3, 10, 100, 15)
        assert (edge.file_offset, len(edge.data)) == (0, 15)
    finally:
        os.close(fd)


@pytest.mark.parametrize("mode", ["Raw", "LineAligned"])
def test_random_reads_match_the_whole_file_oracle(tmp_path: Path, mode: str) -> None:
    data = _dataset()
    path = _file(tmp_path, data)
    p = _policy()
    rng = random.Random(17)
    fd = os.open(path, os.O_RDONLY)
    try:
        for case in range(120):
            seed = rng.randint(0, 2**32)
            oracle = scrub_bytes(data, p, TransformContext.for_policy(p, rng_seed=seed))
            h = _handle(fd, p, seed=seed, guard=rng.choice([0, 4, 64, 1024]), mode=mode)
            # A few reads per handle so the window cache is exercised too.
            for _ in range(3):
                offset = rng.randint(0, len(data))
                size = rng.randint(1, 600)
                got = protected_read(h, offset, size, p)
                assert got == oracle[offset : offset + size], (case, offset, size)
    finally:
        os.close(fd)


@pytest.mark.parametrize("guard", [0, 1, 16, 64, 4096])
def test_sequential_reads_are_guard_independent(tmp_path: Path, guard: int) -> None:
    data = _dataset(rows=60, seed=8)
    path = _file(tmp_path, data, "data.bin")
    p = _policy()
    oracle = scrub_bytes(data, p, TransformContext.for_policy(p, rng_seed=1))
    fd = os.open(path, os.O_RDONLY)
    try:
        h = _handle(fd, p, seed=1, guard=guard)
        parts: List[bytes] = []
        pos = 0
        while pos < len(data):
            parts.append(protected_read(h, pos, 37, p))
            pos += 37
    finally:
        os.close(fd)
    assert b"".join(parts) == oracle


def test_fixed_guard_without_widening_can_leak(tmp_path: Path) -> None:
    data = b"xx vanessa36@cox-mata.net yy\n"
    path = _file(tmp_path, data, "leak.txt")
    p = _policy(rules=[RULES[2]])
    fd = os.open(path, os.O_RDONLY)
    try:
        h = _handle(fd, p, guard=0, max_widen=0)
        leaked = protected_read(h, 0, 10, p) + protected_read(h, 10, 100, p)
        h = _handle(fd, p, guard=0)
        safe = protected_read(h, 0, 10, p) + protected_read(h, 10, 100, p)
    finally:
        os.close(fd)
    assert b"vanessa" in leaked
    assert safe == b"xx " + b"*" * 22 + b" yy\n"


def test_disabled_and_empty_policies_pass_bytes_through(tmp_path: Path) -> None:
    data = _dataset(rows=10)
    path = _file(tmp_path, data)
    fd = os.open(path, os.O_RDONLY)
    try:
        for p in (empty_policy(), _policy(do_read=False)):
            h = _handle(fd, p)
            assert protected_read(h, 0, len(data) + 10, p) == data
        assert protected_read(_handle(fd, _policy()), len(data), 10, _policy()) == b""
        assert protected_read(_handle(fd, _policy()), 0, 0, _policy()) == b""
    finally:
        os.close(fd)


def _write_in_pieces(path: Path, content: bytes, pieces: List[int], p, *, seed: int, mode: str) -> None:
    fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
    try:
        h = _handle(fd, p, seed=seed, mode=mode)
        pos = 0
        for n in pieces:
            assert protected_write(h, pos, content[pos : pos + n], p) == len(content[pos : pos + n])
            pos += n
        settle(h, p)
    finally:
        os.close(fd)


def _random_pieces(rng: random.Random, total: int) -> List[int]:
    out: List[int] = []
    left = total
    while left > 0:
        n = min(left, rng.choice([1, 3, 10, 64, 500, 4096]))
        out.append(n)
        left -= n
    return out


@pytest.mark.parametrize("mode", ["Raw", "LineAligned"])
def test_random_write_splits_match_the_whole_file_oracle(tmp_path: Path, mode: str) -> None:
    p = _policy(do_read=False)
    rng = random.Random(23)
    for case in range(100):
        content = _dataset(rows=rng.randint(1, 40), seed=case)
        seed = rng.randint(0, 2**32)
        oracle = scrub_bytes(content, p, TransformContext.for_policy(p, rng_seed=seed))
        path = tmp_path / f"out{case}.csv"
        _write_in_pieces(path, content, _random_pieces(rng, len(content)), p, seed=seed, mode=mode)
        assert path.read_bytes() == oracle, case


def test_field_by_field_writes_redact_a_split_email(tmp_path: Path) -> None:
    p = _policy(do_read=False, rules=[RULES[2]])
    path = tmp_path / "fields.csv"
    fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
    try:
        h = _handle(fd, p, mode="LineAligned")
        pos = 0
        for piece in (b"vanessa36@", b"cox-mata.net", b"\n"):
            protected_write(h, pos, piece, p)
            pos += len(piece)
        settle(h, p)
    finally:
        os.close(fd)
    assert path.read_bytes() == b"*" * 22 + b"\n"


def test_read_after_write_on_the_same_handle_sees_settled_bytes(tmp_path: Path) -> None:
    p = _policy(do_read=False, rules=[RULES[2]])
    path = tmp_path / "rw.txt"
    fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
    try:
        h = _handle(fd, p)
        protected_write(h, 0, b"to: someone@example.com", p)
        assert h.dirty
        # do_read is off, so the read returns stored bytes; they must be settled first.
        assert protected_read(h, 0, 100, p) == b"to: " + b"*" * 19
        assert not h.dirty
    finally:
        os.close(fd)


def test_non_sequential_write_drains_the_buffer(tmp_path: Path) -> None:
    p = _policy(do_read=False, rules=[RULES[2]])
    path = _file(tmp_path, b"." * 40, "patch.txt")
    fd = os.open(path, os.O_RDWR)
    try:
        h = _handle(fd, p)
        protected_write(h, 0, b"a@bc.de", p)
        protected_write(h, 20, b"x@yz.io", p)
        settle(h, p)
    finally:
        os.close(fd)
    assert path.read_bytes() == b"*" * 7 + b"." * 13 + b"*" * 7 + b"." * 13


def test_settle_is_idempotent(tmp_path: Path) -> None:
    p = _policy(do_read=False)
    content = _dataset(rows=5)
    path = tmp_path / "s.csv"
    fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
    try:
        h = _handle(fd, p)
        protected_write(h, 0, content, p)
        settle(h, p)
        first = path.read_bytes()
        settle(h, p)
        settle(h, p)
    finally:
        os.close(fd)
    assert path.read_bytes() == first
    assert len(first) == len(content)


def test_write_errors_are_deferred_to_settle() -> None:
    p = _policy(do_read=False, rules=[{"patterns": [{"type": "re", "spec": r"\d+"}], "transformation": {"type": "redact"}}])
    r, w = os.pipe()
    try:
        h = _handle(w, p, mode="LineAligned")
        # The complete line is flushed at once; pwrite on a pipe fails.
        assert protected_write(h, 0, b"123 abc\n", p) == 8
        assert h.pending_error is not None
        with pytest.raises(OSError):
            settle(h, p)
        settle(h, p)
    finally:
        os.close(r)
        os.close(w)


def test_disabled_write_path_writes_through(tmp_path: Path) -> None:
    p = _policy(do_write=False)
    path = tmp_path / "plain.csv"
    content = _dataset(rows=5)
    fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
    try:
        h = _handle(fd, p)
        protected_write(h, 0, content, p)
        assert not h.dirty
    finally:
        os.close(fd)
    assert path.read_bytes() == content


def test_long_alphabet_run_widens_in_few_steps_and_is_cached(tmp_path: Path, monkeypatch) -> None:
    data = b"a" * (3 * 1024 * 1024)
    path = _file(tmp_path, data, "run.txt")
    p = _policy(rules=[{"patterns": [{"type": "re", "spec": "[a-z]+@[a-z]+"}], "transformation": {"type": "redact"}}])
    calls: List[int] = []
    real = engine.read_guarded_chunk

    def counting(*args, **kwargs):
        calls.append(1)
        return real(*args, **kwargs)

    monkeypatch.setattr(engine, "read_guarded_chunk", counting)
    fd = os.open(path, os.O_RDONLY)
    try:
        h = _handle(fd, p)
        start = 1024 * 1024
        assert protected_read(h, start, 4096, p) == data[start : start + 4096]
        # 1 MiB of widening from 1 KiB steps that double.
        assert len(calls) <= 13
        first = len(calls)
        assert protected_read(h, start + 4096, 4096, p) == data[start + 4096 : start + 8192]
        assert protected_read(h, start - 8192, 4096, p) == data[start - 8192 : start - 4096]
        assert len(calls) == first
    finally:
        os.close(fd)
