from __future__ import annotations

import errno
import io
import os
import random
import stat
from pathlib import Path
from typing import List, Tuple

import pytest
from pydantic import ValidationError

from datagen import EMAIL_REGEX
from policy_io import validate_policy
from vfs import BackingStore, MountConfig, PathEscape, Vfs

EMAIL_POLICY = {
    "do_read": True,
    "do_write": True,
    "rules": [{"patterns": [{"type": "re", "spec": EMAIL_REGEX}], "transformation": {"type": "redact"}}],
}


def _vfs(root: Path, mnt: Path, fs_type: str = "loopback", policy=None, **kwargs) -> Vfs:
    cfg = MountConfig(fs_type=fs_type, root=root, mountpoint=mnt, **kwargs)
    return Vfs(cfg, policy=policy)


def test_mount_config_validates_directories(tmp_path: Path, mount_dirs) -> None:
    root, mnt = mount_dirs
    with pytest.raises(ValidationError):
        MountConfig(fs_type="dlpfs", root=root / "missing", mountpoint=mnt)
    inner = root / "inner"
    inner.mkdir()
    with pytest.raises(ValidationError):
        MountConfig(fs_type="dlpfs", root=root, mountpoint=inner)
    with pytest.raises(ValidationError):
        MountConfig(fs_type="dlpfs", root=root, mountpoint=mnt, policy_path=tmp_path / "none.json")
    with pytest.raises(ValidationError):
        MountConfig(fs_type="ntfs", root=root, mountpoint=mnt)


def _outcome(fn):
    try:
        return ("ok", fn())
    except OSError as e:
        return ("err", e.errno)


class _Reference:
    """The same operations applied directly to a host directory."""

    def __init__(self, base: Path):
        self.base = base

    def p(self, name: str) -> str:
        return str(self.base / name)

    def write(self, name: str, offset: int, data: bytes) -> int:
        fd = os.open(self.p(name), os.O_RDWR | os.O_CREAT, 0o644)
        try:
            return os.pwrite(fd, data, offset)
        finally:
            os.close(fd)

    def read(self, name: str, offset: int, size: int) -> bytes:
        fd = os.open(self.p(name), os.O_RDONLY)
        try:
            return os.pread(fd, size, offset)
        finally:
            os.close(fd)

    def truncate(self, name: str, length: int) -> None:
        os.truncate(self.p(name), length)

    def unlink(self, name: str) -> None:
        os.unlink(self.p(name))

    def rename(self, old: str, new: str) -> None:
        os.rename(self.p(old), self.p(new))

    def mkdir(self, name: str) -> None:
        os.mkdir(self.p(name), 0o755)

    def rmdir(self, name: str) -> None:
        os.rmdir(self.p(name))

    def listdir(self, name: str) -> List[str]:
        return sorted(os.listdir(self.p(name)))

    def stat(self, name: str) -> Tuple[int, bool]:
        st = os.lstat(self.p(name))
        return st.st_size, stat.S_ISDIR(st.st_mode)


class _ThroughVfs:
    def __init__(self, vfs: Vfs):
        self.vfs = vfs

    def write(self, name: str, offset: int, data: bytes) -> int:
        fh = self.vfs.fs_create("/" + name, 0o644, os.O_RDWR | os.O_CREAT)
        try:
            return self.vfs.fs_write(fh, offset, data)
        finally:
            self.vfs.fs_release(fh)

    def read(self, name: str, offset: int, size: int) -> bytes:
        fh = self.vfs.fs_open("/" + name, os.O_RDONLY)
        try:
            return self.vfs.fs_read(fh, offset, size)
        finally:
            self.vfs.fs_release(fh)

    def truncate(self, name: str, length: int) -> None:
        self.vfs.fs_truncate("/" + name, length)

    def unlink(self, name: str) -> None:
        self.vfs.fs_unlink("/" + name)

    def rename(self, old: str, new: str) -> None:
        self.vfs.fs_rename("/" + old, "/" + new)

    def mkdir(self, name: str) -> None:
        self.vfs.fs_mkdir("/" + name, 0o755)

    def rmdir(self, name: str) -> None:
        self.vfs.fs_rmdir("/" + name)

    def listdir(self, name: str) -> List[str]:
        entries = self.vfs.fs_readdir("/" + name)
        assert entries[:2] == [".", ".."]
        return entries[2:]

    def stat(self, name: str) -> Tuple[int, bool]:
        st = self.vfs.fs_getattr("/" + name)
        return st["st_size"], stat.S_ISDIR(st["st_mode"])


@pytest.mark.parametrize("fs_type", ["loopback", "dlpfs"])
def test_passthrough_matches_the_host_filesystem(tmp_path: Path, mount_dirs, fs_type: str) -> None:
    root, mnt = mount_dirs
    ref_dir = tmp_path / "ref"
    ref_dir.mkdir()
    # dlpfs with its default (empty) policy must behave exactly like loopback.
    model = _ThroughVfs(_vfs(root, mnt, fs_type))
    ref = _Reference(ref_dir)

    files = ["a", "b", "d/c"]
    rng = random.Random(1000)
    for step in range(1000):
        op = rng.choice(["write", "read", "truncate", "unlink", "rename", "mkdir", "rmdir", "listdir", "stat"])
        if op == "write":
            args = (rng.choice(files), rng.randint(0, 64), bytes(rng.randrange(256) for _ in range(rng.randint(0, 48))))
        elif op == "read":
            args = (rng.choice(files), rng.randint(0, 80), rng.randint(0, 80))
        elif op == "truncate":
            args = (rng.choice(files), rng.randint(0, 100))
        elif op in ("unlink",):
            args = (rng.choice(files),)
        elif op == "rename":
            args = (rng.choice(files), rng.choice(files))
        elif op in ("mkdir", "rmdir"):
            args = ("d",)
        elif op == "listdir":
            args = (rng.choice(["", "d"]),)
        else:
            args = (rng.choice(files + ["d"]),)
        got = _outcome(lambda: getattr(model, op)(*args))
        want = _outcome(lambda: getattr(ref, op)(*args))
        assert got == want, (step, op, args)


def test_dlpfs_protects_reads_and_writes(mount_dirs) -> None:
    root, mnt = mount_dirs
    (root / "in.txt").write_bytes(b"mail me: vanessa36@cox-mata.net\n")
    v = _vfs(root, mnt, "dlpfs", policy=validate_policy(EMAIL_POLICY))

    with v.open_file("/in.txt") as f:
        assert f.read() == b"mail me: " + b"*" * 22 + b"\n"

    with v.open_file("/out.txt", "wb") as f:
        f.write(b"from vanessa36@")
        f.write(b"cox-mata.net")
        f.write(b" ok\n")
    assert (root / "out.txt").read_bytes() == b"from " + b"*" * 22 + b" ok\n"
    assert v.handles.ids() == []

    loop = _vfs(root, mnt, "loopback", policy=validate_policy(EMAIL_POLICY))
    with loop.open_file("/in.txt") as f:
        assert b"vanessa36" in f.read()


def test_policy_is_loaded_from_the_config(tmp_path: Path, mount_dirs) -> None:
    root, mnt = mount_dirs
    policy_file = tmp_path / "policy.json"
    policy_file.write_text('{"do_read": true, "do_write": false, "rules": [{"patterns": [{"type": "re", "spec": "secret"}], "transformation": {"type": "redact"}}]}')
    (root / "f.txt").write_bytes(b"a secret here")
    v = _vfs(root, mnt, "dlpfs", policy_path=policy_file, guard=8, format_mode="Raw")
    assert len(v.policy.rules) == 1
    with v.open_file("/f.txt", buffering=0) as f:
        assert f.read() == b"a ****** here"


def test_raw_file_object_seeks_and_reads(mount_dirs) -> None:
    root, mnt = mount_dirs
    (root / "x.bin").write_bytes(bytes(range(100)))
    v = _vfs(root, mnt, "dlpfs")
    f = v.open_file("/x.bin", buffering=0)
    assert isinstance(f, io.RawIOBase)
    assert f.seek(-10, io.SEEK_END) == 90
    assert f.read(5) == bytes(range(90, 95))
    f.seek(0)
    assert f.read(3) == b"\x00\x01\x02"
    f.close()
    with pytest.raises(ValueError):
        v.open_file("/x.bin", "a")


def test_metadata_operations_pass_through(mount_dirs) -> None:
    root, mnt = mount_dirs
    (root / "m.txt").write_bytes(b"12345")
    v = _vfs(root, mnt, "dlpfs")
    st = v.fs_getattr("/m.txt")
    assert st["st_size"] == 5
    v.fs_chmod("/m.txt", 0o600)
    assert stat.S_IMODE(os.lstat(root / "m.txt").st_mode) == 0o600
    v.fs_utimens("/m.txt", (1_000_000.0, 2_000_000.0))
    assert os.lstat(root / "m.txt").st_mtime == 2_000_000.0
    assert v.fs_statfs("/")["f_bsize"] > 0
    v.fs_access("/m.txt", os.R_OK)
    assert "m.txt" in v.fs_readdir("/")


def test_paths_cannot_escape_the_root(tmp_path: Path, mount_dirs) -> None:
    root, mnt = mount_dirs
    outside = tmp_path / "outside.txt"
    outside.write_bytes(b"host secret")
    os.symlink(str(outside), root / "abs_link")
    os.symlink("../outside.txt", root / "rel_link")
    os.symlink("sub/inner.txt", root / "ok_link")
    (root / "sub").mkdir()
    (root / "sub" / "inner.txt").write_bytes(b"inside")
    v = _vfs(root, mnt, "dlpfs")

    with pytest.raises(PathEscape):
        v.fs_getattr("/../outside.txt")
    for link in ("/abs_link", "/rel_link"):
        with pytest.raises(FileNotFoundError):
            v.fs_open(link)
        with pytest.raises(FileNotFoundError):
            v.fs_create(link, 0o644, os.O_WRONLY | os.O_CREAT | os.O_TRUNC)
        with pytest.raises(FileNotFoundError):
            v.open_file(link, "wb")
        assert v.fs_readlink(link).startswith(str(v.mountpoint))
    assert outside.read_bytes() == b"host secret"

    # Creating through a link that stays inside the root writes its target.
    os.symlink("sub/new.txt", root / "new_link")
    fh = v.fs_create("/new_link")
    v.fs_write(fh, 0, b"fresh")
    v.fs_release(fh)
    assert (root / "sub" / "new.txt").read_bytes() == b"fresh"
    assert (root / "new_link").is_symlink()
    assert v.fs_readlink("/ok_link") == os.path.join(v.mountpoint, "sub", "inner.txt")
    with v.open_file("/ok_link") as f:
        assert f.read() == b"inside"


class RecordingStore(BackingStore):
    def __init__(self) -> None:
        self.paths: List[Tuple[str, str]] = []

    def touched(self, op: str, path: str) -> None:
        self.paths.append((op, path))


def test_every_backing_call_stays_inside_the_root(tmp_path: Path, mount_dirs) -> None:
    root, mnt = mount_dirs
    (tmp_path / "outside.txt").write_bytes(b"x")
    os.symlink("../outside.txt", root / "link")
    store = RecordingStore()
    v = Vfs(MountConfig(fs_type="dlpfs", root=root, mountpoint=mnt), store=store)

    for path in ("/", "/a", "/d/../a", "/link", "/./a", "/d/e"):
        for op in (lambda p: v.fs_getattr(p), lambda p: v.fs_readdir(p), lambda p: v.fs_open(p), lambda p: v.fs_readlink(p)):
            try:
                op(path)
            except OSError:
                pass
    v.fs_mkdir("/d")
    fh = v.fs_create("/d/new.txt")
    v.fs_release(fh)
    v.fs_rename("/d/new.txt", "/d/renamed.txt")
    v.fs_unlink("/d/renamed.txt")

    real_root = os.path.realpath(root)
    assert store.paths
    for op, path in store.paths:
        assert path == real_root or path.startswith(real_root + os.sep), (op, path)


def test_released_handles_are_stale(mount_dirs) -> None:
    root, mnt = mount_dirs
    (root / "f").write_bytes(b"data")
    v = _vfs(root, mnt, "dlpfs")
    fh = v.fs_open("/f")
    assert v.fs_read(fh, 0, 4) == b"data"
    v.fs_release(fh)
    with pytest.raises(OSError) as ei:
        v.fs_read(fh, 0, 4)
    assert ei.value.errno == errno.EBADF
    with pytest.raises(OSError):
        v.fs_release(fh)
    assert v.fs_open("/f") != fh


def test_truncate_settles_pending_writes_first(mount_dirs) -> None:
    root, mnt = mount_dirs
    v = _vfs(root, mnt, "dlpfs", policy=validate_policy(EMAIL_POLICY))
    fh = v.fs_create("/t.txt")
    v.fs_write(fh, 0, b"to a@b.io and more")
    v.fs_truncate("/t.txt", 10)
    assert (root / "t.txt").read_bytes() == b"to ****** "
    v.fs_release(fh)


def test_only_loopback_allows_mmap(mount_dirs) -> None:
    root, mnt = mount_dirs
    assert _vfs(root, mnt, "loopback").allows_mmap
    assert not _vfs(root, mnt, "dlpfs").allows_mmap


def test_settle_all_flushes_every_handle(mount_dirs) -> None:
    root, mnt = mount_dirs
    v = _vfs(root, mnt, "dlpfs", policy=validate_policy(EMAIL_POLICY))
    handles = [v.fs_create(f"/f{i}.txt") for i in range(3)]
    for fh in handles:
        v.fs_write(fh, 0, b"x@y.org")
    v.settle_all()
    for i in range(3):
        assert (root / f"f{i}.txt").read_bytes() == b"*" * 7
