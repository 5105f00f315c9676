from __future__ import annotations

import errno
import os
from pathlib import Path

import pytest

from datagen import EMAIL_REGEX
from policy_io import validate_policy
from vfs import MountConfig, Vfs

try:
    import fs_adapter
except (ImportError, OSError) as e:  # libfuse missing on the host
    pytest.skip(f"fusepy unavailable: {e}", allow_module_level=True)

from fuse import FuseOSError

POLICY = {
    "do_read": True,
    "do_write": True,
    "rules": [{"patterns": [{"type": "re", "spec": EMAIL_REGEX}], "transformation": {"type": "redact"}}],
}


class FakeFileInfo:
    def __init__(self, flags: int = os.O_RDONLY):
        self.flags = flags
        self.fh = 0
        self.direct_io = False


def _ops(root: Path, mnt: Path, fs_type: str = "dlpfs") -> "fs_adapter.DlpfsOperations":
    cfg = MountConfig(fs_type=fs_type, root=root, mountpoint=mnt)
    return fs_adapter.DlpfsOperations(Vfs(cfg, policy=validate_policy(POLICY)))


def test_file_callbacks_forward_to_the_vfs(mount_dirs) -> None:
    root, mnt = mount_dirs
    (root / "in.txt").write_bytes(b"hi a@b.io\n")
    ops = _ops(root, mnt)

    fi = FakeFileInfo()
    assert ops("open", "/in.txt", fi) == 0
    assert fi.fh > 0
    assert fi.direct_io is True
    assert ops("read", "/in.txt", 100, 0, fi) == b"hi ******\n"
    ops("release", "/in.txt", fi)

    wfi = FakeFileInfo(os.O_WRONLY | os.O_CREAT | os.O_TRUNC)
    ops("create", "/out.txt", 0o644, wfi)
    assert ops("write", "/out.txt", b"to x@y.org\n", 0, wfi) == 11
    ops("flush", "/out.txt", wfi)
    ops("release", "/out.txt", wfi)
    assert (root / "out.txt").read_bytes() == b"to *******\n"


def test_namespace_callbacks_forward_to_the_vfs(mount_dirs) -> None:
    root, mnt = mount_dirs
    ops = _ops(root, mnt)
    ops("mkdir", "/d", 0o755)
    assert (root / "d").is_dir()
    ops("symlink", "/d/link", "target.txt")
    assert os.readlink(root / "d" / "link") == "target.txt"
    assert "d" in ops("readdir", "/", None)
    ops("rename", "/d/link", "/d/link2")
    ops("unlink", "/d/link2")
    ops("rmdir", "/d")
    assert not (root / "d").exists()
    assert ops("statfs", "/")["f_bsize"] > 0


def test_os_errors_become_fuse_errors(mount_dirs) -> None:
    root, mnt = mount_dirs
    ops = _ops(root, mnt)
    with pytest.raises(FuseOSError) as ei:
        ops("getattr", "/missing", None)
    assert ei.value.errno == errno.ENOENT
    with pytest.raises(FuseOSError) as ei:
        ops("getattr", "/../escape", None)
    assert ei.value.errno == errno.EACCES
    with pytest.raises(FuseOSError) as ei:
        ops("read", "/x", 10, 0, FakeFileInfo())
    assert ei.value.errno == errno.EBADF


def test_loopback_leaves_the_page_cache_alone(mount_dirs) -> None:
    root, mnt = mount_dirs
    (root / "f").write_bytes(b"x")
    ops = _ops(root, mnt, "loopback")
    fi = FakeFileInfo()
    ops("open", "/f", fi)
    assert fi.direct_io is False
    ops("release", "/f", fi)


def test_mount_refuses_a_busy_mountpoint(mount_dirs) -> None:
    root, mnt = mount_dirs
    (mnt / "stray").write_bytes(b"")
    cfg = MountConfig(fs_type="loopback", root=root, mountpoint=mnt)
    if fs_adapter.fuse_unavailable_reason() is not None:
        with pytest.raises(fs_adapter.MountUnavailable):
            fs_adapter.mount(cfg)
    else:
        with pytest.raises(fs_adapter.MountBusy):
            fs_adapter.mount(cfg)


@pytest.mark.skipif(fs_adapter.fuse_unavailable_reason() is not None, reason="FUSE is not available here")
def test_kernel_mount_protects_reads(mount_dirs) -> None:
    root, mnt = mount_dirs
    (root / "in.txt").write_bytes(b"mail a@b.io\n")
    cfg = MountConfig(fs_type="dlpfs", root=root, mountpoint=mnt)
    try:
        session = fs_adapter.mount(cfg, policy=validate_policy(POLICY))
    except fs_adapter.MountUnavailable as e:
        pytest.skip(f"mount not permitted: {e}")
    with session:
        assert session.alive
        assert (mnt / "in.txt").read_bytes() == b"mail ******\n"
        (mnt / "out.txt").write_bytes(b"to x@y.org\n")
        assert (root / "out.txt").read_bytes() == b"to *******\n"
    assert not os.path.ismount(mnt)
