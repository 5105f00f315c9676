from __future__ import annotations

import errno
import logging
import os
import shutil
import subprocess
import threading
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel

from fuse import FUSE, FuseOSError, Operations

from policy_models import PolicySpec
from vfs import MountConfig, Vfs

logger = logging.getLogger(__name__)


class MountUnavailable(RuntimeError):
    pass


class MountBusy(RuntimeError):
    pass


class AdapterOptions(BaseModel):
    foreground: bool = True
    allow_other: bool = False
    # Debug aid: serve callbacks from one thread.
    single_threaded: bool = False


def _fh(fi: Any) -> Optional[int]:
    # With raw_fi, file callbacks receive the fuse_file_info struct.
    if fi is None or isinstance(fi, int):
        return fi
    return fi.fh


class DlpfsOperations(Operations):
    """
    fusepy callbacks. Each one forwards to exactly one vfs operation; no
    protection logic lives here.
    """

    def __init__(self, vfs: Vfs):
        self.vfs = vfs

    def __call__(self, op: str, *args):
        try:
            return super().__call__(op, *args)
        except FuseOSError:
            raise
        except OSError as e:
            raise FuseOSError(e.errno or errno.EIO) from e

    # Filesystem methods
    # ==================

    def access(self, path: str, amode: int) -> None:
        self.vfs.fs_access(path, amode)

    def chmod(self, path: str, mode: int) -> None:
        self.vfs.fs_chmod(path, mode)

    def chown(self, path: str, uid: int, gid: int) -> None:
        self.vfs.fs_chown(path, uid, gid)

    def getattr(self, path: str, fh: Any = None) -> Dict[str, int]:
        return self.vfs.fs_getattr(path, _fh(fh))

    def readdir(self, path: str, fh: Any) -> List[str]:
        return self.vfs.fs_readdir(path)

    def readlink(self, path: str) -> str:
        return self.vfs.fs_readlink(path)

    def mkdir(self, path: str, mode: int) -> None:
        self.vfs.fs_mkdir(path, mode)

    def rmdir(self, path: str) -> None:
        self.vfs.fs_rmdir(path)

    def unlink(self, path: str) -> None:
        self.vfs.fs_unlink(path)

    def symlink(self, target: str, source: str) -> None:
        self.vfs.fs_symlink(target, source)

    def rename(self, old: str, new: str) -> None:
        self.vfs.fs_rename(old, new)

    def utimens(self, path: str, times=None) -> None:
        self.vfs.fs_utimens(path, times)

    def statfs(self, path: str) -> Dict[str, int]:
        return self.vfs.fs_statfs(path)

    def getxattr(self, path: str, name: str, position: int = 0) -> bytes:
        return self.vfs.fs_getxattr(path, name)

    def setxattr(self, path: str, name: str, value: bytes, options: int, position: int = 0) -> None:
        self.vfs.fs_setxattr(path, name, value, options)

    def listxattr(self, path: str) -> List[str]:
        return self.vfs.fs_listxattr(path)

    def removexattr(self, path: str, name: str) -> None:
        self.vfs.fs_removexattr(path, name)

    def destroy(self, path: str) -> None:
        self.vfs.settle_all()

    # File methods
    # ============

    def _opened(self, fi: Any, fh: int) -> int:
        fi.fh = fh
        if not self.vfs.allows_mmap:
            # Bypass the page cache so every read reaches the engine; this also
            # makes the kernel refuse mmap on the file.
            fi.direct_io = True
        return 0

    def open(self, path: str, fi: Any) -> int:
        return self._opened(fi, self.vfs.fs_open(path, fi.flags))

    def create(self, path: str, mode: int, fi: Any = None) -> int:
        flags = fi.flags if fi is not None else os.O_WRONLY | os.O_CREAT | os.O_TRUNC
        return self._opened(fi, self.vfs.fs_create(path, mode, flags))

    def read(self, path: str, size: int, offset: int, fi: Any) -> bytes:
        return self.vfs.fs_read(_fh(fi), offset, size)

    def write(self, path: str, data: bytes, offset: int, fi: Any) -> int:
        return self.vfs.fs_write(_fh(fi), offset, data)

    def truncate(self, path: str, length: int, fh: Any = None) -> None:
        self.vfs.fs_truncate(path, length, _fh(fh))

    def flush(self, path: str, fi: Any) -> None:
        self.vfs.fs_flush(_fh(fi))

    def release(self, path: str, fi: Any) -> None:
        self.vfs.fs_release(_fh(fi))

    def fsync(self, path: str, datasync: int, fi: Any) -> None:
        self.vfs.fs_fsync(_fh(fi), bool(datasync))


def fusermount_binary() -> Optional[str]:
    return shutil.which("fusermount3") or shutil.which("fusermount")


def fuse_unavailable_reason() -> Optional[str]:
    """None when a kernel mount can be attempted, else a human-readable reason."""
    if not os.path.exists("/dev/fuse"):
        return "/dev/fuse does not exist"
    if fusermount_binary() is None:
        return "fusermount not found on PATH"
    return None


def _check_mountpoint(mountpoint: Path) -> None:
    if os.path.ismount(mountpoint):
        raise MountBusy(f"{mountpoint} is already a mount point.")
    with os.scandir(mountpoint) as it:
        if any(True for _ in it):
            raise MountBusy(f"{mountpoint} is not empty.")


def _fuse_kwargs(opts: AdapterOptions) -> Dict[str, Any]:
    kwargs: Dict[str, Any] = {
        "foreground": True,
        "nothreads": opts.single_threaded,
        "raw_fi": True,
        "fsname": "dlpfs",
    }
    if opts.allow_other:
        kwargs["allow_other"] = True
    return kwargs


class MountSession:
    """A FUSE mount served from a background thread."""

    def __init__(self, vfs: Vfs, opts: AdapterOptions):
        self.vfs = vfs
        self.opts = opts
        self.mountpoint = vfs.mountpoint
        self.operations = DlpfsOperations(vfs)
        self._thread: Optional[threading.Thread] = None
        self._error: Optional[BaseException] = None

    def _serve(self) -> None:
        try:
            FUSE(self.operations, self.mountpoint, **_fuse_kwargs(self.opts))
        except BaseException as e:  # noqa: BLE001 - surfaced by start()
            self._error = e
            logger.error("FUSE loop for %s ended with error: %s", self.mountpoint, e)

    def start(self, timeout: float = 10.0) -> "MountSession":
        self._thread = threading.Thread(target=self._serve, name="dlpfs-fuse", daemon=True)
        self._thread.start()
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if os.path.ismount(self.mountpoint):
                logger.info("mounted %s on %s", self.vfs.root, self.mountpoint)
                return self
            if not self._thread.is_alive():
                raise MountUnavailable(f"mount failed: {self._error}")
            time.sleep(0.05)
        raise MountUnavailable(f"timed out waiting for {self.mountpoint} to appear as a mount")

    @property
    def alive(self) -> bool:
        return self._thread is not None and self._thread.is_alive() and os.path.ismount(self.mountpoint)

    def unmount(self, timeout: float = 10.0) -> None:
        binary = fusermount_binary()
        if binary is not None and os.path.ismount(self.mountpoint):
            subprocess.run([binary, "-u", self.mountpoint], check=False, capture_output=True)
        if self._thread is not None:
            self._thread.join(timeout)
        # destroy() already settled every handle; this is a no-op unless the
        # kernel never delivered it.
        self.vfs.settle_all()
        logger.info("unmounted %s", self.mountpoint)

    def __enter__(self) -> "MountSession":
        return self

    def __exit__(self, *exc) -> None:
        self.unmount()


def mount(cfg: MountConfig, opts: Optional[AdapterOptions] = None, *, policy: Optional[PolicySpec] = None) -> MountSession:
    """Mount in the background and return once the kernel reports the mount."""
    opts = opts or AdapterOptions()
    reason = fuse_unavailable_reason()
    if reason is not None:
        raise MountUnavailable(reason)
    _check_mountpoint(cfg.mountpoint)
    return MountSession(Vfs(cfg, policy=policy), opts).start()


def serve(cfg: MountConfig, opts: Optional[AdapterOptions] = None, *, policy: Optional[PolicySpec] = None) -> None:
    """Mount and serve in the calling (main) thread until unmounted or interrupted."""
    opts = opts or AdapterOptions()
    reason = fuse_unavailable_reason()
    if reason is not None:
        raise MountUnavailable(reason)
    _check_mountpoint(cfg.mountpoint)
    vfs = Vfs(cfg, policy=policy)
    logger.info("serving %s on %s (type=%s)", vfs.root, vfs.mountpoint, cfg.fs_type)
    kwargs = _fuse_kwargs(opts)
    kwargs["foreground"] = opts.foreground
    try:
        FUSE(DlpfsOperations(vfs), vfs.mountpoint, **kwargs)
    finally:
        vfs.settle_all()
