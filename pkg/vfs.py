from __future__ import annotations

import errno
import io
import itertools
import logging
import os
import secrets
import threading
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from engine import (
    FormatMode,
    GuardConfig,
    HandleState,
    handle_seed,
    protected_read,
    protected_write,
    pread_exact,
    pwrite_all,
    settle,
)
from policy_io import empty_policy, load_policy
from policy_models import DEFAULT_MAX_MATCH_BYTES, PolicySpec
from transform import TransformContext
from window_utils import MIB

logger = logging.getLogger(__name__)

FsType = Literal["loopback", "dlpfs"]

STAT_KEYS = (
    "st_atime",
    "st_ctime",
    "st_gid",
    "st_ino",
    "st_mode",
    "st_mtime",
    "st_nlink",
    "st_size",
    "st_uid",
)

STATVFS_KEYS = (
    "f_bavail",
    "f_bfree",
    "f_blocks",
    "f_bsize",
    "f_favail",
    "f_ffree",
    "f_files",
    "f_flag",
    "f_frsize",
    "f_namemax",
)


class PathEscape(PermissionError):
    def __init__(self, path: str):
        super().__init__(errno.EACCES, "path escapes the mount root", path)


def _within(path: str, root: str) -> bool:
    return path == root or path.startswith(root.rstrip(os.sep) + os.sep)


class MountConfig(BaseModel):
    fs_type: FsType
    root: Path
    mountpoint: Path
    policy_path: Optional[Path] = None
    # None = max(64, longest possible match), chosen per policy.
    guard: Optional[int] = Field(default=None, ge=0, le=MIB)
    # None = LineAligned for .csv/.tsv/.log/.jsonl, Raw otherwise.
    format_mode: Optional[FormatMode] = None
    max_match_bytes: int = Field(default=DEFAULT_MAX_MATCH_BYTES, ge=1)
    max_widen: int = Field(default=MIB, ge=0)
    secret: str = Field(default_factory=lambda: secrets.token_hex(16))

    @model_validator(mode="after")
    def _dirs_valid(self) -> "MountConfig":
        for name in ("root", "mountpoint"):
            p = getattr(self, name)
            if not p.is_dir():
                raise ValueError(f"{name} must be an existing directory: {p}")
        root = os.path.realpath(self.root)
        mnt = os.path.realpath(self.mountpoint)
        if _within(root, mnt) or _within(mnt, root):
            raise ValueError("root and mountpoint must not contain one another.")
        if self.policy_path is not None and not self.policy_path.is_file():
            raise ValueError(f"policy file not found: {self.policy_path}")
        return self


class BackingStore:
    """
    Thin wrapper over the host filesystem calls used by the vfs.

    Every call receives an already-resolved absolute path; `touched` is invoked
    first so a subclass can audit exactly which paths are reached.
    """

    def touched(self, op: str, path: str) -> None:
        pass

    def lstat(self, path: str) -> os.stat_result:
        self.touched("lstat", path)
        return os.lstat(path)

    def listdir(self, path: str) -> List[str]:
        self.touched("listdir", path)
        return os.listdir(path)

    def open(self, path: str, flags: int, mode: int = 0o777) -> int:
        self.touched("open", path)
        return os.open(path, flags, mode)

    def unlink(self, path: str) -> None:
        self.touched("unlink", path)
        os.unlink(path)

    def rename(self, old: str, new: str) -> None:
        self.touched("rename", old)
        self.touched("rename", new)
        os.rename(old, new)

    def mkdir(self, path: str, mode: int) -> None:
        self.touched("mkdir", path)
        os.mkdir(path, mode)

    def rmdir(self, path: str) -> None:
        self.touched("rmdir", path)
        os.rmdir(path)

    def truncate(self, path: str, length: int) -> None:
        self.touched("truncate", path)
        os.truncate(path, length)

    def access(self, path: str, amode: int) -> bool:
        self.touched("access", path)
        return os.access(path, amode)

    def chmod(self, path: str, mode: int) -> None:
        self.touched("chmod", path)
        os.chmod(path, mode)

    def chown(self, path: str, uid: int, gid: int) -> None:
        self.touched("chown", path)
        os.chown(path, uid, gid)

    def utime(self, path: str, times: Optional[Tuple[float, float]]) -> None:
        self.touched("utime", path)
        os.utime(path, times)

    def readlink(self, path: str) -> str:
        self.touched("readlink", path)
        return os.readlink(path)

    def symlink(self, target: str, path: str) -> None:
        self.touched("symlink", path)
        os.symlink(target, path)

    def statvfs(self, path: str) -> os.statvfs_result:
        self.touched("statvfs", path)
        return os.statvfs(path)

    def getxattr(self, path: str, name: str) -> bytes:
        self.touched("getxattr", path)
        return os.getxattr(path, name, follow_symlinks=False)

    def setxattr(self, path: str, name: str, value: bytes, flags: int) -> None:
        self.touched("setxattr", path)
        os.setxattr(path, name, value, flags, follow_symlinks=False)

    def listxattr(self, path: str) -> List[str]:
        self.touched("listxattr", path)
        return os.listxattr(path, follow_symlinks=False)

    def removexattr(self, path: str, name: str) -> None:
        self.touched("removexattr", path)
        os.removexattr(path, name, follow_symlinks=False)


class HandleTable:
    """Open handles by id. Ids are never reused within a mount."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._ids = itertools.count(1)
        self._handles: Dict[int, HandleState] = {}

    def add(self, h: HandleState) -> int:
        with self._lock:
            fh = next(self._ids)
            self._handles[fh] = h
            return fh

    def get(self, fh: int) -> HandleState:
        with self._lock:
            h = self._handles.get(fh)
        if h is None:
            raise OSError(errno.EBADF, f"stale or unknown handle {fh}")
        return h

    def pop(self, fh: int) -> HandleState:
        with self._lock:
            h = self._handles.pop(fh, None)
        if h is None:
            raise OSError(errno.EBADF, f"stale or unknown handle {fh}")
        return h

    def for_file(self, file_id: Tuple[int, int]) -> List[HandleState]:
        with self._lock:
            return [h for h in self._handles.values() if h.file_id == file_id]

    def ids(self) -> List[int]:
        with self._lock:
            return list(self._handles)

    def __len__(self) -> int:
        with self._lock:
            return len(self._handles)


class Vfs:
    """
    Passthrough filesystem over `root`, in loopback or dlpfs mode.

    Paths are mount-relative ("/a/b.csv"). Errors are OSError with the backing
    errno; paths escaping the root raise PathEscape (EACCES) and symlinks whose
    target lies outside the root behave as dangling (ENOENT).
    """

    def __init__(self, cfg: MountConfig, *, policy: Optional[PolicySpec] = None, store: Optional[BackingStore] = None):
        self.cfg = cfg
        self.root = os.path.realpath(cfg.root)
        self.mountpoint = os.path.realpath(cfg.mountpoint)
        self.store = store or BackingStore()
        self.dlpfs = cfg.fs_type == "dlpfs"
        if policy is None:
            if cfg.policy_path is not None:
                policy = load_policy(cfg.policy_path, max_match_bytes=cfg.max_match_bytes)
            else:
                policy = empty_policy()
        self.policy = policy
        self.base_ctx = TransformContext.for_policy(policy)
        self.handles = HandleTable()
        self._ns_lock = threading.RLock()
        self._opens = itertools.count(1)
        self._secret = cfg.secret.encode("utf-8")
        self._read_engaged = self.dlpfs and policy.do_read and not policy.is_empty
        self._write_engaged = self.dlpfs and policy.do_write and not policy.is_empty
        logger.info("vfs ready: type=%s root=%s rules=%d", cfg.fs_type, self.root, len(policy.rules))

    @property
    def allows_mmap(self) -> bool:
        # Page-level access would bypass the stream engine.
        return not self.dlpfs

    # Paths
    # =====

    def _relative_parts(self, path: str) -> List[str]:
        parts: List[str] = []
        for part in path.split("/"):
            if part in ("", "."):
                continue
            if part == "..":
                if not parts:
                    raise PathEscape(path)
                parts.pop()
            else:
                parts.append(part)
        return parts

    def _full_path(self, path: str, *, follow: bool = False) -> str:
        parts = self._relative_parts(path)
        if not parts:
            return self.root
        parent = os.path.realpath(os.path.join(self.root, *parts[:-1]))
        if not _within(parent, self.root):
            raise FileNotFoundError(errno.ENOENT, "dangling link", path)
        full = os.path.join(parent, parts[-1])
        if follow:
            real = os.path.realpath(full)
            if not _within(real, self.root):
                raise FileNotFoundError(errno.ENOENT, "dangling link", path)
            return real
        return full

    # Metadata and namespace
    # ======================

    def fs_getattr(self, path: str, fh: Optional[int] = None) -> Dict[str, int]:
        logger.debug("getattr(path=%s, fh=%s)", path, fh)
        if fh is not None:
            st = os.fstat(self.handles.get(fh).fd)
        else:
            st = self.store.lstat(self._full_path(path))
        return {key: getattr(st, key) for key in STAT_KEYS}

    def fs_readdir(self, path: str) -> List[str]:
        logger.debug("readdir(path=%s)", path)
        full = self._full_path(path, follow=True)
        return [".", ".."] + sorted(self.store.listdir(full))

    def fs_access(self, path: str, amode: int) -> None:
        if not self.store.access(self._full_path(path, follow=True), amode):
            raise PermissionError(errno.EACCES, "access denied", path)

    def fs_chmod(self, path: str, mode: int) -> None:
        logger.debug("chmod(path=%s, mode=%o)", path, mode)
        self.store.chmod(self._full_path(path, follow=True), mode)

    def fs_chown(self, path: str, uid: int, gid: int) -> None:
        logger.debug("chown(path=%s, uid=%s, gid=%s)", path, uid, gid)
        self.store.chown(self._full_path(path, follow=True), uid, gid)

    def fs_utimens(self, path: str, times: Optional[Tuple[float, float]] = None) -> None:
        self.store.utime(self._full_path(path, follow=True), times)

    def fs_readlink(self, path: str) -> str:
        """
        Link targets are interpreted inside the root (as under chroot) and
        returned as mountpoint paths, so a link cannot lead out of the mount.
        """
        logger.debug("readlink(path=%s)", path)
        target = self.store.readlink(self._full_path(path))
        if os.path.isabs(target):
            if _within(target, self.root):
                rel = os.path.relpath(target, self.root)
            else:
                rel = target.lstrip("/")
        else:
            link_dir = "/".join(self._relative_parts(path)[:-1])
            rel = f"{link_dir}/{target}"
        clamped: List[str] = []
        for part in rel.split("/"):
            if part in ("", "."):
                continue
            if part == "..":
                if clamped:
                    clamped.pop()
            else:
                clamped.append(part)
        return os.path.join(self.mountpoint, *clamped)

    def fs_symlink(self, path: str, target: str) -> None:
        logger.debug("symlink(path=%s, target=%s)", path, target)
        with self._ns_lock:
            self.store.symlink(target, self._full_path(path))

    def fs_statfs(self, path: str) -> Dict[str, int]:
        stv = self.store.statvfs(self._full_path(path, follow=True))
        return {key: getattr(stv, key) for key in STATVFS_KEYS}

    def fs_mkdir(self, path: str, mode: int = 0o755) -> None:
        logger.debug("mkdir(path=%s, mode=%o)", path, mode)
        with self._ns_lock:
            self.store.mkdir(self._full_path(path), mode)

    def fs_rmdir(self, path: str) -> None:
        logger.debug("rmdir(path=%s)", path)
        with self._ns_lock:
            self.store.rmdir(self._full_path(path))

    def fs_unlink(self, path: str) -> None:
        logger.debug("unlink(path=%s)", path)
        with self._ns_lock:
            self.store.unlink(self._full_path(path))

    def fs_rename(self, old: str, new: str) -> None:
        logger.debug("rename(old=%s, new=%s)", old, new)
        with self._ns_lock:
            self.store.rename(self._full_path(old), self._full_path(new))

    def fs_truncate(self, path: str, length: int, fh: Optional[int] = None) -> None:
        logger.debug("truncate(path=%s, length=%d, fh=%s)", path, length, fh)
        if fh is not None:
            h = self.handles.get(fh)
            self._settle_file(h.file_id)
            os.ftruncate(h.fd, length)
            self._invalidate(h.file_id)
            return
        full = self._full_path(path, follow=True)
        st = self.store.lstat(full)
        file_id = (st.st_dev, st.st_ino)
        self._settle_file(file_id)
        self.store.truncate(full, length)
        self._invalidate(file_id)

    # Extended attributes pass through untouched.

    def fs_getxattr(self, path: str, name: str) -> bytes:
        return self.store.getxattr(self._full_path(path), name)

    def fs_setxattr(self, path: str, name: str, value: bytes, flags: int = 0) -> None:
        self.store.setxattr(self._full_path(path), name, value, flags)

    def fs_listxattr(self, path: str) -> List[str]:
        return self.store.listxattr(self._full_path(path))

    def fs_removexattr(self, path: str, name: str) -> None:
        self.store.removexattr(self._full_path(path), name)

    # File handles
    # ============

    def _backing_flags(self, flags: int) -> int:
        # Offsets always come from the caller; O_APPEND would override them.
        flags &= ~os.O_APPEND
        if self.dlpfs and flags & os.O_ACCMODE == os.O_WRONLY:
            # Guard windows and write context need to read back.
            flags = (flags & ~os.O_ACCMODE) | os.O_RDWR
        return flags

    def _open_backing(self, full: str, flags: int, mode: int = 0o777) -> int:
        wanted = self._backing_flags(flags)
        try:
            return self.store.open(full, wanted, mode)
        except PermissionError:
            if wanted == flags & ~os.O_APPEND:
                raise
            return self.store.open(full, flags & ~os.O_APPEND, mode)

    def _register(self, path: str, fd: int, flags: int) -> int:
        st = os.fstat(fd)
        file_id = (st.st_dev, st.st_ino)
        seed = handle_seed(self._secret, st.st_dev, st.st_ino, next(self._opens))
        guard = GuardConfig.for_file(
            path,
            self.policy,
            guard=self.cfg.guard,
            format_mode=self.cfg.format_mode,
            max_widen=self.cfg.max_widen,
        )
        h = HandleState(fd=fd, file_id=file_id, rng_seed=seed, ctx=self.base_ctx.with_seed(seed), guard=guard)
        if flags & os.O_TRUNC:
            self._invalidate(file_id)
        return self.handles.add(h)

    def fs_open(self, path: str, flags: int = os.O_RDONLY) -> int:
        logger.debug("open(path=%s, flags=%o)", path, flags)
        fd = self._open_backing(self._full_path(path, follow=True), flags)
        return self._register(path, fd, flags)

    def fs_create(self, path: str, mode: int = 0o644, flags: int = os.O_WRONLY | os.O_CREAT | os.O_TRUNC) -> int:
        logger.debug("create(path=%s, mode=%o)", path, mode)
        with self._ns_lock:
            full = self._full_path(path)
            if os.path.islink(full):
                # Creating through a link writes its target, which must resolve inside the root.
                full = self._full_path(path, follow=True)
            try:
                fd = self._open_backing(full, flags | os.O_CREAT | os.O_NOFOLLOW, mode)
            except OSError as e:
                if e.errno != errno.ELOOP:
                    raise
                raise FileNotFoundError(errno.ENOENT, "dangling link", path) from e
        return self._register(path, fd, flags)

    def fs_read(self, fh: int, offset: int, size: int) -> bytes:
        h = self.handles.get(fh)
        if not self._read_engaged and not h.dirty:
            return pread_exact(h.fd, size, offset)
        return protected_read(h, offset, size, self.policy)

    def fs_write(self, fh: int, offset: int, data: bytes) -> int:
        h = self.handles.get(fh)
        if not self.dlpfs:
            pwrite_all(h.fd, data, offset)
            return len(data)
        n = protected_write(h, offset, data, self.policy)
        self._invalidate(h.file_id)
        return n

    def fs_flush(self, fh: int) -> None:
        h = self.handles.get(fh)
        if self._write_engaged:
            settle(h, self.policy)

    def fs_fsync(self, fh: int, datasync: bool = False) -> None:
        self.fs_flush(fh)
        h = self.handles.get(fh)
        if datasync:
            os.fdatasync(h.fd)
        else:
            os.fsync(h.fd)

    def fs_release(self, fh: int) -> None:
        logger.debug("release(fh=%s)", fh)
        h = self.handles.pop(fh)
        try:
            if self._write_engaged:
                settle(h, self.policy)
        finally:
            os.close(h.fd)
            self._invalidate(h.file_id)

    def settle_all(self) -> None:
        """Settle every open handle; the first deferred error is re-raised after all are tried."""
        first: Optional[OSError] = None
        for fh in self.handles.ids():
            try:
                self.fs_flush(fh)
            except OSError as e:
                logger.warning("settle on handle %d failed: %s", fh, e)
                first = first or e
        if first is not None:
            raise first

    def _settle_file(self, file_id: Tuple[int, int]) -> None:
        if not self._write_engaged:
            return
        for h in self.handles.for_file(file_id):
            settle(h, self.policy)

    def _invalidate(self, file_id: Tuple[int, int]) -> None:
        for h in self.handles.for_file(file_id):
            h.invalidate_cache()

    # In-process file objects
    # =======================

    def open_file(self, path: str, mode: str = "rb", buffering: int = -1) -> io.IOBase:
        """
        A Python file object backed by this vfs (for tools and benchmarks that
        want to exercise the mount without a kernel mount).
        """
        if mode not in ("rb", "wb", "r+b"):
            raise ValueError(f"unsupported mode {mode!r}")
        if mode == "wb":
            fh = self.fs_create(path, 0o644, os.O_WRONLY | os.O_CREAT | os.O_TRUNC)
        else:
            fh = self.fs_open(path, os.O_RDWR if mode == "r+b" else os.O_RDONLY)
        raw = VfsRawIO(self, fh, mode)
        if buffering == 0:
            return raw
        size = io.DEFAULT_BUFFER_SIZE if buffering < 0 else buffering
        if mode == "rb":
            return io.BufferedReader(raw, size)
        if mode == "wb":
            return io.BufferedWriter(raw, size)
        return io.BufferedRandom(raw, size)


class VfsRawIO(io.RawIOBase):
    def __init__(self, vfs: Vfs, fh: int, mode: str):
        super().__init__()
        self._vfs = vfs
        self._fh = fh
        self._mode = mode
        self._pos = 0

    def readable(self) -> bool:
        return self._mode in ("rb", "r+b")

    def writable(self) -> bool:
        return self._mode in ("wb", "r+b")

    def seekable(self) -> bool:
        return True

    def readinto(self, b) -> int:
        data = self._vfs.fs_read(self._fh, self._pos, len(b))
        n = len(data)
        b[:n] = data
        self._pos += n
        return n

    def write(self, b) -> int:
        n = self._vfs.fs_write(self._fh, self._pos, bytes(b))
        self._pos += n
        return n

    def seek(self, offset: int, whence: int = io.SEEK_SET) -> int:
        if whence == io.SEEK_SET:
            self._pos = offset
        elif whence == io.SEEK_CUR:
            self._pos += offset
        elif whence == io.SEEK_END:
            self._pos = self._vfs.fs_getattr("", self._fh)["st_size"] + offset
        else:
            raise ValueError(f"invalid whence {whence}")
        return self._pos

    def tell(self) -> int:
        return self._pos

    def flush(self) -> None:
        if not self.closed and self.writable():
            self._vfs.fs_flush(self._fh)

    def close(self) -> None:
        if self.closed:
            return
        try:
            super().close()
        finally:
            self._vfs.fs_release(self._fh)
