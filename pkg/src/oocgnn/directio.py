"""Aligned file access.

Sequential bulk reads bypass the page cache via O_DIRECT when the
filesystem supports it; ranges are rounded out to 4096-byte boundaries
and served from an anonymous mmap buffer (page-aligned by construction).
Callers always get back exactly the bytes they asked for. When O_DIRECT
is unavailable the reader silently degrades to ordinary buffered pread;
nothing above this layer can tell the difference except the byte
counters, which always report what was actually transferred.
"""

import logging
import mmap
import os

from .errors import InvariantError, TruncatedFileError

log = logging.getLogger(__name__)

ALIGN = 4096

_warned_no_direct = False


def _round_down(x: int) -> int:
    return x & ~(ALIGN - 1)


def _round_up(x: int) -> int:
    return (x + ALIGN - 1) & ~(ALIGN - 1)


def pad_to_align(blob: bytearray) -> bytearray:
    blob.extend(b"\x00" * (-len(blob) % ALIGN))
    return blob


class AlignedReader:
    """Positioned reads from one file, optionally through O_DIRECT.

    Reuses a single grow-only mmap scratch buffer, so a long-lived
    reader does not churn allocations. Not thread-safe; each pipeline
    stage owns its readers.
    """

    def __init__(self, path, direct: bool = True):
        global _warned_no_direct
        self.path = os.fspath(path)
        self.direct = False
        self._fd = -1
        self._buf = None
        if direct and hasattr(os, "O_DIRECT"):
            try:
                self._fd = os.open(self.path, os.O_RDONLY | os.O_DIRECT)
                self.direct = True
            except OSError:
                if not _warned_no_direct:
                    log.warning(
                        "O_DIRECT unavailable for %s; using buffered reads",
                        self.path,
                    )
                    _warned_no_direct = True
        if self._fd < 0:
            self._fd = os.open(self.path, os.O_RDONLY)
        self.size = os.fstat(self._fd).st_size

    def pread(self, offset: int, length: int) -> tuple[bytes, int]:
        """Read exactly [offset, offset+length); returns (data, raw_bytes).

        raw_bytes includes alignment slack under direct I/O.
        """
        if length == 0:
            return b"", 0
        if not self.direct:
            data = os.pread(self._fd, length, offset)
            if len(data) != length:
                raise TruncatedFileError(
                    f"{self.path}: wanted {length} bytes at {offset}, "
                    f"got {len(data)}"
                )
            return data, length
        lo = _round_down(offset)
        hi = _round_up(offset + length)
        span = hi - lo
        if self._buf is None or len(self._buf) < span:
            if self._buf is not None:
                self._buf.close()
            self._buf = mmap.mmap(-1, _round_up(span))
        view = memoryview(self._buf)[:span]
        got = os.preadv(self._fd, [view], lo)
        if got < (offset + length) - lo:
            raise TruncatedFileError(
                f"{self.path}: wanted {length} bytes at {offset}, "
                f"read only {got} of the aligned span"
            )
        start = offset - lo
        data = bytes(view[start : start + length])
        return data, got

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1
        if self._buf is not None:
            self._buf.close()
            self._buf = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_file_aligned(path, blob: bytes, direct: bool = True) -> int:
    """Write a whole file whose length is already a 4096 multiple.

    Returns the number of bytes written. Falls back to buffered writes
    when O_DIRECT cannot be used on this filesystem.
    """
    n = len(blob)
    if n % ALIGN != 0:
        raise InvariantError(f"blob length {n} is not {ALIGN}-aligned")
    if direct and hasattr(os, "O_DIRECT") and n > 0:
        fd = -1
        try:
            fd = os.open(
                os.fspath(path),
                os.O_WRONLY | os.O_CREAT | os.O_TRUNC | os.O_DIRECT,
                0o644,
            )
            buf = mmap.mmap(-1, n)
            try:
                buf[:] = blob
                written = 0
                with memoryview(buf) as mv:
                    while written < n:
                        chunk = mv[written:]
                        try:
                            written += os.pwritev(fd, [chunk], written)
                        finally:
                            chunk.release()
            finally:
                buf.close()
            return n
        except OSError:
            pass  # fall through to buffered path
        finally:
            if fd >= 0:
                os.close(fd)
    with open(path, "wb") as f:
        f.write(blob)
    return n
