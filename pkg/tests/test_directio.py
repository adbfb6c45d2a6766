import numpy as np
import pytest

from oocgnn.directio import (
    ALIGN,
    AlignedReader,
    pad_to_align,
    write_file_aligned,
)
from oocgnn.errors import InvariantError, TruncatedFileError


def test_pad_to_align():
    blob = bytearray(b"x" * 5)
    pad_to_align(blob)
    assert len(blob) == ALIGN
    pad_to_align(blob)
    assert len(blob) == ALIGN  # already aligned, unchanged


@pytest.mark.parametrize("direct", [True, False])
def test_reader_returns_exact_ranges(tmp_path, direct):
    payload = np.random.default_rng(0).bytes(3 * ALIGN)
    blob = bytearray(payload)
    pad_to_align(blob)
    path = tmp_path / "f"
    write_file_aligned(path, bytes(blob), direct=direct)
    with AlignedReader(path, direct=direct) as r:
        # unaligned offsets and lengths must come back exact
        for off, ln in [(0, 10), (1, 1), (4095, 2), (5000, 7000), (0, len(payload))]:
            got, raw = r.pread(off, ln)
            assert bytes(got) == payload[off : off + ln]
            assert raw >= ln
            if r.direct:
                # direct path transfers whole sectors; buffered reads are exact
                assert raw % ALIGN == 0


@pytest.mark.parametrize("direct", [True, False])
def test_reader_truncation(tmp_path, direct):
    path = tmp_path / "f"
    write_file_aligned(path, b"\x01" * ALIGN, direct=direct)
    with AlignedReader(path, direct=direct) as r:
        with pytest.raises(TruncatedFileError):
            r.pread(0, ALIGN + 1)


def test_writer_requires_aligned_length(tmp_path):
    with pytest.raises(InvariantError):
        write_file_aligned(tmp_path / "f", b"abc", direct=False)


@pytest.mark.parametrize("direct", [True, False])
def test_write_read_cycle(tmp_path, direct):
    data = np.arange(2048, dtype=np.uint16).tobytes()  # exactly one page
    path = tmp_path / "f"
    n = write_file_aligned(path, data, direct=direct)
    assert n == len(data)
    assert path.read_bytes() == data


def test_scratch_buffer_grows_only(tmp_path):
    blob = bytearray(np.random.default_rng(1).bytes(8 * ALIGN))
    path = tmp_path / "f"
    write_file_aligned(path, bytes(blob), direct=False)
    r = AlignedReader(path, direct=False)
    r.pread(0, 6 * ALIGN)
    big = r._buf
    r.pread(0, 100)
    assert r._buf is big  # small read reuses the large scratch
    r.close()
