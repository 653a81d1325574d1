import hashlib
import io
import random
import struct

import pytest
from hypothesis import given, settings, strategies as st

from echoshow.carver import (CHUNK, FULL_IMAGE_SIZE, EmmcImage, FilesystemKind, ImageBoundsError,
                             PartitionEntry, Provenance, ShortReadError, TableOverlapError,
                             builtin_partition_table, carve_ext4, check_table, extract_partition,
                             parse_kernel_log_table, partition_fit, probe_ext4,
                             render_kernel_log_table, unmapped_ranges)
from echoshow.errors import InputError
from echoshow.synth import ext4_superblock, kernel_log, write_carving_fixture

# sha256 of 1 MiB of zero bytes, computed once with coreutils sha256sum.
ZERO_MIB_SHA256 = "30e14955ebf1352266dc2ff8067e68104607e750abb9d3b36582b8af909fcb58"


def mem_image(data: bytes) -> EmmcImage:
    return EmmcImage(io.BytesIO(data), len(data), name="mem")


def brute_force_superblocks(data: bytes, alignment: int = 512) -> list[int]:
    """Independent oracle: every aligned start whose superblock has the
    magic and is a primary (group 0) copy."""
    hits = []
    for start in range(0, len(data) - 2048 + 1, alignment):
        sb = start + 1024
        if data[sb + 0x38:sb + 0x3A] == b"\x53\xef" and data[sb + 0x5A:sb + 0x5C] == b"\0\0":
            hits.append(start)
    return hits


def test_builtin_table_is_contiguous_enough():
    table = builtin_partition_table()
    assert len(table) == 15
    assert check_table(table) == table
    assert table[-1].end == FULL_IMAGE_SIZE
    assert {e.name for e in table if e.listed_in_fastboot} == {"boot", "vendor", "odm", "system", "data"}


def test_extract_partition_hashes_and_copies():
    data = bytes(range(256)) * 64 + bytes(1 << 20)
    img = mem_image(data)
    entry = PartitionEntry("p", 256, 1 << 20)
    sink = io.BytesIO()
    r = extract_partition(img, entry, sink)
    assert sink.getvalue() == data[256:256 + (1 << 20)]
    assert r.sha256 == hashlib.sha256(data[256:256 + (1 << 20)]).hexdigest()
    assert r.bytes_written == 1 << 20


def test_sparse_extraction_hash_of_zeros(tmp_path):
    path = tmp_path / "zeros.img"
    with open(path, "wb") as fh:
        fh.truncate(3 << 20)
    out = tmp_path / "out.img"
    with EmmcImage.open(path) as img, open(out, "wb") as sink:
        r = extract_partition(img, PartitionEntry("z", 1 << 20, 1 << 20), sink)
    assert r.sha256 == ZERO_MIB_SHA256
    assert out.stat().st_size == 1 << 20


def test_sparse_extraction_matches_dense_copy(tmp_path):
    path = tmp_path / "s.img"
    with open(path, "wb") as fh:
        fh.truncate(3 * CHUNK)
        fh.seek(CHUNK + 17)
        fh.write(b"payload")
    entry = PartitionEntry("x", 5, 3 * CHUNK - 10)
    with EmmcImage.open(path) as img, open(tmp_path / "o.img", "wb") as sink:
        r = extract_partition(img, entry, sink)
    dense = path.read_bytes()[5:5 + entry.size]
    assert (tmp_path / "o.img").read_bytes() == dense
    assert r.sha256 == hashlib.sha256(dense).hexdigest()


def test_nonseekable_sink_gets_zeros():
    class Pipe(io.RawIOBase):
        def __init__(self):
            self.buf = bytearray()

        def writable(self):
            return True

        def write(self, b):
            self.buf += b
            return len(b)

    data = b"A" * 100 + bytes(5000)
    pipe = Pipe()
    extract_partition(mem_image(data), PartitionEntry("p", 0, len(data)), pipe)
    assert bytes(pipe.buf) == data


def test_out_of_bounds_and_short_reads():
    img = mem_image(bytes(4096))
    with pytest.raises(ImageBoundsError):
        extract_partition(img, PartitionEntry("p", 4000, 200), io.BytesIO())
    short = EmmcImage(io.BytesIO(bytes(100)), 4096)
    with pytest.raises(ShortReadError):
        short.read(0, 1000)


def test_open_missing_file_is_input_error(tmp_path):
    with pytest.raises(InputError):
        EmmcImage.open(tmp_path / "nope.img")


def test_partition_fit_splits_entries():
    img = mem_image(bytes(1 << 20))
    inside, outside = partition_fit(img, [PartitionEntry("a", 0, 4096), PartitionEntry("b", 1 << 19, 1 << 20)])
    assert [e.name for e in inside] == ["a"] and [e.name for e in outside] == ["b"]


def test_overlapping_table_rejected():
    with pytest.raises(TableOverlapError):
        check_table([PartitionEntry("a", 0, 100), PartitionEntry("b", 50, 100)])
    with pytest.raises(TableOverlapError):
        check_table([PartitionEntry("a", 0, 10), PartitionEntry("a", 10, 10)])


def test_unmapped_ranges():
    img = mem_image(bytes(1000))
    gaps = unmapped_ranges(img, [PartitionEntry("b", 600, 100), PartitionEntry("a", 100, 200)])
    assert gaps == [(0, 100), (300, 300), (700, 300)]
    assert unmapped_ranges(img, []) == [(0, 1000)]


def test_kernel_log_round_trip_with_noise():
    table = builtin_partition_table()
    parsed = parse_kernel_log_table(kernel_log(table, random.Random(3)))
    assert [(e.name, e.offset, e.size) for e in parsed] == [(e.name, e.offset, e.size) for e in table]
    assert all(e.provenance is Provenance.KERNEL_LOG for e in parsed)
    assert parsed.errors == []


def test_kernel_log_out_of_order_and_decimal():
    text = "[ 1.0] data : 4096 8192\n<6>[ 1.1] boot: offset 0x0, size 0x1000\nrandom line\n"
    parsed = parse_kernel_log_table(text)
    assert {(e.name, e.offset, e.size) for e in parsed} == {("data", 4096, 8192), ("boot", 0, 4096)}


def test_kernel_log_bad_and_duplicate_lines():
    text = "a : 0x10 0x20\na : 0x30 0x20\nb : 0xZZ 0x10\n"
    parsed = parse_kernel_log_table(text)
    assert [e.name for e in parsed] == ["a"]
    reasons = sorted(err.reason.split()[0] for err in parsed.errors)
    assert reasons == ["bad", "duplicate"]


@given(st.lists(st.tuples(st.integers(0, 2**40), st.integers(1, 2**36)), min_size=1, max_size=12,
                unique_by=lambda t: t[0]))
def test_render_parse_round_trip(rows):
    table = [PartitionEntry(f"p{i}", off, size) for i, (off, size) in enumerate(rows)]
    parsed = parse_kernel_log_table(render_kernel_log_table(table))
    assert [(e.name, e.offset, e.size) for e in parsed] == [(e.name, e.offset, e.size) for e in table]


def _place(buf: bytearray, start: int, sb: bytes) -> None:
    buf[start + 1024:start + 2048] = sb


def test_carve_finds_aligned_filesystem_and_length():
    buf = bytearray(1 << 20)
    _place(buf, 8192, ext4_superblock(256, log_block_size=0))
    regions = carve_ext4(mem_image(bytes(buf)), (0, len(buf)))
    assert len(regions) == 1
    r = regions[0]
    assert (r.start, r.length, r.block_size, r.truncated) == (8192, 256 * 1024, 1024, False)
    assert r.filesystem_kind is FilesystemKind.EXT4


def test_carve_skips_backup_and_misaligned():
    buf = bytearray(1 << 20)
    _place(buf, 4096, ext4_superblock(64, 0, block_group_nr=1))
    struct.pack_into("<H", buf, 20000 + 1024 + 0x38, 0xEF53)  # start 20000 is not 512-aligned
    assert carve_ext4(mem_image(bytes(buf)), (0, len(buf))) == []
    assert [r.start for r in carve_ext4(mem_image(bytes(buf)), (0, len(buf)), alignment=1)] == [20000]


def test_carve_truncates_at_range_end():
    buf = bytearray(1 << 20)
    _place(buf, 0, ext4_superblock(1 << 20, 2))
    (r,) = carve_ext4(mem_image(bytes(buf)), (0, len(buf)))
    assert r.truncated and r.length == len(buf) and r.warnings


def test_carve_64bit_block_count():
    buf = bytearray(1 << 16)
    _place(buf, 0, ext4_superblock((3 << 32) + 5, 2, sixty_four=True))
    (r,) = carve_ext4(mem_image(bytes(buf)), (0, len(buf)))
    assert r.block_count == (3 << 32) + 5 and r.truncated


def test_carve_magic_straddling_chunk_boundary():
    size = CHUNK + (1 << 16)
    buf = bytearray(size)
    start = CHUNK - 1 - 1024 - 0x38  # first magic byte is the last byte of chunk one
    _place(buf, start, ext4_superblock(16, 0))
    assert [r.start for r in carve_ext4(mem_image(bytes(buf)), (0, size), alignment=1)] == [start]


def test_carve_respects_range_start():
    buf = bytearray(1 << 18)
    _place(buf, 0, ext4_superblock(16, 0))
    _place(buf, 65536, ext4_superblock(16, 0))
    assert [r.start for r in carve_ext4(mem_image(bytes(buf)), (512, len(buf) - 512))] == [65536]


def test_carve_oracle_on_fixture(tmp_path, rng):
    fx = write_carving_fixture(tmp_path / "f.img", rng, size=8 << 20, filesystems=3, decoys=5)
    data = (tmp_path / "f.img").read_bytes()
    with EmmcImage.open(fx.path) as img:
        found = [r.start for r in carve_ext4(img, (0, fx.size))]
    assert found == brute_force_superblocks(data) == sorted(fx.ext4_starts)


def test_probe_ext4():
    buf = bytearray(1 << 16)
    _place(buf, 4096, ext4_superblock(8, 0))
    img = mem_image(bytes(buf))
    assert probe_ext4(img, 4096).start == 4096
    assert probe_ext4(img, 0) is None
    assert probe_ext4(img, len(buf) - 1024) is None


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 120), min_size=0, max_size=6, unique=True), st.integers(0, 2**32 - 1))
def test_carve_agrees_with_oracle_random(slots, seed):
    r = random.Random(seed)
    buf = bytearray(r.randbytes(128 * 1024 // 4)) + bytearray(128 * 1024 - 128 * 1024 // 4)
    for s in sorted(slots):
        _place(buf, s * 1024, ext4_superblock(r.randrange(1, 64), 0, block_group_nr=r.choice((0, 0, 1))))
    expected = brute_force_superblocks(bytes(buf))
    assert [x.start for x in carve_ext4(mem_image(bytes(buf)), (0, len(buf)))] == expected
