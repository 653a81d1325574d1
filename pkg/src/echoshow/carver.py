"""Partition layout, unmapped space and ext4 carving for raw eMMC dumps.

The Echo Show 15 ships a fixed vendor layout rather than GPT/MBR, so the
partition table is built in. A table recovered from ``/recovery/last_kmsg``
on the cache partition can be parsed and used instead.
"""

from __future__ import annotations

import enum
import errno
import hashlib
import io
import logging
import os
import re
import struct
import threading
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator

from .errors import InputError, SchemaError

log = logging.getLogger(__name__)

SECTOR = 512
CHUNK = 4 << 20

EXT4_SUPERBLOCK_OFFSET = 1024
EXT4_MAGIC = 0xEF53
EXT4_MAGIC_OFFSET = 0x38
_MAGIC_BYTES = struct.pack("<H", EXT4_MAGIC)
_INCOMPAT_64BIT = 0x80


class Provenance(str, enum.Enum):
    BUILTIN = "BuiltinTable"
    KERNEL_LOG = "KernelLog"


class FilesystemKind(str, enum.Enum):
    EXT4 = "Ext4"
    UNKNOWN = "Unknown"


class ImageBoundsError(InputError):
    pass


class ShortReadError(InputError):
    pass


class TableOverlapError(SchemaError):
    pass


@dataclass(frozen=True)
class PartitionEntry:
    name: str
    offset: int
    size: int
    listed_in_fastboot: bool = False
    provenance: Provenance = field(default=Provenance.BUILTIN, compare=False)

    @property
    def end(self) -> int:
        return self.offset + self.size

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "offset": self.offset,
            "size": self.size,
            "listed_in_fastboot": self.listed_in_fastboot,
            "provenance": self.provenance.value,
        }


FASTBOOT_LISTED = frozenset({"boot", "system", "vendor", "odm", "data"})

# name, offset, size in bytes
_LAYOUT = [
    ("bootloader", 0x00000000, 0x000400000),
    ("reserved", 0x02400000, 0x000800000),
    ("nvcfg", 0x02D00000, 0x000400000),
    ("tee", 0x03200000, 0x000800000),
    ("boot", 0x03B00000, 0x001800000),
    ("recovery", 0x05400000, 0x001800000),
    ("logo", 0x06D00000, 0x000400000),
    ("misc", 0x07200000, 0x000100000),
    ("cri_data", 0x07400000, 0x000200000),
    ("vendor", 0x07700000, 0x012C00000),
    ("odm", 0x1A400000, 0x000800000),
    ("system", 0x1AD00000, 0x0C2000000),
    ("product", 0xDCE00000, 0x000C00000),
    ("cache", 0xDDB00000, 0x020000000),
    ("data", 0xFDC00000, 0x2AD800000),
]

# End of the last builtin partition.
FULL_IMAGE_SIZE = 0xFDC00000 + 0x2AD800000


def builtin_partition_table() -> list[PartitionEntry]:
    return [
        PartitionEntry(name, off, size, name in FASTBOOT_LISTED, Provenance.BUILTIN)
        for name, off, size in _LAYOUT
    ]


class EmmcImage:
    """Random-access, read-only view over a flat eMMC dump."""

    def __init__(self, source: BinaryIO, total_size: int | None = None, name: str = "<stream>"):
        if total_size is None:
            source.seek(0, io.SEEK_END)
            total_size = source.tell()
        if total_size <= 0:
            raise InputError(f"{name}: image is empty")
        self._src = source
        self._lock = threading.Lock()
        self._fd = _fileno(source)
        self.total_size = total_size
        self.name = name

    @classmethod
    def open(cls, path: str | os.PathLike[str]) -> "EmmcImage":
        try:
            fh = open(path, "rb")
        except OSError as exc:
            raise InputError(f"cannot open image {os.fspath(path)!r}: {exc.strerror}") from exc
        try:
            return cls(fh, os.fstat(fh.fileno()).st_size, name=os.fspath(path))
        except Exception:
            fh.close()
            raise

    def close(self) -> None:
        self._src.close()

    def __enter__(self) -> "EmmcImage":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def check_range(self, offset: int, size: int) -> None:
        if offset < 0 or size < 0 or offset + size > self.total_size:
            raise ImageBoundsError(
                f"range [{offset:#x}, {offset + size:#x}) outside image of {self.total_size:#x} bytes"
            )

    def read(self, offset: int, size: int) -> bytes:
        self.check_range(offset, size)
        if self._fd is not None:
            data = os.pread(self._fd, size, offset)
        else:
            with self._lock:
                self._src.seek(offset)
                data = self._src.read(size)
        if len(data) != size:
            raise ShortReadError(f"short read at {offset:#x}: wanted {size}, got {len(data)}")
        return data

    def data_extents(self, start: int, end: int) -> Iterator[tuple[int, int]]:
        """Sub-ranges of [start, end) that may hold non-zero data.

        Uses SEEK_DATA/SEEK_HOLE where the filesystem supports them so holes
        in sparse images are skipped; otherwise yields the whole range.
        """
        if self._fd is None or not hasattr(os, "SEEK_DATA"):
            yield start, end
            return
        pos = start
        while pos < end:
            try:
                data = os.lseek(self._fd, pos, os.SEEK_DATA)
            except OSError as exc:
                if exc.errno == errno.ENXIO:
                    return
                yield pos, end
                return
            if data >= end:
                return
            hole = min(os.lseek(self._fd, data, os.SEEK_HOLE), end)
            yield data, hole
            pos = hole


def _fileno(source) -> int | None:
    try:
        fd = source.fileno()
    except (AttributeError, OSError, io.UnsupportedOperation):
        return None
    return fd if hasattr(os, "pread") else None


# -- kernel log -------------------------------------------------------------

_KMSG_PREFIX = re.compile(r"^\s*(?:<\d+>)?\s*\[[^\]]*\]\s*")
_KMSG_LINE = re.compile(
    r"(?P<name>[A-Za-z][\w.-]*)\s*:\s*(?:offset\s+)?(?P<offset>\d\S*?),?\s+"
    r"(?:size\s+)?(?P<size>\d\S*?)\s*$"
)


@dataclass(frozen=True)
class LineError:
    line_no: int
    text: str
    reason: str


@dataclass
class KernelLogTable:
    entries: list[PartitionEntry]
    errors: list[LineError]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def _parse_number(text: str) -> int:
    if text.lower().startswith("0x"):
        return int(text[2:], 16)
    return int(text, 10)


def parse_kernel_log_table(text: str) -> KernelLogTable:
    """Recover partition lines from a ``last_kmsg``-style log.

    Accepted shape, after an optional ``[timestamp]`` prefix:
    ``name : offset size`` with hex (``0x``) or decimal fields, optionally
    spelled ``name: offset 0x.., size 0x..``. Lines are not assumed to be
    in layout order.
    """
    entries: list[PartitionEntry] = []
    errors: list[LineError] = []
    seen: set[str] = set()
    for line_no, raw in enumerate(text.splitlines(), 1):
        body = _KMSG_PREFIX.sub("", raw)
        m = _KMSG_LINE.search(body)
        if m is None:
            continue
        name = m.group("name")
        try:
            offset = _parse_number(m.group("offset"))
            size = _parse_number(m.group("size"))
        except ValueError as exc:
            errors.append(LineError(line_no, raw, f"bad numeric field: {exc}"))
            continue
        if name in seen:
            errors.append(LineError(line_no, raw, f"duplicate partition {name!r}"))
            continue
        seen.add(name)
        entries.append(
            PartitionEntry(name, offset, size, name in FASTBOOT_LISTED, Provenance.KERNEL_LOG)
        )
    return KernelLogTable(entries, errors)


def render_kernel_log_table(table: Iterable[PartitionEntry]) -> str:
    lines = []
    for i, e in enumerate(table, 1):
        lines.append(f"[    2.{i:06d}@0] mmcblk0p{i:02d}: partition {e.name} : "
                     f"0x{e.offset:012x} 0x{e.size:012x}")
    return "\n".join(lines) + "\n"


# -- extraction -------------------------------------------------------------


@dataclass(frozen=True)
class ExtractionReceipt:
    name: str
    offset: int
    size: int
    bytes_written: int
    sha256: str

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "offset": self.offset,
            "size": self.size,
            "bytes_written": self.bytes_written,
            "sha256": self.sha256,
        }


_ZEROS = bytes(CHUNK)


def extract_partition(image: EmmcImage, entry: PartitionEntry, sink: BinaryIO) -> ExtractionReceipt:
    """Copy ``entry`` out of ``image`` into ``sink`` and hash the copied range.

    Holes in sparse images are hashed as zeros; when the sink is seekable
    they are skipped with a seek so the output stays sparse too.
    """
    image.check_range(entry.offset, entry.size)
    digest = hashlib.sha256()
    seekable = _is_seekable(sink)
    base = sink.tell() if seekable else 0
    written = 0
    pos = entry.offset
    for lo, hi in list(image.data_extents(entry.offset, entry.end)) + [(entry.end, entry.end)]:
        while pos < lo:  # hole
            n = min(CHUNK, lo - pos)
            digest.update(_ZEROS[:n])
            if not seekable:
                sink.write(_ZEROS[:n])
            pos += n
            written += n
        if seekable and lo > entry.offset:
            sink.seek(base + (lo - entry.offset))
        while pos < hi:
            n = min(CHUNK, hi - pos)
            chunk = image.read(pos, n)
            digest.update(chunk)
            sink.write(chunk)
            pos += n
            written += n
    if seekable:
        sink.truncate(base + entry.size)
        sink.seek(base + entry.size)
    return ExtractionReceipt(entry.name, entry.offset, entry.size, written, digest.hexdigest())


def _is_seekable(sink) -> bool:
    try:
        return sink.seekable() and hasattr(sink, "truncate")
    except (AttributeError, ValueError):
        return False


def partition_fit(image: EmmcImage, table: Iterable[PartitionEntry]) -> tuple[list[PartitionEntry], list[PartitionEntry]]:
    """Split ``table`` into entries inside the image and entries that are not."""
    inside, outside = [], []
    for e in table:
        (inside if e.offset >= 0 and e.end <= image.total_size else outside).append(e)
    return inside, outside


def check_table(table: Iterable[PartitionEntry]) -> list[PartitionEntry]:
    ordered = sorted(table, key=lambda e: (e.offset, e.size))
    names: set[str] = set()
    for e in ordered:
        if e.name in names:
            raise TableOverlapError(f"duplicate partition name {e.name!r}")
        names.add(e.name)
    for a, b in zip(ordered, ordered[1:]):
        if b.offset < a.end:
            raise TableOverlapError(f"partitions {a.name!r} and {b.name!r} overlap")
    return ordered


def unmapped_ranges(image: EmmcImage, table: Iterable[PartitionEntry]) -> list[tuple[int, int]]:
    """Maximal (start, length) gaps covered by no table entry."""
    ordered = check_table(table)
    for e in ordered:
        image.check_range(e.offset, e.size)
    gaps = []
    cursor = 0
    for e in ordered:
        if e.offset > cursor:
            gaps.append((cursor, e.offset - cursor))
        cursor = max(cursor, e.end)
    if cursor < image.total_size:
        gaps.append((cursor, image.total_size - cursor))
    return gaps


# -- ext4 carving -----------------------------------------------------------


@dataclass(frozen=True)
class CarvedRegion:
    start: int
    length: int
    filesystem_kind: FilesystemKind
    superblock_offset: int
    block_size: int = 0
    block_count: int = 0
    truncated: bool = False
    warnings: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "start": self.start,
            "length": self.length,
            "filesystem_kind": self.filesystem_kind.value,
            "superblock_offset": self.superblock_offset,
            "block_size": self.block_size,
            "block_count": self.block_count,
            "truncated": self.truncated,
            "warnings": list(self.warnings),
        }


def _inspect_superblock(sb: bytes, fs_start: int, range_end: int) -> CarvedRegion | None:
    """Build a region for a superblock whose magic is already confirmed.

    Returns None for backup superblocks (non-zero block group number), which
    sit at block-group starts and would otherwise alias as extra filesystems.
    """
    (block_group_nr,) = struct.unpack_from("<H", sb, 0x5A)
    if block_group_nr != 0:
        return None
    blocks_lo, = struct.unpack_from("<I", sb, 0x04)
    log_bs, = struct.unpack_from("<I", sb, 0x18)
    incompat, = struct.unpack_from("<I", sb, 0x60)
    blocks_hi = struct.unpack_from("<I", sb, 0x150)[0] if incompat & _INCOMPAT_64BIT else 0
    warnings = []
    sb_off = fs_start + EXT4_SUPERBLOCK_OFFSET
    if log_bs > 6:
        warnings.append(f"implausible s_log_block_size {log_bs}")
        return CarvedRegion(fs_start, range_end - fs_start, FilesystemKind.UNKNOWN, sb_off,
                            truncated=True, warnings=tuple(warnings))
    block_size = 1024 << log_bs
    block_count = (blocks_hi << 32) | blocks_lo
    length = block_count * block_size
    truncated = False
    if block_count == 0:
        warnings.append("block count is zero")
        length, truncated = range_end - fs_start, True
    elif fs_start + length > range_end:
        warnings.append(
            f"superblock claims {length:#x} bytes, only {range_end - fs_start:#x} available"
        )
        length, truncated = range_end - fs_start, True
    return CarvedRegion(fs_start, length, FilesystemKind.EXT4, sb_off, block_size,
                        block_count, truncated, tuple(warnings))


def carve_ext4(image: EmmcImage, range_: tuple[int, int], alignment: int = SECTOR) -> list[CarvedRegion]:
    """Find ext4 filesystems whose start lies on ``alignment`` inside ``range_``.

    A hit is the 0xEF53 magic at byte 0x38 of a superblock that itself sits
    1024 bytes after a candidate filesystem start. Lengths come from the
    superblock and are clamped to the range end (flagged as truncated).
    """
    if alignment < 1:
        raise ValueError("alignment must be >= 1")
    start, length = range_
    end = start + length
    image.check_range(start, length)
    hits: list[CarvedRegion] = []
    rel = EXT4_SUPERBLOCK_OFFSET + EXT4_MAGIC_OFFSET
    overlap = rel + 2
    for lo, hi in image.data_extents(start, end):
        # Holes read as zeros and cannot contain the magic.
        pos = lo
        while pos < hi:
            n = min(CHUNK, hi - pos)
            window = image.read(pos, min(n + overlap, end - pos))
            idx = window.find(_MAGIC_BYTES)
            while idx != -1 and idx < n:
                magic_at = pos + idx
                fs_start = magic_at - rel
                if fs_start >= start and fs_start % alignment == 0 and magic_at + 2 <= end:
                    sb = image.read(fs_start + EXT4_SUPERBLOCK_OFFSET,
                                    min(1024, end - fs_start - EXT4_SUPERBLOCK_OFFSET))
                    sb = sb.ljust(1024, b"\0")
                    region = _inspect_superblock(sb, fs_start, end)
                    if region is not None:
                        hits.append(region)
                idx = window.find(_MAGIC_BYTES, idx + 1)
            pos += n
    unique = {r.start: r for r in hits}
    return [unique[k] for k in sorted(unique)]


def probe_ext4(image: EmmcImage, fs_start: int, range_end: int | None = None) -> CarvedRegion | None:
    """Check for an ext4 primary superblock at exactly ``fs_start``."""
    end = image.total_size if range_end is None else range_end
    sb_at = fs_start + EXT4_SUPERBLOCK_OFFSET
    if sb_at + 1024 > end:
        return None
    sb = image.read(sb_at, 1024)
    if sb[EXT4_MAGIC_OFFSET:EXT4_MAGIC_OFFSET + 2] != _MAGIC_BYTES:
        return None
    return _inspect_superblock(sb, fs_start, end)
