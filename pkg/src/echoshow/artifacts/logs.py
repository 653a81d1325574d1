"""DropBoxManager log archives and the interaction events inside them.

Archives are named ``Log.{category}@{unix ms}.txt.zip``. A line is an
event when it contains one of the trigger tokens as a whole word; any
``key=value`` pairs after the token are kept. The event time comes from the
line's leading timestamp (epoch ms, ISO date-time, or logcat ``MM-DD
hh:mm:ss.mmm`` with the year taken from the archive), falling back to the
archive timestamp. All times are device-epoch unix ms; no timezone is
inferred.
"""

from __future__ import annotations

import calendar
import enum
import logging
import os
import re
import zipfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from ..ids import UserId, try_classify

log = logging.getLogger(__name__)


class LogCategory(str, enum.Enum):
    CRASH = "crash"
    EVENTS = "events"
    KERNEL = "kernel"
    MAIN = "main"
    METRICS = "metrics"
    SYSTEM = "system"
    VITALS = "vitals"


_FILENAME = re.compile(r"^Log\.(?P<category>[a-z]+)@(?P<ts>\d+)\.txt\.zip$")


def log_filename(category: LogCategory, timestamp: int) -> str:
    return f"Log.{category.value}@{timestamp}.txt.zip"


@dataclass(frozen=True)
class DropboxLogEntry:
    category: LogCategory
    timestamp: int
    lines: tuple[str, ...]
    source_path: str

    @property
    def filename(self) -> str:
        return log_filename(self.category, self.timestamp)


@dataclass(frozen=True)
class FileIssue:
    path: str
    message: str

    def to_json(self) -> dict:
        return {"path": self.path, "message": self.message}


@dataclass
class LogCollection:
    entries: list[DropboxLogEntry] = field(default_factory=list)
    errors: list[FileIssue] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def parse_log_filename(name: str) -> tuple[LogCategory, int] | None:
    m = _FILENAME.match(name)
    if m is None:
        return None
    try:
        return LogCategory(m.group("category")), int(m.group("ts"))
    except ValueError:
        return None


def read_dropbox_file(path: str | os.PathLike[str], source_path: str | None = None) -> DropboxLogEntry:
    """Decompress one archive. Raises ``ValueError`` for non-conforming names
    and ``zipfile.BadZipFile``/``OSError`` for unreadable archives."""
    p = Path(path)
    parsed = parse_log_filename(p.name)
    if parsed is None:
        raise ValueError(f"{p.name}: not a Log.<category>@<ts>.txt.zip archive")
    category, ts = parsed
    lines: list[str] = []
    with zipfile.ZipFile(p) as zf:
        for info in zf.infolist():
            if info.is_dir():
                continue
            text = zf.read(info).decode("utf-8", "replace")
            lines.extend(text.splitlines())
    return DropboxLogEntry(category, ts, tuple(lines), source_path or str(p))


def read_dropbox_logs(directory: str | os.PathLike[str]) -> LogCollection:
    out = LogCollection()
    d = Path(directory)
    for p in sorted(d.iterdir()):
        if not p.is_file():
            continue
        if parse_log_filename(p.name) is None:
            log.info("skipping %s: not a DropBox log archive", p)
            out.skipped.append(str(p))
            continue
        try:
            out.entries.append(read_dropbox_file(p))
        except (zipfile.BadZipFile, OSError, EOFError) as exc:
            out.errors.append(FileIssue(str(p), f"corrupt archive: {exc}"))
    return out


# -- events -----------------------------------------------------------------


class EventKind(str, enum.Enum):
    WAKE_WORD = "WakeWord"
    BUTTON = "Button"
    TOUCH = "Touch"
    PRIVACY_MODE_ON = "PrivacyModeOn"
    PRIVACY_MODE_OFF = "PrivacyModeOff"
    CAMERA_ENABLED = "CameraEnabled"
    CAMERA_DISABLED = "CameraDisabled"
    MOTION = "Motion"


TRIGGERS: dict[str, EventKind] = {
    "WAKE_WORD": EventKind.WAKE_WORD,
    "BUTTON_EVENT": EventKind.BUTTON,
    "TOUCH_EVENT": EventKind.TOUCH,
    "PRIVACY_MODE_ON": EventKind.PRIVACY_MODE_ON,
    "PRIVACY_MODE_OFF": EventKind.PRIVACY_MODE_OFF,
    "CAMERA_ENABLED": EventKind.CAMERA_ENABLED,
    "CAMERA_DISABLED": EventKind.CAMERA_DISABLED,
    "MOTION": EventKind.MOTION,
}
TOKEN_OF = {kind: token for token, kind in TRIGGERS.items()}

# Which log category may carry each kind.
CATEGORY_OF = {kind: LogCategory.SYSTEM for kind in EventKind}
CATEGORY_OF[EventKind.MOTION] = LogCategory.MAIN

_TOKEN = re.compile(r"(?<![A-Za-z0-9_])(" + "|".join(sorted(TRIGGERS, key=len, reverse=True))
                    + r")(?![A-Za-z0-9_])")
_KV = re.compile(r"([A-Za-z_][\w.-]*)=(\S+)")
_EPOCH_MS = re.compile(r"^\s*(\d{13})(?!\d)")
_ISO = re.compile(r"^\s*(\d{4})-(\d{2})-(\d{2})[ T](\d{2}):(\d{2}):(\d{2})(?:\.(\d{1,6}))?")
_LOGCAT = re.compile(r"^\s*(\d{2})-(\d{2})\s+(\d{2}):(\d{2}):(\d{2})\.(\d{3})")

_DAY_MS = 86_400_000


def _utc_ms(year, month, day, hh, mm, ss, frac: str | None) -> int:
    secs = calendar.timegm((year, month, day, hh, mm, ss, 0, 0, 0))
    ms = int((frac or "0").ljust(3, "0")[:3])
    return secs * 1000 + ms


def line_timestamp(line: str, archive_ts: int) -> tuple[int, bool]:
    """(timestamp, from_line) for one log line."""
    m = _EPOCH_MS.match(line)
    if m:
        return int(m.group(1)), True
    try:
        m = _ISO.match(line)
        if m:
            y, mo, d, h, mi, s = (int(g) for g in m.groups()[:6])
            return _utc_ms(y, mo, d, h, mi, s, m.group(7)), True
        m = _LOGCAT.match(line)
        if m:
            mo, d, h, mi, s = (int(g) for g in m.groups()[:5])
            year = datetime.fromtimestamp(archive_ts / 1000, tz=timezone.utc).year
            ts = _utc_ms(year, mo, d, h, mi, s, m.group(6))
            # An archive written just after New Year may hold December lines.
            if ts > archive_ts + _DAY_MS:
                ts = _utc_ms(year - 1, mo, d, h, mi, s, m.group(6))
            return ts, True
    except (ValueError, OverflowError):
        pass
    return archive_ts, False


@dataclass(frozen=True)
class MotionInfo:
    is_person: bool | None = None
    enrolled: bool | None = None
    face_quality: float | None = None
    person_id: UserId | None = None

    def to_json(self) -> dict:
        return {
            "is_person": self.is_person,
            "enrolled": self.enrolled,
            "face_quality": self.face_quality,
            "person_id": self.person_id.text if self.person_id else None,
        }


@dataclass(frozen=True)
class EventSource:
    path: str
    line: int

    def __str__(self) -> str:
        return f"{self.path}:{self.line}"


@dataclass(frozen=True)
class DeviceEvent:
    kind: EventKind
    timestamp: int
    source: EventSource
    motion: MotionInfo | None = None
    fields: tuple[tuple[str, str], ...] = ()
    timestamp_from_line: bool = True

    def __post_init__(self):
        if (self.motion is not None) != (self.kind is EventKind.MOTION):
            raise ValueError("motion details are present exactly for Motion events")

    def to_json(self) -> dict:
        out = {
            "kind": self.kind.value,
            "token": TOKEN_OF[self.kind],
            "timestamp": self.timestamp,
            "timestamp_from_line": self.timestamp_from_line,
            "source": str(self.source),
            "fields": dict(self.fields),
        }
        if self.motion is not None:
            out["motion"] = self.motion.to_json()
        return out


def _bool(text: str | None) -> bool | None:
    if text is None:
        return None
    t = text.lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    return None


def _float(text: str | None) -> float | None:
    if text is None:
        return None
    try:
        return float(text)
    except ValueError:
        return None


def _motion(kv: dict[str, str]) -> MotionInfo:
    pid = kv.get("personId")
    return MotionInfo(
        is_person=_bool(kv.get("person")),
        enrolled=_bool(kv.get("enrolled")),
        face_quality=_float(kv.get("quality")),
        person_id=try_classify(pid) if pid else None,
    )


def events_in_entry(entry: DropboxLogEntry) -> list[DeviceEvent]:
    events = []
    for line_no, line in enumerate(entry.lines, 1):
        m = _TOKEN.search(line)
        if m is None:
            continue
        kind = TRIGGERS[m.group(1)]
        if CATEGORY_OF[kind] is not entry.category:
            continue
        kv = dict(_KV.findall(line[m.end():]))
        ts, from_line = line_timestamp(line, entry.timestamp)
        events.append(DeviceEvent(
            kind, ts, EventSource(entry.source_path, line_no),
            motion=_motion(kv) if kind is EventKind.MOTION else None,
            fields=tuple(sorted(kv.items())),
            timestamp_from_line=from_line,
        ))
    return events


def extract_events(entries: Iterable[DropboxLogEntry]) -> list[DeviceEvent]:
    """All events, ordered by (timestamp, source path, line)."""
    events = [ev for entry in entries for ev in events_in_entry(entry)]
    events.sort(key=lambda e: (e.timestamp, e.source.path, e.source.line))
    return events
