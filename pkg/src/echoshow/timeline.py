"""Merge local and cloud record files into one timeline.

Timestamps stay device-epoch unix milliseconds. The JSON Lines output opens
with a ``_meta`` line that carries a format version and no wall-clock data,
so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import os
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

from . import _io
from .errors import InputError, SchemaError
from .ids import UserId, find_ids, try_classify

log = logging.getLogger(__name__)

TIMELINE_FORMAT = "echoshow-timeline"
TIMELINE_VERSION = 1

# Plausible unix-ms range: 2001-09-09 .. 2286-11-20.
_MS_MIN, _MS_MAX = 10**12, 10**13
_TIME_NAME = re.compile(r"time|date|timestamp|millis", re.IGNORECASE)


class TimelineSource(str, enum.Enum):
    DEVICE_LOG = "DeviceLog"
    LOCAL_DB = "LocalDb"
    CLOUD_VOICE_HISTORY = "CloudVoiceHistory"
    CLOUD_MEDIA = "CloudMedia"
    CLOUD_COMMS = "CloudComms"


SOURCE_RANK = {s: i for i, s in enumerate(TimelineSource)}


@dataclass(frozen=True)
class TimelineEvent:
    timestamp: int
    source: TimelineSource
    kind: str
    summary: str
    subject_ids: tuple[UserId, ...]
    evidence: str

    def __post_init__(self):
        if not self.evidence:
            raise ValueError("timeline events need an evidence reference")

    def sort_key(self):
        return (self.timestamp, SOURCE_RANK[self.source], self.kind, self.evidence)

    def to_json(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "source": self.source.value,
            "kind": self.kind,
            "summary": self.summary,
            "subject_ids": [{"kind": u.kind.value, "id": u.text} for u in self.subject_ids],
            "evidence": self.evidence,
        }


def _ids(*values) -> tuple[UserId, ...]:
    found: dict[str, UserId] = {}
    for v in values:
        if isinstance(v, str):
            for u in find_ids(v):
                found.setdefault(u.text, u)
        elif isinstance(v, dict):
            for u in _ids(*v.values()):
                found.setdefault(u.text, u)
        elif isinstance(v, list):
            for u in _ids(*v):
                found.setdefault(u.text, u)
    return tuple(sorted(found.values()))


def _is_ms(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and _MS_MIN <= v < _MS_MAX


def _device_event(row: dict) -> TimelineEvent:
    f = row["fields"]
    motion = f.get("motion") or {}
    parts = [f.get("token", f.get("kind", "?"))]
    if motion:
        parts += [f"{k}={motion[k]}" for k in ("is_person", "enrolled", "face_quality") if motion.get(k) is not None]
    pid = try_classify(motion["person_id"]) if motion.get("person_id") else None
    return TimelineEvent(int(f["timestamp"]), TimelineSource.DEVICE_LOG, f["kind"], " ".join(map(str, parts)),
                         (pid,) if pid else (), f["source"])


def _local_events(row: dict) -> Iterator[TimelineEvent]:
    fields = row.get("fields") or {}
    aid, src, idx = row["artifact_id"], row["source_path"], row.get("index", 0)
    if fields.get("record_type") == "event":
        yield _device_event(row)
        return
    if fields.get("record_type") == "archive":
        return
    flat = dict(fields.get("columns") or {})
    if "key" in fields and "value" in fields and "columns" not in fields:
        flat = {str(fields["key"]): fields["value"]}
    for k, v in fields.items():
        if k not in ("columns", "key", "value", "table"):
            flat.setdefault(k, v)
    subjects = _ids(*flat.values())
    for name in sorted(flat):
        v = flat[name]
        if _TIME_NAME.search(name) and _is_ms(v):
            label = fields.get("table") or aid
            yield TimelineEvent(v, TimelineSource.LOCAL_DB, f"{aid}:{name}", f"{label}.{name}",
                                subjects, f"{src}#{idx}")


def _cloud_events(row: dict) -> Iterator[TimelineEvent]:
    kind = row["record_type"]
    ev = row.get("evidence") or ""
    if kind == "voice_request":
        pid = try_classify(row["person_id_v2"]) if row.get("person_id_v2") else None
        summary = f'{row.get("device", "")}: "{row.get("transcript", "")}" -> {row.get("intent", "")}'
        yield TimelineEvent(int(row["timestamp"]), TimelineSource.CLOUD_VOICE_HISTORY, "VoiceRequest",
                            summary, (pid,) if pid else (), ev)
    elif kind == "media_item":
        meta = row.get("metadata") or {}
        ts = next((meta[k] for k in sorted(meta) if _TIME_NAME.search(k) and _is_ms(meta[k])), None)
        if ts is not None:
            yield TimelineEvent(ts, TimelineSource.CLOUD_MEDIA, "MediaItem",
                                f'{meta.get("name", row.get("id"))} ({row.get("size")} bytes, sha256 {row.get("sha256", "")[:12]})',
                                _ids(meta), ev)
    elif kind == "comms_message":
        if _is_ms(row.get("time")):
            yield TimelineEvent(row["time"], TimelineSource.CLOUD_COMMS, "CommsMessage",
                                str(row.get("text") or row.get("type") or ""), _ids(row.get("sender"), row.get("conversation_id")), ev)


def events_from_rows(rows: Iterable[dict]) -> Iterator[TimelineEvent]:
    for row in rows:
        if "_meta" in row:
            continue
        try:
            if "artifact_id" in row:
                yield from _local_events(row)
            elif "record_type" in row:
                yield from _cloud_events(row)
        except (KeyError, TypeError, ValueError) as exc:
            log.warning("skipping malformed record %r: %s", row, exc)


def build_timeline(inputs: Iterable[str | os.PathLike[str]]) -> list[TimelineEvent]:
    inputs = list(inputs)
    if not inputs:
        raise InputError("timeline needs at least one input file")
    seen: set[tuple[str, str]] = set()
    events = []
    for path in inputs:
        try:
            rows = list(_io.read_jsonl(path))
        except OSError as exc:
            raise InputError(f"{path}: {exc.strerror or exc}") from exc
        except ValueError as exc:
            raise SchemaError(f"{path}: not JSON Lines ({exc})") from exc
        for ev in events_from_rows(rows):
            key = (ev.evidence, ev.kind)
            if key in seen:
                continue
            seen.add(key)
            events.append(ev)
    events.sort(key=TimelineEvent.sort_key)
    return events


def meta_header(inputs: Iterable[str | os.PathLike[str]], count: int) -> dict:
    return {"_meta": {"format": TIMELINE_FORMAT, "version": TIMELINE_VERSION,
                      "inputs": [Path(p).name for p in inputs], "events": count}}


def write_timeline(path: str | os.PathLike[str], events: list[TimelineEvent], inputs) -> int:
    rows = [meta_header(inputs, len(events))] + [e.to_json() for e in events]
    return _io.atomic_write_jsonl(path, rows) - 1


def render_csv(events: Iterable[TimelineEvent], tz=None) -> str:
    """CSV view; ``tz`` (a ``tzinfo``) changes only the rendered column."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp_ms", "time", "source", "kind", "summary", "subject_ids", "evidence"])
    for e in events:
        when = datetime.fromtimestamp(e.timestamp / 1000, tz=tz or timezone.utc)
        w.writerow([e.timestamp, when.isoformat(timespec="milliseconds"), e.source.value, e.kind,
                    e.summary, " ".join(u.text for u in e.subject_ids), e.evidence])
    return buf.getvalue()
