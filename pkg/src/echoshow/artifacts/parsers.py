"""Per-format parsers behind the artifact catalog.

Every parser takes a descriptor and a file and returns ``ArtifactRecord``
objects whose ``fields`` keep the source's own column/key names.
"""

from __future__ import annotations

import hashlib
import logging
import os
import sqlite3
import xml.etree.ElementTree as ET
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .. import _sqlite
from ..errors import SchemaError
from ..ids import IdKind, UserId, try_classify
from ..vault import load_store_v1, load_store_v2, redact, token_name
from .catalog import ArtifactDescriptor
from .logs import events_in_entry, read_dropbox_file

log = logging.getLogger(__name__)


class ArtifactParseError(SchemaError):
    pass


@dataclass(frozen=True)
class ArtifactRecord:
    artifact_id: str
    source_path: str
    fields: dict
    index: int = 0
    sensitive: tuple[str, ...] = ()

    def to_json(self, reveal: bool = False) -> dict:
        fields = dict(self.fields)
        if not reveal:
            for key in self.sensitive:
                if isinstance(fields.get(key), str) and fields[key]:
                    fields[key] = redact(fields[key])
        return {"artifact_id": self.artifact_id, "source_path": self.source_path,
                "index": self.index, "fields": fields}


Parser = Callable[[ArtifactDescriptor, Path, str], list[ArtifactRecord]]


# -- Wi-Fi ------------------------------------------------------------------


@dataclass(frozen=True)
class WifiCredential:
    ssid: str
    psk_or_key: str = field(repr=False)
    security: str

    def __post_init__(self):
        if not self.ssid:
            raise ValueError("ssid must be non-empty")


# AllowedKeyMgmt bit positions in Android's WifiConfiguration.KeyMgmt
_KEY_MGMT = ["NONE", "WPA_PSK", "WPA_EAP", "IEEE8021X", "WPA2_PSK", "OSEN", "FT_PSK",
             "FT_EAP", "SAE", "OWE", "SUITE_B_192"]


def _unquote(value: str | None) -> str:
    if value is None:
        return ""
    if len(value) >= 2 and value[0] == value[-1] == '"':
        return value[1:-1]
    return value


def _key_mgmt(hex_text: str | None) -> str | None:
    if not hex_text:
        return None
    try:
        bits = int.from_bytes(bytes.fromhex(hex_text.strip()), "little")
    except ValueError:
        return None
    names = [n for i, n in enumerate(_KEY_MGMT) if bits >> i & 1]
    if not names:
        return None
    # Prefer the strongest advertised scheme.
    return next(n for n in reversed(_KEY_MGMT) if n in names)


def parse_wifi_config(path: str | os.PathLike[str]) -> list[WifiCredential]:
    """One credential per ``<Network>`` block of an Android WifiConfigStore.xml."""
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise ArtifactParseError(f"{path}: malformed XML ({exc})") from exc
    creds = []
    for conf in root.iter("WifiConfiguration"):
        values: dict[str, str | None] = {}
        for el in conf:
            name = el.get("name")
            if name is None:
                continue
            if el.tag == "null":
                values[name] = None
            elif el.tag in ("string",):
                values[name] = el.text or ""
            elif el.tag == "byte-array":
                values[name] = el.text or ""
            elif el.get("value") is not None:
                values[name] = el.get("value")
        ssid = _unquote(values.get("SSID"))
        if not ssid:
            continue
        psk = values.get("PreSharedKey")
        wep = next((v for k, v in values.items() if k.startswith("WEPKeys") and v), None)
        key = _unquote(psk) if psk is not None else _unquote(wep)
        config_key = values.get("ConfigKey") or ""
        security = None
        if config_key.startswith('"') and config_key.count('"') >= 2:
            security = config_key.rsplit('"', 1)[1] or None
        security = security or _key_mgmt(values.get("AllowedKeyMgmt")) or ("WPA_PSK" if key else "NONE")
        creds.append(WifiCredential(ssid, key, security))
    return creds


def _wifi(desc, path, rel):
    return [
        ArtifactRecord(desc.id, rel, {"ssid": c.ssid, "psk_or_key": c.psk_or_key,
                                      "security": c.security}, i, sensitive=("psk_or_key",))
        for i, c in enumerate(parse_wifi_config(path))
    ]


# -- Visual ID recognition --------------------------------------------------

RECOGNITION_TABLE = "FaceEnrolledProfilesRecognition"
LAST_RECOGNIZED_CAVEAT = (
    "lastRecognizedTimeMillis is reported raw; observed values track device start-up "
    "rather than the last recognition"
)


@dataclass(frozen=True)
class EnrolledProfile:
    person_id: UserId
    last_recognized_time_millis: int | None

    def __post_init__(self):
        if self.person_id.kind is not IdKind.PERSON_ID:
            raise ValueError("enrolled profiles carry a personId")


def parse_recognition_db(path: str | os.PathLike[str], notices: list[str] | None = None) -> list[EnrolledProfile]:
    con = _sqlite.open_readonly(path)
    try:
        _sqlite.require_tables(con, path, RECOGNITION_TABLE)
        cols = [r[1] for r in con.execute(f'PRAGMA table_info("{RECOGNITION_TABLE}")')]
        if "personId" not in cols:
            raise SchemaError(f"{path}: {RECOGNITION_TABLE} has no personId column")
        ts_col = "lastRecognizedTimeMillis" if "lastRecognizedTimeMillis" in cols else None
        sql = f'SELECT personId, {ts_col or "NULL"} FROM "{RECOGNITION_TABLE}" ORDER BY rowid'
        rows = con.execute(sql).fetchall()
    finally:
        con.close()
    out = []
    for pid, ts in rows:
        uid = try_classify(str(pid)) if pid is not None else None
        if uid is None or uid.kind is not IdKind.PERSON_ID:
            msg = f"{path}: skipping row with invalid personId {pid!r}"
            log.warning(msg)
            if notices is not None:
                notices.append(msg)
            continue
        out.append(EnrolledProfile(uid, ts))
    return out


def _recognition(desc, path, rel):
    return [
        ArtifactRecord(desc.id, rel, {"person_id": p.person_id.text,
                                      "last_recognized_time_millis": p.last_recognized_time_millis,
                                      "caveat": LAST_RECOGNIZED_CAVEAT}, i)
        for i, p in enumerate(parse_recognition_db(path))
    ]


# -- generic tables and property files ---------------------------------------


def _sqlite_records(desc, path, rel) -> list[ArtifactRecord]:
    con = _sqlite.open_readonly(path)
    try:
        tables = _sqlite.table_names(con)
        if not tables:
            raise ArtifactParseError(f"{path}: database has no tables")
        records = []
        for table in tables:
            for r in con.execute(f'SELECT * FROM "{table}"'):
                columns = {k: _sqlite.scalar(r[k]) for k in r.keys()}
                records.append(ArtifactRecord(desc.id, rel, {"table": table, "columns": columns},
                                              len(records)))
        return records
    except sqlite3.DatabaseError as exc:
        raise ArtifactParseError(f"{path}: {exc}") from exc
    finally:
        con.close()


def parse_shared_prefs(path: str | os.PathLike[str]) -> list[dict]:
    """Key/value entries of an Android ``shared_prefs`` XML map."""
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise ArtifactParseError(f"{path}: malformed XML ({exc})") from exc
    if root.tag != "map":
        raise ArtifactParseError(f"{path}: not a shared_prefs map (root <{root.tag}>)")
    entries = []
    for el in root:
        key = el.get("name")
        if el.tag == "string":
            value = el.text or ""
        elif el.tag == "set":
            value = [s.text or "" for s in el.findall("string")]
        elif el.tag in ("int", "long"):
            raw = el.get("value")
            try:
                value = int(raw)
            except (TypeError, ValueError):
                value = raw
        elif el.tag == "float":
            raw = el.get("value")
            try:
                value = float(raw)
            except (TypeError, ValueError):
                value = raw
        elif el.tag == "boolean":
            value = el.get("value") == "true"
        else:
            value = el.get("value", el.text)
        entries.append({"key": key, "type": el.tag, "value": value})
    return entries


def _prefs_records(desc, path, rel):
    return [ArtifactRecord(desc.id, rel, e, i) for i, e in enumerate(parse_shared_prefs(path))]


def parse_table_artifact(desc: ArtifactDescriptor, path: str | os.PathLike[str], rel: str | None = None) -> list[ArtifactRecord]:
    """Generic reader: SQLite tables row by row, or shared_prefs XML entries."""
    path = Path(path)
    rel = rel or str(path)
    if _sqlite.is_sqlite(path) or path.stat().st_size == 0:
        return _sqlite_records(desc, path, rel)
    head = path.read_bytes()[:64].lstrip()
    if head.startswith(b"<"):
        return _prefs_records(desc, path, rel)
    raise ArtifactParseError(f"{path}: neither SQLite nor XML")


def _inventory(desc, path, rel):
    h = hashlib.sha256()
    size = 0
    with open(path, "rb") as fh:
        head = fh.read(16)
        h.update(head)
        size += len(head)
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
            size += len(chunk)
    return [ArtifactRecord(desc.id, rel, {"size": size, "sha256": h.hexdigest(),
                                          "magic": head[:8].hex()})]


def _credential_store(desc, path, rel):
    """Token names and digests only; values never leave the vault unredacted."""
    con = _sqlite.open_readonly(path)
    try:
        tables = set(_sqlite.table_names(con))
    finally:
        con.close()
    records = []
    if {"encryption_data", "account_data"} <= tables:
        store = load_store_v2(path)
        for r in store.account_rows:
            value = r["account_data_value"]
            blob = value if isinstance(value, bytes) else (value or "").encode()
            records.append(ArtifactRecord(desc.id, rel, {
                "store_version": "V2_encrypted",
                "directed_id": r["account_data_directed_id"],
                "key": r["account_data_key"],
                "token_name": token_name(r["account_data_key"] or ""),
                "value_sha256": hashlib.sha256(blob).hexdigest() if value is not None else None,
            }, len(records)))
        records.append(ArtifactRecord(desc.id, rel, {
            "store_version": "V2_encrypted", "key_encryption_secret_sha256": store.secret.fingerprint,
        }, len(records)))
    elif "tokens" in tables:
        for tok in load_store_v1(path):
            records.append(ArtifactRecord(desc.id, rel, {
                "store_version": "V1_plain", "directed_id": tok.directed_id, "key": tok.key,
                "token_name": tok.name, "value": tok.plaintext or "",
            }, len(records), sensitive=("value",)))
    else:
        raise ArtifactParseError(f"{path}: not a recognised token store")
    return records


def _dropbox(desc, path, rel):
    try:
        entry = read_dropbox_file(path, rel)
    except ValueError:
        return []  # not an archive; listed as claimed but empty
    except (zipfile.BadZipFile, EOFError) as exc:
        raise ArtifactParseError(f"{path}: corrupt archive ({exc})") from exc
    records = [ArtifactRecord(desc.id, rel, {
        "record_type": "archive", "category": entry.category.value,
        "timestamp": entry.timestamp, "line_count": len(entry.lines),
    }, 0)]
    for ev in events_in_entry(entry):
        records.append(ArtifactRecord(desc.id, rel, {"record_type": "event", **ev.to_json()},
                                      len(records)))
    return records


PARSERS: dict[str, Parser] = {
    "wifi_config": _wifi,
    "recognition_db": _recognition,
    "sqlite_table": parse_table_artifact,
    "shared_prefs": _prefs_records,
    "file_inventory": _inventory,
    "credential_store": _credential_store,
    "dropbox_log": _dropbox,
}
