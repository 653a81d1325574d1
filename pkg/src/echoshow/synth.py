"""Deterministic synthetic evidence: eMMC images, partition trees, token
stores, device logs and mock-cloud fixtures.

Everything is derived from one ``random.Random(seed)`` so a corpus can be
rebuilt byte-for-byte. The generator records what it wrote (event counts,
identifiers, secrets) in a ``Script`` that tests compare against.
"""

from __future__ import annotations

import base64
import io
import json
import os
import random
import sqlite3
import string
import struct
import zipfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from cryptography.hazmat.primitives import padding
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .artifacts.catalog import ArtifactDescriptor, catalog
from .artifacts.logs import LogCategory, log_filename
from .carver import (EXT4_MAGIC, EXT4_SUPERBLOCK_OFFSET, FULL_IMAGE_SIZE, PartitionEntry,
                     builtin_partition_table, render_kernel_log_table)
from .cloud.catalog import endpoint_catalog
from .ids import IdKind, derive_comms_id, random_id
from .vault import token_name

BASE_TS = 1_691_160_000_000  # 2023-08-04T14:40:00Z
EXT4_BLOCK_SIZE = 4096
BLOCKS_PER_GROUP = 32768


# -- ext4 / images -----------------------------------------------------------


def ext4_superblock(block_count: int, log_block_size: int = 2, block_group_nr: int = 0,
                    sixty_four: bool = False) -> bytes:
    """A 1024-byte superblock with the fields the carver reads filled in."""
    sb = bytearray(1024)
    struct.pack_into("<I", sb, 0x00, min(block_count, 0xFFFFFFFF) // 4 or 1)  # inodes
    struct.pack_into("<I", sb, 0x04, block_count & 0xFFFFFFFF)
    struct.pack_into("<I", sb, 0x18, log_block_size)
    struct.pack_into("<I", sb, 0x20, BLOCKS_PER_GROUP)
    struct.pack_into("<H", sb, 0x38, EXT4_MAGIC)
    struct.pack_into("<H", sb, 0x3A, 1)  # clean
    struct.pack_into("<I", sb, 0x4C, 1)  # dynamic rev
    struct.pack_into("<H", sb, 0x58, 256)  # inode size
    struct.pack_into("<H", sb, 0x5A, block_group_nr)
    struct.pack_into("<I", sb, 0x60, 0x2C2 | (0x80 if sixty_four else 0))
    if sixty_four:
        struct.pack_into("<I", sb, 0x150, block_count >> 32)
    return bytes(sb)


def write_ext4_header(fh, fs_start: int, length: int, block_size: int = EXT4_BLOCK_SIZE,
                      backup: bool = True) -> None:
    log_bs = (block_size // 1024).bit_length() - 1
    blocks = length // block_size
    fh.seek(fs_start + EXT4_SUPERBLOCK_OFFSET)
    fh.write(ext4_superblock(blocks, log_bs))
    group_bytes = BLOCKS_PER_GROUP * block_size
    if backup and blocks > BLOCKS_PER_GROUP:
        # Backup superblock of group 1 sits at the start of the group (+1024 for 1 KiB blocks).
        off = fs_start + group_bytes + (EXT4_SUPERBLOCK_OFFSET if block_size == 1024 else 0)
        fh.seek(off)
        fh.write(ext4_superblock(blocks, log_bs, block_group_nr=1))


def partition_marker(name: str) -> bytes:
    return (f"ECHOSHOW-SYNTH-PARTITION:{name}:".encode() * 8)[:256]


EXT4_PARTITIONS = ("vendor", "odm", "system", "product", "cache", "data")


@dataclass
class SynthImage:
    path: str
    size: int
    table: list[PartitionEntry]
    ext4_starts: list[int]


def write_sparse_image(path: str | os.PathLike[str], table: list[PartitionEntry] | None = None,
                       size: int = FULL_IMAGE_SIZE, ext4_in: tuple[str, ...] = EXT4_PARTITIONS) -> SynthImage:
    """Full-size sparse image: a marker at each partition start and ext4
    superblocks for the named partitions; everything else is a hole."""
    table = table or builtin_partition_table()
    starts = []
    with open(path, "wb") as fh:
        fh.truncate(size)
        for e in table:
            if e.name in ext4_in:
                write_ext4_header(fh, e.offset, e.size)
                starts.append(e.offset)
                fh.seek(e.offset)
                fh.write(partition_marker(e.name)[:1024])
            else:
                fh.seek(e.offset)
                fh.write(partition_marker(e.name))
    return SynthImage(os.fspath(path), size, table, sorted(starts))


@dataclass
class CarvingFixture:
    path: str
    size: int
    ext4_starts: list[int]
    decoys: list[int]


def write_carving_fixture(path: str | os.PathLike[str], rng: random.Random, size: int = 64 << 20,
                          filesystems: int = 4, decoys: int = 6) -> CarvingFixture:
    """Small dense image with ext4 filesystems at 512-aligned offsets, random
    noise, backup superblocks and magic values at misaligned positions."""
    buf = bytearray(size)
    for _ in range(64):
        off = rng.randrange(0, size - 4096)
        n = rng.randrange(64, 4096)
        buf[off:off + n] = rng.randbytes(n)
    starts: list[int] = []
    slot = size // filesystems
    for i in range(filesystems):
        start = (i * slot + rng.randrange(0, slot // 4)) // 512 * 512
        length = rng.randrange(slot // 4, slot - (start - i * slot)) // 1024 * 1024
        sb = ext4_superblock(length // 1024, log_block_size=0)
        buf[start + EXT4_SUPERBLOCK_OFFSET:start + EXT4_SUPERBLOCK_OFFSET + 1024] = sb
        starts.append(start)
    # Backup superblock inside the first filesystem (group 1, 1 KiB blocks).
    backup_at = starts[0] + 8192 * 1024 + EXT4_SUPERBLOCK_OFFSET
    if backup_at + 1024 < size and (len(starts) < 2 or backup_at < starts[1]):
        buf[backup_at:backup_at + 1024] = ext4_superblock(100, 0, block_group_nr=1)
    decoy_at = []
    while len(decoy_at) < decoys:
        off = rng.randrange(0, size - 2)
        fs_start = off - EXT4_SUPERBLOCK_OFFSET - 0x38
        if fs_start % 512 == 0 or any(abs(off - s) < 4096 for s in starts):
            continue
        struct.pack_into("<H", buf, off, EXT4_MAGIC)
        decoy_at.append(off)
    with open(path, "wb") as fh:
        fh.write(buf)
    return CarvingFixture(os.fspath(path), size, starts, sorted(decoy_at))


def kernel_log(table: list[PartitionEntry] | None = None, rng: random.Random | None = None) -> str:
    rng = rng or random.Random(0)
    body = render_kernel_log_table(table or builtin_partition_table()).splitlines()
    noise = ["[    0.000000@0] Booting Linux on physical CPU 0x0",
             "[    1.204511@1] mmc0: new HS400 MMC card at address 0001",
             "[    1.210023@1] mmcblk0: mmc0:0001 8GTF4R 14.6 GiB"]
    tail = [f"[    3.{rng.randrange(10**6):06d}@2] init: starting service 'logd'..."]
    return "\n".join(noise + body + tail) + "\n"


# -- identifiers & crypto -------------------------------------------------------


@dataclass
class Identities:
    customer_id: str
    directed_id: str
    comms_id: str
    person_ids: list[str]
    person_ids_v2: list[str]
    contact_ids: list[str]

    @classmethod
    def generate(cls, rng: random.Random, persons: int = 2) -> "Identities":
        directed = random_id(IdKind.DIRECTED_ID, rng)
        return cls(
            customer_id=random_id(IdKind.CUSTOMER_ID, rng).text,
            directed_id=directed.text,
            comms_id=derive_comms_id(directed).text,
            person_ids=[random_id(IdKind.PERSON_ID, rng).text for _ in range(persons)],
            person_ids_v2=[random_id(IdKind.PERSON_ID_V2, rng).text for _ in range(persons)],
            contact_ids=[random_id(IdKind.CONTACT_ID, rng).text for _ in range(3)],
        )


def aes_cbc_encrypt(plaintext: bytes, key: bytes, iv: bytes) -> bytes:
    padder = padding.PKCS7(128).padder()
    padded = padder.update(plaintext) + padder.finalize()
    enc = Cipher(algorithms.AES(key), modes.CBC(iv)).encryptor()
    return iv + enc.update(padded) + enc.finalize()


def _token(rng: random.Random, prefix: str, n: int = 48) -> str:
    return prefix + "".join(rng.choice(string.ascii_letters + string.digits) for _ in range(n))


@dataclass
class StoreSecrets:
    key_b64: str
    tokens: dict[str, str]


TOKEN_KEY_PREFIX = "com.amazon.dcp.sso.token."
V2_TOKENS = ("oauth.refresh_token", "oauth.access_token", "cookies.website_cookies",
             "device.adptoken", "device.privatekey", "device.encrypt.key")


def write_token_store_v2(path: str | os.PathLike[str], rng: random.Random, ids: Identities,
                         refresh_token: str, key_bytes: int = 32, base64_values: bool = True) -> StoreSecrets:
    key = rng.randbytes(key_bytes)
    values = {
        "oauth.refresh_token": refresh_token,
        "oauth.access_token": _token(rng, "Atza|"),
        "cookies.website_cookies": json.dumps({"session-id": _token(rng, "", 17), "at-main": _token(rng, "Atza|")}),
        "device.adptoken": _token(rng, "", 64),
        "device.privatekey": _token(rng, "", 64),
        "device.encrypt.key": _token(rng, "", 32),
    }
    con = sqlite3.connect(path)
    with con:
        con.execute("CREATE TABLE encryption_data (key_encryption_secret TEXT)")
        con.execute("CREATE TABLE account_data (account_data_directed_id TEXT, account_data_key TEXT, "
                    "account_data_value TEXT)")
        con.execute("INSERT INTO encryption_data VALUES (?)", (base64.b64encode(key).decode(),))
        for name in V2_TOKENS:
            blob = aes_cbc_encrypt(values[name].encode(), key, rng.randbytes(16))
            stored = base64.b64encode(blob).decode() if base64_values else blob
            con.execute("INSERT INTO account_data VALUES (?,?,?)",
                        (ids.directed_id, TOKEN_KEY_PREFIX + name, stored))
        for pid in ids.person_ids:
            con.execute("INSERT INTO account_data VALUES (?,?,?)",
                        (ids.directed_id, f"com.amazon.identity.person.{pid}", None))
    con.close()
    return StoreSecrets(base64.b64encode(key).decode(),
                        {token_name(TOKEN_KEY_PREFIX + k): v for k, v in values.items()})


def write_token_store_v1(path: str | os.PathLike[str], rng: random.Random, ids: Identities,
                         refresh_token: str) -> dict[str, str]:
    values = {"refresh_token": refresh_token, "access_token": _token(rng, "Atza|")}
    con = sqlite3.connect(path)
    with con:
        con.execute("CREATE TABLE tokens (token_directed_id TEXT, token_key TEXT, token_value TEXT)")
        for k, v in values.items():
            con.execute("INSERT INTO tokens VALUES (?,?,?)", (ids.directed_id, TOKEN_KEY_PREFIX + "oauth." + k, v))
    con.close()
    return values


# -- device logs ------------------------------------------------------------------


SYSTEM_TEMPLATES = {
    "WAKE_WORD": "I WakeWordService: WAKE_WORD detected engine=pryon confidence={c}",
    "BUTTON_EVENT": "I InputDispatcher: BUTTON_EVENT key={key} action=down",
    "TOUCH_EVENT": "D TouchController: TOUCH_EVENT x={x} y={y}",
    "PRIVACY_MODE_ON": "I PrivacyManager: PRIVACY_MODE_ON source=button",
    "PRIVACY_MODE_OFF": "I PrivacyManager: PRIVACY_MODE_OFF source=button",
    "CAMERA_ENABLED": "I CameraShutter: CAMERA_ENABLED shutter=open",
    "CAMERA_DISABLED": "I CameraShutter: CAMERA_DISABLED shutter=closed",
}
DEFAULT_COUNTS = {"WAKE_WORD": 6, "BUTTON_EVENT": 4, "TOUCH_EVENT": 5, "PRIVACY_MODE_ON": 2,
                  "PRIVACY_MODE_OFF": 2, "CAMERA_ENABLED": 2, "CAMERA_DISABLED": 2, "MOTION": 7}
DECOY_LINES = (
    "I WakeWordService: WAKE_WORD_MODEL loaded version=3",
    "D Motion: MOTIONLESS frames=120",
    "I Misc: heartbeat ok",
)


@dataclass
class MotionExpectation:
    is_person: bool
    enrolled: bool
    face_quality: float
    person_id: str | None


@dataclass
class LogScript:
    counts: dict[str, int]
    motions: list[MotionExpectation]
    archives: list[str]
    timestamps: dict[str, list[int]] = field(default_factory=dict)


def _logcat_ts(ms: int) -> str:
    t = datetime.fromtimestamp(ms / 1000, tz=timezone.utc)
    return t.strftime("%m-%d %H:%M:%S.") + f"{ms % 1000:03d}"


def _zip_bytes(name: str, text: str) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo(name, date_time=(2023, 8, 4, 0, 0, 0))
        info.compress_type = zipfile.ZIP_DEFLATED
        zf.writestr(info, text)
    return buf.getvalue()


def write_dropbox_logs(root: str | os.PathLike[str], rng: random.Random, ids: Identities,
                       counts: dict[str, int] | None = None, per_archive: int = 6,
                       logd_dir: str | os.PathLike[str] | None = None) -> LogScript:
    """Write ``Log.<category>@<ts>.txt.zip`` archives holding a shuffled
    event script plus decoys that must not count."""
    counts = dict(DEFAULT_COUNTS if counts is None else counts)
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    tokens = [t for t, n in counts.items() for _ in range(n)]
    rng.shuffle(tokens)
    ts = BASE_TS
    system_lines: list[tuple[int, str, str]] = []
    main_lines: list[tuple[int, str, str]] = []
    motions = []
    timestamps: dict[str, list[int]] = {}
    for i, tok in enumerate(tokens):
        ts += rng.randrange(1_000, 600_000)
        style = i % 3  # logcat, epoch-ms, none
        if tok == "MOTION":
            is_person = rng.random() < 0.8
            enrolled = is_person and rng.random() < 0.7
            quality = round(rng.uniform(0.05, 0.99), rng.choice((2, 3, 6)))
            pid = rng.choice(ids.person_ids) if enrolled else None
            text = f"I VisualId: MOTION person={str(is_person).lower()} enrolled={str(enrolled).lower()} quality={quality!r}"
            if pid:
                text += f" personId={pid}"
            motions.append(MotionExpectation(is_person, enrolled, quality, pid))
            bucket = main_lines
        else:
            c = round(rng.uniform(0.5, 1.0), 2)
            text = SYSTEM_TEMPLATES[tok].format(c=c, key=rng.choice(["ACTION", "VOLUME_UP", "MUTE"]),
                                                x=rng.randrange(1920), y=rng.randrange(1080))
            bucket = system_lines
        bucket.append((ts, text, ["logcat", "epoch", "none"][style]))
        timestamps.setdefault(tok, []).append(ts)
    # Decoys: valid-looking tokens in the wrong category or as word fragments.
    for d in DECOY_LINES:
        ts += 1000
        system_lines.append((ts, d, "logcat"))
    ts += 1000
    system_lines.append((ts, "I VisualId: MOTION person=true enrolled=false quality=0.5", "logcat"))
    archives = []

    def flush(cat: LogCategory, rows: list[tuple[int, str, str]], directory: Path):
        for k in range(0, len(rows), per_archive):
            chunk = rows[k:k + per_archive]
            archive_ts = chunk[-1][0] + 5_000
            lines = []
            for ms, text, style in chunk:
                if style == "logcat":
                    lines.append(f"{_logcat_ts(ms)}  1021  1187 {text}")
                elif style == "epoch":
                    lines.append(f"{ms} {text}")
                else:
                    lines.append(text)
            name = log_filename(cat, archive_ts)
            (directory / name).write_bytes(_zip_bytes(name[:-4], "\n".join(lines) + "\n"))
            archives.append(str(directory / name))

    flush(LogCategory.SYSTEM, system_lines, root)
    flush(LogCategory.MAIN, main_lines, root)
    kernel_dir = Path(logd_dir) if logd_dir else root
    kernel_dir.mkdir(parents=True, exist_ok=True)
    flush(LogCategory.KERNEL, [(BASE_TS, "<6>[ 12.5] audio: WAKE_WORD irq latency=3ms", "none"),
                               (BASE_TS + 10, "<6>[ 12.6] touch: TOUCH_EVENT raw", "none")], kernel_dir)
    return LogScript(counts, motions, sorted(archives), timestamps)


# -- partition tree ---------------------------------------------------------------

WIFI_XML = """<?xml version='1.0' encoding='utf-8' standalone='yes' ?>
<WifiConfigStoreData>
<int name="Version" value="3" />
<NetworkList>
<Network>
<WifiConfiguration>
<string name="ConfigKey">&quot;LabNet&quot;WPA_PSK</string>
<string name="SSID">&quot;LabNet&quot;</string>
<null name="BSSID" />
<string name="PreSharedKey">&quot;hunter22&quot;</string>
<byte-array name="AllowedKeyMgmt" num="1">02</byte-array>
</WifiConfiguration>
</Network>
<Network>
<WifiConfiguration>
<string name="ConfigKey">&quot;CafeOpen&quot;NONE</string>
<string name="SSID">&quot;CafeOpen&quot;</string>
<null name="PreSharedKey" />
<byte-array name="AllowedKeyMgmt" num="1">01</byte-array>
</WifiConfiguration>
</Network>
</NetworkList>
</WifiConfigStoreData>
"""


def _prefs(entries: list[tuple[str, str, object]]) -> str:
    lines = ["<?xml version='1.0' encoding='utf-8' standalone='yes' ?>", "<map>"]
    for tag, name, value in entries:
        if tag == "string":
            lines.append(f'    <string name="{name}">{value}</string>')
        else:
            lines.append(f'    <{tag} name="{name}" value="{value}" />')
    lines.append("</map>")
    return "\n".join(lines) + "\n"


def _db(path: Path, ddl: str, table: str, rows: list[tuple]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    con = sqlite3.connect(path)
    with con:
        con.execute(ddl)
        if rows:
            marks = ",".join("?" * len(rows[0]))
            con.executemany(f"INSERT INTO {table} VALUES ({marks})", rows)
    con.close()


def _blob(rng: random.Random, magic: bytes = b"\xff\xd8\xff\xe0", n: int = 2048) -> bytes:
    return magic + rng.randbytes(n)


@dataclass
class TreeScript:
    files: dict[str, str]  # descriptor id -> representative relative path
    records: dict[str, int]  # descriptor id -> expected record count
    wifi: list[tuple[str, str, str]]
    log: LogScript
    v2_tokens: dict[str, str]
    v2_secret_b64: str
    v1_tokens: dict[str, str]


def _concrete(desc: ArtifactDescriptor, ids: Identities) -> list[str]:
    g = desc.path_glob
    special = {
        "photo-metadata": [g.replace("*", ids.directed_id)],
        "photos-discovery-db": [g.replace("*", "1")],
        "photos-metadata-cache": [g.replace("*", "1")],
    }
    if desc.id in special:
        return special[desc.id]
    if g.endswith("/**"):
        base = g[:-3]
        return [f"{base}/0/{desc.id}-a.bin", f"{base}/{desc.id}-b.bin"]
    return [g]


def write_data_tree(root: str | os.PathLike[str], rng: random.Random, ids: Identities,
                    refresh_token: str, counts: dict[str, int] | None = None) -> TreeScript:
    """One or more files for every catalog descriptor, rooted like an
    extracted ``data`` partition (companion apps under ``data/<package>``)."""
    root = Path(root)
    files: dict[str, str] = {}
    records: dict[str, int] = {}
    secrets = None
    v1 = {}
    log_script = None
    for desc in catalog():
        if desc.parser == "dropbox_log":
            if desc.id == "dropbox-logs":
                log_script = write_dropbox_logs(root / "system" / "dropbox", rng, ids, counts,
                                                logd_dir=root / "logd")
            files[desc.id] = "system/dropbox" if desc.id == "dropbox-logs" else "logd"
            records[desc.id] = -1  # checked through the log script
            continue
        paths = _concrete(desc, ids)
        files[desc.id] = paths[0]
        for rel in paths:
            (root / rel).parent.mkdir(parents=True, exist_ok=True)
        p = root / paths[0]
        if desc.parser == "wifi_config":
            p.write_text(WIFI_XML)
            records[desc.id] = 2
        elif desc.parser == "file_inventory":
            for rel in paths:
                (root / rel).write_bytes(_blob(rng))
            records[desc.id] = len(paths)
        elif desc.parser == "recognition_db":
            _db(p, "CREATE TABLE FaceEnrolledProfilesRecognition (personId TEXT, lastRecognizedTimeMillis INTEGER)",
                "FaceEnrolledProfilesRecognition",
                [(pid, BASE_TS - 3_600_000 * (i + 1)) for i, pid in enumerate(ids.person_ids)])
            records[desc.id] = len(ids.person_ids)
        elif desc.parser == "credential_store":
            if desc.id == "photos-token-store-v1":
                v1 = write_token_store_v1(p, rng, ids, refresh_token)
                records[desc.id] = len(v1)
            else:
                s = write_token_store_v2(p, rng, ids, refresh_token)
                if desc.id == "token-store":
                    secrets = s
                records[desc.id] = len(V2_TOKENS) + len(ids.person_ids) + 1
        elif desc.parser == "shared_prefs":
            entries = _prefs_for(desc.id, rng, ids)
            p.write_text(_prefs(entries))
            records[desc.id] = len(entries)
        elif desc.parser == "sqlite_table":
            records[desc.id] = _sqlite_for(desc.id, p, rng, ids)
    return TreeScript(files, records, [("LabNet", "hunter22", "WPA_PSK"), ("CafeOpen", "", "NONE")],
                      log_script, secrets.tokens if secrets else {}, secrets.key_b64 if secrets else "", v1)


def _prefs_for(desc_id: str, rng: random.Random, ids: Identities) -> list[tuple[str, str, object]]:
    t = BASE_TS
    table = {
        "last-voice-interaction": [("long", "last_user_activity_time", t - 120_000),
                                   ("string", "last_activity_type", "VOICE")],
        "known-devices-smarthome": [("string", "entity_cache", json.dumps([{"name": "Hallway camera", "type": "CAMERA"}]).replace('"', "&quot;"))],
        "photobooth-prefs": [("long", "lastPictureTakenTime", t - 86_400_000)],
        "calendar-boot-prefs": [("long", "last_boot_time", t - 7 * 86_400_000)],
        "alexa-service-identity": [("string", "customerId", ids.customer_id),
                                   ("string", "directedId", ids.directed_id),
                                   ("string", "commsId", ids.comms_id),
                                   ("string", "personId", ids.person_ids[0])],
        "alexa-shared-prefs": [("long", "app_start_time", t - 3_600_000),
                               ("string", "directedId", ids.directed_id),
                               ("string", "commsId", ids.comms_id)],
        "alexa-shared-prefs-identity": [("string", "directedId", ids.directed_id),
                                        ("string", "commsId", ids.comms_id)],
        "alexa-session-storage": [("long", "session_start_time", t - 1_800_000),
                                  ("long", "session_end_time", t - 1_200_000)],
    }
    return table.get(desc_id, [("string", "value", "x")])


def _sqlite_for(desc_id: str, p: Path, rng: random.Random, ids: Identities) -> int:
    t = BASE_TS
    specs = {
        "prime-video-history": ("CREATE TABLE playback_history (asin TEXT, title TEXT, last_watched_time INTEGER, position_ms INTEGER)",
                                "playback_history", [("B0" + str(i), f"Title {i}", t - i * 86_400_000, 60_000 * i) for i in range(1, 4)]),
        "known-devices-registry": ("CREATE TABLE devices (endpointId TEXT, friendlyName TEXT)", "devices",
                                   [("cam-1", "Hallway camera"), ("plug-1", "Desk lamp")]),
        "alta-user-data": ("CREATE TABLE users (customerId TEXT, directedId TEXT, created_time INTEGER)", "users",
                           [(ids.customer_id, ids.directed_id, t - 30 * 86_400_000)]),
        "browser-data": ("CREATE TABLE urls (url TEXT, title TEXT, last_visit_time INTEGER)", "urls",
                         [("https://example.org/", "Example", t - 600_000)]),
        "photo-metadata": ("CREATE TABLE photos (photo_id TEXT, file_name TEXT, capture_time INTEGER, width INTEGER, height INTEGER)",
                           "photos", [(f"p{i}", f"IMG_{i:04d}.jpg", t - i * 3_600_000, 1920, 1080) for i in range(3)]),
        "notification-log": ("CREATE TABLE log (pkg TEXT, event_type INTEGER, event_time INTEGER)", "log",
                             [("com.amazon.knight.calendar", 1, t - 5_000), ("com.amazon.zordon", 2, t - 4_000)]),
        "alexa-webview-cookies": ("CREATE TABLE cookies (host_key TEXT, name TEXT, creation_utc INTEGER)", "cookies",
                                  [(".amazon.de", "session-id", 13_300_000_000_000_000)]),
        "alexa-lists": ("CREATE TABLE lists (listId TEXT, customerId TEXT, name TEXT, updated_time INTEGER)", "lists",
                        [("list-1", ids.customer_id, "Shopping", t - 7_200_000), ("list-2", ids.customer_id, "To-do", t - 7_100_000)]),
        "alexa-comms-identity": ("CREATE TABLE identity (directedId TEXT, commsId TEXT, personIdV2 TEXT)", "identity",
                                 [(ids.directed_id, ids.comms_id, ids.person_ids_v2[0])]),
        "alexa-comms": ("CREATE TABLE messages (conversationId TEXT, payload BLOB, message_time INTEGER)", "messages",
                        [("conv-1", rng.randbytes(32), t - 900_000)]),
        "photos-discovery-db": ("CREATE TABLE uploads (node_id TEXT, md5 TEXT, upload_time INTEGER)", "uploads",
                                [(f"n{i}", rng.randbytes(16).hex(), t - i * 60_000) for i in range(2)]),
        "photos-metadata-cache": ("CREATE TABLE metadata (node_id TEXT, customerId TEXT, exif_date_time INTEGER, size INTEGER)", "metadata",
                                  [(f"n{i}", ids.customer_id, t - i * 60_000 - 30_000, 4096) for i in range(2)]),
    }
    ddl, table, rows = specs[desc_id]
    _db(p, ddl, table, rows)
    return len(rows)


# -- mock cloud fixtures --------------------------------------------------------------


@dataclass
class CloudScript:
    voice_utterances: list[str]
    audio_utterances: list[str]
    photos: dict[str, str]  # photoId -> sha256 of content
    window: tuple[int, int]


def write_mock_fixtures(directory: str | os.PathLike[str], rng: random.Random, ids: Identities,
                        voice_records: int = 3, audio: int = 2, photos: int = 2, page_size: int = 2) -> CloudScript:
    import hashlib

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)

    def put(name: str, body) -> None:
        (d / f"{name}.json").write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")

    t = BASE_TS
    serial = "G" + "".join(rng.choice(string.ascii_uppercase + string.digits) for _ in range(15))
    device_account = "A" + "".join(rng.choice(string.ascii_uppercase + string.digits) for _ in range(13))
    put("user-profile", {"user_id": ids.directed_id, "name": "Synthetic User", "email": "user@example.org"})
    put("users-me", {"id": ids.customer_id, "directedId": ids.directed_id, "marketPlaceDomainName": "amazon.de"})
    put("landing-content", {"cards": [{"title": "Welcome back", "personIdV2": ids.person_ids_v2[0]}]})
    put("wake-word", {"wakeWords": [{"deviceSerialNumber": serial, "wakeWord": "ALEXA"}]})
    put("device-preferences", {"devicePreferences": [{"deviceSerialNumber": serial, "deviceAddress": "1 Example Street",
                                                      "timeZoneId": "Europe/Berlin"}]})
    put("devices-v2", {"devices": [{"serialNumber": serial, "deviceAccountId": device_account,
                                    "accountName": "Echo Show 15", "deviceFamily": "KNIGHT", "online": True}]})
    put("bluetooth", {"bluetoothStates": [{"deviceSerialNumber": serial, "pairedDeviceList": []}]})
    lists = [{"listId": "list-shopping", "name": "Shopping"}, {"listId": "list-todo", "name": "To-do"}]
    put("named-lists", {"lists": lists})
    (d / "named-list-items").mkdir(exist_ok=True)
    for lst in lists:
        (d / "named-list-items" / f"{lst['listId']}.json").write_text(json.dumps(
            {"list": [{"value": f"{lst['name']} item", "createdDateTime": t - 3_600_000}]}, sort_keys=True))
    (d / "live-view").mkdir(exist_ok=True)
    (d / "live-view" / f"{device_account}.json").write_text(json.dumps({"liveViewEnabled": True}))
    put("device-personalization", {"devices": [{"serialNumber": serial, "online": True}]})
    put("device-wifi-details", {"deviceSerialNumber": serial, "macAddress": "74:c2:46:00:00:01", "essid": "LabNet"})
    put("persons-in-household", {"persons": [{"name": f"Person {i}", "personId": pid, "personIdV2": v2}
                                             for i, (pid, v2) in enumerate(zip(ids.person_ids, ids.person_ids_v2))]})
    put("household", {"accounts": [{"customerId": ids.customer_id, "directedId": ids.directed_id, "role": "ADULT"}]})
    phoenix = {"devices": [{"deviceSerialNumber": serial, "deviceType": "A2...", "deviceName": "Echo Show 15",
                            "online": True, "capabilities": ["VOICE", "CAMERA"]}]}
    put("phoenix", phoenix)
    put("graphql", {"data": phoenix})
    put("home", {"cards": [{"cardType": "TextCard", "creationTimestamp": t - 60_000}]})
    window = (t - 86_400_000, t + 86_400_000)
    utterances = [f"{serial}:1.0:20230804{i:02d}:{rng.randrange(10**12):012d}" for i in range(voice_records)]
    recs = []
    for i, uid in enumerate(utterances):
        rec = {"utteranceId": uid, "timestamp": t - 3_600_000 + i * 600_000, "device": {"deviceName": "Echo Show 15",
               "serialNumber": serial}, "transcript": ["what's the weather", "turn on the desk lamp", "stop"][i % 3],
               "intent": ["GetWeather", "TurnOn", "Stop"][i % 3], "resourceIds": [f"res-{i}"]}
        if i % 2 == 0:
            rec["personIdV2"] = ids.person_ids_v2[i % len(ids.person_ids_v2)]
        recs.append(rec)
    # One record outside the default window to exercise server-side filtering.
    recs.append({"utteranceId": f"{serial}:1.0:2023070100:000000000001", "timestamp": window[0] - 86_400_000,
                 "device": {"deviceName": "Echo Show 15"}, "transcript": "old", "intent": "Old", "resourceIds": []})
    put("voice-history", {"__mock__": {"page_size": page_size, "filter": {"field": "timestamp", "from": "startTime",
                                                                         "to": "endTime"}},
                          "body": {"customerHistoryRecords": recs}})
    (d / "voice-audio").mkdir(exist_ok=True)
    with_audio = utterances[:audio]
    for uid in with_audio:
        (d / "voice-audio" / f"{uid}.bin").write_bytes(b"ID3" + rng.randbytes(512))
    put("calendar-accounts", {"accounts": [{"provider": "GOOGLE", "directedId": ids.directed_id}]})
    put("calendar-events", {"events": [{"title": "Dentist", "startTime": t + 86_400_000}]})
    put("comms-accounts", {"accounts": [{"commsId": ids.comms_id, "directedId": ids.directed_id,
                                         "homeGroupId": "amzn1.comms.id.hg.amzn1~hg-0001",
                                         "personIdV2": ids.person_ids_v2[0]}]})
    put("comms-contacts", {"__mock__": {"page_size": 2},
                           "body": {"contacts": [{"contactId": c, "name": f"Contact {i}"}
                                                 for i, c in enumerate(ids.contact_ids)]}})
    convs = [{"conversationId": f"conv-{i}", "participants": [ids.comms_id]} for i in range(2)]
    put("comms-conversations", {"conversations": convs})
    (d / "comms-messages").mkdir(exist_ok=True)
    for i, c in enumerate(convs):
        (d / "comms-messages" / f"{c['conversationId']}.json").write_text(json.dumps({"messages": [
            {"messageId": f"m-{i}-{j}", "time": t - 1_000_000 + i * 10_000 + j, "sender": ids.comms_id,
             "type": "message/text", "payload": {"text": f"hello {i}.{j}"}} for j in range(2)]}, sort_keys=True))
    put("comms-recent", {"recentCommunications": [{"contactId": ids.contact_ids[0], "time": t - 500_000}]})
    put("comms-homegroup-devices", {"devices": [{"deviceSerialNumber": serial, "features": ["DROP_IN"]}]})
    put("your-skills", {"skills": [{"skillId": "amzn1.ask.skill.0001", "name": "Weather"}]})
    items, hashes = [], {}
    (d / "media-download").mkdir(exist_ok=True)
    for i in range(photos):
        pid = f"photo-{i:03d}"
        content = b"\xff\xd8\xff\xe0" + rng.randbytes(4096)
        hashes[pid] = hashlib.sha256(content).hexdigest()
        (d / "media-download" / f"{pid}.bin").write_bytes(content)
        items.append({"id": pid, "ownerId": ids.customer_id, "name": f"IMG_{i:04d}.jpg",
                      "contentProperties": {"size": len(content)}, "createdDate": t - i * 60_000})
    put("drive-search", {"__mock__": {"page_size": 1}, "body": {"data": items}})
    (d / "NOTE.txt").write_text("Response schemas are reconstructions; field names are not vendor-documented.\n")
    return CloudScript(utterances, with_audio, hashes, window)


# -- whole corpus -------------------------------------------------------------------


@dataclass
class Corpus:
    root: str
    seed: int
    refresh_token: str
    ids: Identities
    tree: TreeScript
    cloud: CloudScript
    kmsg: str

    def to_json(self) -> dict:
        return {"root": self.root, "seed": self.seed, "ids": asdict(self.ids),
                "event_counts": self.tree.log.counts, "records": self.tree.records,
                "cloud": {"voice_utterances": self.cloud.voice_utterances,
                          "audio_utterances": self.cloud.audio_utterances,
                          "photos": self.cloud.photos, "window": list(self.cloud.window)}}


def build_corpus(root: str | os.PathLike[str], seed: int = 7, image: bool = False) -> Corpus:
    """``tree/`` (data partition), ``mock/`` (fixtures), ``last_kmsg.txt`` and,
    with ``image``, a full-size sparse ``emmc.img``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    ids = Identities.generate(rng)
    refresh = _token(rng, "Atnr|", 64)
    tree = write_data_tree(root / "tree", rng, ids, refresh)
    cloud = write_mock_fixtures(root / "mock", rng, ids)
    kmsg = kernel_log(rng=rng)
    (root / "last_kmsg.txt").write_text(kmsg)
    if image:
        write_sparse_image(root / "emmc.img")
    corpus = Corpus(os.fspath(root), seed, refresh, ids, tree, cloud, kmsg)
    (root / "corpus.json").write_text(json.dumps(corpus.to_json(), indent=2, sort_keys=True) + "\n")
    return corpus


def endpoint_ids() -> list[str]:
    return [e.id for e in endpoint_catalog()]
