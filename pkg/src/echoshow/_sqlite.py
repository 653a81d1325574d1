from __future__ import annotations

import os
import sqlite3
from pathlib import Path

from .errors import InputError, SchemaError

SQLITE_HEADER = b"SQLite format 3\x00"


def is_sqlite(path: str | os.PathLike[str]) -> bool:
    try:
        with open(path, "rb") as fh:
            return fh.read(16) == SQLITE_HEADER
    except OSError:
        return False


def open_readonly(path: str | os.PathLike[str]) -> sqlite3.Connection:
    """Open evidence without creating journals or touching the file."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{p}: no such database file")
    uri = p.resolve().as_uri() + "?mode=ro&immutable=1"
    try:
        con = sqlite3.connect(uri, uri=True)
        con.execute("SELECT count(*) FROM sqlite_master").fetchone()
    except sqlite3.DatabaseError as exc:
        raise SchemaError(f"{p}: not a readable SQLite database ({exc})") from exc
    con.row_factory = sqlite3.Row
    return con


def table_names(con: sqlite3.Connection) -> list[str]:
    rows = con.execute(
        "SELECT name FROM sqlite_master WHERE type='table' AND name NOT LIKE 'sqlite_%' ORDER BY name"
    ).fetchall()
    return [r[0] for r in rows]


def require_tables(con: sqlite3.Connection, path, *names: str) -> None:
    present = set(table_names(con))
    missing = [n for n in names if n not in present]
    if missing:
        raise SchemaError(f"{path}: missing table(s) {', '.join(missing)}")


def scalar(value):
    """Map SQLite values onto JSON-safe scalars; blobs become hex."""
    if isinstance(value, (bytes, bytearray, memoryview)):
        return {"hex": bytes(value).hex()}
    return value
