"""Token-store readers and AES-CBC decryption of stored credentials.

``map_data_storage_v2.db`` keeps a Base64 key in
``encryption_data.key_encryption_secret`` next to the encrypted values in
``account_data``. Each stored value is ``IV (16 bytes) || AES-CBC
ciphertext`` with PKCS#5/#7 padding, optionally Base64-wrapped.

The Photos app still uses the older ``map_data_storage.db`` whose
``tokens`` table holds plaintext values.

Column names beyond those the stores are known for are fixed here and
selected by name:

* v2 ``encryption_data(key_encryption_secret)``
* v2 ``account_data(account_data_directed_id, account_data_key, account_data_value)``
* v1 ``tokens(token_directed_id, token_key, token_value)``
"""

from __future__ import annotations

import base64
import binascii
import enum
import hashlib
import logging
import os
from dataclasses import dataclass, field, replace

from cryptography.hazmat.primitives import padding
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from . import _sqlite
from .errors import CryptoError, SchemaError
from .ids import IdError, IdKind, UserId, classify, find_ids

log = logging.getLogger(__name__)

IV_LEN = 16
BLOCK = 16
AES_KEY_SIZES = (16, 24, 32)

REFRESH_TOKEN = "refresh_token"
# Tokens whose purpose was never established; listed, never decrypted.
NOT_ATTEMPTED = ("privatekey", "encrypt.key")
CONJECTURES = {
    "adptoken": "audience unconfirmed; possibly the Audible API",
}


class SecretError(CryptoError):
    pass


class CiphertextLengthError(CryptoError):
    pass


class PaddingError(CryptoError):
    """Padding check failed: wrong key or corrupted blob."""


class StoreVersion(str, enum.Enum):
    V1_PLAIN = "V1_plain"
    V2_ENCRYPTED = "V2_encrypted"


@dataclass(frozen=True)
class EncryptionSecret:
    raw_key: bytes = field(repr=False)

    def __post_init__(self):
        if len(self.raw_key) not in AES_KEY_SIZES:
            raise SecretError(f"AES key must be 16, 24 or 32 bytes, got {len(self.raw_key)}")

    @classmethod
    def from_base64(cls, text: str | bytes) -> "EncryptionSecret":
        try:
            raw = base64.b64decode(text, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise SecretError(f"key_encryption_secret is not valid Base64: {exc}") from exc
        return cls(raw)

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.raw_key).hexdigest()[:16]


def decrypt_value(ciphertext: bytes, secret: EncryptionSecret) -> bytes:
    """AES-CBC decrypt ``IV || ciphertext`` and strip PKCS#7 padding."""
    if len(ciphertext) < IV_LEN + BLOCK or (len(ciphertext) - IV_LEN) % BLOCK:
        raise CiphertextLengthError(
            f"blob of {len(ciphertext)} bytes is not a 16-byte IV plus whole AES blocks"
        )
    iv, body = ciphertext[:IV_LEN], ciphertext[IV_LEN:]
    dec = Cipher(algorithms.AES(secret.raw_key), modes.CBC(iv)).decryptor()
    padded = dec.update(body) + dec.finalize()
    unpadder = padding.PKCS7(BLOCK * 8).unpadder()
    try:
        return unpadder.update(padded) + unpadder.finalize()
    except ValueError as exc:
        raise PaddingError("PKCS#7 padding check failed (wrong key or corrupt blob)") from exc


def unwrap_blob(value: str | bytes) -> bytes:
    """Return raw ``IV || ciphertext`` bytes, undoing Base64 when present."""
    if isinstance(value, str):
        value = value.encode("ascii", "surrogateescape")
    try:
        decoded = base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError):
        return bytes(value)
    if len(decoded) >= IV_LEN + BLOCK and (len(decoded) - IV_LEN) % BLOCK == 0:
        return decoded
    return bytes(value)


def token_name(key: str) -> str:
    for special in NOT_ATTEMPTED:
        if key == special or key.endswith("." + special):
            return special
    return key.rsplit(".", 1)[-1]


@dataclass(frozen=True)
class TokenRecord:
    name: str
    key: str
    store_version: StoreVersion
    ciphertext: bytes | None = field(default=None, repr=False)
    plaintext: str | None = field(default=None, repr=False)
    directed_id: str | None = None
    error: str | None = None

    @property
    def is_acquisition_credential(self) -> bool:
        return self.name == REFRESH_TOKEN

    @property
    def note(self) -> str | None:
        if self.name in NOT_ATTEMPTED:
            return "purpose not investigated; decryption not attempted"
        return CONJECTURES.get(self.name)

    def to_json(self, reveal: bool = False) -> dict:
        out = {
            "name": self.name,
            "key": self.key,
            "store_version": self.store_version.value,
            "directed_id": self.directed_id,
            "acquisition_credential": self.is_acquisition_credential,
            "decrypted": self.plaintext is not None,
            "error": self.error,
            "note": self.note,
        }
        if self.plaintext is not None:
            out["plaintext"] = self.plaintext if reveal else redact(self.plaintext)
        return out


def redact(secret: str) -> str:
    digest = hashlib.sha256(secret.encode("utf-8", "surrogateescape")).hexdigest()[:12]
    return f"<redacted len={len(secret)} sha256={digest}>"


@dataclass
class TokenStore:
    path: str
    secret: EncryptionSecret
    tokens: list[TokenRecord]
    account_rows: list[dict]


def _embeds_person_id(key: str | None) -> bool:
    return bool(key) and any(u.kind is IdKind.PERSON_ID for u in find_ids(key))


def load_store_v2(path: str | os.PathLike[str]) -> TokenStore:
    con = _sqlite.open_readonly(path)
    try:
        _sqlite.require_tables(con, path, "encryption_data", "account_data")
        row = con.execute("SELECT key_encryption_secret FROM encryption_data LIMIT 1").fetchone()
        if row is None or row[0] is None:
            raise SchemaError(f"{path}: encryption_data holds no key_encryption_secret")
        secret = EncryptionSecret.from_base64(row[0])
        rows = [
            dict(r)
            for r in con.execute(
                "SELECT rowid AS rowid, account_data_directed_id, account_data_key, "
                "account_data_value FROM account_data ORDER BY rowid"
            )
        ]
    except Exception as exc:
        if isinstance(exc, (SchemaError, CryptoError)):
            raise
        raise SchemaError(f"{path}: unexpected token store layout ({exc})") from exc
    finally:
        con.close()
    tokens = []
    for r in rows:
        value, key = r["account_data_value"], r["account_data_key"] or ""
        if value is None or _embeds_person_id(key):
            continue
        blob = value if isinstance(value, bytes) else str(value).encode("ascii", "surrogateescape")
        tokens.append(
            TokenRecord(token_name(key), key, StoreVersion.V2_ENCRYPTED, ciphertext=blob,
                        directed_id=r["account_data_directed_id"])
        )
    return TokenStore(os.fspath(path), secret, tokens, rows)


def recover_tokens(store: TokenStore) -> list[TokenRecord]:
    """Decrypt every token with the store secret; failures stay per-token."""
    out = []
    for tok in store.tokens:
        if tok.name in NOT_ATTEMPTED:
            out.append(tok)
            continue
        try:
            plain = decrypt_value(unwrap_blob(tok.ciphertext), store.secret)
            out.append(replace(tok, plaintext=plain.decode("utf-8", "surrogateescape")))
        except CryptoError as exc:
            log.warning("%s: cannot decrypt %s: %s", store.path, tok.name, exc)
            out.append(replace(tok, error=f"{type(exc).__name__}: {exc}"))
    return out


def load_store_v1(path: str | os.PathLike[str]) -> list[TokenRecord]:
    con = _sqlite.open_readonly(path)
    try:
        _sqlite.require_tables(con, path, "tokens")
        rows = con.execute(
            "SELECT token_directed_id, token_key, token_value FROM tokens ORDER BY rowid"
        ).fetchall()
    except Exception as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{path}: unexpected v1 token table layout ({exc})") from exc
    finally:
        con.close()
    return [
        TokenRecord(token_name(key or ""), key or "", StoreVersion.V1_PLAIN,
                    plaintext=None if value is None else str(value), directed_id=directed)
        for directed, key, value in rows
    ]


@dataclass(frozen=True)
class AccountLink:
    person_id: UserId
    directed_id: UserId

    def __post_init__(self):
        if self.person_id.kind is not IdKind.PERSON_ID:
            raise IdError("AccountLink.person_id must be a personId")
        if self.directed_id.kind is not IdKind.DIRECTED_ID:
            raise IdError("AccountLink.directed_id must be a directedId")

    def to_json(self) -> dict:
        return {"person_id": self.person_id.text, "directed_id": self.directed_id.text}


def link_accounts(store: TokenStore, notices: list[str] | None = None) -> list[AccountLink]:
    """Pair personIds embedded in ``account_data_key`` with the row's directedId."""
    links: list[AccountLink] = []
    for r in store.account_rows:
        persons = [u for u in find_ids(r.get("account_data_key") or "") if u.kind is IdKind.PERSON_ID]
        if not persons:
            continue
        raw = r.get("account_data_directed_id") or ""
        try:
            directed = classify(raw)
            if directed.kind is not IdKind.DIRECTED_ID:
                raise IdError(f"{raw!r} is a {directed.kind.value}, not a directedId")
        except IdError as exc:
            msg = f"{store.path}: row {r.get('rowid')}: skipping link, bad directedId ({exc})"
            log.warning(msg)
            if notices is not None:
                notices.append(msg)
            continue
        for p in persons:
            link = AccountLink(p, directed)
            if link not in links:
                links.append(link)
    return links


def credentials_manifest(records: list[TokenRecord], source: str, reveal: bool = False,
                         links: list[AccountLink] = ()) -> dict:
    return {
        "source": source,
        "revealed": reveal,
        "tokens": [r.to_json(reveal) for r in records],
        "account_links": [link.to_json() for link in links],
    }
