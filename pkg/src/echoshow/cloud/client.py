"""Catalog-driven acquisition with an append-only, replayable log.

Every response is written to ``acquisition.jsonl`` before it is parsed.
JSON bodies are stored inline; binary bodies go to ``blobs/<aa>/<sha256>``.
Token-exchange responses are logged by digest only.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from .. import _io
from ..errors import AuthError, EXIT_USAGE, EchoShowError, NetworkError
from ..ids import IdKind, UserId, try_classify
from .auth import AuthState, credential_headers, ensure_credentials
from .catalog import (EndpointDescriptor, ResponseClass, endpoint_catalog,
                      exchange_config, with_marketplace)
from .transport import HttpRequest, HttpResponse, Transport

log = logging.getLogger(__name__)

LOG_NAME = "acquisition.jsonl"
CSRF_BODY = "csrf check failed"
EXCHANGE_ID = "token-exchange"

# The device query observed in the companion app is not published; this
# asks for the fields the phoenix route also returns.
DEVICE_QUERY = "query { devices { deviceSerialNumber deviceType deviceName online capabilities } }"


class MissingParameterError(EchoShowError):
    exit_code = EXIT_USAGE


class HttpStatusError(NetworkError):
    def __init__(self, descriptor_id: str, status: int, body: bytes):
        self.descriptor_id, self.status, self.body = descriptor_id, status, body
        super().__init__(f"{descriptor_id}: HTTP {status}: {body[:200]!r}")


class CsrfCheckFailed(NetworkError):
    """The server answered with the literal ``csrf check failed`` body."""


class CredentialRejected(AuthError):
    pass


@dataclass(frozen=True)
class ResponseDocument:
    descriptor_id: str
    args: tuple[tuple[str, str], ...]
    status: int
    body: Any  # parsed JSON or raw bytes
    sha256: str


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class AcquisitionLog:
    def __init__(self, directory: str | os.PathLike[str]):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path = self.dir / LOG_NAME
        self._lock = threading.Lock()
        self._seq = sum(1 for _ in open(self.path, encoding="utf-8")) if self.path.exists() else 0

    def store_blob(self, data: bytes) -> str:
        digest = _sha(data)
        rel = f"blobs/{digest[:2]}/{digest}"
        target = self.dir / rel
        if not target.exists():
            _io.atomic_write_bytes(target, data)
        return rel

    def append(self, entry: dict) -> None:
        with self._lock:
            entry = {"seq": self._seq, **entry}
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(_io.dumps(entry) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._seq += 1


class _ExchangeLogger:
    """Transport wrapper that records token exchanges without their secrets."""

    def __init__(self, client: "CloudClient"):
        self.client = client

    def send(self, request: HttpRequest) -> HttpResponse:
        resp = self.client.transport.send(request)
        if self.client.log is not None:
            summary = request.summary()
            self.client.log.append({
                "timestamp": self.client.clock(), "descriptor_id": EXCHANGE_ID, "args": {},
                "request": summary, "status": resp.status, "body_sha256": _sha(resp.body),
                "body_size": len(resp.body), "content": "withheld",
            })
        return resp


class CloudClient:
    def __init__(self, state: AuthState, transport: Transport, log_dir: str | os.PathLike[str] | None = None,
                 clock: Callable[[], float] = time.time, marketplace: str = "de",
                 catalog: Iterable[EndpointDescriptor] | None = None, csrf_token: str | None = None):
        self.state = state
        self.transport = transport
        self.clock = clock
        self.marketplace = marketplace
        self.catalog = {e.id: e for e in (catalog if catalog is not None else endpoint_catalog())}
        self.csrf_token = csrf_token
        self.log = AcquisitionLog(log_dir) if log_dir is not None else None
        self._exchange_transport = _ExchangeLogger(self)

    def descriptor(self, ref: str | EndpointDescriptor) -> EndpointDescriptor:
        if isinstance(ref, EndpointDescriptor):
            return ref
        try:
            return self.catalog[ref]
        except KeyError:
            raise EchoShowError(f"unknown endpoint {ref!r}") from None

    def build_request(self, desc: EndpointDescriptor, args: dict[str, Any]) -> HttpRequest:
        args = {k: v for k, v in args.items() if v is not None}
        known = {p.name for p in desc.params}
        if desc.pagination:
            known.add(desc.pagination.cursor_param)
        unknown = sorted(set(args) - known)
        if unknown:
            raise MissingParameterError(f"{desc.id}: unexpected parameters {unknown}")
        missing = sorted(p.name for p in desc.params if p.required and p.name not in args)
        if missing:
            raise MissingParameterError(f"{desc.id}: missing required parameters {missing}")
        path_args = {p.name: _quote(str(args[p.name])) for p in desc.params if p.location == "path"}
        query = [(k, v) for k, v in desc.fixed_query]
        query += [(p.name, str(args[p.name])) for p in desc.params
                  if p.location == "query" and p.name in args]
        if desc.pagination and desc.pagination.cursor_param in args:
            query.append((desc.pagination.cursor_param, str(args[desc.pagination.cursor_param])))
        headers: list[tuple[str, str]] = [("Accept", "application/json")]
        body = None
        if desc.response_class is ResponseClass.GRAPHQL:
            headers.append(("Content-Type", "application/json"))
            body = json.dumps({"query": DEVICE_QUERY}).encode()
            if self.csrf_token:
                headers.append((exchange_config().get("csrf_header", "csrf"), self.csrf_token))
        return HttpRequest(desc.method, with_marketplace(desc.host, self.marketplace),
                           desc.path_template.format(**path_args), tuple(query), tuple(headers), body)

    def _send(self, desc: EndpointDescriptor, request: HttpRequest) -> HttpResponse:
        cred = ensure_credentials(self.state, desc.auth, self.clock(), self._exchange_transport)
        resp = self.transport.send(_with_headers(request, credential_headers(desc.auth, cred)))
        if resp.status == 401:
            # Clock skew with the server: drop the cached credential and retry once.
            log.info("%s: 401 with a credential believed valid; renewing once", desc.id)
            self.state.invalidate(desc.auth)
            cred = ensure_credentials(self.state, desc.auth, self.clock(), self._exchange_transport)
            resp = self.transport.send(_with_headers(request, credential_headers(desc.auth, cred)))
        return resp

    def fetch(self, ref: str | EndpointDescriptor, args: dict[str, Any] | None = None) -> ResponseDocument:
        desc = self.descriptor(ref)
        args = dict(args or {})
        request = self.build_request(desc, args)
        resp = self._send(desc, request)
        digest = _sha(resp.body)
        is_json = desc.response_class is not ResponseClass.BINARY and resp.status < 400
        parsed: Any = resp.body
        decode_error = None
        if is_json:
            try:
                parsed = json.loads(resp.body) if resp.body else None
            except ValueError as exc:
                decode_error = exc
        if self.log is not None:
            entry = {
                "timestamp": self.clock(), "descriptor_id": desc.id,
                "args": {k: str(v) for k, v in sorted(args.items())},
                "request": request.summary(), "status": resp.status,
                "body_sha256": digest, "body_size": len(resp.body),
            }
            if is_json and decode_error is None:
                entry["content"], entry["body"] = "json", parsed
            else:
                entry["content"], entry["blob"] = "binary", self.log.store_blob(resp.body)
            self.log.append(entry)
        text = resp.body[:64].decode("utf-8", "replace").strip().lower()
        if text == CSRF_BODY:
            raise CsrfCheckFailed(f"{desc.id}: server answered '{CSRF_BODY}' (HTTP {resp.status})")
        if resp.status == 401:
            raise CredentialRejected(f"{desc.id}: credential rejected by {request.host}")
        if resp.status >= 400:
            raise HttpStatusError(desc.id, resp.status, resp.body)
        if decode_error is not None:
            raise NetworkError(f"{desc.id}: response is not JSON ({decode_error})")
        return ResponseDocument(desc.id, tuple(sorted((k, str(v)) for k, v in args.items())),
                                resp.status, parsed, digest)

    def fetch_pages(self, ref: str | EndpointDescriptor, args: dict[str, Any] | None = None,
                    max_pages: int = 10_000) -> list[ResponseDocument]:
        """Follow the cursor until the response omits it."""
        desc = self.descriptor(ref)
        args = dict(args or {})
        pages = [self.fetch(desc, args)]
        if desc.pagination is None:
            return pages
        seen = set()
        while len(pages) < max_pages:
            body = pages[-1].body
            cursor = body.get(desc.pagination.cursor_field) if isinstance(body, dict) else None
            if not cursor or cursor in seen:
                break
            seen.add(cursor)
            pages.append(self.fetch(desc, {**args, desc.pagination.cursor_param: cursor}))
        return pages


def _quote(value: str) -> str:
    from urllib.parse import quote

    return quote(value, safe="~.-_")


def _with_headers(request: HttpRequest, extra: tuple[tuple[str, str], ...]) -> HttpRequest:
    return HttpRequest(request.method, request.host, request.path, request.query,
                       request.headers + extra, request.body)


def page_items(pages: Iterable[ResponseDocument], items_field: str) -> list[dict]:
    out = []
    for p in pages:
        if isinstance(p.body, dict):
            out.extend(i for i in p.body.get(items_field) or () if isinstance(i, dict))
    return out


# -- voice history ---------------------------------------------------------------


@dataclass(frozen=True)
class VoiceRequestRecord:
    device: str
    timestamp: int
    transcript: str
    intent: str
    resource_ids: tuple[str, ...]
    person_id_v2: UserId | None
    utterance_id: str
    audio_sha256: str | None = None

    def __post_init__(self):
        if not self.utterance_id:
            raise ValueError("utterance_id must be non-empty")
        if self.person_id_v2 is not None and self.person_id_v2.kind is not IdKind.PERSON_ID_V2:
            raise ValueError("person_id_v2 must be a personIdV2")

    def to_json(self) -> dict:
        return {
            "utterance_id": self.utterance_id, "timestamp": self.timestamp, "device": self.device,
            "transcript": self.transcript, "intent": self.intent,
            "resource_ids": list(self.resource_ids),
            "person_id_v2": self.person_id_v2.text if self.person_id_v2 else None,
            "audio_sha256": self.audio_sha256,
        }


@dataclass
class VoiceHistory:
    records: list[VoiceRequestRecord] = field(default_factory=list)
    audio: dict[str, bytes] = field(default_factory=dict)
    notices: list[str] = field(default_factory=list)


def voice_record(raw: dict, notices: list[str] | None = None) -> VoiceRequestRecord | None:
    uid = raw.get("utteranceId")
    if not uid:
        if notices is not None:
            notices.append("voice record without utteranceId skipped")
        return None
    device = raw.get("device")
    if isinstance(device, dict):
        device = device.get("deviceName") or device.get("serialNumber")
    pid = raw.get("personIdV2")
    uid_v2 = try_classify(pid) if pid else None
    if pid and (uid_v2 is None or uid_v2.kind is not IdKind.PERSON_ID_V2):
        if notices is not None:
            notices.append(f"{uid}: personIdV2 {pid!r} does not match the personIdV2 grammar")
        uid_v2 = None
    return VoiceRequestRecord(
        device=str(device or ""), timestamp=int(raw.get("timestamp") or 0),
        transcript=str(raw.get("transcript") or ""), intent=str(raw.get("intent") or ""),
        resource_ids=tuple(str(r) for r in raw.get("resourceIds") or ()), person_id_v2=uid_v2,
        utterance_id=str(uid),
    )


def acquire_voice_history(client: CloudClient, window: tuple[int, int]) -> VoiceHistory:
    start, end = window
    if start > end:
        raise MissingParameterError(f"window start {start} is after end {end}")
    out = VoiceHistory()
    if start == end:
        return out
    desc = client.descriptor("voice-history")
    pages = client.fetch_pages(desc, {"startTime": start, "endTime": end})
    for raw in page_items(pages, desc.pagination.items_field):
        rec = voice_record(raw, out.notices)
        if rec is None:
            continue
        try:
            audio = client.fetch("voice-audio", {"uid": rec.utterance_id})
        except HttpStatusError as exc:
            out.notices.append(f"{rec.utterance_id}: no audio (HTTP {exc.status}); "
                               "the recording may have been deleted")
            out.records.append(rec)
            continue
        out.audio[rec.utterance_id] = audio.body
        out.records.append(VoiceRequestRecord(**{**rec.__dict__, "audio_sha256": audio.sha256}))
    out.records.sort(key=lambda r: (r.timestamp, r.utterance_id))
    return out


# -- photos and videos ------------------------------------------------------------


@dataclass(frozen=True)
class MediaItem:
    id: str
    owner_id: str
    metadata: dict
    sha256: str
    size: int

    def to_json(self) -> dict:
        return {"id": self.id, "owner_id": self.owner_id, "sha256": self.sha256,
                "size": self.size, "metadata": self.metadata}


@dataclass(frozen=True)
class MediaFailure:
    id: str
    reason: str

    def to_json(self) -> dict:
        return {"id": self.id, "reason": self.reason}


@dataclass
class MediaAcquisition:
    items: list[MediaItem] = field(default_factory=list)
    failures: list[MediaFailure] = field(default_factory=list)
    content: dict[str, bytes] = field(default_factory=dict)


def acquire_media(client: CloudClient) -> MediaAcquisition:
    desc = client.descriptor("drive-search")
    out = MediaAcquisition()
    for meta in page_items(client.fetch_pages(desc), desc.pagination.items_field):
        pid, owner = meta.get("id"), meta.get("ownerId")
        if not pid or not owner:
            out.failures.append(MediaFailure(str(pid or "?"), "search result lacks id or ownerId"))
            continue
        try:
            doc = client.fetch("media-download", {"photoId": pid, "ownerId": owner})
        except (HttpStatusError, CsrfCheckFailed) as exc:
            out.failures.append(MediaFailure(str(pid), str(exc)))
            continue
        out.items.append(MediaItem(str(pid), str(owner), meta, doc.sha256, len(doc.body)))
        out.content[doc.sha256] = doc.body
    return out


# -- catalog sweep -----------------------------------------------------------------


@dataclass(frozen=True)
class SweepFailure:
    descriptor_id: str
    args: dict
    reason: str

    def to_json(self) -> dict:
        return {"descriptor_id": self.descriptor_id, "args": self.args, "reason": self.reason}


@dataclass
class SweepResult:
    responses: list[ResponseDocument] = field(default_factory=list)
    failures: list[SweepFailure] = field(default_factory=list)
    skipped: list[SweepFailure] = field(default_factory=list)
    error: EchoShowError | None = None

    def bodies(self, descriptor_id: str) -> list[Any]:
        return [r.body for r in self.responses if r.descriptor_id == descriptor_id]


def _walk(doc: Any, pointer: str) -> list[Any]:
    values = [doc]
    for part in [p for p in pointer.split("/") if p]:
        nxt = []
        for v in values:
            if part == "*" and isinstance(v, list):
                nxt.extend(v)
            elif isinstance(v, list) and re.fullmatch(r"\d+", part) and int(part) < len(v):
                nxt.append(v[int(part)])
            elif isinstance(v, dict) and part in v:
                nxt.append(v[part])
        values = nxt
    return values


def resolve_pointer(doc: Any, pointer: str) -> list[Any]:
    """Scalar values at a '/'-separated pointer; ``*`` fans out over a list."""
    return [v for v in _walk(doc, pointer) if v is not None and not isinstance(v, (dict, list))]


def plan_order(descriptors: Iterable[EndpointDescriptor]) -> list[EndpointDescriptor]:
    """Catalog order, moved only as far as needed so producers precede consumers."""
    descs = list(descriptors)
    by_id = {d.id: d for d in descs}
    done: list[EndpointDescriptor] = []
    placed: set[str] = set()

    def visit(d: EndpointDescriptor, stack: tuple[str, ...] = ()):
        if d.id in placed:
            return
        if d.id in stack:
            raise EchoShowError(f"parameter sources form a cycle through {d.id}")
        for p in d.params:
            src = p.source_map.get("endpoint")
            if src and src in by_id:
                visit(by_id[src], stack + (d.id,))
        placed.add(d.id)
        done.append(d)

    for d in descs:
        visit(d)
    return done


def _bindings(client: CloudClient, desc: EndpointDescriptor, window: tuple[int, int],
              result: SweepResult) -> list[dict] | str:
    """Argument sets for one descriptor, or the reason it cannot be bound.

    Parameters drawn from the same list (``/items/*/a`` and ``/items/*/b``)
    are taken item by item; other parameters use their first value.
    """
    fixed: dict[str, Any] = {}
    groups: dict[tuple[str, str], list] = {}
    for p in desc.params:
        src = p.source_map
        if "endpoint" in src and "*" in src["pointer"]:
            head, tail = src["pointer"].split("*", 1)
            groups.setdefault((src["endpoint"], head + "*"), []).append((p, tail))
            continue
        if "window" in src:
            vals = [window[0] if src["window"] == "start" else window[1]]
        elif "state" in src:
            v = getattr(client.state, src["state"], None)
            vals = [v] if v else []
        elif "endpoint" in src:
            vals = [v for body in result.bodies(src["endpoint"]) for v in resolve_pointer(body, src["pointer"])]
        else:
            vals = []
        if vals:
            fixed[p.name] = vals[0]
        elif p.required:
            return f"no value for parameter {p.name}"
    combos = [fixed]
    for (endpoint_id, items_ptr), members in groups.items():
        rows = []
        for body in result.bodies(endpoint_id):
            for item in _walk(body, items_ptr):
                row = {}
                for p, tail in members:
                    vals = resolve_pointer(item, tail)
                    if vals:
                        row[p.name] = vals[0]
                if all(p.name in row for p, _ in members if p.required) and row not in rows:
                    rows.append(row)
        if not rows:
            return f"no values for parameters {[p.name for p, _ in members]}"
        combos = [{**c, **r} for c in combos for r in rows]
    return combos


def sweep(client: CloudClient, window: tuple[int, int], only: Iterable[str] | None = None) -> SweepResult:
    """Fetch every catalog endpoint (or ``only`` those), deriving parameters
    from earlier responses. HTTP-level failures are recorded and skipped;
    authentication and transport failures stop the sweep and are kept in
    ``result.error`` alongside everything fetched so far."""
    result = SweepResult()
    wanted = set(only) if only is not None else None
    try:
        _sweep(client, window, wanted, result)
    except (AuthError, NetworkError) as exc:
        log.warning("sweep aborted: %s", exc)
        result.error = exc
    return result


def _sweep(client: CloudClient, window: tuple[int, int], wanted: set[str] | None, result: SweepResult) -> None:
    for desc in plan_order(client.catalog.values()):
        bound = _bindings(client, desc, window, result)
        if isinstance(bound, str):
            if wanted is None or desc.id in wanted:
                result.skipped.append(SweepFailure(desc.id, {}, bound))
            continue
        # Producers of parameters run even when not requested, so dependants can bind.
        if wanted is not None and desc.id not in wanted and not _feeds(desc.id, wanted, client):
            continue
        for args in bound:
            try:
                result.responses.extend(client.fetch_pages(desc, args))
            except (HttpStatusError, CsrfCheckFailed, MissingParameterError) as exc:
                result.failures.append(SweepFailure(desc.id, {k: str(v) for k, v in args.items()}, str(exc)))


def _feeds(descriptor_id: str, wanted: set[str], client: CloudClient) -> bool:
    for w in wanted:
        d = client.catalog.get(w)
        if d is None:
            continue
        for p in d.params:
            if p.source_map.get("endpoint") == descriptor_id:
                return True
            src = p.source_map.get("endpoint")
            if src and src != w and _feeds(descriptor_id, {src}, client):
                return True
    return False


# -- replay ----------------------------------------------------------------------


def replay_log(directory: str | os.PathLike[str]) -> list[ResponseDocument]:
    """Re-read every archived API response in log order (exchanges excluded)."""
    d = Path(directory)
    out = []
    for entry in _io.read_jsonl(d / LOG_NAME):
        if entry["descriptor_id"] == EXCHANGE_ID or entry["status"] >= 400:
            continue
        if entry.get("content") == "json":
            body = entry.get("body")
        else:
            body = (d / entry["blob"]).read_bytes()
            if _sha(body) != entry["body_sha256"]:
                raise EchoShowError(f"blob {entry['blob']} does not match its logged digest")
        args = tuple(sorted(entry.get("args", {}).items()))
        out.append(ResponseDocument(entry["descriptor_id"], args, entry["status"], body, entry["body_sha256"]))
    return out


def records_from_responses(responses: Iterable[ResponseDocument], notices: list[str] | None = None):
    """Voice records and media items reconstructed from archived responses.

    Used both after a live sweep and on a replayed log, so the two agree."""
    responses = list(responses)
    audio = {dict(r.args).get("uid"): r.sha256 for r in responses if r.descriptor_id == "voice-audio"}
    downloads = {dict(r.args).get("photoId"): r for r in responses if r.descriptor_id == "media-download"}
    voice, media = [], []
    seen = set()
    for r in responses:
        if r.descriptor_id == "voice-history" and isinstance(r.body, dict):
            for raw in r.body.get("customerHistoryRecords") or ():
                rec = voice_record(raw, notices)
                if rec is None or rec.utterance_id in seen:
                    continue
                seen.add(rec.utterance_id)
                voice.append(VoiceRequestRecord(**{**rec.__dict__, "audio_sha256": audio.get(rec.utterance_id)}))
        elif r.descriptor_id == "drive-search" and isinstance(r.body, dict):
            for meta in r.body.get("data") or ():
                dl = downloads.get(meta.get("id"))
                if dl is not None:
                    media.append(MediaItem(str(meta["id"]), str(meta.get("ownerId")), meta, dl.sha256, len(dl.body)))
    voice.sort(key=lambda v: (v.timestamp, v.utterance_id))
    media.sort(key=lambda m: m.id)
    return voice, media


def _evidence(doc: ResponseDocument, item: str) -> str:
    return f"acquisition:{doc.descriptor_id}:{doc.sha256[:16]}#{item}"


def cloud_rows(responses: Iterable[ResponseDocument], notices: list[str] | None = None) -> list[dict]:
    """Typed record rows (voice requests, media items, comms messages) with
    evidence references into the acquisition log."""
    responses = list(responses)
    voice, media = records_from_responses(responses, notices)
    origin: dict[tuple[str, str], ResponseDocument] = {}
    for r in responses:
        if r.descriptor_id == "voice-history" and isinstance(r.body, dict):
            for raw in r.body.get("customerHistoryRecords") or ():
                origin.setdefault(("v", str(raw.get("utteranceId"))), r)
        elif r.descriptor_id == "media-download":
            origin.setdefault(("m", dict(r.args).get("photoId", "")), r)
    rows = []
    for v in voice:
        rows.append({"record_type": "voice_request", **v.to_json(),
                     "evidence": _evidence(origin[("v", v.utterance_id)], v.utterance_id)})
    for m in media:
        rows.append({"record_type": "media_item", **m.to_json(),
                     "evidence": _evidence(origin[("m", m.id)], m.id)})
    seen = set()
    for r in responses:
        if r.descriptor_id != "comms-messages" or not isinstance(r.body, dict):
            continue
        conv = dict(r.args).get("conversationId")
        for msg in r.body.get("messages") or ():
            mid = str(msg.get("messageId", ""))
            if not mid or mid in seen:
                continue
            seen.add(mid)
            payload = msg.get("payload") or {}
            rows.append({"record_type": "comms_message", "message_id": mid, "conversation_id": conv,
                         "time": msg.get("time"), "sender": msg.get("sender"), "type": msg.get("type"),
                         "text": payload.get("text") if isinstance(payload, dict) else None,
                         "evidence": _evidence(r, mid)})
    return rows
