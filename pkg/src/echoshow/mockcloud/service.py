"""Offline stand-in for the vendor cloud.

Routes come from the endpoint catalog, responses from a fixture directory
with one entry per endpoint id:

* ``<id>.json``: served for every request to that route. A top-level
  ``"__mock__"`` key turns the file into an envelope whose ``"body"`` is
  served, optionally filtered (``{"filter": {"field", "from", "to"}}``,
  half-open) and cursor-paginated (``{"page_size": n}``).
* ``<id>.bin``: raw bytes.
* ``<id>/<key>.json|.bin``: keyed by the value of the route's last path
  parameter, or its first query parameter when it has none.

Hostnames are simulated through the ``Host`` header. Control routes live
under ``/__mock__/`` on any host.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable
from urllib.parse import parse_qsl, unquote

from ..cloud.catalog import (AuthMethod, EndpointDescriptor, auth_for_host, endpoint_catalog,
                             exchange_config, same_service)
from ..cloud.transport import HttpRequest, HttpResponse
from ..errors import RoutingError, SchemaError

CONTROL_PREFIX = "/__mock__/"
SESSION_COOKIE = "at-main"
DEFAULT_EPOCH = 1_700_000_000.0


class FixtureError(SchemaError):
    pass


class MockClock:
    def __init__(self, start: float = DEFAULT_EPOCH):
        self._now = float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    __call__ = now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("the mock clock only moves forward")
        with self._lock:
            self._now += seconds
            return self._now


@dataclass(frozen=True)
class Fixture:
    kind: str  # "json", "binary" or "keyed"
    body: object = None
    options: dict = field(default_factory=dict)
    keyed: dict = field(default_factory=dict)


def _read_entry(path: Path):
    if path.suffix == ".json":
        try:
            return "json", json.loads(path.read_text("utf-8"))
        except ValueError as exc:
            raise FixtureError(f"{path}: invalid JSON ({exc})") from exc
    return "binary", path.read_bytes()


def load_fixtures(directory: str | Path) -> dict[str, Fixture]:
    d = Path(directory)
    if not d.is_dir():
        raise FixtureError(f"{d}: fixture directory not found")
    out: dict[str, Fixture] = {}
    for p in sorted(d.iterdir()):
        if p.is_dir():
            keyed = {}
            for q in sorted(p.iterdir()):
                if q.is_file():
                    keyed[q.stem] = _read_entry(q)
            out[p.name] = Fixture("keyed", keyed=keyed)
        elif p.suffix == ".json":
            kind, doc = _read_entry(p)
            if isinstance(doc, dict) and "__mock__" in doc:
                out[p.stem] = Fixture("json", doc.get("body"), dict(doc["__mock__"]))
            else:
                out[p.stem] = Fixture("json", doc)
        elif p.suffix == ".bin":
            out[p.stem] = Fixture("binary", p.read_bytes())
    return out


def _path_regex(template: str) -> re.Pattern[str]:
    parts = re.split(r"(\{[^}]+\})", template)
    rx = "".join(f"(?P<{p[1:-1]}>[^/]+)" if p.startswith("{") else re.escape(p) for p in parts)
    return re.compile(rx + r"\Z")


def _json(status: int, obj) -> HttpResponse:
    return HttpResponse(status, json.dumps(obj, sort_keys=True).encode(),
                        (("Content-Type", "application/json"),))


def _forms(request: HttpRequest) -> set[AuthMethod]:
    forms = set()
    auth = request.header("Authorization")
    if auth:
        forms.add(AuthMethod.BEARER)
    if request.header("X-Amz-Access-Token"):
        forms.add(AuthMethod.AMZ_ACCESS_TOKEN)
    if request.header("Cookie"):
        forms.add(AuthMethod.SESSION_COOKIES)
    return forms


def _cookies(header: str | None) -> dict[str, str]:
    out = {}
    for part in (header or "").split(";"):
        if "=" in part:
            k, v = part.split("=", 1)
            out[k.strip()] = v.strip()
    return out


class MockCloud:
    def __init__(self, fixtures: dict[str, Fixture] | str | Path, refresh_tokens: Iterable[str],
                 clock: MockClock | None = None, catalog: Iterable[EndpointDescriptor] | None = None,
                 require_csrf: bool = False, seed: str = "mock"):
        self.catalog = list(catalog if catalog is not None else endpoint_catalog())
        self.fixtures = fixtures if isinstance(fixtures, dict) else load_fixtures(fixtures)
        gaps = sorted(e.id for e in self.catalog if e.id not in self.fixtures)
        if gaps:
            raise FixtureError("fixtures missing for endpoint(s): " + ", ".join(gaps))
        self.clock = clock or MockClock()
        self.exchange = exchange_config()
        self.require_csrf = require_csrf
        self.seed = seed
        self._lock = threading.RLock()
        self._refresh = {t: True for t in refresh_tokens}
        self._tokens: dict[str, float] = {}
        self._cookies: dict[str, float] = {}
        self._issued = 0
        self._journal: list[dict] = []
        self._routes = [(e, _path_regex(e.path_template)) for e in self.catalog]

    # -- credentials ---------------------------------------------------------

    def _mint(self, prefix: str) -> str:
        self._issued += 1
        digest = hashlib.sha256(f"{self.seed}:{self._issued}".encode()).hexdigest()[:40]
        return f"{prefix}{digest}"

    def revoke(self, refresh_token: str) -> bool:
        with self._lock:
            known = refresh_token in self._refresh
            self._refresh[refresh_token] = False
            return known

    def exchange_token(self, refresh_token: str, kind: str = "access_token") -> dict | None:
        """Issue a credential, or ``None`` for an unknown or revoked token."""
        with self._lock:
            if not self._refresh.get(refresh_token):
                return None
            now = self.clock.now()
            if kind == "session_cookies":
                life = self.exchange["cookies"]["lifetime_s"]
                value = self._mint("cookie-")
                self._cookies[value] = now + life
                return {"cookies": {"session-id": self._mint("sid-"), SESSION_COOKIE: value},
                        "expires_in": life}
            life = self.exchange["access_token"]["lifetime_s"]
            value = self._mint("Atza|")
            self._tokens[value] = now + life
            return {"access_token": value, "token_type": "bearer", "expires_in": life}

    def _credential_ok(self, method: AuthMethod, request: HttpRequest) -> tuple[bool, str]:
        now = self.clock.now()
        if method is AuthMethod.SESSION_COOKIES:
            value = _cookies(request.header("Cookie")).get(SESSION_COOKIE)
            exp = self._cookies.get(value or "")
        elif method is AuthMethod.BEARER:
            auth = request.header("Authorization") or ""
            value = auth[7:] if auth.startswith("Bearer ") else ""
            exp = self._tokens.get(value)
        else:
            exp = self._tokens.get(request.header("X-Amz-Access-Token") or "")
        if exp is None:
            return False, "unknown credential"
        if now >= exp:
            return False, "credential expired"
        return True, ""

    # -- journal -------------------------------------------------------------

    def journal(self) -> list[dict]:
        with self._lock:
            return [dict(e) for e in self._journal]

    def cross_form_count(self) -> int:
        with self._lock:
            return sum(1 for e in self._journal if e["cross_form"])

    def exchange_count(self, kind: str | None = None) -> int:
        with self._lock:
            return sum(1 for e in self._journal
                       if e["route"] == "token-exchange" and (kind is None or e.get("kind") == kind))

    def _record(self, request: HttpRequest, route: str, status: int, expected=None,
                cross_form=False, reason="", **extra) -> None:
        self._journal.append({
            "seq": len(self._journal), "time": self.clock.now(), "method": request.method,
            "host": request.host, "path": request.path, "route": route,
            "credential_forms": sorted(f.value for f in _forms(request)),
            "expected_form": expected.value if expected else None,
            "cross_form": cross_form, "status": status, "reason": reason, **extra,
        })

    # -- dispatch --------------------------------------------------------------

    def handle(self, request: HttpRequest) -> HttpResponse:
        with self._lock:
            host = request.host.split(":")[0].lower()
            if request.path.startswith(CONTROL_PREFIX):
                resp = self._control(request)
                self._record(request, "control", resp.status)
                return resp
            if (host == self.exchange["host"] and request.path == self.exchange["path"]
                    and request.method == self.exchange["method"]):
                return self._exchange(request)
            for desc, rx in self._routes:
                m = rx.match(request.path)
                if m and request.method == desc.method and same_service(desc.host, host):
                    return self._route(desc, {k: unquote(v) for k, v in m.groupdict().items()}, request)
            try:
                auth_for_host(host)
                reason = "no such route"
            except RoutingError:
                reason = "unknown host"
            self._record(request, "unrouted", 404, reason=reason)
            return _json(404, {"error": reason})

    def _exchange(self, request: HttpRequest) -> HttpResponse:
        form = dict(parse_qsl((request.body or b"").decode("utf-8", "replace")))
        kind = form.get(self.exchange["type_field"], "access_token")
        issued = self.exchange_token(form.get(self.exchange["refresh_field"], ""), kind)
        if issued is None:
            self._record(request, "token-exchange", 400, reason="invalid_grant", kind=kind)
            return _json(400, {"error": "invalid_grant",
                               "error_description": "refresh token unknown or revoked"})
        self._record(request, "token-exchange", 200, kind=kind)
        return _json(200, issued)

    def _route(self, desc: EndpointDescriptor, path_args: dict, request: HttpRequest) -> HttpResponse:
        expected = desc.auth
        forms = _forms(request)
        if forms - {expected}:
            self._record(request, desc.id, 401, expected, True, "wrong credential form")
            return _json(401, {"error": "wrong credential form for host"})
        if expected not in forms:
            self._record(request, desc.id, 401, expected, reason="no credential")
            return _json(401, {"error": "missing credential"})
        ok, why = self._credential_ok(expected, request)
        if not ok:
            self._record(request, desc.id, 401, expected, reason=why)
            return _json(401, {"error": why})
        if desc.method == "POST" and self.require_csrf and not request.header(self.exchange["csrf_header"]):
            self._record(request, desc.id, 403, expected, reason="csrf")
            return HttpResponse(403, b"csrf check failed", (("Content-Type", "text/plain"),))
        args = {**dict(request.query), **path_args}
        resp = self._serve_fixture(desc, args)
        self._record(request, desc.id, resp.status, expected)
        return resp

    def _serve_fixture(self, desc: EndpointDescriptor, args: dict) -> HttpResponse:
        fx = self.fixtures[desc.id]
        if fx.kind == "keyed":
            path_params = [p.name for p in desc.params if p.location == "path"]
            query_params = [p.name for p in desc.params if p.location == "query"]
            key_name = path_params[-1] if path_params else (query_params[0] if query_params else None)
            entry = fx.keyed.get(args.get(key_name, "")) if key_name else None
            if entry is None:
                return _json(404, {"error": "not found"})
            kind, body = entry
            if kind == "binary":
                return HttpResponse(200, body, (("Content-Type", "application/octet-stream"),))
            return _json(200, body)
        if fx.kind == "binary":
            return HttpResponse(200, fx.body, (("Content-Type", "application/octet-stream"),))
        body = fx.body
        if desc.pagination and isinstance(body, dict):
            body = self._page(desc, body, fx.options, args)
        return _json(200, body)

    def _page(self, desc: EndpointDescriptor, body: dict, options: dict, args: dict) -> dict:
        field_ = desc.pagination.items_field
        items = list(body.get(field_) or ())
        flt = options.get("filter")
        if flt:
            lo, hi = args.get(flt["from"]), args.get(flt["to"])
            try:
                lo = int(lo) if lo is not None else None
                hi = int(hi) if hi is not None else None
            except ValueError:
                lo = hi = None
            items = [i for i in items if (lo is None or i.get(flt["field"], 0) >= lo)
                     and (hi is None or i.get(flt["field"], 0) < hi)]
        size = int(options.get("page_size", 0)) or len(items) or 1
        try:
            start = int(args.get(desc.pagination.cursor_param, 0))
        except ValueError:
            start = 0
        page = {k: v for k, v in body.items() if k != desc.pagination.cursor_field}
        page[field_] = items[start:start + size]
        if start + size < len(items):
            page[desc.pagination.cursor_field] = str(start + size)
        return page

    def _control(self, request: HttpRequest) -> HttpResponse:
        action = request.path[len(CONTROL_PREFIX):].strip("/")
        params = dict(request.query)
        if request.body:
            try:
                params.update(json.loads(request.body))
            except ValueError:
                params.update(parse_qsl(request.body.decode("utf-8", "replace")))
        if action == "health":
            return _json(200, {"status": "ok", "routes": len(self._routes), "now": self.clock.now()})
        if action == "clock/advance" and request.method == "POST":
            try:
                return _json(200, {"now": self.clock.advance(float(params.get("seconds", 0)))})
            except ValueError as exc:
                return _json(400, {"error": str(exc)})
        if action == "revoke" and request.method == "POST":
            return _json(200, {"revoked": self.revoke(str(params.get("refresh_token", "")))})
        if action == "journal":
            return _json(200, {"journal": self.journal()})
        return _json(404, {"error": f"unknown control action {action!r}"})

    def transport(self) -> "InProcessTransport":
        return InProcessTransport(self)


class InProcessTransport:
    def __init__(self, mock: MockCloud):
        self.mock = mock
        self.sent = 0

    def send(self, request: HttpRequest) -> HttpResponse:
        self.sent += 1
        return self.mock.handle(request)
