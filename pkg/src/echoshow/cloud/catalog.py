"""Declarative endpoint catalog and hostname-based auth routing.

The catalog lives in ``data/endpoints.json`` (versioned). Hosts are written
with the ``de`` marketplace; ``with_marketplace`` rewrites the TLD of the
cookie-authenticated ``{alexa,skills-store,www}.amazon.*`` hosts.
"""

from __future__ import annotations

import enum
import json
import re
import string
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from ..errors import RoutingError, SchemaError

CATALOG_VERSION = 1


class AuthMethod(str, enum.Enum):
    BEARER = "BearerAuthorizationHeader"
    AMZ_ACCESS_TOKEN = "AmzAccessTokenHeader"
    SESSION_COOKIES = "SessionCookies"


class ResponseClass(str, enum.Enum):
    JSON = "Json"
    BINARY = "Binary"
    GRAPHQL = "GraphQl"


_MARKETPLACE_HOST = re.compile(r"^(alexa|skills-store|www)\.amazon\.([a-z]{2,3}(?:\.[a-z]{2})?)$")
_EXACT = {
    "api.amazon.com": AuthMethod.BEARER,
    "api.amazonalexa.com": AuthMethod.BEARER,
    "alexa-comms-mobile-service.amazon.com": AuthMethod.SESSION_COOKIES,
    "cdws.eu-west-1.amazonaws.com": AuthMethod.AMZ_ACCESS_TOKEN,
    "drive.amazonaws.com": AuthMethod.AMZ_ACCESS_TOKEN,
}
# Regional drive content hosts (e.g. content-eu.drive.amazonaws.com).
_DRIVE_SUBDOMAIN = re.compile(r"^[a-z0-9-]+\.drive\.amazonaws\.com$")


def _normalise_host(host: str) -> str:
    host = host.strip().lower().rstrip(".")
    if ":" in host:
        host = host.rsplit(":", 1)[0]
    return host


def auth_for_host(host: str) -> AuthMethod:
    """Credential form required by ``host``. Unknown hosts raise ``RoutingError``."""
    h = _normalise_host(host)
    if not h:
        raise RoutingError("empty hostname")
    if h in _EXACT:
        return _EXACT[h]
    if _MARKETPLACE_HOST.match(h):
        return AuthMethod.SESSION_COOKIES
    if _DRIVE_SUBDOMAIN.match(h):
        return AuthMethod.AMZ_ACCESS_TOKEN
    raise RoutingError(f"no authorization rule for host {h!r}")


def with_marketplace(host: str, tld: str) -> str:
    m = _MARKETPLACE_HOST.match(_normalise_host(host))
    if m is None:
        return host
    return f"{m.group(1)}.amazon.{tld}"


def same_service(a: str, b: str) -> bool:
    """True when two hosts differ at most in their marketplace TLD."""
    a, b = _normalise_host(a), _normalise_host(b)
    if a == b:
        return True
    ma, mb = _MARKETPLACE_HOST.match(a), _MARKETPLACE_HOST.match(b)
    return bool(ma and mb and ma.group(1) == mb.group(1))


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: str
    location: str  # "path" or "query"
    required: bool = True
    source: tuple[tuple[str, str], ...] = ()

    @property
    def source_map(self) -> dict[str, str]:
        return dict(self.source)

    def to_json(self) -> dict:
        out = {"name": self.name, "type": self.type, "in": self.location, "required": self.required}
        if self.source:
            out["source"] = self.source_map
        return out


@dataclass(frozen=True)
class Pagination:
    cursor_param: str
    cursor_field: str
    items_field: str


@dataclass(frozen=True)
class EndpointDescriptor:
    id: str
    host: str
    path_template: str
    method: str
    auth: AuthMethod
    params: tuple[ParamSpec, ...] = ()
    response_class: ResponseClass = ResponseClass.JSON
    fixed_query: tuple[tuple[str, str], ...] = ()
    pagination: Pagination | None = None
    description: str = field(default="", compare=False)

    def __post_init__(self):
        slots = path_slots(self.path_template)
        declared = {p.name for p in self.params if p.location == "path"}
        if slots != declared:
            raise SchemaError(f"{self.id}: path slots {sorted(slots)} != path params {sorted(declared)}")
        routed = auth_for_host(self.host)
        if routed is not self.auth:
            raise SchemaError(f"{self.id}: auth {self.auth.value} disagrees with host rule {routed.value}")

    def param(self, name: str) -> ParamSpec:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def to_json(self) -> dict:
        out = {
            "id": self.id, "host": self.host, "path_template": self.path_template,
            "method": self.method, "auth": self.auth.value,
            "params": [p.to_json() for p in self.params],
            "response_class": self.response_class.value, "description": self.description,
        }
        if self.fixed_query:
            out["fixed_query"] = dict(self.fixed_query)
        if self.pagination:
            out["pagination"] = {"cursor_param": self.pagination.cursor_param,
                                 "cursor_field": self.pagination.cursor_field,
                                 "items_field": self.pagination.items_field}
        return out


def path_slots(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name}


def _descriptor(raw: dict) -> EndpointDescriptor:
    try:
        params = tuple(
            ParamSpec(p["name"], p["type"], p.get("in", "query"), p.get("required", True),
                      tuple(sorted(p.get("source", {}).items())))
            for p in raw.get("params", ())
        )
        pag = raw.get("pagination")
        return EndpointDescriptor(
            id=raw["id"], host=raw["host"], path_template=raw["path_template"],
            method=raw.get("method", "GET").upper(), auth=AuthMethod(raw["auth"]), params=params,
            response_class=ResponseClass(raw.get("response_class", "Json")),
            fixed_query=tuple(sorted(raw.get("fixed_query", {}).items())),
            pagination=Pagination(pag["cursor_param"], pag["cursor_field"], pag["items_field"]) if pag else None,
            description=raw.get("description", ""),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaError(f"endpoint {raw.get('id', '?')}: {exc}") from exc


def parse_catalog(doc: dict) -> list[EndpointDescriptor]:
    if doc.get("version") != CATALOG_VERSION:
        raise SchemaError(f"unsupported endpoint catalog version {doc.get('version')!r}")
    eps = [_descriptor(r) for r in doc.get("endpoints", ())]
    ids = [e.id for e in eps]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise SchemaError(f"duplicate endpoint ids: {dupes}")
    return eps


def _data(name: str) -> dict:
    return json.loads(resources.files(__package__).joinpath("data", name).read_text("utf-8"))


@lru_cache(maxsize=1)
def _builtin() -> tuple[EndpointDescriptor, ...]:
    return tuple(parse_catalog(_data("endpoints.json")))


def endpoint_catalog() -> list[EndpointDescriptor]:
    return list(_builtin())


def deprecated_endpoints() -> list[dict]:
    return list(_data("endpoints.json").get("deprecated", ()))


def endpoint(endpoint_id: str) -> EndpointDescriptor:
    for e in _builtin():
        if e.id == endpoint_id:
            return e
    raise KeyError(endpoint_id)


@lru_cache(maxsize=1)
def exchange_config() -> dict:
    """Refresh-token exchange wire format shared by the client and the mock."""
    return _data("exchange.json")
