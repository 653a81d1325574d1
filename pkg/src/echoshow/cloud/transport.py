"""HTTP transport seam between the acquisition client and the network."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from typing import Protocol
from urllib.parse import urlencode, urlsplit

from ..errors import NetworkError


@dataclass(frozen=True)
class HttpRequest:
    method: str
    host: str
    path: str
    query: tuple[tuple[str, str], ...] = ()
    headers: tuple[tuple[str, str], ...] = ()
    body: bytes | None = None

    def header(self, name: str) -> str | None:
        name = name.lower()
        for k, v in self.headers:
            if k.lower() == name:
                return v
        return None

    @property
    def target(self) -> str:
        return self.path + ("?" + urlencode(self.query) if self.query else "")

    def summary(self) -> dict:
        """Loggable view: header names only, never credential values."""
        return {
            "method": self.method,
            "host": self.host,
            "path": self.path,
            "query": [list(kv) for kv in self.query],
            "header_names": sorted({k.lower() for k, _ in self.headers}),
        }


@dataclass(frozen=True)
class HttpResponse:
    status: int
    body: bytes = b""
    headers: tuple[tuple[str, str], ...] = field(default=())

    def header(self, name: str) -> str | None:
        name = name.lower()
        for k, v in self.headers:
            if k.lower() == name:
                return v
        return None


class Transport(Protocol):
    def send(self, request: HttpRequest) -> HttpResponse: ...


def is_loopback_url(url: str) -> bool:
    """True for ``localhost`` and loopback IP literals. Other names are not
    resolved, so the check itself never touches the network."""
    host = urlsplit(url).hostname
    if not host:
        return False
    if host == "localhost":
        return True
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        return False


class RequestsTransport:
    """Send requests with ``requests``.

    With ``base_url`` every request goes to that origin and the simulated
    hostname travels in the ``Host`` header; without it requests go to
    ``https://{host}``.
    """

    def __init__(self, base_url: str | None = None, timeout: float = 30.0, session=None):
        import requests

        self._requests = requests
        self.base_url = base_url.rstrip("/") if base_url else None
        self.timeout = timeout
        self.session = session or requests.Session()
        self.session.trust_env = False

    def send(self, request: HttpRequest) -> HttpResponse:
        origin = self.base_url or f"https://{request.host}"
        headers = dict(request.headers)
        if self.base_url:
            headers["Host"] = request.host
        try:
            r = self.session.request(
                request.method, origin + request.path, params=list(request.query),
                headers=headers, data=request.body, timeout=self.timeout, allow_redirects=False,
            )
        except self._requests.RequestException as exc:
            raise NetworkError(f"{request.method} {request.host}{request.path}: {exc}") from exc
        return HttpResponse(r.status_code, r.content, tuple(r.headers.items()))

    def close(self) -> None:
        self.session.close()
