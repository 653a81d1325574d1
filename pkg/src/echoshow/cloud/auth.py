"""Refresh-token exchange and short-lived credential caching.

Both header forms (Bearer and ``X-Amz-Access-Token``) carry the same access
token; session cookies are a separate exchange. The exchange is a form POST
whose field names come from ``data/exchange.json``.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from urllib.parse import urlencode

from ..errors import AuthError, NetworkError
from .catalog import AuthMethod, exchange_config
from .transport import HttpRequest, Transport

log = logging.getLogger(__name__)

ACCESS_TOKEN_LIFETIME_S = 3600
COOKIE_LIFETIME_S = 86400


class RefreshRejected(AuthError):
    """The token endpoint refused the refresh token (revoked or unknown)."""


@dataclass(frozen=True)
class AccessToken:
    value: str = field(repr=False)
    issued_at: float
    expires_at: float

    def valid_at(self, now: float) -> bool:
        return now < self.expires_at


@dataclass(frozen=True)
class CookieJar:
    cookies: tuple[tuple[str, str], ...] = field(repr=False)
    issued_at: float
    expires_at: float

    def valid_at(self, now: float) -> bool:
        return now < self.expires_at

    def header(self) -> str:
        return "; ".join(f"{k}={v}" for k, v in self.cookies)


Credential = AccessToken | CookieJar


@dataclass
class AuthState:
    refresh_token: str = field(repr=False)
    token_endpoint: dict = field(default_factory=exchange_config)
    access_token: AccessToken | None = None
    cookies: CookieJar | None = None
    directed_id: str | None = None
    provenance: str | None = None
    exchanges: int = 0
    _locks: dict = field(default_factory=lambda: {"token": threading.Lock(), "cookies": threading.Lock()},
                         repr=False, compare=False)

    def __post_init__(self):
        if not self.refresh_token:
            raise AuthError("no refresh token")

    def invalidate(self, method: AuthMethod) -> None:
        if method is AuthMethod.SESSION_COOKIES:
            self.cookies = None
        else:
            self.access_token = None


def _exchange(state: AuthState, kind: str, now: float, transport: Transport) -> dict:
    cfg = state.token_endpoint
    form = {cfg["refresh_field"]: state.refresh_token,
            cfg["type_field"]: cfg[kind]["requested_token_type"]}
    req = HttpRequest(
        cfg.get("method", "POST"), cfg["host"], cfg["path"],
        headers=(("Content-Type", "application/x-www-form-urlencoded"),),
        body=urlencode(form).encode(),
    )
    resp = transport.send(req)
    state.exchanges += 1
    if resp.status in (400, 401, 403):
        raise RefreshRejected(f"token endpoint refused the refresh token (HTTP {resp.status}); "
                              "it was probably revoked by a logout")
    if resp.status != 200:
        raise NetworkError(f"token endpoint returned HTTP {resp.status}")
    try:
        return json.loads(resp.body)
    except ValueError as exc:
        raise NetworkError(f"token endpoint returned non-JSON body: {exc}") from exc


def ensure_credentials(state: AuthState, method: AuthMethod, now: float, transport: Transport) -> Credential:
    """Return an unexpired credential for ``method``, exchanging the refresh
    token only when nothing valid is cached. Concurrent callers share one
    exchange."""
    if method is AuthMethod.SESSION_COOKIES:
        if state.cookies is not None and state.cookies.valid_at(now):
            return state.cookies
        with state._locks["cookies"]:
            if state.cookies is not None and state.cookies.valid_at(now):
                return state.cookies
            doc = _exchange(state, "cookies", now, transport)
            try:
                jar = tuple(sorted((str(k), str(v)) for k, v in doc["cookies"].items()))
            except (KeyError, AttributeError) as exc:
                raise NetworkError("cookie exchange response lacks 'cookies'") from exc
            life = float(doc.get("expires_in", COOKIE_LIFETIME_S))
            state.cookies = CookieJar(jar, now, now + life)
            log.info("session cookies renewed (valid %.0f s)", life)
            return state.cookies
    if state.access_token is not None and state.access_token.valid_at(now):
        return state.access_token
    with state._locks["token"]:
        if state.access_token is not None and state.access_token.valid_at(now):
            return state.access_token
        doc = _exchange(state, "access_token", now, transport)
        if not doc.get("access_token"):
            raise NetworkError("token exchange response lacks 'access_token'")
        life = float(doc.get("expires_in", ACCESS_TOKEN_LIFETIME_S))
        state.access_token = AccessToken(str(doc["access_token"]), now, now + life)
        log.info("access token renewed (valid %.0f s)", life)
        return state.access_token


def credential_headers(method: AuthMethod, cred: Credential) -> tuple[tuple[str, str], ...]:
    """Exactly one credential header for the method."""
    if method is AuthMethod.SESSION_COOKIES:
        assert isinstance(cred, CookieJar)
        return (("Cookie", cred.header()),)
    assert isinstance(cred, AccessToken)
    if method is AuthMethod.BEARER:
        return (("Authorization", f"Bearer {cred.value}"),)
    return (("X-Amz-Access-Token", cred.value),)
