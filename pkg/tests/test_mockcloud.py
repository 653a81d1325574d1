import json
import shutil

import pytest

from echoshow.cloud import AuthState, CloudClient, HttpRequest, RequestsTransport, acquire_voice_history
from echoshow.mockcloud import CONTROL_PREFIX, FixtureError, MockClock, MockCloud, load_fixtures, serve


def test_missing_fixture_names_the_endpoint(corpus, tmp_path):
    d = tmp_path / "mock"
    shutil.copytree(f"{corpus.root}/mock", d)
    (d / "drive-search.json").unlink()
    with pytest.raises(FixtureError, match="drive-search"):
        MockCloud(d, [corpus.refresh_token])


def test_bad_fixture_json(tmp_path):
    (tmp_path / "users-me.json").write_text("{nope")
    with pytest.raises(FixtureError):
        load_fixtures(tmp_path)
    with pytest.raises(FixtureError):
        load_fixtures(tmp_path / "absent")


def test_clock_only_moves_forward():
    c = MockClock(10)
    assert c.advance(5) == 15
    with pytest.raises(ValueError):
        c.advance(-1)


def _token(mock, refresh):
    return mock.exchange_token(refresh)["access_token"]


def test_cross_form_request_is_flagged(rig, corpus):
    token = _token(rig.mock, corpus.refresh_token)
    cookies = rig.mock.exchange_token(corpus.refresh_token, "session_cookies")["cookies"]
    cookie_header = "; ".join(f"{k}={v}" for k, v in cookies.items())
    both = HttpRequest("GET", "alexa.amazon.de", "/api/users/me",
                       headers=(("Cookie", cookie_header), ("Authorization", f"Bearer {token}")))
    assert rig.mock.handle(both).status == 401
    wrong = HttpRequest("GET", "alexa.amazon.de", "/api/users/me", headers=(("X-Amz-Access-Token", token),))
    assert rig.mock.handle(wrong).status == 401
    right = HttpRequest("GET", "alexa.amazon.de", "/api/users/me", headers=(("Cookie", cookie_header),))
    assert rig.mock.handle(right).status == 200
    assert rig.mock.cross_form_count() == 2
    assert [e["expected_form"] for e in rig.mock.journal() if e["cross_form"]] == ["SessionCookies"] * 2


def test_marketplace_hosts_share_routes(rig, corpus):
    cookies = rig.mock.exchange_token(corpus.refresh_token, "session_cookies")["cookies"]
    hdr = (("Cookie", "; ".join(f"{k}={v}" for k, v in cookies.items())),)
    assert rig.mock.handle(HttpRequest("GET", "alexa.amazon.co.uk", "/api/users/me", headers=hdr)).status == 200
    assert rig.mock.handle(HttpRequest("GET", "example.com", "/api/users/me", headers=hdr)).status == 404


def test_expired_credentials_rejected(rig, corpus):
    token = _token(rig.mock, corpus.refresh_token)
    req = HttpRequest("GET", "api.amazon.com", "/user/profile", headers=(("Authorization", f"Bearer {token}"),))
    assert rig.mock.handle(req).status == 200
    rig.clock.advance(3600)
    resp = rig.mock.handle(req)
    assert resp.status == 401 and b"expired" in resp.body


def test_control_routes(rig, corpus):
    def control(action, body=None, method="POST"):
        resp = rig.mock.handle(HttpRequest(method, "localhost", CONTROL_PREFIX + action,
                                           body=json.dumps(body).encode() if body else None))
        return resp.status, json.loads(resp.body)

    status, doc = control("health", method="GET")
    assert status == 200 and doc["routes"] == 30
    assert control("clock/advance", {"seconds": 60})[1]["now"] == rig.clock.now()
    assert control("revoke", {"refresh_token": corpus.refresh_token})[1] == {"revoked": True}
    assert rig.mock.exchange_token(corpus.refresh_token) is None
    assert control("nope")[0] == 404
    assert len(control("journal", method="GET")[1]["journal"]) == 4


def test_http_server_on_loopback(corpus):
    mock = MockCloud(f"{corpus.root}/mock", [corpus.refresh_token])
    with serve(mock) as server:
        assert server.url.startswith("http://127.0.0.1:")
        transport = RequestsTransport(server.url, timeout=5)
        client = CloudClient(AuthState(corpus.refresh_token), transport, clock=mock.clock.now)
        profile = client.fetch("user-profile")
        assert profile.body["user_id"] == corpus.ids.directed_id
        vh = acquire_voice_history(client, corpus.cloud.window)
        assert sorted(r.utterance_id for r in vh.records) == sorted(corpus.cloud.voice_utterances)
        transport.close()
    assert {e["host"] for e in mock.journal()} >= {"api.amazon.com", "www.amazon.de"}
