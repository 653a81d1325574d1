import json
from pathlib import Path
from zoneinfo import ZoneInfo

import pytest
from hypothesis import given, strategies as st

from echoshow.errors import InputError, SchemaError
from echoshow.timeline import (TimelineEvent, TimelineSource, build_timeline, events_from_rows,
                               render_csv, write_timeline)

T = 1691160000000


def _voice(uid, ts, evidence=None):
    return {"record_type": "voice_request", "utterance_id": uid, "timestamp": ts, "device": "Echo",
            "transcript": "stop", "intent": "Stop", "resource_ids": [], "person_id_v2": None,
            "audio_sha256": None, "evidence": evidence or f"acquisition:voice-history:abc#{uid}"}


def _local(ts, idx=0):
    return {"artifact_id": "alexa-lists", "source_path": "data/x.db", "index": idx,
            "fields": {"table": "lists", "columns": {"createdTime": ts, "name": "n"}}}


def _write(path: Path, rows) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def test_sorted_with_source_tie_break(tmp_path):
    a = _write(tmp_path / "cloud.jsonl", [_voice("u2", T + 5), _voice("u1", T)])
    b = _write(tmp_path / "local.jsonl", [{"_meta": {}}, _local(T)])
    events = build_timeline([a, b])
    assert [(e.timestamp, e.source) for e in events] == [
        (T, TimelineSource.LOCAL_DB), (T, TimelineSource.CLOUD_VOICE_HISTORY),
        (T + 5, TimelineSource.CLOUD_VOICE_HISTORY)]
    assert all(e.evidence for e in events)


def test_duplicate_inputs_are_deduplicated(tmp_path):
    a = _write(tmp_path / "a.jsonl", [_voice("u1", T), _local(T)])
    assert build_timeline([a, a]) == build_timeline([a])


def test_empty_inputs(tmp_path):
    with pytest.raises(InputError):
        build_timeline([])
    with pytest.raises(InputError):
        build_timeline([tmp_path / "missing.jsonl"])
    assert build_timeline([_write(tmp_path / "e.jsonl", [])]) == []
    (tmp_path / "bad.jsonl").write_text("{not json\n")
    with pytest.raises(SchemaError):
        build_timeline([tmp_path / "bad.jsonl"])


def test_non_epoch_integers_are_not_times():
    row = _local(12345)
    assert list(events_from_rows([row])) == []


def test_evidence_is_required():
    with pytest.raises(ValueError):
        TimelineEvent(T, TimelineSource.DEVICE_LOG, "x", "", (), "")


def test_tz_changes_only_csv(tmp_path):
    a = _write(tmp_path / "a.jsonl", [_voice("u1", T)])
    events = build_timeline([a])
    utc = render_csv(events)
    berlin = render_csv(events, ZoneInfo("Europe/Berlin"))
    assert "2023-08-04T14:40:00.000+00:00" in utc and "2023-08-04T16:40:00.000+02:00" in berlin
    assert utc.replace("14:40:00.000+00:00", "16:40:00.000+02:00") == berlin
    out = tmp_path / "t.jsonl"
    assert write_timeline(out, events, [a]) == 1
    assert json.loads(out.read_text().splitlines()[1])["timestamp"] == T


@given(st.lists(st.tuples(st.integers(10**12, 2 * 10**12), st.sampled_from("abcdef")), max_size=30))
def test_output_is_order_independent(items):
    rows = [_voice(f"{name}{i}", ts) for i, (ts, name) in enumerate(items)]
    forward = sorted(events_from_rows(rows), key=TimelineEvent.sort_key)
    backward = sorted(events_from_rows(reversed(rows)), key=TimelineEvent.sort_key)
    assert forward == backward
    assert [e.timestamp for e in forward] == sorted(e.timestamp for e in forward)
