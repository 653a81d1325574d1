import random
import sqlite3
import zipfile
from collections import Counter
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from echoshow.artifacts import (ArtifactParseError, EventKind, by_id, catalog, extract_events,
                                extract_tree, parse_recognition_db, parse_shared_prefs,
                                parse_wifi_config, read_dropbox_logs, scan_tree)
from echoshow.artifacts.catalog import DEPRECATED_PATHS
from echoshow.artifacts.logs import TOKEN_OF, TRIGGERS, LogCategory, line_timestamp, log_filename
from echoshow.artifacts.parsers import LAST_RECOGNIZED_CAVEAT, PARSERS
from echoshow.artifacts.scan import claim, glob_match
from echoshow.errors import InputError, SchemaError
from echoshow.synth import Identities, WIFI_XML, write_dropbox_logs

# -- catalog --------------------------------------------------------------------


def test_catalog_ids_unique_and_parsers_known():
    descs = catalog()
    assert len({d.id for d in descs}) == len(descs)
    assert all(d.parser in PARSERS for d in descs)
    assert not any(glob_match(d.path_glob, p) for d in descs for p in DEPRECATED_PATHS)


def test_logs_are_flagged_volatile():
    assert by_id("dropbox-logs").volatile and by_id("logd-logs").volatile
    assert not by_id("wifi-config").volatile


# -- glob semantics -------------------------------------------------------------


@pytest.mark.parametrize("pattern,path,ok", [
    ("a/**", "a/x", True),
    ("a/**", "a/x/y/z", True),
    ("a/**", "ab/x", False),
    ("a/*.db", "a/x.db", True),
    ("a/*.db", "a/b/x.db", False),
    ("a/b_*", "a/b_1", True),
    ("x/**/y", "x/y", True),
    ("x/**/y", "x/p/q/y", True),
])
def test_glob(pattern, path, ok):
    assert glob_match(pattern, path) is ok


def test_longest_literal_prefix_wins():
    owner, others = claim("data/com.amazon.dee.app/databases/DataStore.db", catalog())
    assert owner.id == "alexa-lists" and others == []


# -- parsers --------------------------------------------------------------------


def test_wifi_config(tmp_path):
    p = tmp_path / "WifiConfigStore.xml"
    p.write_text(WIFI_XML)
    creds = parse_wifi_config(p)
    assert [(c.ssid, c.psk_or_key, c.security) for c in creds] == [
        ("LabNet", "hunter22", "WPA_PSK"), ("CafeOpen", "", "NONE")]


def test_wifi_config_malformed(tmp_path):
    p = tmp_path / "w.xml"
    p.write_text("<WifiConfigStoreData><NetworkList>")
    with pytest.raises(ArtifactParseError):
        parse_wifi_config(p)
    assert issubclass(ArtifactParseError, SchemaError)


def test_shared_prefs_types(tmp_path):
    p = tmp_path / "p.xml"
    p.write_text("<?xml version='1.0'?><map><long name='t' value='1691159880000' />"
                 "<string name='s'>hi</string><boolean name='b' value='true' /><set name='x'>"
                 "<string>a</string></set></map>")
    rows = {r["key"]: r for r in parse_shared_prefs(p)}
    assert rows["t"]["value"] == 1691159880000 and rows["t"]["type"] == "long"
    assert rows["s"]["value"] == "hi" and rows["b"]["value"] is True


def test_recognition_db(tmp_path):
    r = random.Random(1)
    ids = Identities.generate(r)
    p = tmp_path / "recognition"
    con = sqlite3.connect(p)
    with con:
        con.execute("CREATE TABLE FaceEnrolledProfilesRecognition (personId TEXT, lastRecognizedTimeMillis INTEGER)")
        con.executemany("INSERT INTO FaceEnrolledProfilesRecognition VALUES (?,?)",
                        [(ids.person_ids[0], 5), ("not-an-id", 6)])
    con.close()
    notices = []
    profiles = parse_recognition_db(p, notices)
    assert [x.person_id.text for x in profiles] == [ids.person_ids[0]]
    assert profiles[0].last_recognized_time_millis == 5 and len(notices) == 1
    assert "raw" in LAST_RECOGNIZED_CAVEAT


# -- device logs ------------------------------------------------------------------


def test_log_filename_round_trip():
    assert log_filename(LogCategory.SYSTEM, 1691160000000) == "Log.system@1691160000000.txt.zip"


@pytest.mark.parametrize("line,expected", [
    ("1691160000123 x", (1691160000123, True)),
    ("2023-08-04T14:40:00.5 x", (1691160000500, True)),
    ("08-04 14:40:00.250  1 2 x", (1691160000250, True)),
    ("no timestamp", (1691160009999, False)),
])
def test_line_timestamps(line, expected):
    assert line_timestamp(line, 1691160009999) == expected


def test_logcat_year_rollover():
    jan_first = 1672531200000 + 3_600_000  # 2023-01-01T01:00Z
    ts, _ = line_timestamp("12-31 23:59:00.000 x", jan_first)
    assert ts == 1672531140000


def _archive(d: Path, cat: str, ts: int, text: str) -> None:
    with zipfile.ZipFile(d / f"Log.{cat}@{ts}.txt.zip", "w") as zf:
        zf.writestr(f"Log.{cat}@{ts}.txt", text)


def test_event_tokens_whole_words_and_category(tmp_path):
    _archive(tmp_path, "system", 1691160000000,
             "1691160000001 WAKE_WORD confidence=0.9\nNOT_WAKE_WORD\nWAKE_WORDS\nMOTION person=true\n")
    _archive(tmp_path, "main", 1691160000000, "MOTION person=true enrolled=false quality=0.25\nTOUCH_EVENT x=1\n")
    (tmp_path / "notes.txt").write_text("WAKE_WORD")
    coll = read_dropbox_logs(tmp_path)
    events = extract_events(coll.entries)
    # Sorted by timestamp: the main archive line has no stamp and falls back to the file name.
    assert [e.kind for e in events] == [EventKind.MOTION, EventKind.WAKE_WORD]
    assert dict(events[1].fields) == {"confidence": "0.9"} and events[1].timestamp_from_line
    m = events[0].motion
    assert (m.is_person, m.enrolled, m.face_quality, m.person_id) == (True, False, 0.25, None)
    assert not events[0].timestamp_from_line
    assert coll.skipped and not coll.errors


def test_corrupt_archive_reported(tmp_path):
    (tmp_path / "Log.system@1.txt.zip").write_bytes(b"PK\x03\x04garbage")
    coll = read_dropbox_logs(tmp_path)
    assert len(coll.errors) == 1 and coll.entries == []


@given(st.dictionaries(st.sampled_from(sorted(TRIGGERS)), st.integers(0, 6)),
       st.integers(0, 2**31))
def test_scripted_counts_property(counts, seed):
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        script = write_dropbox_logs(d, random.Random(seed), Identities.generate(random.Random(seed)), counts)
        events = extract_events(read_dropbox_logs(d).entries)
    got = Counter(TOKEN_OF[e.kind] for e in events)
    assert got == {k: v for k, v in counts.items() if v}
    motions = [e.motion for e in events if e.kind is EventKind.MOTION]
    assert len(motions) == len(script.motions)


# -- tree scan -----------------------------------------------------------------------


def test_scan_missing_root(tmp_path):
    with pytest.raises(InputError):
        scan_tree(tmp_path / "missing")


def test_unclaimed_and_errors(tmp_path):
    (tmp_path / "misc/wifi").mkdir(parents=True)
    (tmp_path / "misc/wifi/WifiConfigStore.xml").write_text("<broken")
    (tmp_path / "random.bin").write_bytes(b"x")
    ex = extract_tree(tmp_path)
    assert ex.scan.unclaimed == ["random.bin"]
    assert [e.path for e in ex.errors] == ["misc/wifi/WifiConfigStore.xml"]
    assert ex.records == []


def test_corpus_golden_record_counts(corpus):
    ex = extract_tree(Path(corpus.root) / "tree")
    assert ex.scan.unclaimed == [] and ex.errors == [] and ex.scan.cross_refs == {}
    per = Counter(r.artifact_id for r in ex.records)
    for desc_id, n in corpus.tree.records.items():
        if n >= 0:
            assert per[desc_id] == n, desc_id
    assert set(per) == {d.id for d in catalog()}


def test_worker_count_does_not_change_output(corpus):
    a = extract_tree(Path(corpus.root) / "tree", workers=1)
    b = extract_tree(Path(corpus.root) / "tree", workers=4)
    assert [r.to_json() for r in a.records] == [r.to_json() for r in b.records]


def test_records_redact_wifi_and_v1_tokens(corpus):
    ex = extract_tree(Path(corpus.root) / "tree")
    text = str([r.to_json() for r in ex.records])
    assert "hunter22" not in text and corpus.refresh_token not in text
    revealed = str([r.to_json(reveal=True) for r in ex.records])
    assert "hunter22" in revealed and corpus.refresh_token in revealed
