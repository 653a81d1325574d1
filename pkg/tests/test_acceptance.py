"""One test per acceptance criterion. Each prints a [PASS]/[FAIL] line in the
terminal summary and then asserts at the stated tolerance."""

import json
import random
import re
import time
from collections import Counter
from pathlib import Path

import pytest
from Crypto.Cipher import AES as OracleAES
from Crypto.Util.Padding import pad as oracle_pad
from hypothesis import HealthCheck, example, given, settings, strategies as st

from conftest import ACCEPTANCE_LINES, make_rig
from echoshow.artifacts import catalog, extract_events, read_dropbox_logs
from echoshow.artifacts.catalog import DEPRECATED_PATHS
from echoshow.artifacts.logs import TOKEN_OF, TRIGGERS
from echoshow.artifacts.scan import glob_match
from echoshow.carver import EmmcImage, carve_ext4
from echoshow.cli import main
from echoshow.cloud import RefreshRejected, endpoint_catalog, sweep
from echoshow.errors import CryptoError
from echoshow.ids import GRAMMARS, IdKind, classify, derive_comms_id, extract_directed, is_valid, random_id
from echoshow.mockcloud import MockCloud, serve
from echoshow.synth import (Identities, build_corpus, write_carving_fixture, write_dropbox_logs,
                            write_sparse_image)
from echoshow.vault import EncryptionSecret, PaddingError, decrypt_value

DATA = Path(__file__).parent / "data"


def record(n: int, name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {n} {name}: {detail}")


# Partitions of the device eMMC as published: (name, offset, size in bytes).
PUBLISHED_PARTITIONS = [
    ("bootloader", 0x00000000, 0x000400000),
    ("reserved", 0x02400000, 0x000800000),
    ("nvcfg", 0x02D00000, 0x000400000),
    ("tee", 0x03200000, 0x000800000),
    ("boot", 0x03B00000, 0x001800000),
    ("recovery", 0x05400000, 0x001800000),
    ("logo", 0x06D00000, 0x000400000),
    ("misc", 0x07200000, 0x000100000),
    ("cri_data", 0x07400000, 0x000200000),
    ("vendor", 0x07700000, 0x012C00000),
    ("odm", 0x1A400000, 0x000800000),
    ("system", 0x1AD00000, 0x0C2000000),
    ("product", 0xDCE00000, 0x000C00000),
    ("cache", 0xDDB00000, 0x020000000),
    ("data", 0xFDC00000, 0x2AD800000),
]


@pytest.mark.slow
def test_1_partition_fidelity(tmp_path):
    img = tmp_path / "emmc.img"
    write_sparse_image(img)
    t0 = time.perf_counter()
    rc = main(["carve", str(img), "-o", str(tmp_path / "out")])
    elapsed = time.perf_counter() - t0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    got = [(p["name"], p["offset"], p["size"]) for p in manifest["partitions"]]
    exact = rc == 0 and got == PUBLISHED_PARTITIONS and manifest["outside_bounds"] == []
    fast = elapsed < 10.0
    record(1, "partition fidelity", exact and fast,
           f"{len(got)}/15 entries exact={exact}; carve runtime {elapsed:.1f} s (limit 10 s)")
    assert exact
    assert fast, f"carve took {elapsed:.1f} s"


def brute_force_scan(data: bytes) -> list[int]:
    """Every 512-aligned start whose superblock carries the ext4 magic and
    is the group-0 copy."""
    hits = []
    for start in range(0, len(data) - 2048 + 1, 512):
        sb = start + 1024
        if data[sb + 0x38:sb + 0x3A] == b"\x53\xef" and data[sb + 0x5A:sb + 0x5C] == b"\0\0":
            hits.append(start)
    return hits


def test_2_carving_oracle(tmp_path):
    fx = write_carving_fixture(tmp_path / "f.img", random.Random(2024), size=64 << 20, filesystems=4, decoys=8)
    with EmmcImage.open(fx.path) as img:
        carved = [r.start for r in carve_ext4(img, (0, fx.size))]
    oracle = brute_force_scan(Path(fx.path).read_bytes())
    ok = carved == oracle and fx.size <= 64 << 20
    record(2, "carving oracle equivalence", ok, f"carve={len(carved)} oracle={len(oracle)} offsets equal={carved == oracle}")
    assert carved == oracle


def test_3_crypto_round_trip():
    cases = Counter()
    failures = []

    @settings(max_examples=200, deadline=None, database=None,
              suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
    @given(st.sampled_from([16, 24, 32]), st.binary(min_size=0, max_size=4096),
           st.binary(min_size=16, max_size=16), st.binary(min_size=32, max_size=32))
    @example(16, b"", bytes(16), bytes(32))
    @example(32, bytes(4096), bytes(16), bytes(32))
    def prop(key_len, plaintext, iv, key_material):
        key = key_material[:key_len]
        blob = iv + OracleAES.new(key, OracleAES.MODE_CBC, iv).encrypt(oracle_pad(plaintext, 16))
        cases[key_len] += 1
        if decrypt_value(blob, EncryptionSecret(key)) != plaintext:
            failures.append((key_len, len(plaintext)))
            raise AssertionError("round trip mismatch")

    try:
        prop()
        prop_ok = True
    except AssertionError:
        prop_ok = False
    total = sum(cases.values())

    rng = random.Random(99)
    rejected = 0
    for _ in range(1000):
        key, iv = rng.randbytes(rng.choice((16, 24, 32))), rng.randbytes(16)
        plaintext = rng.randbytes(rng.randrange(0, 200))
        blob = bytearray(iv + OracleAES.new(key, OracleAES.MODE_CBC, iv).encrypt(oracle_pad(plaintext, 16)))
        pos = len(blob) - 16 + rng.randrange(16)
        blob[pos] ^= rng.randrange(1, 256)
        try:
            decrypt_value(bytes(blob), EncryptionSecret(key))
        except (PaddingError, CryptoError):
            rejected += 1
    ok = prop_ok and not failures and total >= 200 and set(cases) == {16, 24, 32} and rejected >= 990
    record(3, "crypto round-trip", ok,
           f"{total} cases (by key size {dict(sorted(cases.items()))}), {len(failures)} failures; "
           f"corrupted final block rejected {rejected}/1000")
    assert prop_ok and not failures and total >= 200
    assert rejected >= 990


def test_4_event_golden_counts(tmp_path, corpus):
    rng = random.Random(4)
    counts = {token: rng.randrange(3, 12) for token in sorted(TRIGGERS)}
    scripted = write_dropbox_logs(tmp_path, rng, Identities.generate(rng), counts)
    events = extract_events(read_dropbox_logs(tmp_path).entries)
    got = dict(Counter(TOKEN_OF[e.kind] for e in events))

    def motion_tuples(evs):
        return sorted((m.is_person, m.enrolled, m.face_quality, getattr(m.person_id, "text", m.person_id))
                      for m in evs)

    want_motion = motion_tuples(scripted.motions)
    got_motion = motion_tuples(e.motion for e in events if e.motion is not None)

    tree_events = extract_events(read_dropbox_logs(Path(corpus.root) / "tree" / "system" / "dropbox").entries)
    tree_got = dict(Counter(TOKEN_OF[e.kind] for e in tree_events))
    tree_want = {k: v for k, v in corpus.tree.log.counts.items() if v}
    tree_motion_ok = motion_tuples(e.motion for e in tree_events if e.motion) == motion_tuples(corpus.tree.log.motions)
    with_pid = sum(1 for m in scripted.motions if m.person_id)

    ok = got == counts and got_motion == want_motion and tree_got == tree_want and tree_motion_ok
    record(4, "event golden counts", ok,
           f"scripted {sum(got.values())}/{sum(counts.values())} events across {len(got)} kinds, "
           f"{len(got_motion)} MOTION lossless={got_motion == want_motion} ({with_pid} with personId); "
           f"corpus tree counts equal={tree_got == tree_want}")
    assert got == counts and got_motion == want_motion
    assert tree_got == tree_want and tree_motion_ok


# Independent restatement of the published identifier grammars.
UA = "[A-Z0-9]"
ORACLE = {
    IdKind.CUSTOMER_ID: rf"{UA}{{14}}",
    IdKind.DIRECTED_ID: rf"amzn1\.account\.{UA}{{28}}",
    IdKind.COMMS_ID: rf"amzn1\.comms\.id\.person\.amzn1~amzn1\.account\.{UA}{{28}}",
    IdKind.CONTACT_ID: r"[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}",
    IdKind.PERSON_ID: rf"amzn1\.actor\.person\.did\.{UA}{{72}}",
    IdKind.PERSON_ID_V2: rf"amzn1\.actor\.person\.oid\.{UA}{{13,14}}",
}


def _oracle(kind, text):
    return re.fullmatch(ORACLE[kind], text) is not None


def _mutations(text: str, prefix_len: int, rng: random.Random):
    pos = rng.randrange(prefix_len, len(text))
    yield text[:pos] + text[pos + 1:]                      # shorter
    yield text[:pos] + text[pos] + text[pos:]              # longer
    for bad in "a-_.~ z!":
        yield text[:pos] + bad + text[pos + 1:]            # foreign character


def test_5_id_grammar_suite():
    rng = random.Random(5)
    accepted = generated = mutated = rejected = 0
    overlaps = 0
    for kind in IdKind:
        prefix = GRAMMARS[kind][0] if kind in GRAMMARS else ""
        for _ in range(200):
            text = random_id(kind, rng).text
            generated += 1
            if _oracle(kind, text) and classify(text).kind is kind:
                accepted += 1
            overlaps += sum(is_valid(k, text) for k in IdKind) != 1
            for m in _mutations(text, len(prefix), rng):
                if m == text or _oracle(kind, m):
                    continue
                mutated += 1
                rejected += not is_valid(kind, m)
    # Every known prefix with every body length up to 110 matches at most one kind.
    prefixes = sorted({p for p, _ in GRAMMARS.values()})
    sweep_overlaps = 0
    for p in prefixes:
        for n in range(0, 111):
            text = p + "".join(rng.choice("ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789") for _ in range(n))
            sweep_overlaps += sum(is_valid(k, text) for k in IdKind) > 1
    round_trips = 0
    for _ in range(100):
        d = random_id(IdKind.DIRECTED_ID, rng)
        c = derive_comms_id(d)
        round_trips += extract_directed(c) == d and classify(c.text).kind is IdKind.COMMS_ID
    ok = (accepted == generated and rejected == mutated and overlaps == 0 and sweep_overlaps == 0
          and round_trips == 100)
    record(5, "id grammar suite", ok,
           f"accepted {accepted}/{generated}, mutations rejected {rejected}/{mutated}, "
           f"overlaps {overlaps + sweep_overlaps} over {len(prefixes)} prefixes x 111 lengths, "
           f"comms round trips {round_trips}/100")
    assert ok


def test_6_auth_routing_and_lifecycle(corpus, tmp_path):
    rig = make_rig(corpus, tmp_path / "acq")
    t0 = time.perf_counter()
    result = sweep(rig.client, corpus.cloud.window)
    elapsed = time.perf_counter() - t0
    fetched = {r.descriptor_id for r in result.responses}
    all_ids = {e.id for e in endpoint_catalog()}
    cross = rig.mock.cross_form_count()

    before_tok = rig.mock.exchange_count("access_token")
    rig.clock.advance(3601)
    for ep in ("user-profile", "device-personalization", "drive-search"):
        rig.client.fetch(ep)
    token_reexchanges = rig.mock.exchange_count("access_token") - before_tok

    before_ck = rig.mock.exchange_count("session_cookies")
    rig.clock.advance(24 * 3600 - 3601 + 60)  # 24 h and a minute after the first cookie exchange
    rig.client.fetch("users-me")
    cookie_renewals = rig.mock.exchange_count("session_cookies") - before_ck

    revoked = make_rig(corpus)
    revoked.mock.revoke(corpus.refresh_token)
    failure = sweep(revoked.client, corpus.cloud.window).error

    ok = (fetched == all_ids and cross == 0 and token_reexchanges == 1 and cookie_renewals == 1
          and isinstance(failure, RefreshRejected) and elapsed < 30 and rig.mock.cross_form_count() == 0)
    record(6, "auth routing and lifecycle", ok,
           f"{len(fetched)}/{len(all_ids)} descriptors fetched, {cross} cross-form requests; "
           f"after 1 h {token_reexchanges} token re-exchange; after 24 h {cookie_renewals} cookie renewal; "
           f"revoked -> {type(failure).__name__}; sweep {elapsed:.2f} s (limit 30 s)")
    assert fetched == all_ids and cross == 0
    assert token_reexchanges == 1 and cookie_renewals == 1
    assert isinstance(failure, RefreshRejected)
    assert elapsed < 30


def _pipeline(corpus, image: Path, work: Path) -> bytes:
    tree = Path(corpus.root) / "tree"
    assert main(["carve", str(image), "-o", str(work / "carve"), "--table", str(work.parent / "kmsg.txt")]) == 0
    assert main(["extract", str(tree), "-o", str(work / "records.jsonl")]) == 0
    creds = work / "credentials.json"
    assert main(["decrypt", str(tree / "data/com.amazon.imp/databases/map_data_storage_v2.db"),
                 "--reveal", "-o", str(creds)]) == 0
    mock = MockCloud(f"{corpus.root}/mock", [corpus.refresh_token])
    with serve(mock) as srv:
        assert main(["acquire", "-o", str(work / "acq"), "--credentials", str(creds), "--base-url", srv.url,
                     "--from", str(corpus.cloud.window[0]), "--to", str(corpus.cloud.window[1])]) == 0
    assert main(["timeline", str(work / "records.jsonl"), str(work / "acq" / "records.jsonl"),
                 "-o", str(work / "timeline.jsonl"), "--csv", str(work / "timeline.csv")]) == 0
    return (work / "timeline.jsonl").read_bytes()


def test_7_pipeline_determinism(tmp_path):
    from echoshow.carver import PartitionEntry, render_kernel_log_table

    corpus = build_corpus(tmp_path / "corpus", seed=11)
    fx = write_carving_fixture(tmp_path / "emmc.img", random.Random(11), size=8 << 20, filesystems=2, decoys=3)
    (tmp_path / "kmsg.txt").write_text(render_kernel_log_table(
        [PartitionEntry("boot", 0, 1 << 20), PartitionEntry("data", 4 << 20, 4 << 20)]))
    runs = []
    for name in ("run1", "run2"):
        work = tmp_path / name
        work.mkdir()
        runs.append(_pipeline(corpus, Path(fx.path), work))
    events = len(runs[0].splitlines()) - 1
    sources = Counter(json.loads(line)["source"] for line in runs[0].splitlines()[1:])
    same_csv = (tmp_path / "run1/timeline.csv").read_bytes() == (tmp_path / "run2/timeline.csv").read_bytes()
    same_carve = ((tmp_path / "run1/carve/manifest.json").read_bytes()
                  == (tmp_path / "run2/carve/manifest.json").read_bytes())
    ok = runs[0] == runs[1] and same_csv and same_carve and events > 0
    record(7, "pipeline determinism", ok,
           f"timelines byte-identical={runs[0] == runs[1]} ({events} events from {dict(sorted(sources.items()))}); "
           f"csv identical={same_csv}; carve manifests identical={same_carve}")
    assert runs[0] == runs[1] and same_csv and same_carve and events > 0


def _sample_path(location: str) -> str:
    """A concrete relative path inside a published device location."""
    p = location.lstrip("/")
    if p.startswith("data/data/"):
        p = p[len("data/"):]
    p = re.sub(r"\{[^}]+\}", "SAMPLE", p).replace("*", "SAMPLE")
    return p + "f" if p.endswith("/") else p


def _route(location: str) -> tuple[str, str, set[str]]:
    head, _, query = location.partition("?")
    head = re.sub(r"/\(\{[^}]+\}\)$", "", head)  # optional trailing segment
    host, _, path = head.partition("/")
    names = {kv.split("=", 1)[0] for kv in query.split("&") if kv}
    return host, "/" + re.sub(r"\{[^}]+\}", "{}", path), names


def test_8_coverage_audit():
    manifest = json.loads((DATA / "artifact_table.json").read_text())
    local = {d.id: d for d in catalog()}
    api = {e.id: e for e in endpoint_catalog()}
    problems = []

    claimed = []
    for row in manifest["local"]:
        if row["deprecated"]:
            if row["descriptors"]:
                problems.append(f"local row {row['row']} is deprecated but mapped")
            sample = _sample_path(row["location"])
            if any(glob_match(d.path_glob, sample) for d in local.values()):
                problems.append(f"deprecated local row {row['row']} still claimed")
            continue
        locations = row["location"].split(";")
        for desc_id in row["descriptors"]:
            d = local.get(desc_id)
            if d is None:
                problems.append(f"local row {row['row']}: no descriptor {desc_id}")
            elif not any(glob_match(d.path_glob, _sample_path(loc)) for loc in locations):
                problems.append(f"local row {row['row']}: {d.path_glob} does not cover {row['location']}")
            claimed.append(desc_id)
    if sorted(claimed) != sorted(local):
        problems.append(f"local descriptors not traced to a row: {sorted(set(local) - set(claimed))}")
    if sorted(DEPRECATED_PATHS) != sorted(_sample_path(r["location"]) for r in manifest["local"] if r["deprecated"]):
        problems.append("deprecated local paths differ from the manifest")

    api_claimed = []
    for row in manifest["api"]:
        host, path, query = _route(row["location"])
        matches = [e for e in api.values() if e.host == host
                   and re.sub(r"\{[^}]+\}", "{}", e.path_template) == path]
        if row["deprecated"]:
            if row["descriptor"] is not None or matches:
                problems.append(f"deprecated api row {row['row']} is still present")
            continue
        e = api.get(row["descriptor"])
        if e is None or e not in matches:
            problems.append(f"api row {row['row']}: {row['location']} not served by {row['descriptor']}")
            continue
        names = {p.name for p in e.params if p.location == "query"} | {k for k, _ in e.fixed_query}
        if not query <= names:
            problems.append(f"api row {row['row']}: query {sorted(query - names)} missing")
        api_claimed.append(e.id)
    if sorted(api_claimed) != sorted(api):
        problems.append(f"endpoints not traced to a row: {sorted(set(api) - set(api_claimed))}")

    deprecated_api = [r for r in manifest["api"] if r["deprecated"]]
    ok = not problems and len(local) >= 30 and len(api) >= 25 and len(deprecated_api) == 3
    record(8, "coverage audit", ok,
           f"{len(local)} local and {len(api)} endpoint descriptors matched row by row; "
           f"{len(deprecated_api)} deprecated api rows and "
           f"{sum(r['deprecated'] for r in manifest['local'])} deprecated local row absent; "
           f"{len(problems)} problems")
    assert not problems, problems
    assert len(local) >= 30 and len(api) >= 25 and len(deprecated_api) == 3
