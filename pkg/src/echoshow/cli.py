"""``echoshow`` command line: carve, extract, decrypt, acquire, timeline, mock-serve, synth.

Exit codes are those on the error classes (see ``echoshow.errors``). Output
files are written to a temporary name and renamed into place.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import tempfile
import threading
import time
from pathlib import Path
from urllib.parse import urlsplit
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

from . import __version__, _io
from .artifacts import extract_tree
from .carver import (EmmcImage, Provenance, builtin_partition_table, carve_ext4, check_table,
                     extract_partition, parse_kernel_log_table, partition_fit, probe_ext4,
                     unmapped_ranges)
from .errors import (EXIT_EMPTY, EXIT_OK, EXIT_USAGE, AuthError, CryptoError, EchoShowError,
                     InputError, RoutingError, SchemaError)
from .vault import (REFRESH_TOKEN, PaddingError, credentials_manifest, link_accounts,
                    load_store_v1, load_store_v2, recover_tokens)

log = logging.getLogger("echoshow")

CARVE_FORMAT = "echoshow-carve"
RECORDS_FORMAT = "echoshow-records"
FORMAT_VERSION = 1
BASE_URL_ENV = "ECHOSHOW_BASE_URL"


class UsageError(EchoShowError):
    exit_code = EXIT_USAGE


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


# -- carve -------------------------------------------------------------------


def _extract_to(image: EmmcImage, entry, target: Path):
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            receipt = extract_partition(image, entry, fh)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return receipt


def cmd_carve(args) -> int:
    table_errors: list[dict] = []
    if args.table:
        try:
            text = Path(args.table).read_text(encoding="utf-8", errors="replace")
        except OSError as exc:
            raise InputError(f"cannot read partition log {args.table!r}: {exc.strerror}") from exc
        parsed = parse_kernel_log_table(text)
        table_errors = [{"line": e.line_no, "text": e.text, "reason": e.reason} for e in parsed.errors]
        table, source = list(parsed.entries), Provenance.KERNEL_LOG.value
        if not table:
            raise SchemaError(f"{args.table}: no partition lines found")
    else:
        table, source = builtin_partition_table(), Provenance.BUILTIN.value
    excluded = sorted(set(args.exclude or ()))
    table = [e for e in table if e.name not in excluded]
    check_table(table)
    out = Path(args.out)
    with EmmcImage.open(args.image) as image:
        inside, outside = partition_fit(image, table)
        for e in outside:
            _say(f"warning: partition {e.name} [{e.offset:#x}, {e.end:#x}) lies outside the image")
        partitions = []
        carved = []
        for e in sorted(inside, key=lambda e: e.offset):
            rel = f"partitions/{e.name}.img"
            if args.no_extract:
                partitions.append({**e.to_json(), "file": None, "sha256": None})
            else:
                receipt = _extract_to(image, e, out / rel)
                partitions.append({**e.to_json(), "file": rel, "sha256": receipt.sha256,
                                   "bytes_written": receipt.bytes_written})
            region = probe_ext4(image, e.offset, e.end)
            if region is not None:
                carved.append({**region.to_json(), "container": e.name})
        gaps = unmapped_ranges(image, inside)
        for start, length in gaps:
            for region in carve_ext4(image, (start, length), args.alignment):
                carved.append({**region.to_json(), "container": "unmapped"})
        manifest = {
            "format": CARVE_FORMAT,
            "version": FORMAT_VERSION,
            "image": {"name": Path(args.image).name, "size": image.total_size},
            "table_source": source,
            "table_errors": table_errors,
            "excluded": excluded,
            "partitions": partitions,
            "outside_bounds": [e.to_json() for e in outside],
            "unmapped": [{"start": s, "length": n} for s, n in gaps],
            "carved": sorted(carved, key=lambda r: (r["start"], r["container"])),
        }
    _io.atomic_write_json(out / "manifest.json", manifest)
    _say(f"{len(partitions)} partitions, {len(carved)} ext4 filesystems, "
         f"{len(gaps)} unmapped ranges -> {out / 'manifest.json'}")
    return EXIT_OK


# -- extract -----------------------------------------------------------------


def cmd_extract(args) -> int:
    result = extract_tree(args.tree, workers=args.workers)
    rows = [r.to_json(args.reveal) for r in result.records]
    header = {"_meta": {"format": RECORDS_FORMAT, "version": FORMAT_VERSION, "records": len(rows),
                        "revealed": bool(args.reveal)}}
    _io.atomic_write_jsonl(args.out, [header] + rows)
    counts: dict[str, int] = {}
    for r in result.records:
        counts[r.artifact_id] = counts.get(r.artifact_id, 0) + 1
    report = {
        "tree": Path(args.tree).name,
        "records_per_descriptor": dict(sorted(counts.items())),
        "unclaimed": result.scan.unclaimed,
        "cross_refs": {k: v for k, v in sorted(result.scan.cross_refs.items())},
        "errors": [e.to_json() for e in result.errors],
    }
    report_path = args.report or f"{args.out}.report.json"
    _io.atomic_write_json(report_path, report)
    for e in result.errors:
        _say(f"warning: {e.path}: {e.reason}")
    _say(f"{len(rows)} records from {len(result.scan.matches)} files; "
         f"{len(result.scan.unclaimed)} unclaimed, {len(result.errors)} errors")
    if not result.scan.matches:
        _say("warning: no known artifacts found in the tree")
        return EXIT_EMPTY
    return EXIT_OK


# -- decrypt -----------------------------------------------------------------


def cmd_decrypt(args) -> int:
    links = []
    if args.v1:
        records = load_store_v1(args.db)
    else:
        store = load_store_v2(args.db)
        records = recover_tokens(store)
        links = link_accounts(store)
    manifest = credentials_manifest(records, Path(args.db).name, args.reveal, links)
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    if args.out:
        _io.atomic_write_bytes(args.out, text.encode("utf-8"))
    else:
        sys.stdout.write(text)
    failed = [r for r in records if r.error]
    if failed:
        padding = any(PaddingError.__name__ in (r.error or "") for r in failed)
        names = ", ".join(r.name for r in failed)
        raise (PaddingError if padding else CryptoError)(f"could not decrypt: {names}")
    if not any(r.name == REFRESH_TOKEN and r.plaintext for r in records):
        _say("warning: no refresh_token recovered")
    return EXIT_OK


# -- acquire -----------------------------------------------------------------


def _credentials(args):
    """(refresh_token, directed_id) from a token store or a revealed manifest."""
    if args.token_db:
        if args.v1:
            records = load_store_v1(args.token_db)
        else:
            records = recover_tokens(load_store_v2(args.token_db))
    elif args.credentials:
        try:
            doc = json.loads(Path(args.credentials).read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputError(f"cannot read {args.credentials!r}: {exc.strerror}") from exc
        except ValueError as exc:
            raise SchemaError(f"{args.credentials}: not JSON ({exc})") from exc
        if not doc.get("revealed"):
            raise UsageError(f"{args.credentials}: manifest is redacted; re-run decrypt with --reveal")
        tokens = doc.get("tokens") or []
        refresh = next((t for t in tokens if t.get("name") == REFRESH_TOKEN), None)
        if refresh is None or not refresh.get("plaintext"):
            raise AuthError(f"{args.credentials}: no refresh_token in manifest")
        return refresh["plaintext"], args.directed_id or refresh.get("directed_id")
    else:
        raise UsageError("acquire needs --token-db or --credentials")
    refresh = next((r for r in records if r.name == REFRESH_TOKEN and r.plaintext), None)
    if refresh is None:
        raise AuthError(f"{args.token_db}: no refresh_token could be recovered")
    return refresh.plaintext, args.directed_id or refresh.directed_id


def _status_table(result, descriptors, wanted) -> list[dict]:
    rows = []
    for d in descriptors:
        if wanted is not None and d.id not in wanted:
            continue
        ok = [r for r in result.responses if r.descriptor_id == d.id]
        bad = [f for f in result.failures if f.descriptor_id == d.id]
        skip = [f for f in result.skipped if f.descriptor_id == d.id]
        status = "ok" if ok and not bad else "partial" if ok else "failed" if bad else "skipped" if skip else "not-run"
        rows.append({"endpoint": d.id, "status": status, "responses": len(ok),
                     "failures": [f.reason for f in bad + skip]})
    return rows


def _render_status(rows: list[dict]) -> str:
    width = max((len(r["endpoint"]) for r in rows), default=8)
    lines = [f"{'endpoint':<{width}}  status    n  detail"]
    for r in rows:
        detail = r["failures"][0] if r["failures"] else ""
        lines.append(f"{r['endpoint']:<{width}}  {r['status']:<8} {r['responses']:>2}  {detail[:80]}")
    return "\n".join(lines)


def cmd_acquire(args) -> int:
    from .cloud.auth import AuthState
    from .cloud.catalog import endpoint_catalog
    from .cloud.client import CloudClient, cloud_rows, sweep
    from .cloud.transport import RequestsTransport, is_loopback_url

    base_url = args.base_url or os.environ.get(BASE_URL_ENV)
    if not base_url and not args.live:
        raise UsageError(f"acquire needs --base-url (or {BASE_URL_ENV}); pass --live to contact real hosts")
    if base_url:
        parts = urlsplit(base_url)
        if parts.scheme not in ("http", "https") or not parts.hostname:
            raise UsageError(f"bad base URL {base_url!r}")
        if not args.live and not is_loopback_url(base_url):
            raise RoutingError(f"refusing non-loopback target {parts.hostname!r} without --live")
    catalog = endpoint_catalog()
    known = {d.id for d in catalog}
    wanted = None
    if args.only:
        wanted = {w.strip() for item in args.only for w in item.split(",") if w.strip()}
        unknown = sorted(wanted - known)
        if unknown:
            raise UsageError(f"unknown endpoint(s): {', '.join(unknown)}")
    end = args.to if args.to is not None else int(time.time() * 1000)
    start = args.from_ if args.from_ is not None else 0
    if start > end:
        raise UsageError(f"--from {start} is after --to {end}")
    refresh, directed = _credentials(args)
    out = Path(args.out)
    state = AuthState(refresh, directed_id=directed, provenance="token-db" if args.token_db else "manifest")
    client = CloudClient(state, RequestsTransport(base_url), out, marketplace=args.marketplace,
                         csrf_token=args.csrf)
    result = sweep(client, (start, end), wanted)
    error = result.error
    status = _status_table(result, catalog, wanted)
    notices: list[str] = []
    rows = cloud_rows(result.responses, notices)
    _io.atomic_write_jsonl(out / "records.jsonl", rows)
    _io.atomic_write_json(out / "status.json", {
        "window": [start, end], "only": sorted(wanted) if wanted else None,
        "endpoints": status, "notices": notices, "exchanges": state.exchanges,
        "error": None if error is None else {"class": type(error).__name__, "message": str(error)},
    })
    _say(_render_status(status))
    if error is not None:
        _say(f"error: {type(error).__name__}: {error}")
        return error.exit_code
    _say(f"{len(result.responses)} responses, {len(rows)} records, {len(result.failures)} failures "
         f"-> {out}")
    return EXIT_OK


# -- timeline ----------------------------------------------------------------


def cmd_timeline(args) -> int:
    from .timeline import build_timeline, render_csv, write_timeline

    tz = None
    if args.tz:
        try:
            tz = ZoneInfo(args.tz)
        except (ZoneInfoNotFoundError, ValueError) as exc:
            raise UsageError(f"unknown time zone {args.tz!r}") from exc
    events = build_timeline(args.inputs)
    write_timeline(args.out, events, args.inputs)
    if args.csv:
        _io.atomic_write_bytes(args.csv, render_csv(events, tz).encode("utf-8"))
    _say(f"{len(events)} events -> {args.out}")
    return EXIT_OK


# -- mock-serve --------------------------------------------------------------


def cmd_mock_serve(args) -> int:
    from .mockcloud import MockClock, MockCloud, serve

    if args.host not in ("127.0.0.1", "::1", "localhost"):
        raise UsageError("the mock only binds to loopback")
    tokens = list(args.refresh_token or ())
    if args.token_db:
        tokens += [r.plaintext for r in recover_tokens(load_store_v2(args.token_db))
                   if r.name == REFRESH_TOKEN and r.plaintext]
    if not tokens:
        raise UsageError("mock-serve needs --refresh-token or --token-db")
    clock = MockClock(args.clock_start) if args.clock_start is not None else MockClock()
    mock = MockCloud(args.fixtures, tokens, clock, require_csrf=args.require_csrf)
    server = serve(mock, args.host, args.port)
    print(server.url, flush=True)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    try:
        stop.wait(args.duration if args.duration else None)
    finally:
        server.shutdown()
    return EXIT_OK


# -- synth -------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synth import build_corpus

    corpus = build_corpus(args.out, seed=args.seed, image=args.image)
    _say(f"corpus written to {corpus.root}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="echoshow", description="Echo Show 15 acquisition and analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("carve", help="extract partitions and carve ext4 from an eMMC image")
    c.add_argument("image")
    c.add_argument("-o", "--out", required=True, help="output directory")
    c.add_argument("--table", help="kernel log holding the partition table (default: builtin)")
    c.add_argument("--exclude", action="append", metavar="NAME", help="skip a partition (repeatable)")
    c.add_argument("--alignment", type=int, default=512, help="ext4 start alignment in bytes")
    c.add_argument("--no-extract", action="store_true", help="manifest only, no partition files")
    c.set_defaults(func=cmd_carve)

    e = sub.add_parser("extract", help="parse known artifacts from a data partition tree")
    e.add_argument("tree")
    e.add_argument("-o", "--out", required=True, help="records file (JSON Lines)")
    e.add_argument("--report", help="unclaimed-file report (default: OUT.report.json)")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--reveal", action="store_true", help="include Wi-Fi keys and token values")
    e.set_defaults(func=cmd_extract)

    d = sub.add_parser("decrypt", help="recover tokens from the MAP token database")
    d.add_argument("db")
    d.add_argument("--v1", action="store_true", help="legacy plaintext token table")
    d.add_argument("--reveal", action="store_true", help="print token values")
    d.add_argument("-o", "--out", help="write the manifest here instead of stdout")
    d.set_defaults(func=cmd_decrypt)

    a = sub.add_parser("acquire", help="fetch cloud artifacts with a recovered refresh token")
    a.add_argument("-o", "--out", required=True, help="acquisition directory")
    a.add_argument("--base-url", help=f"send every request here (default: ${BASE_URL_ENV})")
    a.add_argument("--live", action="store_true", help="allow non-loopback and real vendor hosts")
    a.add_argument("--token-db", help="token database to take the refresh token from")
    a.add_argument("--v1", action="store_true", help="token database is the legacy plaintext layout")
    a.add_argument("--credentials", help="manifest written by 'decrypt --reveal'")
    a.add_argument("--directed-id", help="override the account directedId")
    a.add_argument("--only", action="append", metavar="ID[,ID]", help="restrict to these endpoints")
    a.add_argument("--from", dest="from_", type=int, metavar="MS", help="window start, unix ms")
    a.add_argument("--to", type=int, metavar="MS", help="window end, unix ms (exclusive)")
    a.add_argument("--marketplace", default="de", help="amazon.<tld> for marketplace hosts")
    a.add_argument("--csrf", help="csrf token for POST routes")
    a.set_defaults(func=cmd_acquire)

    t = sub.add_parser("timeline", help="merge record files into one timeline")
    t.add_argument("inputs", nargs="+")
    t.add_argument("-o", "--out", required=True, help="timeline file (JSON Lines)")
    t.add_argument("--csv", help="also write a CSV view")
    t.add_argument("--tz", help="IANA zone for the CSV time column (display only)")
    t.set_defaults(func=cmd_timeline)

    m = sub.add_parser("mock-serve", help="serve the offline cloud mock on loopback")
    m.add_argument("fixtures")
    m.add_argument("--refresh-token", action="append")
    m.add_argument("--token-db")
    m.add_argument("--host", default="127.0.0.1")
    m.add_argument("--port", type=int, default=0)
    m.add_argument("--require-csrf", action="store_true")
    m.add_argument("--clock-start", type=float)
    m.add_argument("--duration", type=float, help="stop after this many seconds")
    m.set_defaults(func=cmd_mock_serve)

    s = sub.add_parser("synth", help="write a synthetic test corpus")
    s.add_argument("out")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--image", action="store_true", help="also write a full-size sparse eMMC image")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EchoShowError as exc:
        _say(f"error: {exc}")
        return exc.exit_code
    except OSError as exc:
        _say(f"error: {exc}")
        return InputError.exit_code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
