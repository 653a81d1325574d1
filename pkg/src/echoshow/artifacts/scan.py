"""Match an extracted partition tree against the catalog and run the parsers.

A file is claimed by the matching descriptor with the longest literal
prefix in its glob; any other descriptors that also match are kept as
cross-references. Files no descriptor matches are reported as unclaimed.
"""

from __future__ import annotations

import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable

from ..errors import EchoShowError, InputError
from .catalog import ArtifactDescriptor, catalog
from .logs import FileIssue
from .parsers import PARSERS, ArtifactRecord

log = logging.getLogger(__name__)


@lru_cache(maxsize=None)
def glob_regex(pattern: str) -> re.Pattern[str]:
    """Translate a path glob to a regex. ``*`` and ``?`` stay within one path
    segment; ``**`` spans any number of segments (including none)."""
    out = []
    i = 0
    while i < len(pattern):
        c = pattern[i]
        if pattern.startswith("**/", i):
            out.append("(?:[^/]+/)*")
            i += 3
        elif pattern.startswith("**", i):
            out.append(".*")
            i += 2
        elif c == "*":
            out.append("[^/]*")
            i += 1
        elif c == "?":
            out.append("[^/]")
            i += 1
        else:
            out.append(re.escape(c))
            i += 1
    return re.compile("".join(out) + r"\Z")


def literal_prefix(pattern: str) -> str:
    m = re.search(r"[*?]", pattern)
    return pattern if m is None else pattern[: m.start()]


def glob_match(pattern: str, rel: str) -> bool:
    return glob_regex(pattern).match(rel) is not None


@dataclass(frozen=True)
class Match:
    descriptor: ArtifactDescriptor
    path: str  # relative, '/'-separated

    def to_json(self) -> dict:
        return {"artifact_id": self.descriptor.id, "path": self.path}


@dataclass
class ScanResult:
    matches: list[Match] = field(default_factory=list)
    unclaimed: list[str] = field(default_factory=list)
    cross_refs: dict[str, list[str]] = field(default_factory=dict)
    errors: list[FileIssue] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "matches": [m.to_json() for m in self.matches],
            "unclaimed": list(self.unclaimed),
            "cross_refs": {k: list(v) for k, v in sorted(self.cross_refs.items())},
            "errors": [e.to_json() for e in self.errors],
        }


def walk_files(root: Path, errors: list[FileIssue]) -> list[str]:
    """Relative paths of all regular files; unreadable directories become errors."""
    files = []

    def onerror(exc: OSError):
        errors.append(FileIssue(os.path.relpath(exc.filename, root) if exc.filename else str(root),
                                f"unreadable: {exc.strerror or exc}"))

    for dirpath, dirnames, filenames in os.walk(root, onerror=onerror):
        dirnames.sort()
        for name in filenames:
            full = os.path.join(dirpath, name)
            if os.path.isfile(full) and not os.path.islink(full):
                files.append(Path(os.path.relpath(full, root)).as_posix())
    return sorted(files)


def claim(rel: str, descriptors: Iterable[ArtifactDescriptor]) -> tuple[ArtifactDescriptor | None, list[ArtifactDescriptor]]:
    hits = [d for d in descriptors if glob_match(d.path_glob, rel)]
    if not hits:
        return None, []
    hits.sort(key=lambda d: (-len(literal_prefix(d.path_glob)), d.id))
    return hits[0], hits[1:]


def scan_tree(root: str | os.PathLike[str], descriptors: Iterable[ArtifactDescriptor] | None = None) -> ScanResult:
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"{root}: not a directory")
    descriptors = list(catalog() if descriptors is None else descriptors)
    result = ScanResult()
    for rel in walk_files(root, result.errors):
        owner, others = claim(rel, descriptors)
        if owner is None:
            result.unclaimed.append(rel)
            continue
        result.matches.append(Match(owner, rel))
        if others:
            result.cross_refs[rel] = [d.id for d in others]
    return result


@dataclass
class Extraction:
    scan: ScanResult
    records: list[ArtifactRecord]
    errors: list[FileIssue]


def _parse_one(root: Path, m: Match) -> tuple[list[ArtifactRecord], FileIssue | None]:
    parser = PARSERS[m.descriptor.parser]
    try:
        return parser(m.descriptor, root / m.path, m.path), None
    except (EchoShowError, OSError, ValueError) as exc:
        log.warning("%s: %s", m.path, exc)
        return [], FileIssue(m.path, f"{type(exc).__name__}: {exc}")


def extract_tree(root: str | os.PathLike[str], descriptors: Iterable[ArtifactDescriptor] | None = None,
                 workers: int = 1) -> Extraction:
    """Scan then parse every claimed file. Output order is (path, index)
    whatever the worker count."""
    root = Path(root)
    scan = scan_tree(root, descriptors)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda m: _parse_one(root, m), scan.matches))
    else:
        results = [_parse_one(root, m) for m in scan.matches]
    records = [r for recs, _ in results for r in recs]
    records.sort(key=lambda r: (r.source_path, r.index))
    errors = list(scan.errors) + [e for _, e in results if e is not None]
    errors.sort(key=lambda e: e.path)
    return Extraction(scan, records, errors)
