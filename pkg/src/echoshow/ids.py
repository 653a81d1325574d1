"""Amazon user-ID grammars, classification and the identity graph.

Six identifier formats show up across device files, companion-app storage
and cloud responses. All grammar knowledge lives in ``GRAMMARS``; the
"uppercase alphanumeric" alphabet is read as ``[A-Z0-9]``.
"""

from __future__ import annotations

import enum
import itertools
import json
import os
import random
import re
import string
import uuid
from dataclasses import dataclass, field
from typing import Iterable

from .errors import SchemaError

UPPER_ALNUM = string.ascii_uppercase + string.digits
_UA = "[A-Z0-9]"


class IdKind(str, enum.Enum):
    CUSTOMER_ID = "customerId"
    DIRECTED_ID = "directedId"
    COMMS_ID = "commsId"
    CONTACT_ID = "contactId"
    PERSON_ID = "personId"
    PERSON_ID_V2 = "personIdV2"


DIRECTED_PREFIX = "amzn1.account."
COMMS_PREFIX = "amzn1.comms.id.person.amzn1~"
PERSON_PREFIX = "amzn1.actor.person.did."
PERSON_V2_PREFIX = "amzn1.actor.person.oid."

_DIRECTED_BODY = DIRECTED_PREFIX.replace(".", r"\.") + _UA + "{28}"
_UUID4 = (
    "[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-4[0-9a-fA-F]{3}-"
    "[89abAB][0-9a-fA-F]{3}-[0-9a-fA-F]{12}"
)

# kind -> (literal prefix, body regex without anchors)
GRAMMARS: dict[IdKind, tuple[str, str]] = {
    IdKind.CUSTOMER_ID: ("", _UA + "{14}"),
    IdKind.DIRECTED_ID: (DIRECTED_PREFIX, _DIRECTED_BODY),
    IdKind.COMMS_ID: (COMMS_PREFIX, re.escape(COMMS_PREFIX) + _DIRECTED_BODY),
    IdKind.CONTACT_ID: ("", _UUID4),
    IdKind.PERSON_ID: (PERSON_PREFIX, re.escape(PERSON_PREFIX) + _UA + "{72}"),
    IdKind.PERSON_ID_V2: (PERSON_V2_PREFIX, re.escape(PERSON_V2_PREFIX) + _UA + "{13,14}"),
}

_FULL = {kind: re.compile(body) for kind, (_, body) in GRAMMARS.items()}

# Longest-prefix kinds first so embedded ids are consumed by their container.
_SEARCH_ORDER = [
    IdKind.COMMS_ID,
    IdKind.PERSON_ID,
    IdKind.PERSON_ID_V2,
    IdKind.DIRECTED_ID,
    IdKind.CONTACT_ID,
    IdKind.CUSTOMER_ID,
]
# Unprefixed grammars must not start inside a dotted or ~-joined id.
_LOOKBEHIND = {True: "(?<![A-Za-z0-9])", False: "(?<![A-Za-z0-9.~-])"}
_SEARCH = re.compile(
    "|".join(
        f"(?P<{kind.name}>{_LOOKBEHIND[bool(GRAMMARS[kind][0])]}{GRAMMARS[kind][1]}"
        "(?![A-Za-z0-9]))"
        for kind in _SEARCH_ORDER
    )
)


class IdError(SchemaError):
    pass


class UnknownIdError(IdError):
    def __init__(self, text: str, hint: IdKind | None):
        self.text = text
        self.hint = hint
        msg = f"not a recognised Amazon user id: {text!r}"
        if hint is not None:
            msg += f" (closest prefix: {hint.value})"
        super().__init__(msg)


def is_valid(kind: IdKind, text: str) -> bool:
    return _FULL[kind].fullmatch(text) is not None


@dataclass(frozen=True, order=True)
class UserId:
    kind: IdKind
    text: str

    def __post_init__(self):
        if not isinstance(self.kind, IdKind):
            object.__setattr__(self, "kind", IdKind(self.kind))
        if not is_valid(self.kind, self.text):
            raise IdError(f"{self.text!r} is not a valid {self.kind.value}")

    def __str__(self) -> str:
        return self.text

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "text": self.text}


def _closest_prefix(text: str) -> IdKind | None:
    best, best_len = None, 0
    for kind, (prefix, _) in GRAMMARS.items():
        n = len(os.path.commonprefix([prefix, text]))
        if n > best_len:
            best, best_len = kind, n
    return best


def classify(text: str) -> UserId:
    """Return the unique id kind matching ``text`` or raise ``UnknownIdError``."""
    matches = [kind for kind, rx in _FULL.items() if rx.fullmatch(text)]
    if len(matches) == 1:
        return UserId(matches[0], text)
    if len(matches) > 1:  # pragma: no cover - grammars are disjoint
        raise IdError(f"{text!r} matches several kinds: {matches}")
    raise UnknownIdError(text, _closest_prefix(text))


def try_classify(text: str) -> UserId | None:
    try:
        return classify(text)
    except IdError:
        return None


def derive_comms_id(directed: UserId) -> UserId:
    if directed.kind is not IdKind.DIRECTED_ID:
        raise IdError(f"commsId derivation needs a directedId, got {directed.kind.value}")
    return UserId(IdKind.COMMS_ID, COMMS_PREFIX + directed.text)


def extract_directed(comms: UserId) -> UserId:
    if comms.kind is not IdKind.COMMS_ID:
        raise IdError(f"expected a commsId, got {comms.kind.value}")
    return UserId(IdKind.DIRECTED_ID, comms.text[len(COMMS_PREFIX):])


def find_ids(text: str) -> list[UserId]:
    """Every id embedded in free text, in order of appearance, deduplicated.

    Bare 14-character customerId candidates are only accepted when they mix
    letters and digits; all-letter runs are far more often ordinary words.
    """
    seen: dict[UserId, None] = {}
    for m in _SEARCH.finditer(text):
        kind = IdKind[m.lastgroup]
        value = m.group()
        if kind is IdKind.CUSTOMER_ID and (value.isalpha() or value.isdigit()):
            continue
        seen.setdefault(UserId(kind, value), None)
    return list(seen)


def random_id(kind: IdKind, rng: random.Random) -> UserId:
    def alnum(n: int) -> str:
        return "".join(rng.choice(UPPER_ALNUM) for _ in range(n))

    if kind is IdKind.CUSTOMER_ID:
        # Keep generated customer ids mixed so free-text discovery sees them.
        body = alnum(12) + rng.choice(string.ascii_uppercase) + rng.choice(string.digits)
        return UserId(kind, body)
    if kind is IdKind.DIRECTED_ID:
        return UserId(kind, DIRECTED_PREFIX + alnum(28))
    if kind is IdKind.COMMS_ID:
        return derive_comms_id(random_id(IdKind.DIRECTED_ID, rng))
    if kind is IdKind.CONTACT_ID:
        return UserId(kind, str(uuid.UUID(int=rng.getrandbits(128), version=4)))
    if kind is IdKind.PERSON_ID:
        return UserId(kind, PERSON_PREFIX + alnum(72))
    return UserId(kind, PERSON_V2_PREFIX + alnum(rng.choice((13, 14))))


@dataclass(frozen=True, order=True)
class Edge:
    a: UserId
    b: UserId
    provenance: str

    @classmethod
    def between(cls, x: UserId, y: UserId, provenance: str) -> "Edge":
        a, b = sorted((x, y))
        return cls(a, b, provenance)

    def to_json(self) -> dict:
        return {"a": self.a.to_json(), "b": self.b.to_json(), "provenance": self.provenance}


STRUCTURAL = "structure:commsId"


@dataclass
class IdentityGraph:
    nodes: set[UserId] = field(default_factory=set)
    edges: set[Edge] = field(default_factory=set)
    warnings: list[str] = field(default_factory=list)

    def add_node(self, uid: UserId) -> None:
        if uid in self.nodes:
            return
        self.nodes.add(uid)
        if uid.kind is IdKind.COMMS_ID:
            inner = extract_directed(uid)
            self.nodes.add(inner)
            self.edges.add(Edge.between(uid, inner, STRUCTURAL))

    def link(self, x: UserId, y: UserId, provenance: str) -> None:
        if x == y:
            return
        self.add_node(x)
        self.add_node(y)
        self.edges.add(Edge.between(x, y, provenance))

    def neighbours(self, uid: UserId) -> set[UserId]:
        out = set()
        for e in self.edges:
            if e.a == uid:
                out.add(e.b)
            elif e.b == uid:
                out.add(e.a)
        return out

    def has_edge(self, x: UserId, y: UserId) -> bool:
        a, b = sorted((x, y))
        return any(e.a == a and e.b == b for e in self.edges)

    def to_json(self) -> dict:
        return {
            "nodes": [n.to_json() for n in sorted(self.nodes)],
            "edges": [e.to_json() for e in sorted(self.edges)],
            "warnings": list(self.warnings),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)


def _coerce(value, warnings: list[str], where: str) -> UserId | None:
    if isinstance(value, UserId):
        return value
    uid = try_classify(str(value))
    if uid is None:
        warnings.append(f"{where}: ignoring invalid id {value!r}")
    return uid


def build_graph(
    records: Iterable[tuple[str, Iterable[UserId | str]]],
    links: Iterable = (),
    link_provenance: str = "map_data_storage_v2",
) -> IdentityGraph:
    """Join ids found across artifacts.

    ``records`` pairs an artifact id with the ids seen in one record; every
    pair of ids inside a record is linked. ``links`` are account links
    (objects with ``person_id`` and ``directed_id``) from the token store.
    """
    graph = IdentityGraph()
    for artifact_id, found in records:
        valid = []
        for value in found:
            uid = _coerce(value, graph.warnings, artifact_id)
            if uid is not None and uid not in valid:
                valid.append(uid)
        for uid in valid:
            graph.add_node(uid)
        for x, y in itertools.combinations(valid, 2):
            graph.link(x, y, artifact_id)
    for link in links:
        p = _coerce(link.person_id, graph.warnings, link_provenance)
        d = _coerce(link.directed_id, graph.warnings, link_provenance)
        if p is not None and d is not None:
            graph.link(p, d, link_provenance)
    return graph
