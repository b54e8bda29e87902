"""Consistent-hash ring of trusted and untrusted nodes.

Nodes are placed on a 32-bit circle by a stable hash of their id string.
Trusted nodes additionally own a configurable number of virtual entries to
smooth the load of clockwise routing. Untrusted nodes route clockwise to
the first trusted entry (real or virtual) and always resolve to the owning
real node.

The position hash is a wire-level constant shared with the text dump format:
the first 4 bytes, big-endian, of SHA-256 over the id's UTF-8 bytes. A
cryptographic digest is required here: cheap multiplicative string hashes
disperse suffix-only key changes poorly, and virtual entries are exactly
suffix-indexed keys. Virtual entries for a trusted node ``x`` are named
``x#v0``, ``x#v1``, ...
"""

from __future__ import annotations

import bisect
import hashlib
from dataclasses import dataclass, field

RING_SIZE = 2**32


class RingError(Exception):
    """Base class for ring construction and lookup errors."""


class NoTrustedNode(RingError):
    """Ring construction requires at least one trusted node."""


class DuplicateId(RingError):
    """Two nodes share the same id."""


class PositionCollision(RingError):
    """Two entries hash to the same ring position."""


class UnknownNode(RingError):
    """Lookup for an id that is not on the ring."""


class NotTrusted(RingError):
    """Trusted-only operation invoked for an untrusted node."""


def ring_position(key: str) -> int:
    """Map a string to a position in [0, 2**32).

    First 4 bytes (big-endian) of SHA-256 over the UTF-8 key. Chosen for
    dispersion, not secrecy; this constant is part of the dump format.
    """
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def vnode_name(node_id: str, index: int) -> str:
    return f"{node_id}#v{index}"


@dataclass(frozen=True)
class NodeRole:
    """Static trust role. ``malicious`` is an experiment-only flag and is
    only meaningful for untrusted nodes."""

    trusted: bool
    malicious: bool = False

    def __post_init__(self) -> None:
        if self.trusted and self.malicious:
            raise ValueError("trusted nodes cannot be flagged malicious")


TRUSTED = NodeRole(trusted=True)
UNTRUSTED = NodeRole(trusted=False)
MALICIOUS = NodeRole(trusted=False, malicious=True)


@dataclass(frozen=True)
class RingEntry:
    pos: int
    entry_id: str
    is_virtual: bool
    owner: str


@dataclass(frozen=True)
class Ring:
    """Immutable ring topology. Mutation = rebuild via :func:`build_ring`.

    ``entries`` is sorted ascending by position; every virtual entry's owner
    is a trusted real node.
    """

    entries: tuple[RingEntry, ...]
    roles: dict[str, NodeRole]
    vnodes_per_trusted: int

    # Derived lookup tables, filled in __post_init__.
    _pos_of: dict[str, int] = field(default_factory=dict, repr=False)
    _trusted_positions: list[int] = field(default_factory=list, repr=False)
    _trusted_owners: list[str] = field(default_factory=list, repr=False)
    _real_positions: list[int] = field(default_factory=list, repr=False)
    _real_ids: list[str] = field(default_factory=list, repr=False)
    _trusted_real_positions: list[int] = field(default_factory=list, repr=False)
    _trusted_real_ids: list[str] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        for e in self.entries:
            if not e.is_virtual:
                self._pos_of[e.entry_id] = e.pos
                self._real_positions.append(e.pos)
                self._real_ids.append(e.entry_id)
                if self.roles[e.entry_id].trusted:
                    self._trusted_real_positions.append(e.pos)
                    self._trusted_real_ids.append(e.entry_id)
            if self.roles[e.owner].trusted:
                self._trusted_positions.append(e.pos)
                self._trusted_owners.append(e.owner)

    @property
    def node_ids(self) -> list[str]:
        """Real node ids in clockwise (ascending position) order."""
        return list(self._real_ids)

    @property
    def trusted_ids(self) -> list[str]:
        """Trusted real node ids in clockwise order."""
        return list(self._trusted_real_ids)

    @property
    def untrusted_ids(self) -> list[str]:
        return [i for i in self._real_ids if not self.roles[i].trusted]

    def position(self, node_id: str) -> int:
        try:
            return self._pos_of[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def route_to_trusted(self, from_id: str) -> str:
        """Owner of the first trusted entry strictly clockwise of ``from_id``.

        Virtual entries resolve to their owning real node, so the result is
        always a trusted real node. A node never routes to itself via its
        own position (strictly-greater semantics).
        """
        pos = self.position(from_id)
        idx = bisect.bisect_right(self._trusted_positions, pos)
        if idx == len(self._trusted_positions):
            idx = 0  # wrap past 2**32 - 1
        return self._trusted_owners[idx]

    def next_trusted(self, from_id: str) -> str:
        """Next trusted real node clockwise. ``from_id`` must be trusted;
        with a single trusted node this returns ``from_id`` itself."""
        pos = self.position(from_id)
        if not self.roles[from_id].trusted:
            raise NotTrusted(from_id)
        idx = bisect.bisect_right(self._trusted_real_positions, pos)
        if idx == len(self._trusted_real_positions):
            idx = 0
        return self._trusted_real_ids[idx]

    def prev_member(self, from_id: str) -> str:
        """Immediate counterclockwise predecessor among real entries."""
        pos = self.position(from_id)
        idx = bisect.bisect_left(self._real_positions, pos) - 1
        return self._real_ids[idx]  # idx == -1 wraps to the last entry

    def dump(self) -> str:
        """Line-oriented text form, one entry per line sorted by position:
        ``pos<TAB>id<TAB>real|virtual<TAB>owner<TAB>trusted|untrusted``."""
        lines = []
        for e in self.entries:
            kind = "virtual" if e.is_virtual else "real"
            trust = "trusted" if self.roles[e.owner].trusted else "untrusted"
            lines.append(f"{e.pos}\t{e.entry_id}\t{kind}\t{e.owner}\t{trust}")
        return "\n".join(lines) + "\n"


def build_ring(
    nodes: list[tuple[str, NodeRole]],
    vnodes_per_trusted: int = 64,
    positions: dict[str, int] | None = None,
) -> Ring:
    """Place nodes (plus virtual entries for trusted nodes) on the ring.

    ``positions`` is a test hook mapping entry ids (real or virtual) to
    injected positions, bypassing the hash for those entries; production
    callers never pass it.

    Raises NoTrustedNode, DuplicateId or PositionCollision.
    """
    if vnodes_per_trusted < 0:
        raise ValueError("vnodes_per_trusted must be >= 0")
    roles: dict[str, NodeRole] = {}
    for node_id, role in nodes:
        if not node_id:
            raise DuplicateId("empty node id")
        if node_id in roles:
            raise DuplicateId(node_id)
        roles[node_id] = role
    if not any(r.trusted for r in roles.values()):
        raise NoTrustedNode("ring needs at least one trusted node")

    positions = positions or {}

    def place(entry_id: str) -> int:
        return positions.get(entry_id, ring_position(entry_id))

    entries: list[RingEntry] = []
    seen: dict[int, str] = {}
    for node_id, role in nodes:
        candidates = [(node_id, False, node_id)]
        if role.trusted:
            for i in range(vnodes_per_trusted):
                name = vnode_name(node_id, i)
                candidates.append((name, True, node_id))
        for entry_id, is_virtual, owner in candidates:
            pos = place(entry_id)
            if pos in seen:
                raise PositionCollision(f"{entry_id} and {seen[pos]} both at {pos}")
            seen[pos] = entry_id
            entries.append(RingEntry(pos, entry_id, is_virtual, owner))

    entries.sort(key=lambda e: e.pos)
    return Ring(tuple(entries), roles, vnodes_per_trusted)


def load_ring(text: str, vnodes_per_trusted: int | None = None) -> Ring:
    """Rebuild a Ring from :meth:`Ring.dump` output."""
    entries = []
    roles: dict[str, NodeRole] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        pos_s, entry_id, kind, owner, trust = line.split("\t")
        entries.append(RingEntry(int(pos_s), entry_id, kind == "virtual", owner))
        if kind == "real":
            # The dump format does not carry the experiment-only malicious
            # flag; loaded rings default it to False.
            roles[entry_id] = TRUSTED if trust == "trusted" else UNTRUSTED
    entries.sort(key=lambda e: e.pos)
    if vnodes_per_trusted is None:
        per_owner = {}
        for e in entries:
            if e.is_virtual:
                per_owner[e.owner] = per_owner.get(e.owner, 0) + 1
        vnodes_per_trusted = max(per_owner.values(), default=0)
    return Ring(tuple(entries), roles, vnodes_per_trusted)
