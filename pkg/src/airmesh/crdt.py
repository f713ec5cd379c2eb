"""State-based replicated set built from three grow-only sets.

Each replica keeps an add log ``A`` (tagged elements), a removal log ``R``
(tags only), and a derived live view ``M = A \\ R``. Because ``A`` and ``R``
only grow and merging is set union, replicas that exchange state in any
order, with any duplication, converge to the same live view.

Every insertion mints a fresh (origin, counter) tag, so equal payloads
inserted twice are distinct elements and a removed payload can be
reinserted under a new tag.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Set, Tuple

_TAG_STRUCT = struct.Struct(">II")
_U32_MAX = 0xFFFFFFFF


@dataclass(frozen=True, order=True)
class Tag:
    """Unique per-insertion identifier: 32-bit origin, 32-bit counter."""

    origin: int
    counter: int

    def __post_init__(self) -> None:
        if not (0 <= self.origin <= _U32_MAX and 0 <= self.counter <= _U32_MAX):
            raise ValueError(f"tag fields out of u32 range: {self.origin}, {self.counter}")

    def to_bytes(self) -> bytes:
        return _TAG_STRUCT.pack(self.origin, self.counter)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Tag":
        if len(data) != 8:
            raise ValueError(f"tag must be 8 bytes, got {len(data)}")
        origin, counter = _TAG_STRUCT.unpack(data)
        return cls(origin, counter)

    @property
    def hex(self) -> str:
        """Canonical fixed-width rendering: 16 hex chars, origin then counter."""
        return self.to_bytes().hex()

    @classmethod
    def from_hex(cls, text: str) -> "Tag":
        if len(text) != 16:
            raise ValueError(f"tag hex must be 16 chars, got {len(text)!r}")
        return cls.from_bytes(bytes.fromhex(text))

    def __str__(self) -> str:
        return self.hex


class TaggedElement:
    """A payload plus its insertion tag. Identity is the tag alone."""

    __slots__ = ("value", "tag")

    def __init__(self, value: bytes, tag: Tag):
        self.value = bytes(value)
        self.tag = tag

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TaggedElement) and self.tag == other.tag

    def __hash__(self) -> int:
        return hash(self.tag)

    def __repr__(self) -> str:
        return f"TaggedElement(tag={self.tag.hex}, value={self.value!r})"


@dataclass
class ReplicaState:
    """One node's copy of the replicated set.

    ``merge`` accepts arbitrary subsets of a peer's add/removal logs, so both
    full-state snapshots and single-element deltas converge. Removals are
    recorded unconditionally, even for tags never seen locally: a removal
    that outruns its addition must still win once the addition arrives.
    """

    replica_id: int
    _adds: dict = field(default_factory=dict)   # Tag -> TaggedElement
    _rems: set = field(default_factory=set)     # Tag
    _next_counter: int = 1

    def add(self, value: bytes) -> TaggedElement:
        """Insert a payload under a fresh tag; returns the element for later removal."""
        tag = Tag(self.replica_id, self._next_counter)
        self._next_counter += 1
        element = TaggedElement(value, tag)
        self._adds[tag] = element
        return element

    def remove(self, tag: Tag) -> None:
        """Record a removal. Legal for unknown tags; idempotent."""
        self._rems.add(tag)

    def merge(self, received_add: Iterable[TaggedElement], received_rem: Iterable[Tag]) -> None:
        """Fold a peer's (partial) state into ours: A ∪= adds, R ∪= removals."""
        for element in received_add:
            self._adds.setdefault(element.tag, element)
        self._rems.update(received_rem)

    def snapshot(self) -> Tuple[Set[TaggedElement], Set[Tag]]:
        """Copies of (A, R) for gossip serialization; leaves state untouched."""
        return set(self._adds.values()), set(self._rems)

    @property
    def add_set(self) -> Set[TaggedElement]:
        return set(self._adds.values())

    @property
    def rem_set(self) -> Set[Tag]:
        return set(self._rems)

    @property
    def main_set(self) -> Set[TaggedElement]:
        """Live view, recomputed from the logs: elements whose tag is not removed."""
        return {e for t, e in self._adds.items() if t not in self._rems}

    def get(self, tag: Tag) -> Optional[TaggedElement]:
        """The live element under ``tag``, or None if absent or removed."""
        if tag in self._rems:
            return None
        return self._adds.get(tag)

    def live_values(self) -> list:
        """Payloads of the live view, ordered by tag for determinism."""
        return [self._adds[t].value for t in sorted(self._adds) if t not in self._rems]

    def same_state(self, other: "ReplicaState") -> bool:
        """True when both replicas hold identical logs (hence identical M)."""
        return self._adds.keys() == other._adds.keys() and self._rems == other._rems

    def __len__(self) -> int:
        return sum(1 for t in self._adds if t not in self._rems)
