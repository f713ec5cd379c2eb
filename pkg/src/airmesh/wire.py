"""Binary wire formats for node-to-node traffic and stored payloads.

All integers are big-endian; layouts are fixed so that an independent
implementation can interoperate byte-for-byte.

Datagram bodies
    gossip      header {replica_id u32, add_count u16, rem_count u16},
                then add entries {tag 8B, payload_len u16, payload},
                then rem entries {tag 8B}
    election    {term u32, sender u32, scope u8, group u32} for vote
                requests, vote grants and heartbeats (scope 0 = network
                wide, 1 = within the named group)
    inference   {round u32, group u32, label_index u16, sender u32}

Replicated-set payloads (the opaque bytes inside gossip add entries) start
with a one-byte record type:
    0x01 embedding   {round u32, sensor u32, window_end f64, dim u16, dim×f64}
    0x02 groups      {round u32, group_count u16,
                      per group: {label u32, member_count u16, member u32...}}
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from .crdt import Tag, TaggedElement


class WireError(ValueError):
    """Raised when a buffer cannot be decoded; the datagram should be dropped."""


_GOSSIP_HEADER = struct.Struct(">IHH")
_ADD_ENTRY_HEAD = struct.Struct(">8sH")
_ELECTION = struct.Struct(">IIBI")
_INFERENCE = struct.Struct(">IIHI")
_EMBED_HEAD = struct.Struct(">BIIdH")
_GROUPS_HEAD = struct.Struct(">BIH")
_GROUP_ENTRY = struct.Struct(">IH")

RECORD_EMBEDDING = 0x01
RECORD_GROUPS = 0x02

SCOPE_NETWORK = 0
SCOPE_GROUP = 1

_U16_MAX = 0xFFFF


def encode_gossip(replica_id: int,
                  adds: Iterable[TaggedElement],
                  rems: Iterable[Tag]) -> bytes:
    adds = list(adds)
    rems = list(rems)
    if len(adds) > _U16_MAX or len(rems) > _U16_MAX:
        raise WireError("gossip entry count exceeds u16")
    parts = [_GOSSIP_HEADER.pack(replica_id, len(adds), len(rems))]
    for element in adds:
        if len(element.value) > _U16_MAX:
            raise WireError("payload exceeds u16 length")
        parts.append(_ADD_ENTRY_HEAD.pack(element.tag.to_bytes(), len(element.value)))
        parts.append(element.value)
    for tag in rems:
        parts.append(tag.to_bytes())
    return b"".join(parts)


def decode_gossip(data: bytes) -> Tuple[int, List[TaggedElement], List[Tag]]:
    try:
        replica_id, add_count, rem_count = _GOSSIP_HEADER.unpack_from(data, 0)
        offset = _GOSSIP_HEADER.size
        adds = []
        for _ in range(add_count):
            raw_tag, length = _ADD_ENTRY_HEAD.unpack_from(data, offset)
            offset += _ADD_ENTRY_HEAD.size
            payload = data[offset:offset + length]
            if len(payload) != length:
                raise WireError("truncated gossip payload")
            offset += length
            adds.append(TaggedElement(payload, Tag.from_bytes(raw_tag)))
        rems = []
        for _ in range(rem_count):
            raw = data[offset:offset + 8]
            if len(raw) != 8:
                raise WireError("truncated gossip rem entry")
            offset += 8
            rems.append(Tag.from_bytes(raw))
    except (struct.error, ValueError) as exc:
        raise WireError(f"malformed gossip datagram: {exc}") from exc
    if offset != len(data):
        raise WireError("trailing bytes after gossip body")
    return replica_id, adds, rems


def encode_election(term: int, sender: int, scope: int = SCOPE_NETWORK, group: int = 0) -> bytes:
    return _ELECTION.pack(term, sender, scope, group)


def decode_election(data: bytes) -> Tuple[int, int, int, int]:
    try:
        return _ELECTION.unpack(data)
    except struct.error as exc:
        raise WireError(f"malformed election datagram: {exc}") from exc


def encode_inference_result(round_no: int, group: int, label_index: int, sender: int) -> bytes:
    return _INFERENCE.pack(round_no, group, label_index, sender)


def decode_inference_result(data: bytes) -> Tuple[int, int, int, int]:
    try:
        return _INFERENCE.unpack(data)
    except struct.error as exc:
        raise WireError(f"malformed inference datagram: {exc}") from exc


@dataclass(frozen=True)
class EmbeddingRecord:
    round_no: int
    sensor_id: int
    window_end: float
    vector: tuple


@dataclass(frozen=True)
class GroupRecord:
    round_no: int
    groups: tuple  # of (label, (member, ...))


def encode_embedding_record(round_no: int, sensor_id: int, window_end: float,
                            vector: Sequence[float]) -> bytes:
    vec = np.asarray(vector, dtype=">f8")
    return _EMBED_HEAD.pack(RECORD_EMBEDDING, round_no, sensor_id,
                            float(window_end), vec.size) + vec.tobytes()


def encode_group_record(round_no: int, groups: Sequence[Tuple[int, Sequence[int]]]) -> bytes:
    parts = [_GROUPS_HEAD.pack(RECORD_GROUPS, round_no, len(groups))]
    for label, members in groups:
        members = list(members)
        parts.append(_GROUP_ENTRY.pack(label, len(members)))
        parts.append(struct.pack(f">{len(members)}I", *members))
    return b"".join(parts)


def decode_record(data: bytes) -> Union[EmbeddingRecord, GroupRecord]:
    if not data:
        raise WireError("empty payload record")
    kind = data[0]
    try:
        if kind == RECORD_EMBEDDING:
            _, round_no, sensor_id, window_end, dim = _EMBED_HEAD.unpack_from(data, 0)
            body = data[_EMBED_HEAD.size:]
            if len(body) != 8 * dim:
                raise WireError("embedding record length mismatch")
            vector = tuple(float(x) for x in np.frombuffer(body, dtype=">f8"))
            return EmbeddingRecord(round_no, sensor_id, window_end, vector)
        if kind == RECORD_GROUPS:
            _, round_no, count = _GROUPS_HEAD.unpack_from(data, 0)
            offset = _GROUPS_HEAD.size
            groups = []
            for _ in range(count):
                label, n = _GROUP_ENTRY.unpack_from(data, offset)
                offset += _GROUP_ENTRY.size
                members = struct.unpack_from(f">{n}I", data, offset)
                offset += 4 * n
                groups.append((label, members))
            if offset != len(data):
                raise WireError("trailing bytes after group record")
            return GroupRecord(round_no, tuple(groups))
    except struct.error as exc:
        raise WireError(f"malformed payload record: {exc}") from exc
    raise WireError(f"unknown payload record type {kind:#x}")
