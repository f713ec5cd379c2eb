import pytest
from hypothesis import given, settings, strategies as st

from airmesh import wire
from airmesh.crdt import Tag, TaggedElement


def test_gossip_golden_bytes():
    # header {replica_id u32, add_count u16, rem_count u16}, add entry
    # {tag 8B, len u16, payload}, rem entry {tag 8B}; all big-endian.
    element = TaggedElement(b"\xAB\xCD", Tag(1, 2))
    data = wire.encode_gossip(0x01020304, [element], [Tag(5, 6)])
    assert data == bytes.fromhex(
        "01020304" "0001" "0001"
        "0000000100000002" "0002" "abcd"
        "0000000500000006")


def test_gossip_round_trip_empty():
    data = wire.encode_gossip(9, [], [])
    assert wire.decode_gossip(data) == (9, [], [])


def test_gossip_rejects_truncation_and_trailing():
    element = TaggedElement(b"payload", Tag(1, 1))
    data = wire.encode_gossip(1, [element], [Tag(2, 2)])
    for cut in (1, len(data) // 2, len(data) - 1):
        with pytest.raises(wire.WireError):
            wire.decode_gossip(data[:cut])
    with pytest.raises(wire.WireError):
        wire.decode_gossip(data + b"\x00")


def test_gossip_rejects_oversized_payload():
    big = TaggedElement(b"x" * 70000, Tag(1, 1))
    with pytest.raises(wire.WireError):
        wire.encode_gossip(1, [big], [])


tags = st.builds(Tag, st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
elements = st.builds(TaggedElement, st.binary(max_size=64), tags)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(elements, max_size=8), st.lists(tags, max_size=8))
def test_gossip_round_trip(replica_id, adds, rems):
    replica, got_adds, got_rems = wire.decode_gossip(
        wire.encode_gossip(replica_id, adds, rems))
    assert replica == replica_id
    assert [(e.tag, e.value) for e in got_adds] == [(e.tag, e.value) for e in adds]
    assert got_rems == rems


def test_election_golden_bytes():
    data = wire.encode_election(3, 7, wire.SCOPE_GROUP, 12)
    assert data == bytes.fromhex("00000003" "00000007" "01" "0000000c")
    assert wire.decode_election(data) == (3, 7, 1, 12)


def test_election_rejects_short_buffer():
    with pytest.raises(wire.WireError):
        wire.decode_election(b"\x00\x01")


def test_inference_result_round_trip():
    data = wire.encode_inference_result(4, 9, 2, 6)
    assert wire.decode_inference_result(data) == (4, 9, 2, 6)
    assert data == bytes.fromhex("00000004" "00000009" "0002" "00000006")


def test_embedding_record_round_trip():
    record = wire.decode_record(
        wire.encode_embedding_record(2, 11, 60.0, [1.5, -2.25, 0.0]))
    assert record == wire.EmbeddingRecord(2, 11, 60.0, (1.5, -2.25, 0.0))


def test_group_record_round_trip():
    groups = [(5, (1, 2, 5)), (7, (7,))]
    record = wire.decode_record(wire.encode_group_record(3, groups))
    assert record.round_no == 3
    assert record.groups == ((5, (1, 2, 5)), (7, (7,)))


def test_record_type_markers_are_stable():
    assert wire.encode_embedding_record(0, 0, 0.0, [])[0] == 0x01
    assert wire.encode_group_record(0, [])[0] == 0x02


def test_record_rejects_garbage():
    with pytest.raises(wire.WireError):
        wire.decode_record(b"")
    with pytest.raises(wire.WireError):
        wire.decode_record(b"\x7fjunk")
    good = wire.encode_group_record(1, [(3, (1, 2, 3))])
    with pytest.raises(wire.WireError):
        wire.decode_record(good[:-2])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1),
       st.floats(allow_nan=False, allow_infinity=False, width=64),
       st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), max_size=20))
def test_embedding_record_property_round_trip(round_no, sensor, end, vector):
    got = wire.decode_record(wire.encode_embedding_record(round_no, sensor, end, vector))
    assert got.round_no == round_no and got.sensor_id == sensor
    assert got.window_end == end
    assert list(got.vector) == vector
