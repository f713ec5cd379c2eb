import itertools

import pytest
from hypothesis import given, settings, strategies as st

from airmesh.crdt import ReplicaState, Tag, TaggedElement

from oracles import expected_live_set


def values(state):
    return {e.value for e in state.main_set}


def test_add_mints_fresh_tags_with_own_origin():
    replica = ReplicaState(replica_id=1)
    element = replica.add(b"E1")
    assert element.tag.origin == 1
    assert element in replica.main_set
    assert values(replica) == {b"E1"}


def test_same_payload_twice_gives_two_elements():
    replica = ReplicaState(7)
    first = replica.add(b"same")
    second = replica.add(b"same")
    assert first.tag != second.tag
    assert len(replica.main_set) == 2


def test_add_remove_readd_leaves_one_live_element():
    replica = ReplicaState(1)
    first = replica.add(b"E1")
    replica.remove(first.tag)
    assert values(replica) == set()
    replica.add(b"E1")
    assert len(replica.main_set) == 1


def test_remove_drops_from_main_but_not_add_set():
    replica = ReplicaState(1)
    element = replica.add(b"E1")
    replica.remove(element.tag)
    assert element.tag in replica.rem_set
    assert element in replica.add_set
    assert element not in replica.main_set


def test_remove_unknown_tag_is_recorded():
    replica = ReplicaState(1)
    ghost = Tag(9, 1)
    replica.remove(ghost)
    assert ghost in replica.rem_set
    assert replica.main_set == set()


def test_remove_is_idempotent():
    a = ReplicaState(1)
    b = ReplicaState(1)
    ta = a.add(b"x")
    b.merge(*a.snapshot())
    a.remove(ta.tag)
    b.remove(ta.tag)
    b.remove(ta.tag)
    assert a.same_state(b)


def test_tombstone_before_add_still_wins():
    a = ReplicaState(1)
    b = ReplicaState(2)
    element = a.add(b"E1")
    b.remove(element.tag)          # learns the removal before the addition
    b.merge([element], [])
    assert b.main_set == set()


def test_merge_empty_is_identity():
    replica = ReplicaState(1)
    replica.add(b"E1")
    before = replica.snapshot()
    replica.merge([], [])
    assert replica.snapshot() == before


def test_two_replica_exchange_converges():
    c1, c2 = ReplicaState(1), ReplicaState(2)
    c1.add(b"E1")
    c2.add(b"E2")
    c2.merge(*c1.snapshot())
    c1.merge(*c2.snapshot())
    assert values(c1) == values(c2) == {b"E1", b"E2"}


def test_merge_own_snapshot_is_noop():
    replica = ReplicaState(3)
    element = replica.add(b"a")
    replica.add(b"b")
    replica.remove(element.tag)
    before = replica.snapshot()
    replica.merge(*replica.snapshot())
    assert replica.snapshot() == before


def test_fresh_replica_catches_up_from_one_snapshot():
    veterans = [ReplicaState(i) for i in range(1, 4)]
    for i, replica in enumerate(veterans):
        replica.add(f"payload-{i}".encode())
    for replica in veterans:
        for other in veterans:
            replica.merge(*other.snapshot())
    victim = veterans[0]
    newcomer = ReplicaState(99)
    newcomer.merge(*victim.snapshot())
    assert newcomer.same_state(victim)
    assert newcomer.main_set == victim.main_set


def test_main_set_is_always_adds_minus_rems():
    replica = ReplicaState(1)
    kept = replica.add(b"keep")
    gone = replica.add(b"drop")
    replica.remove(gone.tag)
    assert {e.tag for e in replica.main_set} == \
        {e.tag for e in replica.add_set} - replica.rem_set
    assert kept in replica.main_set


def _script_messages():
    """3 adds at distinct replicas plus 1 remove, as delta messages."""
    origins = [ReplicaState(i) for i in (1, 2, 3)]
    deltas = []
    elements = []
    for replica, payload in zip(origins, (b"E1", b"E2", b"E3")):
        element = replica.add(payload)
        elements.append(element)
        deltas.append(({element}, set()))
    deltas.append((set(), {elements[0].tag}))  # replica 2 removes E1
    expected = expected_live_set(elements, [elements[0].tag])
    return deltas, expected


def test_all_delivery_orders_converge():
    deltas, expected = _script_messages()
    for order in itertools.permutations(range(len(deltas))):
        replica = ReplicaState(50)
        for i in order:
            replica.merge(*deltas[i])
        assert {e.tag for e in replica.main_set} == expected


def test_duplicated_delivery_changes_nothing():
    deltas, expected = _script_messages()
    replica = ReplicaState(60)
    for adds, rems in deltas * 3:
        replica.merge(adds, rems)
    assert {e.tag for e in replica.main_set} == expected


ops = st.lists(
    st.tuples(st.integers(0, 2), st.sampled_from(["add", "remove"]), st.integers(0, 5)),
    min_size=0, max_size=24)


def _run_ops(script):
    """Apply an op script at three origin replicas; returns replicas and deltas."""
    replicas = {i: ReplicaState(i) for i in range(3)}
    added = []
    deltas = []
    for who, op, arg in script:
        if op == "add":
            element = replicas[who].add(bytes([arg]))
            added.append(element)
            deltas.append(({element}, set()))
        elif added:
            tag = added[arg % len(added)].tag
            replicas[who].remove(tag)
            deltas.append((set(), {tag}))
    return replicas, deltas


@settings(max_examples=120, deadline=None)
@given(ops, st.permutations(range(3)))
def test_property_merge_order_and_grouping_irrelevant(script, replica_order):
    replicas, _ = _run_ops(script)
    # Merging peer snapshots in any order/grouping yields the same state.
    forward = ReplicaState(10)
    for i in (0, 1, 2):
        forward.merge(*replicas[i].snapshot())
    shuffled = ReplicaState(11)
    for i in replica_order:
        shuffled.merge(*replicas[i].snapshot())
    paired = ReplicaState(12)
    half = ReplicaState(13)
    half.merge(*replicas[replica_order[0]].snapshot())
    half.merge(*replicas[replica_order[1]].snapshot())
    paired.merge(*half.snapshot())
    paired.merge(*replicas[replica_order[2]].snapshot())
    assert forward.same_state(shuffled)
    assert forward.same_state(paired)


@settings(max_examples=120, deadline=None)
@given(ops)
def test_property_idempotent_self_merge(script):
    replicas, deltas = _run_ops(script)
    state = replicas[0]
    for adds, rems in deltas:
        state.merge(adds, rems)
    before = state.snapshot()
    state.merge(*state.snapshot())
    assert state.snapshot() == before


@settings(max_examples=120, deadline=None)
@given(ops)
def test_property_main_set_matches_log_difference(script):
    replicas, deltas = _run_ops(script)
    for replica in replicas.values():
        for adds, rems in deltas:
            replica.merge(adds, rems)
        assert {e.tag for e in replica.main_set} == \
            {e.tag for e in replica.add_set} - replica.rem_set
    states = list(replicas.values())
    assert all(states[0].same_state(s) for s in states[1:])


def test_tag_hex_rendering_is_fixed_width():
    tag = Tag(0x1F, 0x2A3B)
    assert tag.hex == "0000001f00002a3b"
    assert Tag.from_hex(tag.hex) == tag
    assert len(Tag(0xFFFFFFFF, 0xFFFFFFFF).hex) == 16


def test_tag_rejects_out_of_range():
    with pytest.raises(ValueError):
        Tag(-1, 0)
    with pytest.raises(ValueError):
        Tag(0, 1 << 32)


def test_tagged_element_identity_is_tag_only():
    tag = Tag(1, 1)
    assert TaggedElement(b"x", tag) == TaggedElement(b"y", tag)
    assert TaggedElement(b"x", tag) != TaggedElement(b"x", Tag(1, 2))
