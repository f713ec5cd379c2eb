"""Per-sensor orchestration of the cooperative sensing pipeline.

Each node is a single-threaded reactive state machine driven entirely by
scheduled events: election timers, gossip timers, round boundaries, and
incoming datagrams. One round runs election (already standing), embedding
extraction, replicated-set sharing, leader-side clustering, a scoped
election inside every assigned group, and finally group inference.

Timer chains use generation counters instead of cancellation: every reset
bumps the generation and stale firings are ignored.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from . import wire
from .clustering import cluster
from .crdt import ReplicaState
from .election import ElectionMachine, Heartbeat, Role, VoteGrant, VoteRequest
from .inference import ModelBundle, aggregate, predict
from .netsim import MessageKind, Network, SimMessage, Simulator
from .sensing import DEFAULT_DIM, DEFAULT_WINDOW, embed, take_window


class Phase(Enum):
    ELECTING = "electing"
    SHARING = "sharing"
    CLUSTERING = "clustering"
    GROUP_ELECTING = "group_electing"
    INFERRING = "inferring"


@dataclass
class NodeTiming:
    heartbeat_us: int = 50_000
    timeout_min_us: int = 150_000
    timeout_max_us: int = 300_000
    gossip_period_us: int = 500_000
    gossip_jitter_us: int = 50_000
    round_period_us: int = 60_000_000
    collect_delay_us: int = 5_000_000  # leader clusters this long after round start


@dataclass(frozen=True)
class GroupAssignment:
    label: int
    members: Tuple[int, ...]


class Observer:
    """Instrumentation hooks; the simulation harness overrides what it needs."""

    def on_leader(self, scope: str, term: int, node_id: int, time_us: int,
                  group_label: Optional[int] = None) -> None:
        pass

    def on_cluster(self, round_no: int, leader: int, groups, iterations: int,
                   embeddings_present: int, time_us: int) -> None:
        pass

    def on_inference(self, round_no: int, group_label: int, leader: int,
                     label: str, members_used: int, time_us: int) -> None:
        pass


_SCOPE_CODE = {"net": wire.SCOPE_NETWORK, "group": wire.SCOPE_GROUP}


class SensorNode:
    def __init__(self, node_id: int, roster, sim: Simulator, net: Network,
                 timing: NodeTiming, *, seed=0, stream: Optional[np.ndarray] = None,
                 sample_period_s: float = 1.0, window: int = DEFAULT_WINDOW,
                 dim: int = DEFAULT_DIM, theta: float = 1.0, knn: int = 3,
                 model: Optional[ModelBundle] = None, observer: Optional[Observer] = None,
                 per_member_vote: bool = False):
        if node_id >= 1 << 16:
            raise ValueError("node ids must fit in 16 bits (revival epochs use the rest)")
        self.node_id = node_id
        self.roster = tuple(sorted(roster))
        self.sim = sim
        self.net = net
        self.timing = timing
        self.rng = random.Random(f"{seed}/node/{node_id}")
        self.stream = stream
        self.sample_period_s = sample_period_s
        self.window = window
        self.dim = dim
        self.theta = theta
        self.knn = knn
        self.model = model
        self.observer = observer or Observer()
        self.per_member_vote = per_member_vote

        self.alive = True
        self.phase = Phase.ELECTING
        self.election = self._new_election(self.roster)
        self.group_election: Optional[ElectionMachine] = None
        self.replica = ReplicaState(node_id)
        self._epoch = 0

        self.current_round: Optional[int] = None
        self._round_start_us = 0
        self._round_deadline_us = 0
        self._round_elements = []
        self.latest_embedding = None
        self.group_assignment: Optional[GroupAssignment] = None
        self._clustered_round: Optional[int] = None
        self._inference_done = False
        self.heard_results: Dict[Tuple[int, int], Tuple[int, int]] = {}
        self.decode_errors = 0

        self._election_gen = {"net": 0, "group": 0}
        self._heartbeat_gen = {"net": 0, "group": 0}
        self._gossip_gen = 0
        self._retry_gen = 0

    # -- wiring ------------------------------------------------------------

    def _new_election(self, peers) -> ElectionMachine:
        return ElectionMachine(self.node_id, peers, self.timing.timeout_min_us,
                               self.timing.timeout_max_us, self.timing.heartbeat_us,
                               self.rng)

    def start(self) -> None:
        """Arm the election timeout and the jittered gossip schedule."""
        self._schedule_election_timer("net", self.election.draw_timeout())
        self._gossip_gen += 1
        self.sim.schedule(self.sim.now + self.rng.randint(0, self.timing.gossip_period_us),
                          self._on_gossip_timer, self._gossip_gen)

    def kill(self) -> None:
        self.alive = False
        self.net.set_down(self.node_id)

    def revive(self) -> None:
        """Rejoin with amnesia: term 0, an empty replica under a fresh origin id."""
        self.alive = True
        self.net.set_up(self.node_id)
        self._epoch += 1
        self.election = self._new_election(self.roster)
        self.group_election = None
        self.replica = ReplicaState(self.node_id + (self._epoch << 16))
        self.current_round = None
        self._round_elements = []
        self.group_assignment = None
        self._inference_done = False
        self.phase = Phase.ELECTING
        self.start()

    def _peers(self, scope: str):
        if scope == "net":
            return [p for p in self.roster if p != self.node_id]
        members = self.group_assignment.members if self.group_assignment else ()
        return [p for p in members if p != self.node_id]

    def _machine(self, scope: str, group_label: int = 0) -> Optional[ElectionMachine]:
        if scope == "net":
            return self.election
        if (self.group_election is not None and self.group_assignment is not None
                and self.group_assignment.label == group_label):
            return self.group_election
        return None

    def _group_label(self) -> int:
        return self.group_assignment.label if self.group_assignment else 0

    # -- timers --------------------------------------------------------------

    def _schedule_election_timer(self, scope: str, delay_us: int) -> None:
        self._election_gen[scope] += 1
        self.sim.schedule(self.sim.now + delay_us, self._on_election_timer,
                          scope, self._election_gen[scope])

    def _on_election_timer(self, scope: str, gen: int) -> None:
        if not self.alive or gen != self._election_gen[scope]:
            return
        machine = self._machine(scope, self._group_label())
        if machine is None:
            return
        self._apply(scope, machine.on_timeout())

    def _on_heartbeat_timer(self, scope: str, gen: int) -> None:
        if not self.alive or gen != self._heartbeat_gen[scope]:
            return
        machine = self._machine(scope, self._group_label())
        if machine is None or machine.role is not Role.LEADER:
            return
        payload = wire.encode_election(machine.current_term, self.node_id,
                                       _SCOPE_CODE[scope], self._group_label())
        for dst in self._peers(scope):
            self.net.send(self.node_id, dst, MessageKind.HEARTBEAT, payload)
        self.sim.schedule(self.sim.now + self.timing.heartbeat_us,
                          self._on_heartbeat_timer, scope, gen)

    def _on_gossip_timer(self, gen: int) -> None:
        if not self.alive or gen != self._gossip_gen:
            return
        adds, rems = self.replica.snapshot()
        payload = wire.encode_gossip(self.replica.replica_id, sorted(adds, key=lambda e: e.tag),
                                     sorted(rems))
        for dst in self._peers("net"):
            self.net.send(self.node_id, dst, MessageKind.GOSSIP, payload)
        delay = self.timing.gossip_period_us + self.rng.randint(0, self.timing.gossip_jitter_us)
        self.sim.schedule(self.sim.now + delay, self._on_gossip_timer, gen)

    # -- election plumbing -----------------------------------------------------

    def _apply(self, scope: str, result) -> None:
        group = self._group_label()
        for dst, message in result.outbox:
            if isinstance(message, VoteRequest):
                kind = MessageKind.REQUEST_VOTE
                payload = wire.encode_election(message.term, message.candidate,
                                               _SCOPE_CODE[scope], group)
            elif isinstance(message, VoteGrant):
                kind = MessageKind.VOTE_GRANT
                payload = wire.encode_election(message.term, message.voter,
                                               _SCOPE_CODE[scope], group)
            else:
                kind = MessageKind.HEARTBEAT
                payload = wire.encode_election(message.term, message.leader,
                                               _SCOPE_CODE[scope], group)
            self.net.send(self.node_id, dst, kind, payload)
        if result.reset_timeout:
            self._schedule_election_timer(scope, result.timeout_us)
        if result.became_leader:
            self._became_leader(scope)

    def _became_leader(self, scope: str) -> None:
        machine = self._machine(scope, self._group_label())
        self.observer.on_leader(scope, machine.current_term, self.node_id, self.sim.now,
                                self._group_label() if scope == "group" else None)
        self._heartbeat_gen[scope] += 1
        gen = self._heartbeat_gen[scope]
        payload = wire.encode_election(machine.current_term, self.node_id,
                                       _SCOPE_CODE[scope], self._group_label())
        for dst in self._peers(scope):
            self.net.send(self.node_id, dst, MessageKind.HEARTBEAT, payload)
        self.sim.schedule(self.sim.now + self.timing.heartbeat_us,
                          self._on_heartbeat_timer, scope, gen)
        if scope == "net":
            # A leader elected after the collection deadline (leader crash
            # mid-round) still owes the round its clustering pass.
            if (self.current_round is not None
                    and self._clustered_round != self.current_round
                    and self.sim.now >= self._round_cluster_time()):
                self._run_clustering(self.current_round)
        else:
            self._attempt_group_inference()

    # -- message handling ------------------------------------------------------

    def on_message(self, msg: SimMessage) -> None:
        if not self.alive:
            return
        try:
            if msg.kind in (MessageKind.GOSSIP, MessageKind.EMBEDDING_SHARE,
                            MessageKind.GROUP_ASSIGN):
                self._on_replica_traffic(msg.payload)
            elif msg.kind in (MessageKind.REQUEST_VOTE, MessageKind.VOTE_GRANT,
                              MessageKind.HEARTBEAT):
                self._on_election_traffic(msg.kind, msg.payload)
            elif msg.kind is MessageKind.INFERENCE_RESULT:
                round_no, group, label_index, sender = wire.decode_inference_result(msg.payload)
                self.heard_results[(round_no, group)] = (sender, label_index)
        except wire.WireError:
            self.decode_errors += 1  # corrupted datagram: drop silently

    def _on_replica_traffic(self, payload: bytes) -> None:
        _, adds, rems = wire.decode_gossip(payload)
        self.replica.merge(adds, rems)
        for element in adds:
            if element.value and element.value[0] == wire.RECORD_GROUPS:
                record = wire.decode_record(element.value)
                self._handle_group_record(record)

    def _on_election_traffic(self, kind: MessageKind, payload: bytes) -> None:
        term, sender, scope_code, group = wire.decode_election(payload)
        scope = "net" if scope_code == wire.SCOPE_NETWORK else "group"
        machine = self._machine(scope, group)
        if machine is None:
            return
        if kind is MessageKind.REQUEST_VOTE:
            result = machine.on_request_vote(sender, term)
        elif kind is MessageKind.VOTE_GRANT:
            result = machine.on_vote_grant(sender, term)
        else:
            result = machine.on_heartbeat(sender, term)
        self._apply(scope, result)

    # -- round pipeline ----------------------------------------------------------

    def _round_cluster_time(self) -> int:
        return self._round_start_us + self.timing.collect_delay_us

    def on_round_start(self, round_no: int, end_index: int, deadline_us: int) -> None:
        if not self.alive:
            return
        for element in self._round_elements:  # recycle last round's entries
            self.replica.remove(element.tag)
        self._round_elements = []
        self.current_round = round_no
        self._round_start_us = self.sim.now
        self._round_deadline_us = deadline_us
        self.group_assignment = None
        self.group_election = None
        self._inference_done = False
        self.phase = Phase.SHARING
        if self.stream is None:
            return
        win = take_window(self.node_id, self.stream, end_index, self.window,
                          self.sample_period_s)
        if win is None:
            return  # not enough history yet; contribute nothing this round
        emb = embed(win, self.dim)
        self.latest_embedding = emb
        payload = wire.encode_embedding_record(round_no, self.node_id,
                                               emb.window_end_time, emb.vector)
        element = self.replica.add(payload)
        self._round_elements.append(element)
        delta = wire.encode_gossip(self.replica.replica_id, [element], [])
        for dst in self._peers("net"):
            self.net.send(self.node_id, dst, MessageKind.EMBEDDING_SHARE, delta)

    def on_cluster_timer(self, round_no: int) -> None:
        if (not self.alive or round_no != self.current_round
                or self.election.role is not Role.LEADER
                or self._clustered_round == round_no):
            return
        self._run_clustering(round_no)

    def _round_embeddings(self, round_no: int) -> Dict[int, np.ndarray]:
        found: Dict[int, np.ndarray] = {}
        for element in self.replica.main_set:
            if element.value and element.value[0] == wire.RECORD_EMBEDDING:
                record = wire.decode_record(element.value)
                if record.round_no == round_no:
                    found[record.sensor_id] = np.asarray(record.vector)
        return found

    def _run_clustering(self, round_no: int) -> None:
        self.phase = Phase.CLUSTERING
        embeddings = self._round_embeddings(round_no)
        groups = []
        iterations = 0
        if embeddings:
            result = cluster(sorted(embeddings.items()), self.theta, self.knn)
            iterations = result.iterations
            groups = [(label, members)
                      for label, members in zip(result.labels, result.clusters)]
        for absent in self.roster:
            if absent not in embeddings:
                groups.append((absent, (absent,)))  # no data: a group of one
        groups.sort()
        payload = wire.encode_group_record(round_no, groups)
        element = self.replica.add(payload)
        self._round_elements.append(element)
        self._clustered_round = round_no
        delta = wire.encode_gossip(self.replica.replica_id, [element], [])
        for dst in self._peers("net"):
            self.net.send(self.node_id, dst, MessageKind.GROUP_ASSIGN, delta)
        self.observer.on_cluster(round_no, self.node_id, groups, iterations,
                                 len(embeddings), self.sim.now)
        self._handle_group_record(wire.GroupRecord(
            round_no, tuple((label, tuple(members)) for label, members in groups)))

    def _handle_group_record(self, record: wire.GroupRecord) -> None:
        if record.round_no != self.current_round or self.group_assignment is not None:
            return
        mine = next(((label, members) for label, members in record.groups
                     if self.node_id in members), None)
        if mine is None:
            return
        label, members = mine
        self.group_assignment = GroupAssignment(label, tuple(sorted(members)))
        self.phase = Phase.GROUP_ELECTING
        if len(members) == 1:
            # Singleton group: the node leads itself, no election round needed.
            self.observer.on_leader("group", 0, self.node_id, self.sim.now, label)
            self._attempt_group_inference()
        else:
            self.group_election = self._new_election(self.group_assignment.members)
            self._schedule_election_timer("group", self.group_election.draw_timeout())

    def _attempt_group_inference(self) -> None:
        if (self._inference_done or self.group_assignment is None
                or self.current_round is None or self.model is None):
            return
        round_no = self.current_round
        have = self._round_embeddings(round_no)
        vectors = [have[m] for m in self.group_assignment.members if m in have]
        missing = [m for m in self.group_assignment.members if m not in have]
        if missing and self.sim.now < self._round_deadline_us - self.timing.gossip_period_us:
            self._retry_gen += 1
            self.sim.schedule(self.sim.now + self.timing.gossip_period_us,
                              self._on_inference_retry, round_no, self._retry_gen)
            return
        if not vectors:
            return  # nothing to classify (members never shared data)
        if self.per_member_vote:
            votes = [predict(self.model, v)[0] for v in vectors]
            label = min(set(votes),
                        key=lambda l: (-votes.count(l), self.model.label_alphabet.index(l)))
        else:
            label, _ = predict(self.model, aggregate(vectors))
        label_index = self.model.label_alphabet.index(label)
        payload = wire.encode_inference_result(round_no, self.group_assignment.label,
                                               label_index, self.node_id)
        for dst in self._peers("net"):
            self.net.send(self.node_id, dst, MessageKind.INFERENCE_RESULT, payload)
        self.heard_results[(round_no, self.group_assignment.label)] = (self.node_id, label_index)
        self._inference_done = True
        self.phase = Phase.INFERRING
        self.observer.on_inference(round_no, self.group_assignment.label, self.node_id,
                                   label, len(vectors), self.sim.now)

    def _on_inference_retry(self, round_no: int, gen: int) -> None:
        if (not self.alive or gen != self._retry_gen or round_no != self.current_round):
            return
        machine = self.group_election
        leading = (machine is not None and machine.role is Role.LEADER) or (
            self.group_assignment is not None and len(self.group_assignment.members) == 1)
        if leading:
            self._attempt_group_inference()
