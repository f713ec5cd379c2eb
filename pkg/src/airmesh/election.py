"""Leader election state machine (election subset of RAFT, no log replication).

The machine is pure: each handler folds one input event into the state and
returns what should be sent and whether the caller must reset the election
timer. All timing lives outside, in the event scheduler; the machine only
draws randomized timeout durations. The same class serves the network-wide
election and the per-group second round (just pass the group membership as
the peer set).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, List, Optional, Set, Tuple


class Role(Enum):
    FOLLOWER = "follower"
    CANDIDATE = "candidate"
    LEADER = "leader"


@dataclass(frozen=True)
class VoteRequest:
    term: int
    candidate: int


@dataclass(frozen=True)
class VoteGrant:
    term: int
    voter: int


@dataclass(frozen=True)
class Heartbeat:
    term: int
    leader: int


@dataclass
class StepResult:
    """What one input produced: datagrams to send and timer directives."""

    outbox: List[Tuple[int, object]] = field(default_factory=list)  # (dst, message)
    reset_timeout: bool = False
    timeout_us: Optional[int] = None
    became_leader: bool = False


class ElectionMachine:
    """Per-node follower/candidate/leader state over a fixed peer set."""

    def __init__(self, node_id: int, peers, timeout_min_us: int, timeout_max_us: int,
                 heartbeat_us: int, rng: random.Random):
        peers = frozenset(peers)
        if node_id not in peers:
            raise ValueError("peer set must include the node itself")
        if not (0 < timeout_min_us <= timeout_max_us):
            raise ValueError("invalid timeout range")
        if timeout_min_us <= 2 * heartbeat_us:
            raise ValueError("timeout_min must exceed twice the heartbeat interval")
        self.node_id = node_id
        self.peers: FrozenSet[int] = peers
        self.timeout_min_us = timeout_min_us
        self.timeout_max_us = timeout_max_us
        self.heartbeat_us = heartbeat_us
        self.rng = rng
        self.role = Role.FOLLOWER
        self.current_term = 0
        self.voted_for: Optional[int] = None
        self.votes_received: Set[int] = set()
        self.leader_id: Optional[int] = None

    @property
    def majority(self) -> int:
        return len(self.peers) // 2 + 1

    def draw_timeout(self) -> int:
        return self.rng.randint(self.timeout_min_us, self.timeout_max_us)

    def _enter_term(self, term: int) -> None:
        self.current_term = term
        self.voted_for = None
        self.votes_received = set()
        self.leader_id = None
        self.role = Role.FOLLOWER

    def on_timeout(self) -> StepResult:
        """Heartbeat silence elapsed: stand as candidate for the next term."""
        result = StepResult()
        if self.role is Role.LEADER:
            return result  # leaders do not time out; they heartbeat
        self.current_term += 1
        self.role = Role.CANDIDATE
        self.voted_for = self.node_id
        self.votes_received = {self.node_id}
        self.leader_id = None
        result.reset_timeout = True
        result.timeout_us = self.draw_timeout()
        request = VoteRequest(self.current_term, self.node_id)
        for peer in sorted(self.peers):
            if peer != self.node_id:
                result.outbox.append((peer, request))
        self._check_majority(result)
        return result

    def on_request_vote(self, candidate: int, term: int) -> StepResult:
        result = StepResult()
        if term > self.current_term:
            self._enter_term(term)
        if term == self.current_term and self.voted_for in (None, candidate):
            self.voted_for = candidate
            self.role = Role.FOLLOWER
            result.outbox.append((candidate, VoteGrant(term, self.node_id)))
            result.reset_timeout = True
            result.timeout_us = self.draw_timeout()
        return result

    def on_vote_grant(self, voter: int, term: int) -> StepResult:
        result = StepResult()
        if self.role is not Role.CANDIDATE or term != self.current_term:
            return result  # stale or superfluous grant
        if voter in self.peers:
            self.votes_received.add(voter)
        self._check_majority(result)
        return result

    def on_heartbeat(self, leader: int, term: int) -> StepResult:
        result = StepResult()
        if term < self.current_term:
            return result
        if term > self.current_term:
            self._enter_term(term)
        self.role = Role.FOLLOWER
        self.leader_id = leader
        result.reset_timeout = True
        result.timeout_us = self.draw_timeout()
        return result

    def heartbeat_message(self) -> Heartbeat:
        if self.role is not Role.LEADER:
            raise ValueError("only leaders heartbeat")
        return Heartbeat(self.current_term, self.node_id)

    def _check_majority(self, result: StepResult) -> None:
        if self.role is Role.CANDIDATE and len(self.votes_received) >= self.majority:
            self.role = Role.LEADER
            self.leader_id = self.node_id
            result.became_leader = True
