"""Deterministic discrete-event simulation of an unreliable datagram network.

Time is integer microseconds. Events pop in (time, insertion sequence)
order, so identical (channel config, scenario, seed) inputs replay to
bit-identical traces. The channel drops, delays, and duplicates each
transmission independently; a broadcast is one independent channel draw
per registered peer.
"""

from __future__ import annotations

import csv
import heapq
import random
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable, List, Optional, Tuple

BROADCAST = -1


class MessageKind(IntEnum):
    GOSSIP = 1
    REQUEST_VOTE = 2
    VOTE_GRANT = 3
    HEARTBEAT = 4
    EMBEDDING_SHARE = 5
    GROUP_ASSIGN = 6
    INFERENCE_RESULT = 7


class SchedulingError(ValueError):
    """An event was scheduled before the current simulated time."""


@dataclass
class ChannelConfig:
    drop_probability: float = 0.0
    delay_min_us: int = 0
    delay_max_us: int = 0
    duplicate_probability: float = 0.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.drop_probability <= 1.0):
            raise ValueError(f"drop_probability out of [0,1]: {self.drop_probability}")
        if not (0.0 <= self.duplicate_probability <= 1.0):
            raise ValueError(f"duplicate_probability out of [0,1]: {self.duplicate_probability}")
        if self.delay_min_us > self.delay_max_us:
            raise ValueError("delay_min_us exceeds delay_max_us")
        if self.delay_min_us < 0:
            raise ValueError("delays must be non-negative")


@dataclass(frozen=True)
class SimMessage:
    src: int
    dst: int
    kind: MessageKind
    payload: bytes
    send_time: int


@dataclass
class RunResult:
    events_dispatched: int
    end_time: int
    condition_met: bool
    timed_out: bool


class Simulator:
    """Event queue plus the simulated clock it drives."""

    def __init__(self) -> None:
        self.now: int = 0
        self._heap: list = []
        self._seq: int = 0

    def schedule(self, at: int, fn: Callable, *args) -> int:
        if at < self.now:
            raise SchedulingError(f"cannot schedule at {at} before now={self.now}")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (at, seq, fn, args))
        return seq

    def pending(self) -> int:
        return len(self._heap)

    def run_until(self,
                  time_limit: Optional[int] = None,
                  condition: Optional[Callable[[], bool]] = None) -> RunResult:
        """Dispatch events until the condition holds or the time limit passes.

        Events stamped exactly at the limit are dispatched. When a condition
        is given but never satisfied within the limit (or the queue drains),
        the result is flagged as timed out.
        """
        dispatched = 0
        met = condition() if condition is not None else False
        while not met and self._heap:
            at, _, fn, args = self._heap[0]
            if time_limit is not None and at > time_limit:
                break
            heapq.heappop(self._heap)
            self.now = at
            fn(*args)
            dispatched += 1
            if condition is not None:
                met = condition()
        if time_limit is not None and self.now < time_limit:
            self.now = time_limit
        timed_out = condition is not None and not met
        return RunResult(dispatched, self.now, met, timed_out)


class Network:
    """Routes datagrams between registered node handlers through the channel.

    Keeps an append-only trace of every transmission: dropped sends are
    recorded at send time with dropped_flag=1, deliveries at dispatch time.
    Nodes marked down still receive trace rows (the datagram arrives at a
    dead box) but their handlers are not invoked.
    """

    def __init__(self, sim: Simulator, config: ChannelConfig, seed) -> None:
        self.sim = sim
        self.config = config
        self.rng = random.Random(f"{seed}/channel")
        self.handlers: dict = {}
        self.down: set = set()
        self.trace: List[Tuple[int, int, int, str, int, int]] = []
        self.deliveries_scheduled = 0
        self.deliveries_dispatched = 0

    def register(self, node_id: int, handler: Callable[[SimMessage], None]) -> None:
        if node_id in self.handlers:
            raise ValueError(f"node {node_id} already registered")
        self.handlers[node_id] = handler

    def node_ids(self) -> List[int]:
        return sorted(self.handlers)

    def set_down(self, node_id: int) -> None:
        self.down.add(node_id)

    def set_up(self, node_id: int) -> None:
        self.down.discard(node_id)

    def is_up(self, node_id: int) -> bool:
        return node_id in self.handlers and node_id not in self.down

    def send(self, src: int, dst: int, kind: MessageKind, payload: bytes) -> int:
        """One channel draw: returns how many deliveries were scheduled (0, 1 or 2)."""
        now = self.sim.now
        scheduled = 0
        if self.rng.random() >= self.config.drop_probability:
            self._schedule_delivery(src, dst, kind, payload, now)
            scheduled += 1
        else:
            self.trace.append((now, src, dst, kind.name, len(payload), 1))
        if self.rng.random() < self.config.duplicate_probability:
            self._schedule_delivery(src, dst, kind, payload, now)
            scheduled += 1
        return scheduled

    def broadcast(self, src: int, kind: MessageKind, payload: bytes) -> int:
        scheduled = 0
        for dst in self.node_ids():
            if dst != src:
                scheduled += self.send(src, dst, kind, payload)
        return scheduled

    def _schedule_delivery(self, src, dst, kind, payload, send_time) -> None:
        delay = self.rng.randint(self.config.delay_min_us, self.config.delay_max_us)
        msg = SimMessage(src, dst, kind, payload, send_time)
        self.sim.schedule(send_time + delay, self._deliver, msg)
        self.deliveries_scheduled += 1

    def _deliver(self, msg: SimMessage) -> None:
        self.deliveries_dispatched += 1
        self.trace.append((self.sim.now, msg.src, msg.dst, msg.kind.name, len(msg.payload), 0))
        if msg.dst in self.down:
            return
        handler = self.handlers.get(msg.dst)
        if handler is not None:
            handler(msg)

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_us", "src", "dst", "kind", "size_bytes", "dropped_flag"])
            writer.writerows(self.trace)
