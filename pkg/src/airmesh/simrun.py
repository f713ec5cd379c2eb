"""Whole-network simulation harness: scenario in, round reports out.

Builds the sensor streams, wires every node to the simulated channel,
schedules round boundaries and fault injections, runs the event loop, and
assembles one report per round (groups, group leaders, predictions, ground
truth, timings). All outputs are deterministic functions of the config.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .inference import ModelBundle
from .netsim import ChannelConfig, Network, Simulator
from .node import NodeTiming, Observer, SensorNode
from .sensing import DEFAULT_DIM, DEFAULT_WINDOW, Scenario, generate, window_label


class ConfigError(ValueError):
    """Invalid simulation configuration (bad paths, times, probabilities)."""


@dataclass(frozen=True)
class FaultEvent:
    time_us: int
    node_id: int
    action: str  # "kill" or "revive"


@dataclass
class SimulationConfig:
    scenario: Scenario
    seed: int
    duration_s: float
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    timing: NodeTiming = field(default_factory=NodeTiming)
    theta: float = 1.0
    knn: int = 3
    dim: int = DEFAULT_DIM
    window: int = DEFAULT_WINDOW
    model: Optional[ModelBundle] = None
    faults: List[FaultEvent] = field(default_factory=list)
    per_member_vote: bool = False
    first_round_us: Optional[int] = None


class RunObserver(Observer):
    def __init__(self) -> None:
        self.leader_timeline: List[Tuple[int, int, int]] = []  # (time, term, node)
        self.leaders_by_term: Dict[int, set] = {}
        self.group_leaders: List[Tuple[int, int, int, int]] = []  # (time, group, term, node)
        self.clusterings: Dict[int, dict] = {}
        self.inferences: Dict[Tuple[int, int], dict] = {}
        self.shared: Dict[int, set] = {}
        self.fault_log: List[Tuple[int, int, str]] = []

    def on_leader(self, scope, term, node_id, time_us, group_label=None):
        if scope == "net":
            self.leader_timeline.append((time_us, term, node_id))
            self.leaders_by_term.setdefault(term, set()).add(node_id)
        else:
            self.group_leaders.append((time_us, group_label, term, node_id))

    def on_cluster(self, round_no, leader, groups, iterations, embeddings_present, time_us):
        self.clusterings[round_no] = {
            "leader": leader,
            "groups": [(int(label), [int(m) for m in members]) for label, members in groups],
            "iterations": iterations,
            "embeddings_present": embeddings_present,
            "time_us": time_us,
        }

    def on_inference(self, round_no, group_label, leader, label, members_used, time_us):
        self.inferences.setdefault((round_no, group_label), {
            "leader": leader, "label": label,
            "members_used": members_used, "time_us": time_us,
        })

    def on_share(self, round_no, sensor_id, time_us):
        self.shared.setdefault(round_no, set()).add(sensor_id)


@dataclass
class SimulationResult:
    round_reports: List[dict]
    summary: dict
    trace: list
    observer: RunObserver
    network: Network
    nodes: Dict[int, SensorNode]


def _group_truth(scenario: Scenario, members, start_s: float, end_s: float) -> str:
    sensors = {s.sensor_id: s for s in scenario.sensors}
    rooms = [scenario.room_of(sensors[m].x, sensors[m].y) for m in members if m in sensors]
    rooms = [r for r in rooms if r is not None]
    if not rooms:
        return "idle"
    counts = Counter(rooms)
    top = max(counts.values())
    majority_room = min(r for r, c in counts.items() if c == top)
    rep = min(m for m in members
              if m in sensors and scenario.room_of(sensors[m].x, sensors[m].y) == majority_room)
    return window_label(scenario, sensors[rep], start_s, end_s)


def run_simulation(config: SimulationConfig) -> SimulationResult:
    scenario = config.scenario
    scenario.validate()
    if config.duration_s <= 0:
        raise ConfigError("duration must be positive")
    duration_us = int(round(config.duration_s * 1e6))
    roster = sorted(s.sensor_id for s in scenario.sensors)
    if not roster:
        raise ConfigError("scenario has no sensors")
    for fault in config.faults:
        if fault.node_id not in roster:
            raise ConfigError(f"fault names unknown node {fault.node_id}")
        if not (0 <= fault.time_us <= duration_us):
            raise ConfigError(f"fault at {fault.time_us}us outside the run")
        if fault.action not in ("kill", "revive"):
            raise ConfigError(f"unknown fault action {fault.action!r}")

    period = scenario.sample_period_s
    first_round_us = config.first_round_us
    if first_round_us is None:
        first_round_us = int(math.ceil(config.window * period * 1e6))
    round_times = list(range(first_round_us, duration_us, config.timing.round_period_us))
    if not round_times:
        raise ConfigError("duration too short for a single round "
                          f"(first round would start at {first_round_us}us)")

    _, streams = generate(scenario, config.seed, config.duration_s)
    sim = Simulator()
    net = Network(sim, config.channel, config.seed)
    observer = RunObserver()
    nodes: Dict[int, SensorNode] = {}
    for sensor_id in roster:
        node = SensorNode(
            sensor_id, roster, sim, net, config.timing, seed=config.seed,
            stream=streams[sensor_id], sample_period_s=period, window=config.window,
            dim=config.dim, theta=config.theta, knn=config.knn, model=config.model,
            observer=observer, per_member_vote=config.per_member_vote)
        net.register(sensor_id, node.on_message)
        nodes[sensor_id] = node
    for sensor_id in roster:
        nodes[sensor_id].start()

    rounds = []
    for r, t in enumerate(round_times):
        end_index = int(round(t / 1e6 / period))
        deadline = min(t + config.timing.round_period_us, duration_us)
        for sensor_id in roster:
            sim.schedule(t, _round_start_with_share, nodes[sensor_id], observer,
                         r, end_index, deadline)
        for sensor_id in roster:
            sim.schedule(t + config.timing.collect_delay_us,
                         nodes[sensor_id].on_cluster_timer, r)
        rounds.append((r, t, end_index, deadline))

    for fault in sorted(config.faults, key=lambda f: (f.time_us, f.node_id)):
        sim.schedule(fault.time_us, _apply_fault, nodes[fault.node_id], fault, observer)

    run = sim.run_until(time_limit=duration_us)

    reports = _assemble_reports(config, rounds, observer, roster)
    summary = _summarize(config, reports, observer, net, nodes, run)
    return SimulationResult(reports, summary, net.trace, observer, net, nodes)


def _round_start_with_share(node: SensorNode, observer: RunObserver,
                            round_no: int, end_index: int, deadline_us: int) -> None:
    node.on_round_start(round_no, end_index, deadline_us)
    if node.alive and node._round_elements:
        observer.on_share(round_no, node.node_id, node.sim.now)


def _apply_fault(node: SensorNode, fault: FaultEvent, observer: RunObserver) -> None:
    if fault.action == "kill":
        node.kill()
    else:
        node.revive()
    observer.fault_log.append((fault.time_us, fault.node_id, fault.action))


def _alive_at(roster, fault_log, time_us: int) -> set:
    alive = set(roster)
    for t, node_id, action in sorted(fault_log):
        if t > time_us:
            break
        if action == "kill":
            alive.discard(node_id)
        else:
            alive.add(node_id)
    return alive


def _assemble_reports(config, rounds, observer: RunObserver, roster) -> List[dict]:
    period = config.scenario.sample_period_s
    reports = []
    for r, t, end_index, deadline in rounds:
        live = _alive_at(roster, observer.fault_log, t)
        clustering = observer.clusterings.get(r)
        shared = observer.shared.get(r, set())
        window_start = (end_index - config.window) * period
        window_end = end_index * period
        groups_out = []
        complete = clustering is not None
        if clustering:
            for label, members in clustering["groups"]:
                inference = observer.inferences.get((r, label))
                predicted = inference["label"] if inference else None
                truth = _group_truth(config.scenario, members, window_start, window_end)
                groups_out.append({
                    "label": label,
                    "members": members,
                    "group_leader": inference["leader"] if inference else None,
                    "predicted": predicted,
                    "truth": truth,
                })
                wants_prediction = config.model is not None and any(
                    m in shared and m in live for m in members)
                if wants_prediction and predicted is None:
                    complete = False
        reports.append({
            "round": r,
            "start_us": t,
            "leader": clustering["leader"] if clustering else None,
            "groups": groups_out,
            "clustering_iterations": clustering["iterations"] if clustering else None,
            "embeddings_present": clustering["embeddings_present"] if clustering else 0,
            "cluster_time_us": clustering["time_us"] if clustering else None,
            "live_sensors": sorted(live),
            "shared_sensors": sorted(shared),
            "complete": complete,
        })
    return reports


def _recoveries(observer: RunObserver) -> List[dict]:
    events = []
    timeline = sorted(observer.leader_timeline)
    for t_fault, node_id, action in sorted(observer.fault_log):
        if action != "kill":
            continue
        current = None
        for t_lead, term, leader in timeline:
            if t_lead > t_fault:
                break
            current = leader
        if current != node_id:
            continue  # killed node was not the sitting leader
        successor = next(((t, term, leader) for t, term, leader in timeline
                          if t > t_fault and leader != node_id), None)
        if successor:
            events.append({"killed": node_id, "kill_us": t_fault,
                           "new_leader": successor[2], "elected_us": successor[0],
                           "recovery_us": successor[0] - t_fault})
    return events


def _summarize(config, reports, observer, net, nodes, run) -> dict:
    predicted = [g for rep in reports for g in rep["groups"] if g["predicted"] is not None]
    correct = [g for g in predicted if g["predicted"] == g["truth"]]
    iterations = [rep["clustering_iterations"] for rep in reports
                  if rep["clustering_iterations"] is not None]
    recoveries = _recoveries(observer)
    dropped = sum(1 for row in net.trace if row[5] == 1)
    return {
        "rounds_total": len(reports),
        "rounds_complete": sum(1 for rep in reports if rep["complete"]),
        "last_round_groups": len(reports[-1]["groups"]) if reports else 0,
        "predicted_groups": len(predicted),
        "correct_predictions": len(correct),
        "prediction_accuracy": (len(correct) / len(predicted)) if predicted else None,
        "mean_embeddings_present": (sum(rep["embeddings_present"] for rep in reports)
                                    / len(reports)) if reports else 0.0,
        "mean_clustering_iterations": (sum(iterations) / len(iterations)) if iterations else None,
        "recovery_count": len(recoveries),
        "mean_recovery_us": (sum(e["recovery_us"] for e in recoveries) / len(recoveries))
                            if recoveries else None,
        "recoveries": recoveries,
        "decode_errors": sum(node.decode_errors for node in nodes.values()),
        "messages_delivered": net.deliveries_dispatched,
        "messages_dropped": dropped,
        "timed_out": run.timed_out,
    }


SUMMARY_COLUMNS = [
    "rounds_total", "rounds_complete", "last_round_groups", "predicted_groups",
    "correct_predictions", "prediction_accuracy", "mean_embeddings_present",
    "mean_clustering_iterations", "recovery_count", "mean_recovery_us",
    "decode_errors", "messages_delivered", "messages_dropped", "timed_out",
]


def write_outputs(result: SimulationResult, out_dir) -> dict:
    """Write trace.csv, rounds.jsonl and summary.csv; returns the paths."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    trace_path = os.path.join(out_dir, "trace.csv")
    rounds_path = os.path.join(out_dir, "rounds.jsonl")
    summary_path = os.path.join(out_dir, "summary.csv")
    result.network.write_trace_csv(trace_path)
    with open(rounds_path, "w") as fh:
        for report in result.round_reports:
            fh.write(json.dumps(report, sort_keys=True) + "\n")
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerow([_fmt(result.summary[c]) for c in SUMMARY_COLUMNS])
    return {"trace": trace_path, "rounds": rounds_path, "summary": summary_path}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)
