"""Cooperative indoor air-quality sensing over an unreliable network.

A library plus deterministic discrete-event simulator for a fleet of indoor
air-quality sensors that share window embeddings through a replicated set,
elect a leader, cluster themselves into activity-affected groups, and run
per-group activity inference.
"""

from .crdt import ReplicaState, Tag, TaggedElement
from .clustering import ClusterGraph, ClusterResult, build_graph, cluster, compute_nn, \
    merge_pair, partition, refine_bounds
from .election import ElectionMachine, Role
from .inference import ModelBundle, ModelKind, TrainSpec, aggregate, deserialize, \
    predict, serialize, train
from .netsim import BROADCAST, ChannelConfig, MessageKind, Network, SimMessage, Simulator
from .node import NodeTiming, Phase, SensorNode
from .sensing import Activity, Diffusion, Embedding, Room, Scenario, SensorPlacement, \
    SensorWindow, embed, generate, scenario_dataset, synthetic_dataset, take_window
from .simrun import FaultEvent, SimulationConfig, run_simulation, write_outputs

__version__ = "0.1.0"
