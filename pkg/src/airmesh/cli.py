"""Command-line harness: generate datasets, train models, run simulations.

Exit codes: 0 success, 1 configuration error, 2 runtime error,
3 acceptance-condition failure (a round never completed, or the run
timed out), so CI scripts can tell the failure classes apart.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .inference import (ModelFormatError, ModelKind, TrainSpec, load_dataset_csv,
                        load_model, predict, save_dataset_csv, save_model, train)
from .netsim import ChannelConfig
from .node import NodeTiming
from .sensing import CHANNELS, Scenario, ScenarioError, generate, scenario_dataset
from .simrun import ConfigError, FaultEvent, SimulationConfig, run_simulation, write_outputs

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_ACCEPTANCE = 3

_MODEL_KINDS = {"tree": ModelKind.DECISION_TREE,
                "forest": ModelKind.RANDOM_FOREST,
                "nb": ModelKind.GAUSSIAN_NB}


def _load_scenario(path: str) -> Scenario:
    if not os.path.exists(path):
        raise ConfigError(f"scenario file not found: {path}")
    with open(path) as fh:
        return Scenario.from_json(fh.read())


def cmd_generate(args) -> int:
    scenario = _load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else (scenario.seed or 0)
    os.makedirs(args.out_dir, exist_ok=True)

    times, streams = generate(scenario, seed, args.duration)
    measurements = os.path.join(args.out_dir, "measurements.csv")
    with open(measurements, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "sensor_id"] + list(CHANNELS))
        for sensor_id in sorted(streams):
            for t, row in zip(times, streams[sensor_id]):
                writer.writerow([repr(float(t)), sensor_id] + [repr(float(v)) for v in row])

    X, labels, _, _ = scenario_dataset(scenario, seed, args.duration,
                                       window=args.window, stride=args.stride,
                                       dim=args.dim)
    dataset = os.path.join(args.out_dir, "dataset.csv")
    save_dataset_csv(dataset, X, labels)
    print(f"wrote {measurements} ({sum(len(s) for s in streams.values())} samples)")
    print(f"wrote {dataset} ({len(labels)} windows, "
          f"{len(set(labels))} distinct labels)")
    return EXIT_OK


def cmd_train(args) -> int:
    X, labels = load_dataset_csv(args.dataset)
    spec = TrainSpec(_MODEL_KINDS[args.kind], max_depth=args.max_depth,
                     min_leaf=args.min_leaf, n_trees=args.trees)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0x5B11]))
    order = rng.permutation(len(labels))
    cut = max(1, int(len(labels) * 0.75))
    train_idx, holdout_idx = order[:cut], order[cut:]
    model = train(X[train_idx], [labels[i] for i in train_idx], spec, seed=args.seed)

    def accuracy(indices) -> float:
        if len(indices) == 0:
            return float("nan")
        hits = sum(1 for i in indices if predict(model, X[i])[0] == labels[i])
        return hits / len(indices)

    save_model(args.out, model)
    print(f"trained {args.kind} on {len(train_idx)} rows, "
          f"{len(model.label_alphabet)} classes")
    print(f"train accuracy: {accuracy(train_idx):.4f}")
    print(f"holdout accuracy: {accuracy(holdout_idx):.4f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _parse_fault(text: str) -> FaultEvent:
    try:
        time_s, node, action = text.split(":")
        return FaultEvent(int(float(time_s) * 1e6), int(node), action)
    except ValueError as exc:
        raise ConfigError(f"bad --fault {text!r}; expected time_s:node:kill|revive") from exc


def cmd_simulate(args) -> int:
    scenario = _load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else (scenario.seed or 0)
    model = None
    if args.model:
        if not os.path.exists(args.model):
            raise ConfigError(f"model file not found: {args.model}")
        model = load_model(args.model)
    timing = NodeTiming(
        heartbeat_us=args.heartbeat,
        timeout_min_us=args.timeout_min,
        timeout_max_us=args.timeout_max,
        gossip_period_us=args.gossip_period,
        round_period_us=args.round_period,
        collect_delay_us=args.collect_delay,
    )
    try:
        channel = ChannelConfig(drop_probability=args.drop,
                                delay_min_us=args.delay_min,
                                delay_max_us=args.delay_max,
                                duplicate_probability=args.duplicate)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    config = SimulationConfig(
        scenario=scenario, seed=seed, duration_s=args.duration, channel=channel,
        timing=timing, theta=args.theta, knn=args.knn, dim=args.dim,
        window=args.window, model=model,
        faults=[_parse_fault(f) for f in args.fault],
    )
    result = run_simulation(config)
    paths = write_outputs(result, args.out_dir)
    summary = result.summary
    print(f"rounds: {summary['rounds_complete']}/{summary['rounds_total']} complete")
    if summary["prediction_accuracy"] is not None:
        print(f"prediction accuracy: {summary['prediction_accuracy']:.4f} "
              f"({summary['correct_predictions']}/{summary['predicted_groups']})")
    print(f"last round groups: {summary['last_round_groups']}")
    if summary["recovery_count"]:
        print(f"recoveries: {summary['recovery_count']}, "
              f"mean {summary['mean_recovery_us'] / 1e3:.1f} ms")
    for key, path in paths.items():
        print(f"wrote {path}")
    if summary["timed_out"] or summary["rounds_complete"] < summary["rounds_total"]:
        print("acceptance condition failed: incomplete rounds", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airmesh",
        description="Cooperative air-quality sensing simulator and toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate measurement and training data")
    gen.add_argument("--scenario", required=True)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--duration", type=float, required=True, help="seconds")
    gen.add_argument("--window", type=int, default=60)
    gen.add_argument("--stride", type=int, default=None)
    gen.add_argument("--dim", type=int, default=16)
    gen.add_argument("--out-dir", required=True)
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train a classifier from a dataset CSV")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--kind", choices=sorted(_MODEL_KINDS), default="forest")
    tr.add_argument("--trees", type=int, default=30)
    tr.add_argument("--max-depth", type=int, default=12)
    tr.add_argument("--min-leaf", type=int, default=2)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_train)

    si = sub.add_parser("simulate", help="run the full pipeline over a scenario")
    si.add_argument("--scenario", required=True)
    si.add_argument("--model", default=None)
    si.add_argument("--seed", type=int, default=None)
    si.add_argument("--duration", type=float, required=True, help="seconds")
    si.add_argument("--theta", type=float, required=True)
    si.add_argument("--knn", type=int, default=3)
    si.add_argument("--dim", type=int, default=16)
    si.add_argument("--window", type=int, default=60)
    si.add_argument("--drop", type=float, default=0.0)
    si.add_argument("--delay-min", type=int, default=0, help="microseconds")
    si.add_argument("--delay-max", type=int, default=0, help="microseconds")
    si.add_argument("--duplicate", type=float, default=0.0)
    si.add_argument("--heartbeat", type=int, default=50_000, help="microseconds")
    si.add_argument("--timeout-min", type=int, default=150_000, help="microseconds")
    si.add_argument("--timeout-max", type=int, default=300_000, help="microseconds")
    si.add_argument("--gossip-period", type=int, default=500_000, help="microseconds")
    si.add_argument("--round-period", type=int, default=60_000_000, help="microseconds")
    si.add_argument("--collect-delay", type=int, default=5_000_000, help="microseconds")
    si.add_argument("--fault", action="append", default=[],
                    help="time_s:node:kill|revive (repeatable)")
    si.add_argument("--out-dir", required=True)
    si.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError, ModelFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
