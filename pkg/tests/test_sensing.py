import json
import math

import numpy as np
import pytest

from airmesh.sensing import (CHANNELS, Activity, Diffusion, Embedding,
                             InsufficientWindowError, Room, Scenario, ScenarioError,
                             SensorPlacement, SensorWindow, embed, generate,
                             scenario_dataset, synthetic_dataset, take_window,
                             wall_crossings, window_label)


def simple_scenario(activities=(), sensors=None, kappa=0.5):
    sensors = sensors or [SensorPlacement(1, 1.0, 1.0), SensorPlacement(2, 3.0, 1.0)]
    return Scenario(
        rooms=[Room(0, 0, 4, 4, "a"), Room(5, 0, 9, 4, "b")],
        sensors=sensors,
        activities=list(activities),
        diffusion=Diffusion(decay_length_m=2.0, mixing_tau_s=30.0, wall_attenuation=kappa),
        sample_period_s=1.0,
    )


def test_validation_catches_bad_geometry():
    scenario = simple_scenario(sensors=[SensorPlacement(1, 20.0, 20.0)])
    with pytest.raises(ScenarioError):
        scenario.validate()
    with pytest.raises(ScenarioError):
        simple_scenario([Activity("x", 1, 1, 0, -5, {"co2": 1})]).validate()
    bad = simple_scenario()
    bad.diffusion = Diffusion(-1.0, 30.0)
    with pytest.raises(ScenarioError):
        bad.validate()


def test_scenario_json_round_trip():
    scenario = simple_scenario([Activity("cooking", 1, 1, 10, 50, {"co2": 5.0})])
    again = Scenario.from_json(scenario.to_json())
    assert again.sensors == scenario.sensors
    assert again.activities == scenario.activities
    assert again.diffusion == scenario.diffusion


def test_wall_crossings():
    scenario = simple_scenario()
    assert wall_crossings(scenario, (1, 1), (3, 3)) == 0          # same room
    assert wall_crossings(scenario, (1, 1), (6, 1)) == 2          # out of a, into b
    assert wall_crossings(scenario, (4.2, 1), (4.8, 1)) == 0      # fully in the gap


def test_no_activities_gives_baseline_plus_noise():
    scenario = simple_scenario()
    _, streams = generate(scenario, seed=1, duration_s=60)
    co2 = streams[1][:, CHANNELS.index("co2")]
    assert abs(co2.mean() - scenario.baseline["co2"]) < 1.0
    assert co2.std() < 4 * scenario.noise_std["co2"]


def test_decay_law_one_lambda_apart():
    # Sensor A sits on the activity, sensor B one decay length away in the
    # same room; the steady-state increments must be a factor of e apart.
    scenario = Scenario(
        rooms=[Room(0, 0, 10, 10)],
        sensors=[SensorPlacement(1, 2.0, 2.0), SensorPlacement(2, 4.0, 2.0)],
        activities=[Activity("burn", 2.0, 2.0, 0.0, 100000.0, {"co2": 100.0})],
        diffusion=Diffusion(decay_length_m=2.0, mixing_tau_s=1.0, wall_attenuation=1.0),
        noise_std={c: 0.0 for c in CHANNELS},
    )
    _, streams = generate(scenario, seed=0, duration_s=2000)
    co2 = CHANNELS.index("co2")
    base = scenario.baseline["co2"]
    inc_a = streams[1][-1, co2] - base
    inc_b = streams[2][-1, co2] - base
    assert inc_a / inc_b == pytest.approx(math.e, rel=1e-6)


def test_wall_attenuation_applies_per_crossing():
    scenario = Scenario(
        rooms=[Room(0, 0, 4, 4), Room(4, 0, 8, 4)],
        sensors=[SensorPlacement(1, 3.9, 2.0), SensorPlacement(2, 4.1, 2.0)],
        activities=[Activity("a", 3.8, 2.0, 0.0, 10000.0, {"pm25": 50.0})],
        diffusion=Diffusion(decay_length_m=100.0, mixing_tau_s=1.0, wall_attenuation=0.25),
        noise_std={c: 0.0 for c in CHANNELS},
    )
    _, streams = generate(scenario, seed=0, duration_s=300)
    pm = CHANNELS.index("pm25")
    base = scenario.baseline["pm25"]
    inc_in = streams[1][-1, pm] - base
    inc_out = streams[2][-1, pm] - base
    # Adjacent rooms share one wall: a single kappa factor, distance ~equal.
    assert inc_out / inc_in == pytest.approx(0.25, rel=0.01)


def test_generation_is_deterministic_per_seed():
    scenario = simple_scenario([Activity("x", 1, 1, 5, 40, {"voc": 3.0})])
    _, first = generate(scenario, seed=9, duration_s=80)
    _, second = generate(scenario, seed=9, duration_s=80)
    _, other = generate(scenario, seed=10, duration_s=80)
    for sensor_id in first:
        assert np.array_equal(first[sensor_id], second[sensor_id])
    assert not np.array_equal(first[1], other[1])


def window_of(values: np.ndarray) -> SensorWindow:
    data = np.tile(values[:, None], (1, len(CHANNELS)))
    return SensorWindow(1, data, len(values), end_time_s=float(len(values)))


def test_constant_window_has_zero_std_and_slope():
    emb = embed(window_of(np.full(30, 7.0)), dim=20)
    for c in range(5):
        assert emb.vector[4 * c + 1] == 0.0  # std
        assert emb.vector[4 * c + 2] == 0.0  # slope


def test_identical_windows_embed_identically():
    window = window_of(np.sin(np.arange(40) / 3.0))
    a = embed(window, dim=16)
    b = embed(SensorWindow(2, window.channels.copy(), 40, end_time_s=40.0), dim=16)
    assert np.array_equal(a.vector, b.vector)
    assert float(np.linalg.norm(a.vector - b.vector)) == 0.0


def test_slope_feature_matches_polyfit_oracle():
    rng = np.random.default_rng(4)
    series = 0.37 * np.arange(50) + rng.normal(0, 0.5, 50)
    emb = embed(window_of(series), dim=20)
    oracle = np.polyfit(np.arange(50), series, 1)[0]
    for c in range(5):
        assert emb.vector[4 * c + 2] == pytest.approx(oracle, abs=1e-9)


def test_pure_ramp_slope_is_exact():
    series = 1.25 * np.arange(60) + 3.0
    emb = embed(window_of(series), dim=20)
    assert emb.vector[2] == pytest.approx(1.25, abs=1e-9)


def test_short_window_raises():
    window = SensorWindow(1, np.zeros((10, len(CHANNELS))), 30)
    with pytest.raises(InsufficientWindowError):
        embed(window)


def test_embedding_dim_truncation_and_padding():
    window = window_of(np.arange(20.0))
    assert embed(window, dim=8).vector.shape == (8,)
    padded = embed(window, dim=32).vector
    assert padded.shape == (32,)
    assert np.all(padded[20:] == 0.0)


def test_take_window_needs_full_history():
    stream = np.zeros((50, len(CHANNELS)))
    assert take_window(1, stream, end_index=20, window=30, period_s=1.0) is None
    win = take_window(1, stream, end_index=30, window=30, period_s=1.0)
    assert win.channels.shape == (30, len(CHANNELS))
    assert win.end_time_s == 30.0


def test_in_room_sensors_embed_closer_than_cross_room():
    # The property clustering relies on, checked in the mean over seeds.
    activity = Activity("cooking", 1.5, 2.0, 0.0, 500.0, {"co2": 40.0, "pm25": 8.0})
    scenario = Scenario(
        rooms=[Room(0, 0, 4, 4), Room(5, 0, 9, 4)],
        sensors=[SensorPlacement(1, 1.0, 2.0), SensorPlacement(2, 2.5, 2.0),
                 SensorPlacement(3, 7.0, 2.0)],
        activities=[activity],
        diffusion=Diffusion(decay_length_m=6.0, mixing_tau_s=20.0, wall_attenuation=0.2),
    )
    within, across = [], []
    for seed in range(12):
        _, streams = generate(scenario, seed=seed, duration_s=120)
        embs = {i: embed(take_window(i, streams[i], 120, 60, 1.0), 16).vector
                for i in (1, 2, 3)}
        within.append(np.linalg.norm(embs[1] - embs[2]))
        across.append(np.linalg.norm(embs[1] - embs[3]))
    assert np.mean(within) < np.mean(across)


def test_synthetic_dataset_separation():
    X, y, labels = synthetic_dataset(n_classes=5, n_per_class=40, dim=16,
                                     separation=4.0, sigma=1.0, seed=3)
    assert X.shape == (200, 16)
    assert len(labels) == 5
    means = np.vstack([X[y == c].mean(axis=0) for c in range(5)])
    for a in range(5):
        for b in range(a + 1, 5):
            assert np.linalg.norm(means[a] - means[b]) > 3.0


def test_window_label_prefers_dominant_in_room_activity():
    scenario = simple_scenario([
        Activity("cooking", 1.0, 1.0, 0.0, 100.0, {"co2": 1.0}),
        Activity("cleaning", 6.0, 1.0, 0.0, 100.0, {"voc": 1.0}),
    ])
    kitchen_sensor = scenario.sensors[0]
    assert window_label(scenario, kitchen_sensor, 0.0, 60.0) == "cooking"
    assert window_label(scenario, kitchen_sensor, 150.0, 210.0) == "idle"


def test_scenario_dataset_labels_both_simultaneous_activities():
    scenario = Scenario(
        rooms=[Room(0, 0, 4, 4), Room(5, 0, 9, 4)],
        sensors=[SensorPlacement(1, 1.0, 2.0), SensorPlacement(2, 7.0, 2.0)],
        activities=[Activity("cooking", 1.5, 2.0, 0.0, 300.0, {"co2": 30.0}),
                    Activity("cleaning", 7.5, 2.0, 0.0, 300.0, {"voc": 20.0})],
        diffusion=Diffusion(4.0, 20.0, 0.2),
    )
    X, labels, ids, _ = scenario_dataset(scenario, seed=0, duration_s=240, window=60)
    assert set(labels) == {"cooking", "cleaning"}
    assert X.shape[1] == 16
    by_sensor = {i: {l for l, s in zip(labels, ids) if s == i} for i in (1, 2)}
    assert by_sensor[1] == {"cooking"}
    assert by_sensor[2] == {"cleaning"}


def test_scenario_dataset_empty_activities_is_all_idle():
    scenario = simple_scenario()
    _, labels, _, _ = scenario_dataset(scenario, seed=1, duration_s=120, window=60)
    assert set(labels) == {"idle"}
