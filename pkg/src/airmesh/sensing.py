"""Synthetic indoor pollution scenarios and window embeddings.

The generator is a deliberately simple physics cartoon: every activity is a
point source whose contribution to a sensor falls off exponentially with
distance (decay length ``lambda_m``), rises toward steady state with a
mixing time constant ``tau_s``, and is attenuated by a fixed factor per
wall crossed on the straight line between source and sensor. That is
enough to produce localized hotspots with controllable ground truth.

``embed`` condenses a measurement window into a fixed-dimension vector of
per-channel statistics (mean, spread, linear trend, spectral band split),
covering time- and frequency-domain behaviour. It is a pure function, so
two sensors seeing identical windows embed at distance zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

CHANNELS = ("co2", "voc", "pm25", "rh", "temp")
_CH_INDEX = {name: i for i, name in enumerate(CHANNELS)}
# Channels clamped to physical ranges after noise is added.
_NON_NEGATIVE = ("co2", "voc", "pm25")

DEFAULT_BASELINE = {"co2": 420.0, "voc": 120.0, "pm25": 6.0, "rh": 45.0, "temp": 24.0}
DEFAULT_NOISE_STD = {"co2": 2.0, "voc": 1.0, "pm25": 0.3, "rh": 0.2, "temp": 0.05}

DEFAULT_WINDOW = 60
DEFAULT_DIM = 16
FEATURES_PER_CHANNEL = 4

IDLE_LABEL = "idle"


class ScenarioError(ValueError):
    """Invalid scenario geometry or configuration."""


@dataclass(frozen=True)
class Room:
    x0: float
    y0: float
    x1: float
    y1: float
    name: str = ""

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


@dataclass(frozen=True)
class SensorPlacement:
    sensor_id: int
    x: float
    y: float


@dataclass(frozen=True)
class Activity:
    label: str
    x: float
    y: float
    start_s: float
    duration_s: float
    emissions: dict  # channel name -> rate (units of the channel per second at the source)

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


@dataclass(frozen=True)
class Diffusion:
    decay_length_m: float
    mixing_tau_s: float
    wall_attenuation: float = 0.5


@dataclass
class Scenario:
    rooms: List[Room]
    sensors: List[SensorPlacement]
    activities: List[Activity]
    diffusion: Diffusion
    sample_period_s: float = 1.0
    labels: List[str] = field(default_factory=list)
    baseline: dict = field(default_factory=lambda: dict(DEFAULT_BASELINE))
    noise_std: dict = field(default_factory=lambda: dict(DEFAULT_NOISE_STD))
    seed: Optional[int] = None

    def validate(self) -> None:
        if self.diffusion.decay_length_m <= 0 or self.diffusion.mixing_tau_s <= 0:
            raise ScenarioError("diffusion constants must be positive")
        if not (0.0 <= self.diffusion.wall_attenuation <= 1.0):
            raise ScenarioError("wall_attenuation must lie in [0,1]")
        if self.sample_period_s <= 0:
            raise ScenarioError("sample_period_s must be positive")
        for room in self.rooms:
            if room.x0 >= room.x1 or room.y0 >= room.y1:
                raise ScenarioError(f"degenerate room {room}")
        ids = [s.sensor_id for s in self.sensors]
        if len(ids) != len(set(ids)):
            raise ScenarioError("duplicate sensor ids")
        for sensor in self.sensors:
            if not any(r.contains(sensor.x, sensor.y) for r in self.rooms):
                raise ScenarioError(f"sensor {sensor.sensor_id} lies outside every room")
        alphabet = set(self.labels)
        for activity in self.activities:
            if not any(r.contains(activity.x, activity.y) for r in self.rooms):
                raise ScenarioError(f"activity {activity.label!r} lies outside every room")
            if activity.duration_s <= 0:
                raise ScenarioError(f"activity {activity.label!r} has non-positive duration")
            if alphabet and activity.label not in alphabet:
                raise ScenarioError(f"activity label {activity.label!r} not in label alphabet")
            for channel in activity.emissions:
                if channel not in _CH_INDEX:
                    raise ScenarioError(f"unknown emission channel {channel!r}")

    def label_alphabet(self) -> List[str]:
        """Declared labels plus the idle class, idle first."""
        labels = list(self.labels) if self.labels else sorted({a.label for a in self.activities})
        return [IDLE_LABEL] + [l for l in labels if l != IDLE_LABEL]

    def room_of(self, x: float, y: float) -> Optional[int]:
        for i, room in enumerate(self.rooms):
            if room.contains(x, y):
                return i
        return None

    def to_json(self) -> str:
        doc = {
            "rooms": [{"x0": r.x0, "y0": r.y0, "x1": r.x1, "y1": r.y1, "name": r.name}
                      for r in self.rooms],
            "sensors": [{"id": s.sensor_id, "x": s.x, "y": s.y} for s in self.sensors],
            "activities": [{"label": a.label, "x": a.x, "y": a.y, "start_s": a.start_s,
                            "duration_s": a.duration_s, "emissions": a.emissions}
                           for a in self.activities],
            "diffusion": {"lambda_m": self.diffusion.decay_length_m,
                          "tau_s": self.diffusion.mixing_tau_s,
                          "wall_attenuation": self.diffusion.wall_attenuation},
            "sample_period_s": self.sample_period_s,
            "labels": self.labels,
            "baseline": self.baseline,
            "noise_std": self.noise_std,
            "seed": self.seed,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        try:
            doc = json.loads(text)
            scenario = cls(
                rooms=[Room(r["x0"], r["y0"], r["x1"], r["y1"], r.get("name", ""))
                       for r in doc["rooms"]],
                sensors=[SensorPlacement(s["id"], s["x"], s["y"]) for s in doc["sensors"]],
                activities=[Activity(a["label"], a["x"], a["y"], a["start_s"],
                                     a["duration_s"], dict(a["emissions"]))
                            for a in doc.get("activities", [])],
                diffusion=Diffusion(doc["diffusion"]["lambda_m"],
                                    doc["diffusion"]["tau_s"],
                                    doc["diffusion"].get("wall_attenuation", 0.5)),
                sample_period_s=doc.get("sample_period_s", 1.0),
                labels=list(doc.get("labels", [])),
                baseline=dict(doc.get("baseline", DEFAULT_BASELINE)),
                noise_std=dict(doc.get("noise_std", DEFAULT_NOISE_STD)),
                seed=doc.get("seed"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"bad scenario document: {exc}") from exc
        scenario.validate()
        return scenario


def wall_crossings(scenario: Scenario, p: Tuple[float, float], q: Tuple[float, float]) -> int:
    """Number of room-boundary crossings on the open segment p→q.

    Crossings at the same parametric position (a shared wall seen from both
    rooms) count once.
    """
    px, py = p
    qx, qy = q
    dx, dy = qx - px, qy - py
    ts: List[float] = []
    for room in scenario.rooms:
        t0, t1 = 0.0, 1.0
        inside = True
        for pos, delta, lo, hi in ((px, dx, room.x0, room.x1), (py, dy, room.y0, room.y1)):
            if delta == 0.0:
                if not (lo <= pos <= hi):
                    inside = False
                    break
            else:
                ta = (lo - pos) / delta
                tb = (hi - pos) / delta
                if ta > tb:
                    ta, tb = tb, ta
                t0 = max(t0, ta)
                t1 = min(t1, tb)
                if t0 > t1:
                    inside = False
                    break
        if not inside:
            continue
        for t in (t0, t1):
            if 1e-9 < t < 1.0 - 1e-9:
                ts.append(t)
    ts.sort()
    crossings = 0
    last = None
    for t in ts:
        if last is None or t - last > 1e-9:
            crossings += 1
            last = t
    return crossings


def generate(scenario: Scenario, seed: int, duration_s: float
             ) -> Tuple[np.ndarray, Dict[int, np.ndarray]]:
    """Simulate measurement streams for every sensor.

    Returns (sample times, {sensor_id: array of shape (n, len(CHANNELS))}).
    Deterministic in (scenario, seed, duration). Noise is drawn per sensor
    in ascending id order so adding a sensor does not disturb others before
    it.
    """
    scenario.validate()
    n = int(round(duration_s / scenario.sample_period_s))
    times = np.arange(n, dtype=float) * scenario.sample_period_s
    lam = scenario.diffusion.decay_length_m
    tau = scenario.diffusion.mixing_tau_s
    kappa = scenario.diffusion.wall_attenuation

    baseline = np.array([scenario.baseline.get(c, DEFAULT_BASELINE[c]) for c in CHANNELS])
    noise_std = np.array([scenario.noise_std.get(c, DEFAULT_NOISE_STD[c]) for c in CHANNELS])

    streams: Dict[int, np.ndarray] = {}
    for sensor in sorted(scenario.sensors, key=lambda s: s.sensor_id):
        rng = np.random.default_rng(np.random.SeedSequence([seed, sensor.sensor_id]))
        values = np.tile(baseline, (n, 1))
        for activity in scenario.activities:
            dist = float(np.hypot(activity.x - sensor.x, activity.y - sensor.y))
            walls = wall_crossings(scenario, (activity.x, activity.y), (sensor.x, sensor.y))
            geometry = np.exp(-dist / lam) * (kappa ** walls)
            if geometry == 0.0:
                continue
            rise = np.zeros(n)
            active = (times >= activity.start_s) & (times < activity.end_s)
            rise[active] = 1.0 - np.exp(-(times[active] - activity.start_s) / tau)
            after = times >= activity.end_s
            if after.any():
                peak = 1.0 - np.exp(-activity.duration_s / tau)
                rise[after] = peak * np.exp(-(times[after] - activity.end_s) / tau)
            for channel, rate in activity.emissions.items():
                values[:, _CH_INDEX[channel]] += rate * geometry * rise
        values += rng.normal(0.0, noise_std, size=(n, len(CHANNELS)))
        for channel in _NON_NEGATIVE:
            np.maximum(values[:, _CH_INDEX[channel]], 0.0, out=values[:, _CH_INDEX[channel]])
        np.clip(values[:, _CH_INDEX["rh"]], 0.0, 100.0, out=values[:, _CH_INDEX["rh"]])
        streams[sensor.sensor_id] = values
    return times, streams


class InsufficientWindowError(ValueError):
    """The measurement window is shorter than declared."""


@dataclass
class SensorWindow:
    sensor_id: int
    channels: np.ndarray  # shape (window_length, len(CHANNELS))
    window_length: int
    end_time_s: float = 0.0


@dataclass(frozen=True)
class Embedding:
    vector: np.ndarray
    sensor_id: int
    window_end_time: float


def take_window(sensor_id: int, stream: np.ndarray, end_index: int, window: int,
                period_s: float) -> Optional[SensorWindow]:
    """The last ``window`` samples ending just before ``end_index``; None if too early."""
    if end_index < window or end_index > len(stream):
        return None
    return SensorWindow(sensor_id, stream[end_index - window:end_index], window,
                        end_time_s=end_index * period_s)


def _band_ratio(series: np.ndarray) -> float:
    # Fraction of non-DC spectral energy in the lower half of the band.
    power = np.abs(np.fft.rfft(series - series.mean())) ** 2
    power = power[1:]
    total = float(power.sum())
    if total < 1e-24:
        return 0.0
    low = float(power[: max(1, len(power) // 2)].sum())
    return low / total


def embed(window: SensorWindow, dim: int = DEFAULT_DIM) -> Embedding:
    """Condense a window into ``dim`` per-channel statistics.

    Per channel, in order: mean, population standard deviation, least-squares
    slope per sample, low-band spectral energy fraction. The concatenation is
    truncated or zero-padded to ``dim``.
    """
    data = np.asarray(window.channels, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(CHANNELS):
        raise InsufficientWindowError(f"window must be (W, {len(CHANNELS)}), got {data.shape}")
    if data.shape[0] < window.window_length or data.shape[0] < 2:
        raise InsufficientWindowError(
            f"window has {data.shape[0]} samples, needs {max(window.window_length, 2)}")
    w = data.shape[0]
    x = np.arange(w, dtype=float)
    x_centered = x - x.mean()
    denom = float((x_centered ** 2).sum())
    features = []
    for col in range(len(CHANNELS)):
        series = data[:, col]
        mean = float(series.mean())
        std = float(series.std())
        slope = float((x_centered * (series - mean)).sum() / denom)
        features.extend((mean, std, slope, _band_ratio(series)))
    vector = np.zeros(dim)
    take = min(dim, len(features))
    vector[:take] = features[:take]
    if not np.all(np.isfinite(vector)):
        raise InsufficientWindowError("non-finite feature values")
    return Embedding(vector, window.sensor_id, window.end_time_s)


def synthetic_dataset(n_classes: int, n_per_class: int, dim: int = DEFAULT_DIM,
                      separation: float = 4.0, sigma: float = 1.0, seed: int = 0
                      ) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """Gaussian class blobs with adjacent means ``separation * sigma`` apart.

    Used as the classifier benchmark: the minimum inter-mean distance is
    ``separation * sigma`` by construction.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if n_classes > dim:
        raise ValueError("need dim >= n_classes to separate along axes")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    means = np.zeros((n_classes, dim))
    for c in range(n_classes):
        means[c, c] = separation * sigma
    X = np.vstack([
        means[c] + rng.normal(0.0, sigma, size=(n_per_class, dim))
        for c in range(n_classes)
    ])
    y = np.repeat(np.arange(n_classes), n_per_class)
    order = rng.permutation(len(y))
    labels = [f"class_{c}" for c in range(n_classes)]
    return X[order], y[order], labels


def window_label(scenario: Scenario, sensor: SensorPlacement, start_s: float,
                 end_s: float) -> str:
    """Ground-truth label for a sensor window.

    The in-room activity covering the largest share of the window wins
    (ties to the earlier start, then label); below half coverage the window
    counts as idle.
    """
    room = scenario.room_of(sensor.x, sensor.y)
    candidates = []
    for activity in scenario.activities:
        if scenario.room_of(activity.x, activity.y) != room:
            continue
        overlap = min(end_s, activity.end_s) - max(start_s, activity.start_s)
        if overlap > 0:
            candidates.append((-overlap, activity.start_s, activity.label))
    if not candidates:
        return IDLE_LABEL
    overlap, _, label = min(candidates)
    if -overlap < (end_s - start_s) / 2:
        return IDLE_LABEL
    return label


def scenario_dataset(scenario: Scenario, seed: int, duration_s: float,
                     window: int = DEFAULT_WINDOW, stride: Optional[int] = None,
                     dim: int = DEFAULT_DIM
                     ) -> Tuple[np.ndarray, List[str], List[int], List[float]]:
    """Labeled embedding dataset from sliding windows over generated streams.

    Returns (features, labels, sensor ids, window end times); rows are
    ordered by (end time, sensor id) for reproducibility.
    """
    scenario.validate()
    stride = stride or window
    times, streams = generate(scenario, seed, duration_s)
    period = scenario.sample_period_s
    sensors = {s.sensor_id: s for s in scenario.sensors}
    rows, labels, ids, ends = [], [], [], []
    for end_index in range(window, len(times) + 1, stride):
        for sensor_id in sorted(streams):
            win = take_window(sensor_id, streams[sensor_id], end_index, window, period)
            emb = embed(win, dim)
            rows.append(emb.vector)
            labels.append(window_label(scenario, sensors[sensor_id],
                                       (end_index - window) * period, end_index * period))
            ids.append(sensor_id)
            ends.append(emb.window_end_time)
    if not rows:
        return np.zeros((0, dim)), [], [], []
    return np.vstack(rows), labels, ids, ends
